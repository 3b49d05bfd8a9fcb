"""Tokenizer and polynomial expression parser shared by the DSL and ``Polynomial.parse``."""

from __future__ import annotations

import re
from dataclasses import dataclass

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*|//[^\n]*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<op><=|>=|==|[-+*/^(),;:\[\]{}<>=])
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
    """,
    re.VERBOSE,
)


class ParseError(ValueError):
    """Syntax or semantic error with a 1-based source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class Token:
    kind: str  # 'num', 'op', 'name', 'eof'
    text: str
    line: int
    col: int
    offset: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1, pos))
        chunk = m.group()
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1, pos))
    return tokens


class TokenStream:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek
        return tok.kind in ("op", "name") and tok.text == text

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            return self.next()
        return None

    def expect(self, text: str) -> Token:
        tok = self.peek
        if not self.at(text):
            shown = tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {shown!r}", tok.line, tok.col)
        return self.next()

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.peek
        return ParseError(message, tok.line, tok.col)


def parse_expr(ts: TokenStream, variables: dict[str, int], dim: int):
    """Parse a polynomial expression; stops at the first token that cannot continue it.

    Grammar: expr := ['+'|'-'] term (('+'|'-') term)*;  term := factor (('*'|'/' num) factor)*;
    factor := atom ['^' int];  atom := number | variable | '(' expr ')'.
    Division is only allowed by a numeric constant.
    """
    from .poly import Polynomial

    def atom():
        tok = ts.peek
        if tok.kind == "num":
            ts.next()
            return Polynomial.constant(float(tok.text), dim)
        if tok.kind == "name":
            if tok.text not in variables:
                raise ts.error(f"undeclared variable {tok.text!r}", tok)
            ts.next()
            return Polynomial.variable(variables[tok.text], dim)
        if ts.accept("("):
            inner = expr()
            ts.expect(")")
            return inner
        raise ts.error(f"expected a number, variable or '(', found {tok.text or 'end of input'!r}", tok)

    def factor():
        base = atom()
        if ts.accept("^"):
            tok = ts.peek
            if tok.kind != "num" or not tok.text.isdigit():
                raise ts.error("exponent must be a non-negative integer literal", tok)
            ts.next()
            base = base ** int(tok.text)
        return base

    def unary():
        if ts.accept("-"):
            return -unary()
        if ts.accept("+"):
            return unary()
        return factor()

    def term():
        value = unary()
        while True:
            if ts.accept("*"):
                value = value * unary()
            elif ts.at("/"):
                slash = ts.next()
                divisor = unary()
                if divisor.degree() > 0 or divisor.is_zero():
                    raise ts.error("division only by a non-zero constant is polynomial", slash)
                value = value * (1.0 / divisor.constant_term())
            else:
                return value

    def expr():
        value = term()
        while True:
            if ts.accept("+"):
                value = value + term()
            elif ts.accept("-"):
                value = value - term()
            else:
                return value

    return expr()
