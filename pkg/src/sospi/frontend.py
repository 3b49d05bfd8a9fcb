"""Parser for one-loop switch-case programs and their lowering to a :class:`PpsSystem`.

Example::

    init x1, x2 in box([-1, 1], [-1, 1]);
    while (true) {
      case (-x1^2 + 1 <= 0):
        x1 = 0.687*x1 + 0.558*x2 - 0.0001*x1*x2;
        x2 = -0.292*x1 + 0.773*x2;
      case (x1^2 - 1 < 0):
        x1 = 0.369*x1 + 0.532*x2 - 0.0001*x1^2;
        x2 = -1.27*x1 + 0.12*x2 - 0.0001*x1*x2;
    }

Assignments inside a case are simultaneous: every right-hand side reads the state
before the iteration. Comments start with ``#`` or ``//``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from ._expr import ParseError, TokenStream, parse_expr, tokenize
from .poly import Polynomial
from .semialg import LE, LT, Constraint, Partition, PpsSystem, SemiAlgSet

__all__ = ["Atom", "Case", "ProgramAst", "ParseError", "parse", "lower", "pretty", "load"]

_REL_OPS = ("<", "<=", ">", ">=")


@dataclass(frozen=True)
class Span:
    line: int
    col: int


@dataclass(frozen=True)
class Atom:
    """``lhs op rhs`` as written."""

    lhs: Polynomial
    op: str
    rhs: Polynomial
    span: Span | None = field(default=None, compare=False)

    def normalized(self) -> Constraint:
        """Rewrite to ``r(x) < 0`` or ``r(x) <= 0``; ``>`` and ``>=`` flip sides."""
        if self.op in ("<", "<="):
            return Constraint(self.lhs - self.rhs, LT if self.op == "<" else LE)
        return Constraint(self.rhs - self.lhs, LT if self.op == ">" else LE)


@dataclass(frozen=True)
class Case:
    guard: tuple[Atom, ...]
    assigns: tuple[tuple[str, Polynomial], ...]
    span: Span | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ProgramAst:
    variables: tuple[str, ...]
    init_box: tuple[tuple[float, float], ...] | None
    init_atoms: tuple[Atom, ...]
    loop_cond: tuple[Atom, ...]
    cases: tuple[Case, ...]


def _parse_number(ts: TokenStream) -> float:
    sign = -1.0 if ts.accept("-") else 1.0
    if sign > 0:
        ts.accept("+")
    tok = ts.peek
    if tok.kind != "num":
        raise ts.error(f"expected a number, found {tok.text or 'end of input'!r}")
    ts.next()
    return sign * float(tok.text)


def _parse_atom(ts: TokenStream, index: dict[str, int], dim: int) -> Atom:
    start = ts.peek
    lhs = parse_expr(ts, index, dim)
    tok = ts.peek
    if tok.kind != "op" or tok.text not in _REL_OPS:
        raise ts.error(f"expected a comparison (<, <=, >, >=), found {tok.text or 'end of input'!r}")
    ts.next()
    rhs = parse_expr(ts, index, dim)
    return Atom(lhs, tok.text, rhs, Span(start.line, start.col))


def _parse_conj(ts: TokenStream, index: dict[str, int], dim: int) -> tuple[Atom, ...]:
    atoms = [_parse_atom(ts, index, dim)]
    while ts.accept("and"):
        atoms.append(_parse_atom(ts, index, dim))
    return tuple(atoms)


def parse(text: str) -> ProgramAst:
    ts = TokenStream(tokenize(text))

    ts.expect("init")
    variables: list[str] = []
    while True:
        tok = ts.peek
        if tok.kind != "name" or tok.text in ("in", "and", "true"):
            raise ts.error(f"expected a variable name, found {tok.text or 'end of input'!r}")
        if tok.text in variables:
            raise ts.error(f"variable {tok.text!r} declared twice")
        variables.append(ts.next().text)
        if not ts.accept(","):
            break
    index = {v: i for i, v in enumerate(variables)}
    dim = len(variables)

    ts.expect("in")
    init_box = None
    init_atoms: tuple[Atom, ...] = ()
    if ts.accept("box"):
        ts.expect("(")
        bounds = []
        while True:
            ts.expect("[")
            lo = _parse_number(ts)
            ts.expect(",")
            hi = _parse_number(ts)
            close = ts.expect("]")
            if lo > hi:
                raise ts.error(f"empty interval [{lo}, {hi}]", close)
            bounds.append((lo, hi))
            if not ts.accept(","):
                break
        paren = ts.expect(")")
        if len(bounds) != dim:
            raise ts.error(f"box has {len(bounds)} intervals for {dim} variables", paren)
        init_box = tuple(bounds)
    elif ts.accept("semialg"):
        ts.expect("{")
        atoms = []
        while not ts.at("}"):
            atoms.append(_parse_atom(ts, index, dim))
            if not ts.accept(";"):
                break
        ts.expect("}")
        init_atoms = tuple(atoms)
    else:
        raise ts.error("expected 'box(...)' or 'semialg{...}' after 'in'")
    ts.expect(";")

    ts.expect("while")
    ts.expect("(")
    loop_cond: tuple[Atom, ...] = ()
    if not ts.accept("true"):
        loop_cond = _parse_conj(ts, index, dim)
    ts.expect(")")
    ts.expect("{")

    cases = []
    seen_guards: dict[tuple, int] = {}
    while ts.at("case"):
        case_tok = ts.next()
        ts.expect("(")
        guard = _parse_conj(ts, index, dim)
        ts.expect(")")
        ts.expect(":")
        assigns: dict[str, Polynomial] = {}
        while ts.peek.kind == "name" and ts.peek.text != "case":
            name_tok = ts.next()
            if name_tok.text not in index:
                raise ts.error(f"undeclared variable {name_tok.text!r}", name_tok)
            if name_tok.text in assigns:
                raise ts.error(
                    f"{name_tok.text!r} assigned twice in one case; updates are simultaneous", name_tok
                )
            ts.expect("=")
            assigns[name_tok.text] = parse_expr(ts, index, dim)
            ts.expect(";")
        missing = [v for v in variables if v not in assigns]
        if missing:
            raise ParseError(f"case does not assign {', '.join(missing)}", case_tok.line, case_tok.col)
        key = tuple(guard)
        if key in seen_guards:
            warnings.warn(
                f"{case_tok.line}:{case_tok.col}: case guard duplicates case {seen_guards[key] + 1}",
                stacklevel=2,
            )
        seen_guards.setdefault(key, len(cases))
        cases.append(
            Case(guard, tuple((v, assigns[v]) for v in variables), Span(case_tok.line, case_tok.col))
        )
    ts.expect("}")
    if ts.peek.kind != "eof":
        raise ts.error(f"unexpected {ts.peek.text!r} after the loop")
    if not cases:
        raise ParseError("the loop body needs at least one case", 0, 0)
    return ProgramAst(tuple(variables), init_box, init_atoms, loop_cond, tuple(cases))


def lower(ast: ProgramAst, name: str = "") -> PpsSystem:
    dim = len(ast.variables)
    if ast.init_box is not None:
        x_in = SemiAlgSet.box(ast.init_box)
    else:
        x_in = SemiAlgSet(dim, tuple(a.normalized() for a in ast.init_atoms))
    x0 = SemiAlgSet(dim, tuple(a.normalized() for a in ast.loop_cond))
    cells = tuple(SemiAlgSet(dim, tuple(a.normalized() for a in c.guard)) for c in ast.cases)
    updates = tuple(tuple(poly for _, poly in c.assigns) for c in ast.cases)
    return PpsSystem(x_in, x0, Partition(cells), updates, ast.variables, name)


def _fmt_atom(a: Atom, names) -> str:
    return f"{a.lhs.to_string(names)} {a.op} {a.rhs.to_string(names)}"


def pretty(ast: ProgramAst) -> str:
    names = ast.variables
    lines = []
    if ast.init_box is not None:
        box = ", ".join(f"[{lo!r}, {hi!r}]" for lo, hi in ast.init_box)
        lines.append(f"init {', '.join(names)} in box({box});")
    else:
        body = "; ".join(_fmt_atom(a, names) for a in ast.init_atoms)
        lines.append(f"init {', '.join(names)} in semialg{{ {body} }};")
    cond = " and ".join(_fmt_atom(a, names) for a in ast.loop_cond) or "true"
    lines.append(f"while ({cond}) {{")
    for case in ast.cases:
        guard = " and ".join(_fmt_atom(a, names) for a in case.guard)
        lines.append(f"  case ({guard}):")
        for var, poly in case.assigns:
            lines.append(f"    {var} = {poly.to_string(names)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def load(path) -> PpsSystem:
    from pathlib import Path

    path = Path(path)
    return lower(parse(path.read_text(encoding="utf-8")), name=path.stem)
