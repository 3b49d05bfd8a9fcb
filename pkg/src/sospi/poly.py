"""Sparse multivariate polynomials over float coefficients and Gram-matrix machinery.

Monomials are exponent tuples. The global order is graded lexicographic: lower total
degree first, and within one degree ``x1`` dominates ``x2`` so that the degree-one
block of a basis reads ``(x1, ..., xd)`` and the degree-two block reads
``(x1^2, x1*x2, ..., xd^2)``.
"""

from __future__ import annotations

import itertools
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

Monomial = tuple[int, ...]

#: coefficients with absolute value at or below this are dropped
ZERO_TOL = 1e-14


def monomial_key(m: Monomial) -> tuple:
    return (sum(m), tuple(-e for e in m))


def monomial_degree(m: Monomial) -> int:
    return sum(m)


def monomials_up_to(d: int, degree: int) -> list[Monomial]:
    """All exponent vectors in ``d`` variables of total degree <= ``degree``, graded lex."""
    if degree < 0:
        return []
    out = []
    for deg in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            exps = [0] * d
            for v in combo:
                exps[v] += 1
            out.append(tuple(exps))
    out.sort(key=monomial_key)
    return out


def monomial_str(m: Monomial, names: Sequence[str] | None = None) -> str:
    parts = []
    for i, e in enumerate(m):
        if e == 0:
            continue
        name = names[i] if names else f"x{i + 1}"
        parts.append(name if e == 1 else f"{name}^{e}")
    return "*".join(parts) if parts else "1"


class Polynomial:
    """Immutable sparse polynomial in ``dim`` variables."""

    __slots__ = ("_terms", "dim", "_hash")

    def __init__(self, terms: Mapping[Monomial, float] | None = None, dim: int = 1):
        self.dim = dim
        clean = {}
        for mono, coef in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != dim:
                raise ValueError(f"monomial {mono} does not have dimension {dim}")
            if any(e < 0 for e in mono):
                raise ValueError(f"negative exponent in {mono}")
            coef = float(coef)
            if abs(coef) > ZERO_TOL:
                clean[mono] = clean.get(mono, 0.0) + coef
        self._terms = {m: c for m, c in clean.items() if abs(c) > ZERO_TOL}
        self._hash = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, dim: int) -> Polynomial:
        return cls({}, dim)

    @classmethod
    def constant(cls, c: float, dim: int) -> Polynomial:
        return cls({(0,) * dim: c}, dim)

    @classmethod
    def variable(cls, index: int, dim: int) -> Polynomial:
        exps = [0] * dim
        exps[index] = 1
        return cls({tuple(exps): 1.0}, dim)

    @classmethod
    def monomial(cls, mono: Monomial, coef: float = 1.0) -> Polynomial:
        return cls({tuple(mono): coef}, len(mono))

    @classmethod
    def parse(cls, text: str, variables: Sequence[str] | int) -> Polynomial:
        """Parse ``text`` such as ``-0.0001*x1^2*x2 + 0.687*x1``.

        ``variables`` is either the ordered variable names or the dimension, in which
        case the names ``x1..xd`` are used.
        """
        from ._expr import ParseError, TokenStream, parse_expr, tokenize

        if isinstance(variables, int):
            variables = [f"x{i + 1}" for i in range(variables)]
        index = {name: i for i, name in enumerate(variables)}
        ts = TokenStream(tokenize(text))
        poly = parse_expr(ts, index, len(variables))
        if ts.peek.kind != "eof":
            raise ParseError(f"unexpected {ts.peek.text!r}", ts.peek.line, ts.peek.col)
        return poly

    # -- inspection ---------------------------------------------------------

    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coeff(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        return max((sum(m) for m in self._terms), default=0)

    def constant_term(self) -> float:
        return self._terms.get((0,) * self.dim, 0.0)

    def monomials(self) -> list[Monomial]:
        return sorted(self._terms, key=monomial_key)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __len__(self) -> int:
        return len(self._terms)

    # -- arithmetic ---------------------------------------------------------

    def _check(self, other: Polynomial) -> None:
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def _coerce(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self.dim)
        return NotImplemented

    def __add__(self, other) -> Polynomial:
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, self.dim)

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial({m: -c for m, c in self._terms.items()}, self.dim)

    def __sub__(self, other) -> Polynomial:
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other) -> Polynomial:
        return (-self) + other

    def scale(self, s: float) -> Polynomial:
        return Polynomial({m: s * c for m, c in self._terms.items()}, self.dim)

    def __mul__(self, other) -> Polynomial:
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check(other)
        out: dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(out, self.dim)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> Polynomial:
        if not isinstance(k, int) or k < 0:
            raise ValueError("polynomial powers must be non-negative integers")
        result = Polynomial.constant(1.0, self.dim)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.dim, frozenset(self._terms.items())))
        return self._hash

    def almost_equal(self, other: Polynomial, tol: float = 1e-9) -> bool:
        return (self - other).max_abs_coeff() <= tol

    # -- evaluation and composition -----------------------------------------

    def __call__(self, x: Sequence[float]) -> float:
        return self.eval(x)

    def eval(self, x: Sequence[float]) -> float:
        if len(x) != self.dim:
            raise ValueError(f"point has dimension {len(x)}, polynomial has {self.dim}")
        total = 0.0
        for mono, coef in self._terms.items():
            term = coef
            for xi, e in zip(x, mono):
                if e:
                    term *= xi**e
            total += term
        return total

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of an ``(n, dim)`` array."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ValueError(f"expected an (n, {self.dim}) array")
        if not self._terms:
            return np.zeros(points.shape[0])
        monos = np.array(list(self._terms), dtype=int)
        coefs = np.array(list(self._terms.values()))
        powers = np.ones((points.shape[0], len(coefs)))
        for v in range(self.dim):
            col = points[:, v : v + 1]
            exps = monos[:, v]
            if exps.any():
                powers *= col ** exps[None, :]
        return powers @ coefs

    def compose(self, maps: Sequence[Polynomial]) -> Polynomial:
        """Return ``self(maps[0](x), ..., maps[d-1](x))``."""
        if len(maps) != self.dim:
            raise ValueError(f"need {self.dim} component maps, got {len(maps)}")
        if not maps:
            return self
        out_dim = maps[0].dim
        for t in maps:
            if t.dim != out_dim:
                raise ValueError("component maps disagree on dimension")
        power_cache: list[dict[int, Polynomial]] = [{0: Polynomial.constant(1.0, out_dim)} for _ in maps]

        def power(v: int, e: int) -> Polynomial:
            cache = power_cache[v]
            if e not in cache:
                cache[e] = power(v, e - 1) * maps[v]
            return cache[e]

        # accumulate in a plain dict so intermediate cancellation is exact
        acc: dict[Monomial, float] = {}
        for mono, coef in self._terms.items():
            term = Polynomial.constant(coef, out_dim)
            for v, e in enumerate(mono):
                if e:
                    term = term * power(v, e)
            for m, c in term._terms.items():
                acc[m] = acc.get(m, 0.0) + c
        return Polynomial(acc, out_dim)

    # -- formatting -----------------------------------------------------------

    def to_string(self, names: Sequence[str] | None = None) -> str:
        if not self._terms:
            return "0"
        pieces = []
        for mono in self.monomials():
            coef = self._terms[mono]
            sign = "-" if coef < 0 else "+"
            mag = abs(coef)
            body = monomial_str(mono, names)
            if body == "1":
                text = repr(mag)
            elif mag == 1.0:
                text = body
            else:
                text = f"{mag!r}*{body}"
            pieces.append((sign, text))
        first_sign, first = pieces[0]
        out = ("-" if first_sign == "-" else "") + first
        for sign, text in pieces[1:]:
            out += f" {sign} {text}"
        return out

    def __str__(self) -> str:
        return self.to_string()

    def __repr__(self) -> str:
        return f"Polynomial({self.to_string()!r}, dim={self.dim})"

    def to_json(self) -> list:
        return [[list(m), c] for m, c in sorted(self._terms.items(), key=lambda t: monomial_key(t[0]))]

    @classmethod
    def from_json(cls, data: Iterable, dim: int) -> Polynomial:
        return cls({tuple(m): c for m, c in data}, dim)


def identity_map(dim: int) -> list[Polynomial]:
    return [Polynomial.variable(i, dim) for i in range(dim)]


def compose(p: Polynomial, maps: Sequence[Polynomial]) -> Polynomial:
    return p.compose(maps)


def squared_norm(dim: int) -> Polynomial:
    return Polynomial({tuple(2 if j == i else 0 for j in range(dim)): 1.0 for i in range(dim)}, dim)


class MonomialBasis:
    """Graded-lex ordered monomials of degree <= ``half_degree``: the vector b_m(x)."""

    __slots__ = ("dim", "half_degree", "entries", "_index")

    def __init__(self, dim: int, half_degree: int, entries: Sequence[Monomial] | None = None):
        if half_degree < 0:
            raise ValueError("half degree must be non-negative")
        self.dim = dim
        self.half_degree = half_degree
        full = monomials_up_to(dim, half_degree)
        if entries is None:
            self.entries = tuple(full)
        else:
            # a sub-basis keeps the graded-lex order of the full one
            keep = set(entries)
            if not keep <= set(full):
                raise ValueError("sub-basis entries must have degree <= half_degree")
            self.entries = tuple(m for m in full if m in keep)
        self._index = {m: i for i, m in enumerate(self.entries)}

    def restrict(self, entries: Sequence[Monomial]) -> MonomialBasis:
        return MonomialBasis(self.dim, self.half_degree, entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) == comb(self.dim + self.half_degree, self.dim)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> Monomial:
        return self.entries[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, MonomialBasis) and (self.dim, self.entries) == (other.dim, other.entries)

    def __hash__(self) -> int:
        return hash((self.dim, self.entries))

    def __repr__(self) -> str:
        extra = "" if self.is_full else f", size={len(self.entries)}"
        return f"MonomialBasis(dim={self.dim}, half_degree={self.half_degree}{extra})"

    @staticmethod
    def expected_size(dim: int, half_degree: int) -> int:
        return comb(dim + half_degree, dim)

    def index(self, mono: Monomial) -> int:
        return self._index[mono]

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        return np.array([np.prod([xi**e for xi, e in zip(x, m)]) for m in self.entries])


def gram_constraints(basis: MonomialBasis) -> dict[Monomial, list[tuple[int, int]]]:
    """Map each monomial of degree <= 2m to the ordered Gram positions (i, j) producing it."""
    out: dict[Monomial, list[tuple[int, int]]] = {}
    entries = basis.entries
    for i, mi in enumerate(entries):
        for j, mj in enumerate(entries):
            m = tuple(a + b for a, b in zip(mi, mj))
            out.setdefault(m, []).append((i, j))
    return dict(sorted(out.items(), key=lambda t: monomial_key(t[0])))


def gram_expand(Q: np.ndarray, basis: MonomialBasis) -> Polynomial:
    """The polynomial ``b(x)^T Q b(x)``."""
    Q = np.asarray(Q, dtype=float)
    n = len(basis)
    if Q.shape != (n, n):
        raise ValueError(f"Gram matrix is {Q.shape}, basis has {n} entries")
    acc: dict[Monomial, float] = {}
    for mono, positions in gram_constraints(basis).items():
        acc[mono] = sum(Q[i, j] for i, j in positions)
    return Polynomial(acc, basis.dim)


def gram_refit(p: Polynomial, basis: MonomialBasis) -> np.ndarray:
    """Least-norm symmetric Q with ``gram_expand(Q, basis) == p``.

    Raises if ``p`` has a monomial the basis cannot produce.
    """
    cons = gram_constraints(basis)
    missing = [m for m in p.monomials() if m not in cons]
    if missing:
        raise ValueError(f"monomials {missing} lie outside the span of the basis squares")
    n = len(basis)
    Q = np.zeros((n, n))
    # spreading the coefficient evenly over the positions is the least-norm solution
    for mono, positions in cons.items():
        c = p.coeff(mono)
        for i, j in positions:
            Q[i, j] = c / len(positions)
    return Q


class CertificateError(ValueError):
    """Raised when a Gram matrix is too indefinite to yield an SOS certificate."""


def sos_certificate(Q: np.ndarray, basis: MonomialBasis, psd_tol: float = 1e-8) -> list[Polynomial]:
    """Factor ``Q = L^T D L`` by eigendecomposition and return polynomials g_k with
    ``sum(g_k**2) == b^T Q b``, where ``g_k = sqrt(d_k) * (L b)_k``.

    Eigenvalues in ``[-psd_tol, 0]`` are treated as zero.
    """
    Q = np.asarray(Q, dtype=float)
    n = len(basis)
    if Q.shape != (n, n):
        raise ValueError(f"Gram matrix is {Q.shape}, basis has {n} entries")
    Q = 0.5 * (Q + Q.T)
    evals, evecs = np.linalg.eigh(Q)
    if n and evals[0] < -psd_tol:
        raise CertificateError(f"Gram matrix has eigenvalue {evals[0]:.3e} < -{psd_tol:g}")
    squares = []
    scale = max(1.0, float(np.max(np.abs(evals)))) if n else 1.0
    for k in range(n - 1, -1, -1):
        if evals[k] <= 1e-15 * scale:
            continue
        vec = evecs[:, k] * np.sqrt(evals[k])
        squares.append(Polynomial({basis[i]: vec[i] for i in range(n)}, basis.dim))
    return squares


def sum_of_squares(squares: Sequence[Polynomial], dim: int) -> Polynomial:
    acc: dict[Monomial, float] = {}
    for g in squares:
        for m, c in (g * g).items():
            acc[m] = acc.get(m, 0.0) + c
    return Polynomial(acc, dim)
