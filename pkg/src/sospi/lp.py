"""Dense two-phase simplex (Bland's rule) and the policy-improvement LP.

The policy LP has one variable per template and constraints of the form

    sum_q a_q v(q) + b <= v(target)      (a_q >= 0)
    lo_q <= v(q)

with objective ``min sum_q v(q)``. :func:`simplex` solves the general problem
``min c.x  s.t.  G x <= h,  x >= lb``; variables with ``lb = -inf`` are split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

OPTIMAL = "optimal"
UNBOUNDED = "unbounded"
INFEASIBLE = "infeasible"

_EPS = 1e-12


@dataclass
class LpResult:
    x: np.ndarray | None
    status: str
    objective: float
    iterations: int = 0


def _pivot(T: np.ndarray, basis: list[int], r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])
    basis[r] = c


def _run(T: np.ndarray, basis: list[int], n_cols: int, max_iter: int) -> tuple[str, int]:
    """Minimize the last row (reduced costs) of tableau ``T`` with Bland's rule.

    Only the first ``n_cols`` columns may enter. The last column is the right-hand side.
    """
    it = 0
    while it < max_iter:
        cost = T[-1, :n_cols]
        entering = next((j for j in range(n_cols) if cost[j] < -_EPS), None)
        if entering is None:
            return OPTIMAL, it
        col = T[:-1, entering]
        rhs = T[:-1, -1]
        best, leave = math.inf, None
        for i in range(len(basis)):
            if col[i] > _EPS:
                ratio = rhs[i] / col[i]
                # Bland: smallest ratio, ties broken by the smallest basic index
                if ratio < best - _EPS or (abs(ratio - best) <= _EPS and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave is None:
            return UNBOUNDED, it
        _pivot(T, basis, leave, entering)
        it += 1
    raise RuntimeError("simplex iteration limit reached")


def simplex(
    c: Sequence[float],
    G: np.ndarray,
    h: Sequence[float],
    lb: Sequence[float] | None = None,
    max_iter: int = 10_000,
) -> LpResult:
    """``min c.x  s.t.  G x <= h,  x >= lb`` by a two-phase tableau simplex."""
    c = np.asarray(c, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float)).reshape(-1, c.size)
    h = np.asarray(h, dtype=float).reshape(-1)
    n = c.size
    lb = np.full(n, -math.inf) if lb is None else np.asarray(lb, dtype=float)

    # x = shift + E u, u >= 0: finite bounds shift, free variables split into u+ - u-
    cols, shift = [], np.where(np.isfinite(lb), lb, 0.0)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(e)
        if not np.isfinite(lb[j]):
            cols.append(-e)
    E = np.column_stack(cols) if cols else np.zeros((n, 0))
    Gu = G @ E
    hu = h - G @ shift
    cu = c @ E
    m, nu = Gu.shape

    # rows: Gu u + s = hu; negate rows with hu < 0 and give them an artificial variable
    neg = hu < 0
    n_art = int(neg.sum())
    width = nu + m + n_art
    T = np.zeros((m + 1, width + 1))
    T[:m, :nu] = Gu
    T[:m, nu : nu + m] = np.eye(m)
    T[:m, -1] = hu
    T[:m][neg] *= -1.0
    basis = []
    a = 0
    for i in range(m):
        if neg[i]:
            T[i, nu + m + a] = 1.0
            basis.append(nu + m + a)
            a += 1
        else:
            basis.append(nu + i)

    iters = 0
    if n_art:
        # phase 1: minimize the sum of the artificial variables
        T[-1, :] = 0.0
        for i in range(m):
            if neg[i]:
                T[-1] -= T[i]
        T[-1, nu + m :-1] = 0.0
        status, k = _run(T, basis, width, max_iter)
        iters += k
        if -T[-1, -1] > 1e-9 * max(1.0, np.abs(hu).max()):
            return LpResult(None, INFEASIBLE, math.inf, iters)
        # drive remaining artificials out of the basis where possible
        for i in range(m):
            if basis[i] >= nu + m:
                j = next((j for j in range(nu + m) if abs(T[i, j]) > 1e-9), None)
                if j is not None:
                    _pivot(T, basis, i, j)
    # phase 2 on the original objective, artificial columns frozen
    T[-1, :] = 0.0
    T[-1, :nu] = cu
    for i in range(m):
        if basis[i] < nu:
            T[-1] -= cu[basis[i]] * T[i]
    status, k = _run(T, basis, nu + m, max_iter)
    iters += k
    if status == UNBOUNDED:
        return LpResult(None, UNBOUNDED, -math.inf, iters)
    u = np.zeros(width)
    for i, j in enumerate(basis):
        u[j] = T[i, -1]
    x = shift + E @ u[:nu]
    return LpResult(x, OPTIMAL, float(c @ x), iters)


# -- policy LP -------------------------------------------------------------------


@dataclass(frozen=True)
class LpConstraint:
    """``sum_q coeffs[q] v(q) + const <= v(target)``."""

    coeffs: tuple[float, ...]
    const: float
    target: int
    label: str = ""


@dataclass
class LpProblem:
    names: list[str]
    constraints: list[LpConstraint] = field(default_factory=list)
    lower: list[float] = field(default_factory=list)
    objective: list[float] | None = None

    def __post_init__(self):
        n = len(self.names)
        if not self.lower:
            self.lower = [-math.inf] * n
        if self.objective is None:
            self.objective = [1.0] * n
        for con in self.constraints:
            if len(con.coeffs) != n:
                raise ValueError("constraint width does not match the variables")
            if any(a < 0 for a in con.coeffs):
                raise ValueError(f"negative multiplier in constraint {con.label or con}")

    @property
    def n(self) -> int:
        return len(self.names)

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        G = np.zeros((len(self.constraints), self.n))
        h = np.zeros(len(self.constraints))
        for r, con in enumerate(self.constraints):
            G[r] = con.coeffs
            G[r, con.target] -= 1.0
            h[r] = -con.const
        return G, h

    def slacks(self, v: Sequence[float]) -> np.ndarray:
        """``v(target) - (a.v + b)`` per constraint followed by ``v - lower``."""
        v = np.asarray(v, dtype=float)
        s = [v[c.target] - (np.dot(c.coeffs, v) + c.const) for c in self.constraints]
        s += [vi - lo for vi, lo in zip(v, self.lower)]
        return np.array(s)

    def dump(self) -> str:
        """Text listing in the ``a v(p) + b <= v(q)`` style."""
        lines = ["min " + " + ".join(f"v({n})" if c == 1 else f"{c:g} v({n})" for n, c in zip(self.names, self.objective))]
        lines.append("s.t.")
        for name, lo in zip(self.names, self.lower):
            if math.isfinite(lo):
                lines.append(f"  {lo:.4f} <= v({name})")
        for con in self.constraints:
            terms = [f"{a:.4f} v({self.names[q]})" for q, a in enumerate(con.coeffs) if round(a, 4) != 0.0]
            if not terms:
                lhs = f"{con.const:.4f}"
            elif con.const < 0:
                lhs = " + ".join(terms) + f" - {-con.const:.4f}"
            else:
                lhs = " + ".join(terms) + f" + {con.const:.4f}"
            tag = f"   # {con.label}" if con.label else ""
            lines.append(f"  {lhs} <= v({self.names[con.target]}){tag}")
        return "\n".join(lines) + "\n"


def solve_lp(prob: LpProblem) -> LpResult:
    G, h = prob.matrices()
    return simplex(prob.objective, G, h, prob.lower)
