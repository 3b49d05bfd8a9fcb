"""Template abstract domain and SOS-based policy iteration.

A bound vector ``w`` assigns an extended real to every template ``p`` and denotes
``w* = {x : p(x) <= w(p) for all p}``. The relaxed abstract transformer

    F(w)(p) = max( max_i F_i(w)(p), Xin(p) )

is evaluated cell by cell with SOS programs (see :mod:`sos`); every optimal
multiplier vector ``lambda`` yields an affine map in ``v`` and the least fixpoint of
those maps is the policy-improvement LP (see :mod:`lp`).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lp, sos
from .poly import Polynomial
from .semialg import PpsSystem

log = logging.getLogger(__name__)

FIXPOINT = "fixpoint"
SOL_EMPTY = "sol_empty"
MAX_ITER = "max_iter"


class NoGoodInvariant(RuntimeError):
    """Template synthesis failed: infeasible program or no post-fixpoint."""


class NotPostFixpoint(ValueError):
    """The starting bound vector is not a post-fixpoint of the relaxed transformer."""

    def __init__(self, violations: list[tuple[str, float, float]]):
        self.violations = violations
        name, fw, w = violations[0]
        super().__init__(f"initial bounds are not a post-fixpoint: F(w)({name}) = {fw:.6g} > w({name}) = {w:.6g}")


# -- domain ----------------------------------------------------------------------


@dataclass(frozen=True)
class TemplateBasis:
    templates: tuple[Polynomial, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise ValueError("a template basis needs at least one polynomial")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"q{k + 1}" for k in range(len(self.templates))))
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != len(self.templates):
            raise ValueError("one name per template is required")
        for a in range(len(self.templates)):
            for b in range(a):
                if self.templates[a] == self.templates[b]:
                    raise ValueError(f"duplicate template {self.names[a]} = {self.names[b]}")
        if len(set(self.names)) != len(self.names):
            raise ValueError("template names must be unique")

    def __len__(self) -> int:
        return len(self.templates)

    @property
    def dim(self) -> int:
        return self.templates[0].dim

    @property
    def half_degree(self) -> int:
        return sos.template_half_degree(self.templates)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Template values, shape ``(n_points, n_templates)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.column_stack([t.eval_many(points) for t in self.templates])

    def to_json(self, variables: Sequence[str] | None = None) -> list[dict]:
        return [{"name": n, "poly": t.to_string(variables), "terms": t.to_json()} for n, t in zip(self.names, self.templates)]

    @classmethod
    def from_json(cls, data: Sequence[dict], dim: int) -> TemplateBasis:
        return cls(tuple(Polynomial.from_json(t["terms"], dim) for t in data), tuple(t["name"] for t in data))

    @classmethod
    def squares_and(cls, dim: int, extra: Sequence[Polynomial] = (), extra_names: Sequence[str] = ()) -> TemplateBasis:
        """``{x_i^2}`` followed by ``extra``; names ``q1..qd`` then ``extra_names`` (default ``p``)."""
        sq = [Polynomial.variable(i, dim) ** 2 for i in range(dim)]
        names = [f"q{i + 1}" for i in range(dim)]
        extra_names = list(extra_names) or (["p"] if len(extra) == 1 else [f"p{k + 1}" for k in range(len(extra))])
        return cls(tuple(sq) + tuple(extra), tuple(names + extra_names))


@dataclass(frozen=True)
class BoundVector:
    basis: TemplateBasis
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != len(self.basis):
            raise ValueError("one bound per template is required")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.values)

    def __getitem__(self, name_or_index) -> float:
        if isinstance(name_or_index, str):
            return self.values[self.basis.names.index(name_or_index)]
        return self.values[name_or_index]

    def leq(self, other: BoundVector, tol: float = 0.0) -> bool:
        return all(a <= b + tol for a, b in zip(self.values, other.values))

    def sup_distance(self, other: BoundVector) -> float:
        d = 0.0
        for a, b in zip(self.values, other.values):
            if a == b:
                continue
            d = max(d, abs(a - b))
        return d

    def contains(self, points: np.ndarray, inflate: float = 0.0) -> np.ndarray:
        """Membership in ``w*`` (optionally inflated) for each row of ``points``."""
        vals = self.basis.evaluate(points)
        return np.all(vals <= self.array[None, :] + inflate, axis=1)

    def to_json(self) -> dict:
        return {n: _json_float(v) for n, v in zip(self.basis.names, self.values)}

    @classmethod
    def from_json(cls, basis: TemplateBasis, data: dict) -> BoundVector:
        return cls(basis, tuple(float(data[n]) for n in basis.names))


def _json_float(v: float):
    if math.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


# -- policies --------------------------------------------------------------------


@dataclass
class PolicyEntry:
    """One element of Sol(w, i, p): multipliers and value of the cell-``i`` program."""

    cell: int
    template: int
    lam: np.ndarray
    value: float
    residual: float = 0.0
    status: str = ""
    vacuous: bool = False  # the region is certified empty; imposes no constraint

    def phi(self, v: Sequence[float], w: Sequence[float]) -> float:
        """``sum_q lam_q v(q) + value - sum_q lam_q w(q)``."""
        if self.vacuous:
            return -math.inf
        out = self.value
        for lq, vq, wq in zip(self.lam, v, w):
            if lq != 0.0:
                out += lq * (vq - wq)
        return out


@dataclass
class Policy:
    entries: dict[tuple[int, int], PolicyEntry] = field(default_factory=dict)

    def summary(self, basis: TemplateBasis) -> list[dict]:
        out = []
        for (i, k), e in sorted(self.entries.items()):
            out.append({
                "cell": i + 1,
                "template": basis.names[k],
                "value": _json_float(e.value),
                "lambda": [float(x) for x in e.lam],
                "residual": e.residual,
                "vacuous": e.vacuous,
            })
        return out


@dataclass
class SolEmpty:
    """Marker: the SOS program of (cell, template) has no accepted solution."""

    cell: int
    template: int
    message: str = ""


@dataclass
class FEval:
    values: np.ndarray
    per_cell: np.ndarray  # (n_cells, n_templates)
    xin: np.ndarray
    policy: Policy  # accepted entries only; incomplete when ``failure`` is set
    failure: SolEmpty | None = None
    max_residual: float = 0.0


@dataclass
class AnalysisOptions:
    sos: sos.SosOptions = field(default_factory=sos.SosOptions)
    m: int | None = None
    jobs: int = 1
    fix_tol: float = 1e-6
    post_tol: float = 1e-6
    max_iter: int = 10
    check_empty_cells: bool = True


class Context:
    """Per-(system, basis) caches: initial-set bounds and cell emptiness."""

    def __init__(self, sys: PpsSystem, basis: TemplateBasis, opts: AnalysisOptions | None = None):
        if basis.dim != sys.dim:
            raise ValueError("template and system dimensions differ")
        self.sys = sys
        self.basis = basis
        self.opts = opts or AnalysisOptions()
        self.m = self.opts.m or basis.half_degree
        self._xin: np.ndarray | None = None
        self._empty: list[bool] | None = None

    def xin(self) -> np.ndarray:
        if self._xin is None:
            vals = []
            for p in self.basis.templates:
                s = sos.solve(sos.compile_xin_dagger(self.sys, p, self.m), self.opts.sos)
                vals.append(s.objective_value)
            self._xin = np.array(vals)
        return self._xin

    def empty_cells(self) -> list[bool]:
        if self._empty is None:
            self._empty = [cell_is_empty(self.sys, i, self.opts.sos) if self.opts.check_empty_cells else False
                           for i in range(self.sys.n_cells)]
        return self._empty


def cell_is_empty(sys: PpsSystem, i: int, opts: sos.SosOptions | None = None) -> bool:
    """True when an SOS certificate proves ``X^i ∩ X^0`` empty."""
    polys = sys.partition.cells[i].polys + sys.x0.polys
    if not polys:
        return False
    cap = max(2, max(p.degree() for p in polys))
    cap += cap % 2
    sol = sos.solve(sos.compile_emptiness(sys, polys, cap + 2), opts)
    return sol.accepted and sol.raw_objective <= 0.5


def _solve_entry(ctx: Context, i: int, k: int, w: np.ndarray) -> PolicyEntry | SolEmpty:
    n = len(ctx.basis)
    if ctx.empty_cells()[i]:
        return PolicyEntry(i, k, np.zeros(n), -math.inf, status="empty_cell", vacuous=True)
    if np.any(w == -math.inf):
        return PolicyEntry(i, k, np.zeros(n), -math.inf, status="empty_bounds", vacuous=True)
    p = ctx.basis.templates[k]
    try:
        prob = sos.compile_relaxed_Fi(ctx.sys, i, p, ctx.basis.templates, list(w), ctx.m, ctx.opts.sos)
    except sos.DegreeCapError as exc:
        return SolEmpty(i, k, str(exc))
    sol = sos.solve(prob, ctx.opts.sos)
    if sol.objective_value == -math.inf and sol.accepted:
        return PolicyEntry(i, k, np.zeros(n), -math.inf, status=sol.status, vacuous=True)
    if not sol.accepted or not math.isfinite(sol.objective_value):
        return SolEmpty(i, k, sol.message or sol.status)
    lam = np.array([sol.scalar(sos.lambda_name(q)) for q in range(n)])
    return PolicyEntry(i, k, lam, sol.objective_value, sol.residual, sol.status)


def eval_relaxed_F(ctx: Context, w: BoundVector | Sequence[float]) -> FEval:
    wv = np.asarray(w.values if isinstance(w, BoundVector) else w, dtype=float)
    n, nc = len(ctx.basis), ctx.sys.n_cells
    xin = ctx.xin()
    jobs = [(i, k) for i in range(nc) for k in range(n)]
    if ctx.opts.jobs > 1:
        with ThreadPoolExecutor(max_workers=ctx.opts.jobs) as pool:
            results = list(pool.map(lambda ik: _solve_entry(ctx, ik[0], ik[1], wv), jobs))
    else:
        results = [_solve_entry(ctx, i, k, wv) for i, k in jobs]

    per_cell = np.full((nc, n), -math.inf)
    policy = Policy()
    failure = None
    for (i, k), res in zip(jobs, results):
        if isinstance(res, SolEmpty):
            failure = failure or res
            per_cell[i, k] = math.inf
            continue
        per_cell[i, k] = res.value
        policy.entries[(i, k)] = res
    values = np.maximum(per_cell.max(axis=0), xin)
    max_res = max((e.residual for e in policy.entries.values()), default=0.0)
    return FEval(values, per_cell, xin, policy, failure, max_res)


# -- policy improvement ----------------------------------------------------------


def build_phi(policy: Policy, w: Sequence[float], basis: TemplateBasis) -> list[lp.LpConstraint]:
    """Affine constraints ``lam.v + (value - lam.w) <= v(p)``, one per non-vacuous entry."""
    cons = []
    for (i, k), e in sorted(policy.entries.items()):
        if e.vacuous:
            continue
        lam = tuple(float(x) for x in e.lam)
        const = e.value - sum(lq * wq for lq, wq in zip(lam, w) if lq != 0.0)
        cons.append(lp.LpConstraint(lam, const, k, f"cell {i + 1}, {basis.names[k]}"))
    return cons


def apply_phi(policy: Policy, w: Sequence[float], xin: Sequence[float], v: Sequence[float]) -> np.ndarray:
    """``Phi(v)(p) = max(max_i phi_{i,p}(v), Xin(p))``."""
    out = np.array(xin, dtype=float)
    for (i, k), e in policy.entries.items():
        out[k] = max(out[k], e.phi(v, w))
    return out


def relax_at(constraints: list[lp.LpConstraint], w: Sequence[float], tol: float) -> list[lp.LpConstraint]:
    """Shift constraints violated at ``w`` by at most ``tol`` so that ``w`` is feasible.

    Certified values overshoot ``w`` by solver round-off even at a post-fixpoint; without
    the shift the policy LP is infeasible for a reason that carries no information.
    """
    out = []
    for c in constraints:
        viol = float(np.dot(c.coeffs, w)) + c.const - w[c.target]
        if 0.0 < viol <= tol:
            log.debug("policy LP: relaxing %s by %.3g", c.label, viol)
            c = dataclasses.replace(c, const=c.const - viol)
        out.append(c)
    return out


def policy_improve(constraints: list[lp.LpConstraint], xin: Sequence[float], basis: TemplateBasis) -> lp.LpProblem:
    return lp.LpProblem(list(basis.names), list(constraints), [float(x) for x in xin])


# -- iteration -------------------------------------------------------------------


@dataclass
class IterationStep:
    k: int
    w: np.ndarray
    Fw: np.ndarray
    policy: list[dict]
    max_residual: float
    lp_text: str = ""
    lp_solution: np.ndarray | None = None
    lp_status: str = ""
    seconds: float = 0.0


@dataclass
class IterationTrace:
    basis: TemplateBasis
    steps: list[IterationStep] = field(default_factory=list)
    reason: str = ""
    final: np.ndarray | None = None
    message: str = ""

    @property
    def improvements(self) -> int:
        return sum(1 for s in self.steps if s.lp_solution is not None)

    def final_bounds(self) -> BoundVector:
        return BoundVector(self.basis, tuple(self.final))

    def to_json(self, timings: bool = False, variables: Sequence[str] | None = None) -> dict:
        steps = []
        for s in self.steps:
            d = {
                "k": s.k,
                "w": BoundVector(self.basis, tuple(s.w)).to_json(),
                "F_w": BoundVector(self.basis, tuple(s.Fw)).to_json(),
                "policy": s.policy,
                "max_residual": s.max_residual,
            }
            if s.lp_solution is not None:
                d["lp"] = s.lp_text
                d["lp_status"] = s.lp_status
                d["lp_solution"] = [float(x) for x in s.lp_solution]
            if timings:
                d["seconds"] = s.seconds
            steps.append(d)
        return {
            "templates": self.basis.to_json(variables),
            "steps": steps,
            "termination": self.reason,
            "improvements": self.improvements,
            "final": BoundVector(self.basis, tuple(self.final)).to_json() if self.final is not None else None,
            "message": self.message,
        }

    def dumps(self, timings: bool = False, variables: Sequence[str] | None = None) -> str:
        return json.dumps(self.to_json(timings, variables), indent=2, sort_keys=True)


def _violations(basis: TemplateBasis, Fw: np.ndarray, w: np.ndarray, tol: float) -> list[tuple[str, float, float]]:
    return [(basis.names[k], float(Fw[k]), float(w[k])) for k in range(len(basis)) if Fw[k] > w[k] + tol]


def _known_values(ev) -> np.ndarray:
    """``F(w)`` with failed programs (``+inf`` entries) left out."""
    per_cell = np.where(np.isinf(ev.per_cell) & (ev.per_cell > 0), -np.inf, ev.per_cell)
    return np.maximum(per_cell.max(axis=0), ev.xin) if per_cell.size else np.asarray(ev.xin, dtype=float)


def policy_iterate(ctx: Context, w0: BoundVector | Sequence[float]) -> IterationTrace:
    """Run the algorithm from the post-fixpoint ``w0``.

    Raises :class:`NotPostFixpoint` when ``F(w0) <= w0`` fails by more than ``post_tol``.
    """
    opts = ctx.opts
    basis = ctx.basis
    w = np.asarray(w0.values if isinstance(w0, BoundVector) else w0, dtype=float)
    trace = IterationTrace(basis)
    for k in range(opts.max_iter + 1):
        t0 = time.perf_counter()
        ev = eval_relaxed_F(ctx, w)
        step = IterationStep(k, w.copy(), ev.values.copy(),
                             ev.policy.summary(basis), ev.max_residual)
        trace.steps.append(step)
        if k == 0:
            bad = _violations(basis, _known_values(ev), w, opts.post_tol)
            if bad:
                raise NotPostFixpoint(bad)
        if ev.failure is not None:
            f = ev.failure
            trace.reason = SOL_EMPTY
            trace.message = f"no accepted SOS solution for cell {f.cell + 1}, template {basis.names[f.template]}: {f.message}"
            step.seconds = time.perf_counter() - t0
            break
        gap = float(np.max(np.abs(ev.values - w))) if len(w) else 0.0
        log.info("iteration %d: w=%s F(w)=%s gap=%.3g", k, np.round(w, 6), np.round(ev.values, 6), gap)
        if gap <= opts.fix_tol:
            trace.reason = FIXPOINT
            step.seconds = time.perf_counter() - t0
            break
        if k == opts.max_iter:
            trace.reason = MAX_ITER
            step.seconds = time.perf_counter() - t0
            break
        cons = relax_at(build_phi(ev.policy, w, basis), w, opts.post_tol)
        prob = policy_improve(cons, ev.xin, basis)
        res = lp.solve_lp(prob)
        step.lp_text = prob.dump()
        step.lp_status = res.status
        step.seconds = time.perf_counter() - t0
        if res.status != lp.OPTIMAL:
            trace.reason = SOL_EMPTY
            trace.message = f"policy LP is {res.status}"
            break
        step.lp_solution = res.x.copy()
        # the LP optimum never exceeds w (w is feasible); clip round-off so the chain descends
        w = np.minimum(res.x, w)
    trace.final = w
    return trace


# -- initialisation --------------------------------------------------------------


@dataclass
class SynthResult:
    p: Polynomial
    w: float
    basis: TemplateBasis
    w0: BoundVector
    solution: sos.SosSolution


def synth_template(sys: PpsSystem, m: int, opts: AnalysisOptions | None = None, validate: bool = True) -> SynthResult:
    """Template ``p`` of degree ``2m`` and bound ``w`` with ``|x|^2 <= w + p`` on an inductive set.

    The basis is ``{x_i^2} ∪ {p}`` with ``w0(x_i^2) = w`` and ``w0(p) = 0``.
    """
    opts = opts or AnalysisOptions()
    prob = sos.compile_template_synthesis(sys, m)
    sol = sos.solve(prob, opts.sos)
    if not sol.accepted or not math.isfinite(sol.objective_value):
        raise NoGoodInvariant(f"template synthesis at degree {2 * m}: {sol.message or sol.status}")
    p = sos.template_from_solution(sol, sys.dim, m)
    w = sol.objective_value
    basis = TemplateBasis.squares_and(sys.dim, [p])
    w0 = BoundVector(basis, tuple([w] * sys.dim + [0.0]))
    if validate:
        ctx = Context(sys, basis, AnalysisOptions(**{**opts.__dict__, "m": opts.m or m}))
        ev = eval_relaxed_F(ctx, w0)
        if ev.failure is not None:
            raise NoGoodInvariant(f"post-fixpoint check at degree {2 * m}: {ev.failure.message}")
        bad = _violations(basis, ev.values, w0.array, opts.post_tol)
        if bad:
            raise NoGoodInvariant(f"degree {2 * m}: synthesized bounds are not a post-fixpoint ({bad[0][0]}: {bad[0][1]:.6g} > {bad[0][2]:.6g})")
    return SynthResult(p, w, basis, w0, sol)


@dataclass
class InductiveReport:
    verdict: bool | None  # None: inconclusive (some SOS program failed)
    Fw: np.ndarray
    violations: list[tuple[str, float, float]]
    message: str = ""


def check_inductive(ctx: Context, w: BoundVector | Sequence[float], tol: float | None = None) -> InductiveReport:
    """``F(w) <= w`` componentwise, i.e. ``w*`` is certified inductive and contains ``Xin``."""
    tol = ctx.opts.post_tol if tol is None else tol
    wv = np.asarray(w.values if isinstance(w, BoundVector) else w, dtype=float)
    ev = eval_relaxed_F(ctx, wv)
    # failed programs show up as +inf; judge the remaining entries first
    bad = _violations(ctx.basis, _known_values(ev), wv, tol)
    if bad:
        return InductiveReport(False, ev.values, bad)
    if ev.failure is not None:
        f = ev.failure
        return InductiveReport(None, ev.values, [], f"cell {f.cell + 1}, {ctx.basis.names[f.template]}: {f.message}")
    return InductiveReport(True, ev.values, [])
