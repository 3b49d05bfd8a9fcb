"""Compile SOS programs over polynomial identities into block SDPs and decode the answers.

Every program here has the same shape: a list of polynomial identities

    fixed + sum_s scalar_s * f_s + sum_j g_j * sigma_j == 0

where the ``scalar_s`` are real unknowns (free or nonnegative), the ``sigma_j`` are
SOS polynomials given by Gram matrices over a monomial basis and the ``f_s``/``g_j``
are known polynomials. Each monomial of an identity becomes one linear equality.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import sdp
from .poly import (
    Monomial,
    MonomialBasis,
    Polynomial,
    gram_expand,
    monomial_key,
    monomial_str,
    monomials_up_to,
    squared_norm,
)
from .semialg import PpsSystem

log = logging.getLogger(__name__)

FREE = "free"
NONNEG = "nonneg"

# degree caps of the relaxed programs: the effective degree of p o T (at least 2m),
# or the ambient bound 2m * deg T
CAP_EFFECTIVE = "effective"
CAP_AMBIENT = "ambient"


@dataclass(frozen=True)
class SosVar:
    name: str
    dim: int
    half_degree: int

    @property
    def basis(self) -> MonomialBasis:
        return MonomialBasis(self.dim, self.half_degree)


@dataclass
class Identity:
    name: str
    fixed: Polynomial
    scalars: dict[str, Polynomial] = field(default_factory=dict)
    sos: list[tuple[str, Polynomial]] = field(default_factory=list)


@dataclass
class SosProblem:
    dim: int
    scalars: dict[str, str]  # name -> FREE | NONNEG, in declaration order
    sos_vars: list[SosVar]
    identities: list[Identity]
    objective: dict[str, float]
    kind: str = ""
    meta: dict = field(default_factory=dict)
    #: identity monomials that no unknown can produce: (identity, monomial, coefficient)
    unmatched: list[tuple[str, Monomial, float]] = field(default_factory=list)
    #: Gram bases after :func:`reduce_bases`; missing names use the full basis
    bases: dict[str, MonomialBasis] = field(default_factory=dict)

    def sos_var(self, name: str) -> SosVar:
        for v in self.sos_vars:
            if v.name == name:
                return v
        raise KeyError(name)

    def basis(self, name: str) -> MonomialBasis:
        if name in self.bases:
            return self.bases[name]
        return self.sos_var(name).basis

    def describe(self, names: Sequence[str] | None = None) -> str:
        """Human-readable listing of the identities and degree caps."""
        lines = [f"# {self.kind} {self.meta}".rstrip()]
        obj = " + ".join(f"{c:g}*{n}" for n, c in self.objective.items()) or "0"
        lines.append(f"minimize {obj}")
        for n, kind in self.scalars.items():
            lines.append(f"  scalar {n}: {kind}")
        for v in self.sos_vars:
            n = len(self.basis(v.name))
            lines.append(f"  sos {v.name}: degree <= {2 * v.half_degree} (Gram {n}x{n})")
        for ident in self.identities:
            parts = [f"({ident.fixed.to_string(names)})"]
            for n, f in ident.scalars.items():
                parts.append(f"{n}*({f.to_string(names)})")
            for n, g in ident.sos:
                parts.append(f"({g.to_string(names)})*{n}")
            lines.append(f"  [{ident.name}] " + " + ".join(parts) + " == 0")
        for ident, mono, c in self.unmatched:
            lines.append(f"  ! {ident}: monomial {monomial_str(mono, names)} (coefficient {c:.3e}) unreachable under the caps")
        return "\n".join(lines)


@dataclass
class SosOptions:
    cap_mode: str = CAP_EFFECTIVE
    cap: int | None = None
    #: accepted identity residual, relative to :func:`data_scale` (never below this value)
    residual_tol: float = 1e-6
    psd_tol: float = 1e-8
    vol_factor: float = 1.0
    #: terms of p o T below this magnitude do not raise the default degree cap
    noise_tol: float = 1e-9
    sdp: sdp.SdpOptions = field(default_factory=sdp.SdpOptions)


@dataclass
class SosSolution:
    objective_value: float
    scalars: dict[str, float]
    grams: dict[str, tuple[np.ndarray, MonomialBasis]]
    residual: float
    min_eig: float
    accepted: bool
    status: str
    raw_objective: float
    message: str = ""
    sdp_iterations: int = 0

    def scalar(self, name: str, default: float = 0.0) -> float:
        return self.scalars.get(name, default)


class DegreeCapError(ValueError):
    """The requested degree caps cannot represent the fixed part of an identity."""


# -- compilation to SDP ----------------------------------------------------------


def _shift(m1: Monomial, m2: Monomial) -> Monomial:
    return tuple(a + b for a, b in zip(m1, m2))


def reduce_bases(prob: SosProblem) -> dict[str, MonomialBasis]:
    """Drop Gram basis monomials whose diagonal entry every solution must set to zero.

    A monomial row of an identity that has no fixed part, no scalar term and no
    off-diagonal Gram contribution, and whose diagonal contributions all share one
    sign, forces each of those diagonal entries (hence the whole row and column of
    a PSD matrix) to vanish. Repeats until nothing changes. Removing such entries
    restores strict feasibility without changing the feasible set.
    """
    bases = {v.name: v.basis for v in prob.sos_vars}
    while True:
        rows: dict[tuple[int, Monomial], dict] = {}

        def row(k, mono):
            return rows.setdefault((k, mono), {"blocked": False, "diag": []})

        for k, ident in enumerate(prob.identities):
            for mono in ident.fixed.monomials():
                row(k, mono)["blocked"] = True
            for f in ident.scalars.values():
                for mono in f.monomials():
                    row(k, mono)["blocked"] = True
            for name, g in ident.sos:
                entries = bases[name].entries
                for mg, cg in g.items():
                    for i, bi in enumerate(entries):
                        row(k, _shift(mg, _shift(bi, bi)))["diag"].append((name, bi, cg))
                        for bj in entries[i + 1:]:
                            row(k, _shift(mg, _shift(bi, bj)))["blocked"] = True
        drop: dict[str, set[Monomial]] = {}
        for info in rows.values():
            if info["blocked"] or not info["diag"]:
                continue
            signs = {np.sign(c) for _, _, c in info["diag"]}
            if len(signs) == 1:
                for name, bi, _ in info["diag"]:
                    drop.setdefault(name, set()).add(bi)
        if not drop:
            break
        for name, monos in drop.items():
            bases[name] = bases[name].restrict([m for m in bases[name] if m not in monos])
    return bases


def to_sdp(prob: SosProblem, reduce: bool = True) -> tuple[sdp.SdpProblem, dict]:
    """Build the block SDP. Returns the problem and the layout needed by :func:`decode`."""
    rows: dict[tuple[int, Monomial], int] = {}
    reachable: set[tuple[int, Monomial]] = set()
    prob.bases = reduce_bases(prob) if reduce else {v.name: v.basis for v in prob.sos_vars}
    bases = prob.bases

    # collect the monomials some unknown can produce, per identity
    for k, ident in enumerate(prob.identities):
        for f in ident.scalars.values():
            reachable.update((k, m) for m in f.monomials())
        for name, g in ident.sos:
            basis = bases[name]
            sums = {_shift(bi, bj) for bi in basis for bj in basis}
            for mg in g.monomials():
                reachable.update((k, _shift(mg, s)) for s in sums)

    unmatched = []
    for k, ident in enumerate(prob.identities):
        for mono in ident.fixed.monomials():
            if (k, mono) not in reachable:
                unmatched.append((ident.name, mono, ident.fixed.coeff(mono)))
    prob.unmatched = unmatched

    for key in sorted(reachable, key=lambda t: (t[0], monomial_key(t[1]))):
        rows[key] = len(rows)
    m = len(rows)

    b = np.zeros(m)
    for k, ident in enumerate(prob.identities):
        for mono, c in ident.fixed.items():
            if (k, mono) in rows:
                b[rows[(k, mono)]] = -c

    free_names = [n for n, kind in prob.scalars.items() if kind == FREE]
    nonneg_names = [n for n, kind in prob.scalars.items() if kind == NONNEG]
    free_idx = {n: i for i, n in enumerate(free_names)}
    nonneg_idx = {n: i for i, n in enumerate(nonneg_names)}

    B = np.zeros((m, len(free_names)))
    lp_r, lp_c, lp_v = [], [], []
    for k, ident in enumerate(prob.identities):
        for name, f in ident.scalars.items():
            for mono, c in f.items():
                r = rows[(k, mono)]
                if prob.scalars[name] == FREE:
                    B[r, free_idx[name]] += c
                else:
                    lp_r.append(r)
                    lp_c.append(nonneg_idx[name])
                    lp_v.append(c)

    block_sizes, A_blocks, C_blocks, names = [], [], [], []
    sos_layout = []
    for v in prob.sos_vars:
        basis = bases[v.name]
        n = len(basis)
        if n == 0:
            continue
        ri, ci, vi = [], [], []
        for k, ident in enumerate(prob.identities):
            for name, g in ident.sos:
                if name != v.name:
                    continue
                for mg, cg in g.items():
                    for i, bi in enumerate(basis):
                        for j, bj in enumerate(basis):
                            ri.append(rows[(k, _shift(mg, _shift(bi, bj)))])
                            ci.append(i * n + j)
                            vi.append(cg)
        A_blocks.append(sp.csr_matrix((vi, (ri, ci)), shape=(m, n * n)))
        C_blocks.append(np.zeros((n, n)))
        block_sizes.append(n)
        names.append(v.name)
        sos_layout.append((v.name, len(block_sizes) - 1))

    lp_block = None
    if nonneg_names:
        A_blocks.append(sp.csr_matrix((lp_v, (lp_r, lp_c)), shape=(m, len(nonneg_names))))
        C_blocks.append(np.array([prob.objective.get(n, 0.0) for n in nonneg_names]))
        block_sizes.append(-len(nonneg_names))
        names.append("nonneg")
        lp_block = len(block_sizes) - 1

    cf = np.array([prob.objective.get(n, 0.0) for n in free_names])
    sdp_prob = sdp.SdpProblem(block_sizes, A_blocks, C_blocks, b, B, cf, names, free_names)
    layout = dict(sos=sos_layout, lp_block=lp_block, nonneg=nonneg_names, free=free_names)
    return sdp_prob, layout


def identity_residual(prob: SosProblem, scalars: dict[str, float], grams: dict[str, tuple[np.ndarray, MonomialBasis]]) -> float:
    """Largest absolute coefficient of any identity after substituting the unknowns."""
    worst = 0.0
    expanded = {name: gram_expand(Q, basis) for name, (Q, basis) in grams.items()}
    for ident in prob.identities:
        acc: dict[Monomial, float] = dict(ident.fixed.items())
        for name, f in ident.scalars.items():
            s = scalars.get(name, 0.0)
            for mono, c in f.items():
                acc[mono] = acc.get(mono, 0.0) + s * c
        for name, g in ident.sos:
            for mono, c in (g * expanded[name]).items():
                acc[mono] = acc.get(mono, 0.0) + c
        worst = max(worst, max((abs(c) for c in acc.values()), default=0.0))
    return worst


def data_scale(prob: SosProblem) -> float:
    """Largest known coefficient in the identities, at least 1."""
    scale = 1.0
    for ident in prob.identities:
        scale = max(scale, ident.fixed.max_abs_coeff() if len(ident.fixed) else 0.0)
        for f in [*ident.scalars.values(), *(g for _, g in ident.sos)]:
            scale = max(scale, f.max_abs_coeff() if len(f) else 0.0)
    return scale


def decode(sol: sdp.SdpSolution, prob: SosProblem, layout: dict, opts: SosOptions | None = None) -> SosSolution:
    opts = opts or SosOptions()
    tol = opts.residual_tol * data_scale(prob)
    if sol.status == sdp.INFEASIBLE:
        return SosSolution(math.inf, {}, {}, math.inf, -math.inf, False, sol.status, math.inf, sol.message, sol.iterations)
    if sol.status == sdp.DUAL_INFEASIBLE:
        return SosSolution(-math.inf, {}, {}, 0.0, 0.0, True, sol.status, -math.inf, sol.message, sol.iterations)

    scalars = {n: float(v) for n, v in zip(layout["free"], sol.x_free)}
    if layout["lp_block"] is not None:
        for n, v in zip(layout["nonneg"], sol.X[layout["lp_block"]]):
            scalars[n] = max(float(v), 0.0)
    grams = {}
    min_eig = math.inf
    for v in prob.sos_vars:  # fully reduced multipliers are identically zero
        grams[v.name] = (np.zeros((0, 0)), prob.basis(v.name))
    for name, blk in layout["sos"]:
        Q = 0.5 * (sol.X[blk] + sol.X[blk].T)
        grams[name] = (Q, prob.basis(name))
        if Q.size:
            min_eig = min(min_eig, float(np.linalg.eigvalsh(Q)[0]))
    residual = identity_residual(prob, scalars, grams)
    raw = sum(c * scalars.get(n, 0.0) for n, c in prob.objective.items())
    accepted = residual <= tol and min_eig >= -opts.psd_tol
    value = raw + residual * opts.vol_factor
    message = sol.message
    if not accepted:
        message = f"rejected: residual {residual:.2e}, min Gram eigenvalue {min_eig:.2e} ({sol.status})"
        value = math.inf
    return SosSolution(value, scalars, grams, residual, min_eig, accepted, sol.status, raw, message, sol.iterations)


def solve(prob: SosProblem, opts: SosOptions | None = None) -> SosSolution:
    opts = opts or SosOptions()
    sdp_prob, layout = to_sdp(prob)
    sdp_opts = opts.sdp
    tol = opts.residual_tol * data_scale(prob)
    if sdp_opts.fallback_infeas > 0.5 * tol:
        sdp_opts = dataclasses.replace(sdp_opts, fallback_infeas=0.5 * tol)
    sol = sdp.solve(sdp_prob, sdp_opts)
    out = decode(sol, prob, layout, opts)
    log.debug("%s %s: value=%.8g residual=%.2e status=%s", prob.kind, prob.meta, out.objective_value, out.residual, out.status)
    return out


# -- degree bookkeeping ----------------------------------------------------------


def _even_ceil(n: int) -> int:
    return n + (n % 2)


def template_half_degree(templates: Sequence[Polynomial]) -> int:
    return max(1, math.ceil(max(t.degree() for t in templates) / 2))


def multiplier_half_degree(cap: int, r: Polynomial) -> int:
    """Largest h with deg(mu * r) <= cap for mu of degree 2h; -1 if none."""
    return (cap - r.degree()) // 2 if cap >= r.degree() else -1


def relaxed_cap(sys: PpsSystem, i: int, p: Polynomial, m: int, opts: SosOptions) -> int:
    if opts.cap is not None:
        cap = opts.cap
    elif opts.cap_mode == CAP_AMBIENT:
        cap = 2 * m * sys.update_degree(i)
    else:
        cap = max(2 * m, _even_ceil(effective_degree(p.compose(sys.updates[i]), opts.noise_tol)))
    return cap


def effective_degree(p: Polynomial, noise_tol: float) -> int:
    """Degree ignoring terms with ``|coefficient| <= noise_tol``."""
    return max((sum(m) for m, c in p.items() if abs(c) > noise_tol), default=0)


# -- the programs ----------------------------------------------------------------


def _multiplier_terms(prefix: str, dim: int, cap: int, polys: Sequence[Polynomial]):
    """SOS multipliers ``mu_l`` with ``deg(mu_l r_l) <= cap`` and their identity terms ``+mu_l r_l``."""
    vars_, terms = [], []
    for l, r in enumerate(polys):
        h = multiplier_half_degree(cap, r)
        if h < 0:
            continue
        name = f"{prefix}{l + 1}"
        vars_.append(SosVar(name, dim, h))
        terms.append((name, r))
    return vars_, terms


def lambda_name(k: int) -> str:
    return f"lambda{k + 1}"


def compile_relaxed_Fi(
    sys: PpsSystem,
    i: int,
    p: Polynomial,
    templates: Sequence[Polynomial],
    w: Sequence[float],
    m: int | None = None,
    opts: SosOptions | None = None,
) -> SosProblem:
    """min eta s.t. eta - p o T_i - sum_q lambda_q (w_q - q) + <mu, r_i> + <gamma, r_0> = sigma.

    Entries ``w_q = +inf`` drop their multiplier term. ``i`` is zero-based.
    """
    opts = opts or SosOptions()
    d = sys.dim
    if m is None:
        m = template_half_degree(templates)
    if len(w) != len(templates):
        raise ValueError("one bound per template is required")
    if any(v == -math.inf for v in w):
        raise ValueError("bounds equal to -inf describe an empty set; handle before compiling")
    pT = p.compose(sys.updates[i])
    cap = relaxed_cap(sys, i, p, m, opts)
    if cap < effective_degree(pT, opts.noise_tol) or any(q.degree() > cap for q, wq in zip(templates, w) if math.isfinite(wq)):
        raise DegreeCapError(f"degree cap {cap} is below deg(p o T_{i + 1}) = {pT.degree()}")

    scalars = {"eta": FREE}
    terms = {"eta": Polynomial.constant(1.0, d)}
    for k, (q, wq) in enumerate(zip(templates, w)):
        if not math.isfinite(wq):
            continue
        name = lambda_name(k)
        scalars[name] = NONNEG
        terms[name] = q - wq  # -(w_q - q)
    mu_vars, mu_terms = _multiplier_terms("mu", d, cap, sys.partition.cells[i].polys)
    gamma_vars, gamma_terms = _multiplier_terms("gamma", d, cap, sys.x0.polys)
    sigma = SosVar("sigma", d, cap // 2)
    ident = Identity(
        "relaxed",
        fixed=-pT,
        scalars=terms,
        sos=mu_terms + gamma_terms + [("sigma", Polynomial.constant(-1.0, d))],
    )
    return SosProblem(
        d, scalars, mu_vars + gamma_vars + [sigma], [ident], {"eta": 1.0},
        kind="relaxed_Fi", meta={"cell": i + 1, "cap": cap},
    )


def compile_xin_dagger(sys: PpsSystem, p: Polynomial, m: int | None = None) -> SosProblem:
    """min eta s.t. eta - p + <nu, r_in> = sigma0, all degrees <= 2m."""
    d = sys.dim
    if m is None:
        m = max(1, math.ceil(p.degree() / 2))
    cap = 2 * m
    if p.degree() > cap:
        raise DegreeCapError(f"degree cap {cap} is below deg(p) = {p.degree()}")
    nu_vars, nu_terms = _multiplier_terms("nu", d, cap, sys.x_in.polys)
    ident = Identity(
        "init",
        fixed=-p,
        scalars={"eta": Polynomial.constant(1.0, d)},
        sos=nu_terms + [("sigma0", Polynomial.constant(-1.0, d))],
    )
    return SosProblem(
        d, {"eta": FREE}, nu_vars + [SosVar("sigma0", d, m)], [ident], {"eta": 1.0},
        kind="xin_dagger", meta={"cap": cap},
    )


def compile_sos_feasibility(f: Polynomial) -> SosProblem:
    """Find a Gram matrix with ``f = b(x)^T Q b(x)``, ``Q`` PSD (no objective)."""
    if f.degree() % 2:
        raise DegreeCapError(f"odd degree {f.degree()} cannot be a sum of squares")
    d, m = f.dim, f.degree() // 2
    ident = Identity("sos", fixed=-f, sos=[("sigma", Polynomial.constant(1.0, d))])
    return SosProblem(d, {}, [SosVar("sigma", d, m)], [ident], {}, kind="sos_feasibility")


def sos_decompose(f: Polynomial, opts: SosOptions | None = None) -> tuple[np.ndarray, MonomialBasis, SosSolution]:
    """Gram matrix of ``f`` over the full basis of degree ``deg f / 2``.

    Rows of reduced-away monomials come back as zeros.
    """
    prob = compile_sos_feasibility(f)
    sol = solve(prob, opts)
    full = MonomialBasis(f.dim, f.degree() // 2)
    Q = np.zeros((len(full), len(full)))
    if "sigma" not in sol.grams:  # infeasible: no Gram matrix
        return Q, full, sol
    Qr, br = sol.grams["sigma"]
    idx = [full.index(mono) for mono in br]
    if idx:
        Q[np.ix_(idx, idx)] = Qr
    return Q, full, sol


def template_coeff_name(mono: Monomial) -> str:
    return "c_" + "_".join(str(e) for e in mono)


def compile_template_synthesis(sys: PpsSystem, m: int) -> SosProblem:
    """min w over p in R[x]_2m with
    (a) -p = s0 - sum_j s_j r_in_j,
    (b) p - p o T_i = sigma_i - sum_j mu_ij r_ij - sum_j gamma_ij r0_j for every cell,
    (c) w + p - |x|^2 = psi.

    Cell identities are capped at ``2m deg T_i``, the others at ``2m``.
    """
    if m < 1:
        raise ValueError("half degree must be at least 1")
    d = sys.dim
    monos = monomials_up_to(d, 2 * m)
    coeff_names = [template_coeff_name(a) for a in monos]
    scalars = {n: FREE for n in coeff_names}
    scalars["w"] = FREE
    basis_polys = [Polynomial.monomial(a) for a in monos]

    sos_vars: list[SosVar] = []
    identities: list[Identity] = []

    # (a) p <= 0 on the initial set
    s_vars, s_terms = _multiplier_terms("s_in", d, 2 * m, sys.x_in.polys)
    sos_vars += s_vars + [SosVar("s0", d, m)]
    identities.append(Identity(
        "init",
        fixed=Polynomial.zero(d),
        scalars={n: -bp for n, bp in zip(coeff_names, basis_polys)},
        sos=[("s0", Polynomial.constant(-1.0, d))] + s_terms,
    ))
    # (b) p o T_i <= p on each cell
    for i in range(sys.n_cells):
        Ti = sys.updates[i]
        cap = 2 * m * sys.update_degree(i)
        mu_vars, mu_terms = _multiplier_terms(f"mu{i + 1}_", d, cap, sys.partition.cells[i].polys)
        ga_vars, ga_terms = _multiplier_terms(f"gamma{i + 1}_", d, cap, sys.x0.polys)
        sig = f"sigma{i + 1}"
        sos_vars += mu_vars + ga_vars + [SosVar(sig, d, cap // 2)]
        identities.append(Identity(
            f"cell{i + 1}",
            fixed=Polynomial.zero(d),
            scalars={n: bp - bp.compose(Ti) for n, bp in zip(coeff_names, basis_polys)},
            sos=[(sig, Polynomial.constant(-1.0, d))] + mu_terms + ga_terms,
        ))
    # (c) |x|^2 <= w + p everywhere
    sos_vars.append(SosVar("psi", d, m))
    ident_c = {n: bp for n, bp in zip(coeff_names, basis_polys)}
    ident_c["w"] = Polynomial.constant(1.0, d)
    identities.append(Identity(
        "norm",
        fixed=-squared_norm(d),
        scalars=ident_c,
        sos=[("psi", Polynomial.constant(-1.0, d))],
    ))
    return SosProblem(d, scalars, sos_vars, identities, {"w": 1.0}, kind="template_synthesis", meta={"degree": 2 * m})


def template_from_solution(sol: SosSolution, dim: int, m: int) -> Polynomial:
    return Polynomial({a: sol.scalar(template_coeff_name(a)) for a in monomials_up_to(dim, 2 * m)}, dim)


def compile_emptiness(sys: PpsSystem, cell_polys: Sequence[Polynomial], cap: int) -> SosProblem:
    """min s >= 0 s.t. (s - 1) + sum_l mu_l r_l = sigma.

    An optimum of 0 certifies that ``{r_l <= 0 for all l}`` is empty; otherwise 1.
    """
    d = sys.dim
    mu_vars, mu_terms = _multiplier_terms("mu", d, cap, cell_polys)
    ident = Identity(
        "empty",
        fixed=Polynomial.constant(-1.0, d),
        scalars={"s": Polynomial.constant(1.0, d)},
        sos=mu_terms + [("sigma", Polynomial.constant(-1.0, d))],
    )
    return SosProblem(d, {"s": NONNEG}, mu_vars + [SosVar("sigma", d, cap // 2)], [ident], {"s": 1.0},
                      kind="emptiness", meta={"cap": cap})
