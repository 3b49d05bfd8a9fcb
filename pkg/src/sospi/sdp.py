"""Small dense semidefinite programming solver and SDPA sparse-format I/O.

Problem form (minimization)::

    min   sum_b <C_b, X_b> + c_f . x_f
    s.t.  sum_b <A_kb, X_b> + (B x_f)_k = b_k     k = 1..m
          X_b PSD (positive block size) or X_b >= 0 elementwise (negative size)
          x_f free

The dual is ``max b.y`` s.t. ``S_b = C_b - sum_k y_k A_kb`` PSD and ``B^T y = c_f``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITER = "max_iter"


@dataclass
class SdpProblem:
    """Block SDP data.

    ``A[b]`` is a sparse ``(m, n*n)`` matrix for a PSD block of size ``n`` (row ``k`` is
    the row-major flattening of the symmetric ``A_kb``) and ``(m, n)`` for a diagonal
    block. ``C[b]`` is ``(n, n)`` or ``(n,)`` accordingly.
    """

    block_sizes: list[int]
    A: list[sp.csr_matrix]
    C: list[np.ndarray]
    b: np.ndarray
    free_A: np.ndarray | None = None
    free_c: np.ndarray | None = None
    block_names: list[str] = field(default_factory=list)
    free_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        m = self.b.shape[0]
        if len(self.A) != len(self.block_sizes) or len(self.C) != len(self.block_sizes):
            raise ValueError("one A and one C per block are required")
        for size, A, C in zip(self.block_sizes, self.A, self.C):
            n = abs(size)
            width = n * n if size > 0 else n
            if A.shape != (m, width):
                raise ValueError(f"block of size {size}: A has shape {A.shape}, expected {(m, width)}")
            if C.shape != ((n, n) if size > 0 else (n,)):
                raise ValueError(f"block of size {size}: C has shape {C.shape}")
        if self.free_A is None:
            self.free_A = np.zeros((m, 0))
            self.free_c = np.zeros(0)
        fa = np.asarray(self.free_A, dtype=float)
        self.free_A = fa.reshape(m, fa.size // m if m else 0) if fa.size or m else np.zeros((m, 0))
        self.free_c = np.asarray(self.free_c, dtype=float).reshape(-1)
        if self.free_c.shape[0] != self.free_A.shape[1]:
            raise ValueError("free variable cost and constraint columns disagree")
        if not self.block_names:
            self.block_names = [f"block{i}" for i in range(len(self.block_sizes))]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def n_free(self) -> int:
        return self.free_c.shape[0]

    def constraint_matrix(self, k: int, blk: int) -> np.ndarray:
        size = self.block_sizes[blk]
        row = self.A[blk].getrow(k).toarray().ravel()
        return row.reshape(size, size) if size > 0 else np.diag(row)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        for size, A, C in zip(self.block_sizes, self.A, self.C):
            if size > 0:
                n = size
                perm = (np.arange(n * n).reshape(n, n).T).ravel()
                if abs(A - A[:, perm]).max() > tol if A.nnz else False:
                    return False
                if np.abs(C - C.T).max() > tol:
                    return False
        return True


@dataclass
class SdpOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200
    max_block_dim: int = 200
    max_constraints: int = 2000
    step_fraction: float = 0.98
    divergence: float = 1e10
    stall_iters: int = 30
    refine_steps: int = 2
    fallback_infeas: float = 5e-7


@dataclass
class SdpSolution:
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    x_free: np.ndarray
    status: str
    primal_objective: float
    dual_objective: float
    gap: float
    primal_infeas: float
    dual_infeas: float
    iterations: int
    history: list[dict] = field(default_factory=list)
    message: str = ""
    solve_time: float = 0.0

    @property
    def objective(self) -> float:
        return self.primal_objective


# -- block helpers -------------------------------------------------------------


def _inner(sizes, U, V) -> float:
    return float(sum(np.vdot(u, v) for u, v in zip(U, V)))


def _norm(blocks) -> float:
    return float(np.sqrt(sum(np.vdot(u, u) for u in blocks)))


def _max_step(size: int, Z: np.ndarray, dZ: np.ndarray) -> float:
    """Largest alpha with Z + alpha*dZ PSD (or nonnegative), Z assumed interior."""
    if size < 0:
        neg = dZ < 0
        if not neg.any():
            return np.inf
        return float(np.min(-Z[neg] / dZ[neg]))
    if Z.shape[0] == 0:
        return np.inf
    try:
        L = np.linalg.cholesky(Z)
    except np.linalg.LinAlgError:
        return 0.0  # iterate lost definiteness to round-off; the caller stalls out
    W = sla.solve_triangular(L, dZ, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))[0]
    return np.inf if lam >= 0 else float(-1.0 / lam)


class _Solver:
    def __init__(self, prob: SdpProblem, opts: SdpOptions):
        self.p = prob
        self.o = opts
        self.sizes = prob.block_sizes
        self.m = prob.m
        self.nf = prob.n_free
        self.N = sum(abs(s) for s in self.sizes)
        # dense copies of the rows touching each PSD block, reused for the Schur complement
        self.dense = []
        for size, A in zip(self.sizes, prob.A):
            if size > 0:
                rows = np.unique(A.tocoo().row)
                self.dense.append((rows, A[rows].toarray().reshape(len(rows), size, size)))
            else:
                self.dense.append((None, A.tocsc()))
        self.AT = [A.T.tocsr() for A in prob.A]

    def Aop(self, X) -> np.ndarray:
        out = np.zeros(self.m)
        for A, Xb in zip(self.p.A, X):
            out += A @ Xb.ravel()
        return out

    def ATop(self, y) -> list[np.ndarray]:
        out = []
        for size, AT in zip(self.sizes, self.AT):
            v = AT @ y
            out.append(v.reshape(size, size) if size > 0 else v)
        return out

    def schur(self, X, Sinv) -> np.ndarray:
        M = np.zeros((self.m, self.m))
        for size, (rows, data), Xb, Si in zip(self.sizes, self.dense, X, Sinv):
            if size > 0:
                if len(rows) == 0:
                    continue
                G = np.matmul(np.matmul(Xb, data), Si)
                flatA = data.reshape(len(rows), -1)
                flatG = G.transpose(0, 2, 1).reshape(len(rows), -1)
                M[np.ix_(rows, rows)] += flatA @ flatG.T
            else:
                D = Xb * Si
                Ad = data
                M += (Ad.multiply(D[None, :]) @ Ad.T).toarray() if sp.issparse(Ad) else (Ad * D) @ Ad.T
        return 0.5 * (M + M.T)

    def run(self) -> SdpSolution:
        p, o = self.p, self.o
        t0 = time.perf_counter()
        sizes = self.sizes
        b, C = p.b, p.C
        B, cf = p.free_A, p.free_c
        normb = 1.0 + np.linalg.norm(b)
        normC = 1.0 + _norm(C) + np.linalg.norm(cf)

        # starting point: X = tp*I, S = td*I, y = 0
        Anorm = max([abs(A).max() if A.nnz else 0.0 for A in p.A] + [np.abs(B).max() if B.size else 0.0, 1.0])
        tp = max(10.0, np.sqrt(self.N), float(np.max(1 + np.abs(b)) / Anorm) * np.sqrt(self.N))
        td = max(10.0, np.sqrt(self.N), normC)
        X = [tp * np.eye(s) if s > 0 else tp * np.ones(-s) for s in sizes]
        S = [td * np.eye(s) if s > 0 else td * np.ones(-s) for s in sizes]
        y = np.zeros(self.m)
        xf = np.zeros(self.nf)

        history = []
        status, message = MAX_ITER, ""
        best = None
        best_merit = None
        stall = 0
        it = 0
        for it in range(o.max_iter + 1):
            rp = b - self.Aop(X) - B @ xf
            ATy = self.ATop(y)
            Rd = [Cb - Ab - Sb for Cb, Ab, Sb in zip(C, ATy, S)]
            rf = cf - B.T @ y
            pobj = _inner(sizes, C, X) + float(cf @ xf)
            dobj = float(b @ y)
            mu = _inner(sizes, X, S) / max(self.N, 1)
            pinf = np.linalg.norm(rp) / normb
            dinf = np.sqrt(_norm(Rd) ** 2 + float(rf @ rf)) / normC
            gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
            history.append(dict(it=it, pobj=pobj, dobj=dobj, gap=gap, pinf=pinf, dinf=dinf, mu=mu))
            merit = max(gap, pinf, dinf)
            if best_merit is None or merit < best_merit:
                best_merit, stall = merit, 0
            else:
                stall += 1
            # fallback iterate when the run does not converge: primal feasibility is
            # what validates a decoded certificate, so prefer iterates whose primal
            # residual is below fallback_infeas and among those the smallest gap
            rmax = float(np.max(np.abs(rp))) if self.m else 0.0
            key = (0, max(gap, dinf)) if rmax <= o.fallback_infeas else (1, rmax)
            if best is None or key < best[0]:
                best = (key, it, [x.copy() for x in X], y.copy(), [s.copy() for s in S], xf.copy())
            if gap <= o.gap_tol and pinf <= o.feas_tol and dinf <= o.feas_tol:
                status = OPTIMAL
                break
            xnorm = _norm(X) + np.linalg.norm(xf)
            if np.linalg.norm(y) > o.divergence and dinf < 1e-6 and dobj > 0:
                status, message = INFEASIBLE, "dual iterates diverge with b.y -> +inf"
                break
            if xnorm > o.divergence and pinf < 1e-6 and pobj < 0:
                status, message = DUAL_INFEASIBLE, "primal iterates diverge with objective -> -inf"
                break
            if it == o.max_iter:
                message = "iteration limit"
                break
            if stall >= o.stall_iters:
                message = f"no progress for {stall} iterations"
                break

            try:
                Sinv = [np.linalg.inv(Sb) if s > 0 else 1.0 / Sb for s, Sb in zip(sizes, S)]
                Sinv = [0.5 * (Si + Si.T) if s > 0 else Si for s, Si in zip(sizes, Sinv)]
                M = self.schur(X, Sinv)
                reg = 1e-14 * max(1.0, float(np.max(np.abs(np.diag(M))))) if self.m else 0.0
                K = np.zeros((self.m + self.nf, self.m + self.nf))
                K[: self.m, : self.m] = M + reg * np.eye(self.m)
                K[: self.m, self.m :] = B
                K[self.m :, : self.m] = B.T
                lu = sla.lu_factor(K, check_finite=True)
            except (np.linalg.LinAlgError, ValueError) as exc:
                message = f"numerical breakdown: {exc}"
                break

            def direction(sigma, corr):
                # target X S = sigma*mu*I; dX = Kmat + X (A^T dy) S^-1 after eliminating dS
                Kmat = []
                for s, Xb, Si, Rb, cb in zip(sizes, X, Sinv, Rd, corr):
                    if s > 0:
                        T = sigma * mu * Si - Xb - Xb @ Rb @ Si
                    else:
                        T = sigma * mu * Si - Xb - Xb * Rb * Si
                    if cb is not None:
                        T = T - cb
                    Kmat.append(T)
                rhs = np.concatenate([rp - self.Aop(Kmat), rf])
                sol = sla.lu_solve(lu, rhs)
                for _ in range(o.refine_steps + 1):
                    dy, dxf = sol[: self.m], sol[self.m :]
                    ATdy = self.ATop(dy)
                    dX = []
                    for s, Xb, Si, T, Ab in zip(sizes, X, Sinv, Kmat, ATdy):
                        if s > 0:
                            D = T + Xb @ Ab @ Si
                            dX.append(0.5 * (D + D.T))
                        else:
                            dX.append(T + Xb * Ab * Si)
                    # iterative refinement against the unfactored operator
                    e = np.concatenate([rp - self.Aop(dX) - B @ dxf, rf - B.T @ dy])
                    if not np.all(np.isfinite(e)) or np.linalg.norm(e) <= 1e-15 * normb:
                        break
                    sol = sol + sla.lu_solve(lu, e)
                dS = [Rb - Ab for Rb, Ab in zip(Rd, ATdy)]
                return dX, dy, dS, dxf

            none = [None] * len(sizes)
            dXa, dya, dSa, dxfa = direction(0.0, none)
            ap = min(1.0, min((_max_step(s, Xb, d) for s, Xb, d in zip(sizes, X, dXa)), default=np.inf))
            ad = min(1.0, min((_max_step(s, Sb, d) for s, Sb, d in zip(sizes, S, dSa)), default=np.inf))
            mu_aff = _inner(sizes, [x + ap * d for x, d in zip(X, dXa)], [s_ + ad * d for s_, d in zip(S, dSa)]) / max(self.N, 1)
            sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0)) if mu > 0 else 0.0
            corr = []
            for s, dXb, dSb, Si in zip(sizes, dXa, dSa, Sinv):
                corr.append(dXb @ dSb @ Si if s > 0 else dXb * dSb * Si)
            dX, dy, dS, dxf = direction(sigma, corr)

            ap = min((_max_step(s, Xb, d) for s, Xb, d in zip(sizes, X, dX)), default=np.inf)
            ad = min((_max_step(s, Sb, d) for s, Sb, d in zip(sizes, S, dS)), default=np.inf)
            ap = min(1.0, o.step_fraction * ap)
            ad = min(1.0, o.step_fraction * ad)
            X = [Xb + ap * d for Xb, d in zip(X, dX)]
            xf = xf + ap * dxf
            y = y + ad * dy
            S = [Sb + ad * d for Sb, d in zip(S, dS)]
            X = [0.5 * (Xb + Xb.T) if s > 0 else Xb for s, Xb in zip(sizes, X)]
            S = [0.5 * (Sb + Sb.T) if s > 0 else Sb for s, Sb in zip(sizes, S)]
            history[-1].update(step_p=ap, step_d=ad, sigma=sigma)

        if status == MAX_ITER and best is not None:
            _, it_best, X, y, S, xf = best
            h = history[it_best]
            pobj, dobj, gap, pinf, dinf = h["pobj"], h["dobj"], h["gap"], h["pinf"], h["dinf"]
        return SdpSolution(
            X=X, y=y, S=S, x_free=xf, status=status,
            primal_objective=pobj, dual_objective=dobj, gap=gap,
            primal_infeas=pinf, dual_infeas=dinf, iterations=it,
            history=history, message=message, solve_time=time.perf_counter() - t0,
        )


def solve(prob: SdpProblem, opts: SdpOptions | None = None) -> SdpSolution:
    opts = opts or SdpOptions()
    psd = [s for s in prob.block_sizes if s > 0]
    total = sum(abs(s) for s in prob.block_sizes)
    if total > opts.max_block_dim * max(1, len(psd)) or (psd and max(psd) > opts.max_block_dim):
        raise ValueError(f"block dimension {max(psd, default=0)} exceeds the cap {opts.max_block_dim}")
    if prob.m > opts.max_constraints:
        raise ValueError(f"{prob.m} constraints exceed the cap {opts.max_constraints}")
    sol = _Solver(prob, opts).run()
    log.debug("sdp: %s after %d iterations, pobj=%.10g gap=%.2e pinf=%.2e dinf=%.2e",
              sol.status, sol.iterations, sol.primal_objective, sol.gap, sol.primal_infeas, sol.dual_infeas)
    return sol


# -- SDPA sparse format ----------------------------------------------------------
#
# SDPA-reading solvers (CSDP, SDPA) treat the file as ``max <F0, Y>`` subject to
# ``<F_k, Y> = c_k``, so matrix 0 carries the objective of the equivalent maximization,
# ``-C``. Free variables become a trailing diagonal block of pairs ``x = u - v``. Two
# comment lines record block names and the split so the parser can undo it.


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_sdpa(prob: SdpProblem) -> str:
    """Render ``prob`` as an SDPA ``.dat-s`` file."""
    sizes = list(prob.block_sizes)
    As = list(prob.A)
    Cs = list(prob.C)
    nf = prob.n_free
    if nf:
        sizes.append(-2 * nf)
        As.append(sp.csr_matrix(np.hstack([prob.free_A, -prob.free_A])))
        Cs.append(np.concatenate([prob.free_c, -prob.free_c]))
    lines = [
        "* blocks " + " ".join(prob.block_names),
        f"* free {nf} " + " ".join(prob.free_names),
        str(prob.m),
        str(len(sizes)),
        " ".join(str(s) for s in sizes),
        " ".join(_fmt(v) for v in prob.b),
    ]

    def entries(k: int, blk: int, size: int, flat: np.ndarray) -> None:
        n = abs(size)
        if size < 0:
            for i in np.flatnonzero(flat):
                lines.append(f"{k} {blk + 1} {i + 1} {i + 1} {_fmt(flat[i])}")
            return
        M = flat.reshape(n, n)
        for i, j in zip(*np.nonzero(np.triu(M))):
            lines.append(f"{k} {blk + 1} {i + 1} {j + 1} {_fmt(M[i, j])}")

    for blk, (size, C) in enumerate(zip(sizes, Cs)):
        entries(0, blk, size, -np.asarray(C, dtype=float).ravel())
    dense = [A.toarray() for A in As]
    for k in range(prob.m):
        for blk, size in enumerate(sizes):
            entries(k + 1, blk, size, dense[blk][k])
    return "\n".join(lines) + "\n"


def parse_sdpa(text: str) -> SdpProblem:
    """Inverse of :func:`export_sdpa`; also reads plain SDPA files without the comments."""
    names: list[str] = []
    free_names: list[str] = []
    nf = 0
    body = []
    for raw in text.splitlines():
        if raw.startswith(("*", '"')):
            words = raw[1:].split()
            if words[:1] == ["blocks"]:
                names = words[1:]
            elif words[:1] == ["free"]:
                nf = int(words[1])
                free_names = words[2:]
            continue
        body.append(raw)
    if len(body) < 4:
        raise ValueError("SDPA file needs four header lines")

    def numbers(line: str) -> list[str]:
        for ch in "{}(),":
            line = line.replace(ch, " ")
        return line.split()

    m = int(numbers(body[0])[0])
    nblocks = int(numbers(body[1])[0])
    sizes = [int(s) for s in numbers(body[2])[:nblocks]]
    b = np.array([float(v) for v in numbers(body[3])[:m]])
    if b.shape[0] != m or len(sizes) != nblocks:
        raise ValueError("SDPA header is inconsistent")
    C = [np.zeros((s, s)) if s > 0 else np.zeros(-s) for s in sizes]
    A = [np.zeros((m, s * s)) if s > 0 else np.zeros((m, -s)) for s in sizes]
    for line in body[4:]:
        tok = numbers(line)
        if not tok:
            continue
        k, blk, i, j = (int(t) for t in tok[:4])
        v = float(tok[4])
        size = sizes[blk - 1]
        i, j = min(i, j) - 1, max(i, j) - 1
        if k == 0:
            if size < 0:
                C[blk - 1][i] = -v
            else:
                C[blk - 1][i, j] = C[blk - 1][j, i] = -v
        else:
            if size < 0:
                A[blk - 1][k - 1, i] = v
            else:
                n = size
                A[blk - 1][k - 1, i * n + j] = A[blk - 1][k - 1, j * n + i] = v
    free_A = free_c = None
    if nf:
        fa, fc = A.pop(), C.pop()
        sizes.pop()
        free_A, free_c = fa[:, :nf], fc[:nf]
    return SdpProblem(
        block_sizes=sizes,
        A=[sp.csr_matrix(a) for a in A],
        C=C,
        b=b,
        free_A=free_A,
        free_c=free_c,
        block_names=names if len(names) == len(sizes) else [],
        free_names=free_names,
    )
