import numpy as np
import pytest
import scipy.sparse as sp

from sospi import sdp, sos
from sospi.poly import Polynomial


def flat_rows(mats):
    return sp.csr_matrix(np.array([M.ravel() for M in mats]))


def trivial():
    """min tr X s.t. X11 = 1, X PSD (2x2)."""
    E11 = np.array([[1.0, 0], [0, 0]])
    return sdp.SdpProblem([2], [flat_rows([E11])], [np.eye(2)], np.array([1.0]))


def test_trivial_analytic_optimum():
    sol = sdp.solve(trivial())
    assert sol.status == sdp.OPTIMAL
    assert sol.primal_objective == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(sol.X[0], np.diag([1.0, 0.0]), atol=1e-6)


def random_problem(rng, n=10, m=15, rank=4):
    """Strictly complementary optimal pair built first: X S = 0, then data fitted to it."""
    U, _ = np.linalg.qr(rng.normal(size=(n, n)))
    X = U[:, :rank] @ np.diag(rng.uniform(0.5, 2, rank)) @ U[:, :rank].T
    S = U[:, rank:] @ np.diag(rng.uniform(0.5, 2, n - rank)) @ U[:, rank:].T
    A = []
    for _ in range(m):
        M = rng.normal(size=(n, n))
        A.append(M + M.T)
    y = rng.normal(size=m)
    C = S + sum(yk * Ak for yk, Ak in zip(y, A))
    C = 0.5 * (C + C.T)
    b = np.array([np.vdot(Ak, X) for Ak in A])
    return sdp.SdpProblem([n], [flat_rows(A)], [C], b), float(np.vdot(C, X))


@pytest.mark.parametrize("seed", range(5))
def test_random_constructed_optimum(seed):
    prob, opt = random_problem(np.random.default_rng(seed))
    sol = sdp.solve(prob)
    assert sol.status == sdp.OPTIMAL
    assert abs(sol.primal_objective - opt) <= 1e-6 * max(1.0, abs(opt))
    # weak duality and PSD iterate at the answer
    assert sol.primal_objective >= sol.dual_objective - 1e-9 * max(1.0, abs(opt))
    assert np.linalg.eigvalsh(sol.X[0])[0] >= -1e-8


def test_diagonal_block_and_free_variable_lp():
    # min x0 + 3 x1 + f  s.t.  x0 + x1 = 1, x1 + f = 0.25, x >= 0, f free  -> x = (1, 0), f = .25
    prob = sdp.SdpProblem(
        [-2], [sp.csr_matrix(np.array([[1.0, 1.0], [0.0, 1.0]]))], [np.array([1.0, 3.0])],
        np.array([1.0, 0.25]), free_A=np.array([[0.0], [1.0]]), free_c=np.array([1.0]),
    )
    sol = sdp.solve(prob)
    assert sol.status == sdp.OPTIMAL
    assert sol.primal_objective == pytest.approx(1.25, abs=1e-7)
    assert np.allclose(sol.X[0], [1.0, 0.0], atol=1e-6)
    assert sol.x_free[0] == pytest.approx(0.25, abs=1e-7)


def test_infeasible_reported():
    # X11 = -1 with X PSD has no solution
    E11 = np.array([[1.0, 0], [0, 0]])
    prob = sdp.SdpProblem([2], [flat_rows([E11])], [np.eye(2)], np.array([-1.0]))
    assert sdp.solve(prob).status == sdp.INFEASIBLE


def test_unbounded_never_reported_optimal():
    # min -X12 s.t. X11 = 1: X22 grows without bound; only divergence is detected, so
    # the run may also stop as stalled
    E11 = np.array([[1.0, 0], [0, 0]])
    C = np.array([[0.0, -0.5], [-0.5, 0.0]])
    prob = sdp.SdpProblem([2], [flat_rows([E11])], [C], np.array([1.0]))
    assert sdp.solve(prob).status in (sdp.DUAL_INFEASIBLE, sdp.MAX_ITER)


def test_caps_enforced():
    with pytest.raises(ValueError):
        sdp.solve(trivial(), sdp.SdpOptions(max_block_dim=1))
    with pytest.raises(ValueError):
        sdp.solve(trivial(), sdp.SdpOptions(max_constraints=0))


def test_shape_validation():
    with pytest.raises(ValueError):
        sdp.SdpProblem([3], [flat_rows([np.eye(2)])], [np.eye(3)], np.array([1.0]))


# -- SDPA ------------------------------------------------------------------------


def test_sdpa_trivial_layout():
    text = sdp.export_sdpa(trivial())
    body = [line for line in text.splitlines() if not line.startswith("*")]
    assert body[:4] == ["1", "1", "2", "1"]
    # matrix 0 holds the maximization objective -C
    assert "0 1 1 1 -1" in body and "1 1 1 1 1" in body
    assert sdp.export_sdpa(sdp.parse_sdpa(text)) == text


def test_sdpa_empty_constraint_set():
    prob = sdp.SdpProblem([2], [sp.csr_matrix((0, 4))], [np.eye(2)], np.zeros(0))
    text = sdp.export_sdpa(prob)
    back = sdp.parse_sdpa(text)
    assert back.m == 0
    assert sdp.export_sdpa(back) == text


def test_sdpa_values_survive_bit_for_bit():
    rng = np.random.default_rng(7)
    prob, _ = random_problem(rng, n=5, m=4, rank=2)
    back = sdp.parse_sdpa(sdp.export_sdpa(prob))
    assert np.array_equal(back.b, prob.b)
    assert np.array_equal(back.C[0], prob.C[0])
    assert np.array_equal(back.A[0].toarray(), prob.A[0].toarray())


def test_sdpa_free_variables_restored():
    prob = sdp.SdpProblem(
        [-2], [sp.csr_matrix(np.array([[1.0, 1.0], [0.0, 1.0]]))], [np.array([1.0, 2.0])],
        np.array([1.0, 0.25]), free_A=np.array([[0.0], [1.0]]), free_c=np.array([1.0]), free_names=["f"],
    )
    back = sdp.parse_sdpa(sdp.export_sdpa(prob))
    assert back.block_sizes == [-2] and back.n_free == 1 and back.free_names == ["f"]
    assert sdp.solve(back).primal_objective == pytest.approx(1.25, abs=1e-7)


def _independent_read(text):
    """Plain SDPA reading (no comment metadata): max <F0, Y> s.t. <Fk, Y> = c_k."""
    lines = [ln for ln in text.splitlines() if ln and ln[0] not in '*"']
    m = int(lines[0])  # lines[1] holds the block count, implied by the sizes
    sizes = [int(s) for s in lines[2].split()]
    c = np.array([float(v) for v in lines[3].split()])
    F = [[np.zeros((abs(s), abs(s))) for s in sizes] for _ in range(m + 1)]
    for ln in lines[4:]:
        k, blk, i, j, v = ln.split()
        M = F[int(k)][int(blk) - 1]
        M[int(i) - 1, int(j) - 1] = M[int(j) - 1, int(i) - 1] = float(v)
    return sizes, c, F


def test_sdpa_semantics_with_an_independent_solver():
    cp = pytest.importorskip("cvxpy")
    prob, opt = random_problem(np.random.default_rng(11), n=4, m=3, rank=2)
    sizes, c, F = _independent_read(sdp.export_sdpa(prob))
    Y = cp.Variable((sizes[0], sizes[0]), symmetric=True)
    cons = [Y >> 0] + [cp.trace(F[k + 1][0] @ Y) == c[k] for k in range(len(c))]
    val = cp.Problem(cp.Maximize(cp.trace(F[0][0] @ Y)), cons).solve(solver=cp.SCS, eps=1e-9)
    assert -val == pytest.approx(opt, abs=1e-4)


def test_sdpa_round_trip_on_compiled_program(running):
    S = running
    p = Polynomial.variable(0, 2) ** 2
    prob = sos.compile_xin_dagger(S, p, 3)
    q, _ = sos.to_sdp(prob)
    text = sdp.export_sdpa(q)
    again = sdp.export_sdpa(sdp.parse_sdpa(text))
    assert again == text
    assert sdp.solve(sdp.parse_sdpa(text)).primal_objective == pytest.approx(sdp.solve(q).primal_objective, abs=1e-12)
