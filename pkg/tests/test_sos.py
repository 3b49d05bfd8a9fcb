import math

import numpy as np
import pytest

from sospi import analysis, benchmarks, sdp, sim, sos
from sospi.poly import Polynomial, gram_expand, sos_certificate, sum_of_squares

from conftest import halving_system, zero_map_system


def sq(i, d=2):
    return Polynomial.variable(i, d) ** 2


def grid_sup(f, lo, hi, n=20001, where=lambda x: np.ones_like(x, dtype=bool)):
    xs = np.linspace(lo, hi, n)
    ok = where(xs)
    return float(np.max(f(xs[ok])))


# -- standalone decomposition --------------------------------------------------------


def test_gram_example_decomposition():
    f = Polynomial.parse("1 + x1^2 - 2*x1*x2 + x2^2", ["x1", "x2"])
    Q, basis, sol = sos.sos_decompose(f)
    assert sol.accepted
    assert np.linalg.eigvalsh(Q).min() >= -1e-8
    assert gram_expand(Q, basis).almost_equal(f, 1e-8)
    assert sum_of_squares(sos_certificate(Q, basis), 2).almost_equal(f, 1e-8)


def test_motzkin_is_not_sos():
    f = Polynomial.parse("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", ["x1", "x2"])
    _, _, sol = sos.sos_decompose(f)
    assert not sol.accepted


# -- initial-set bounds --------------------------------------------------------------


def test_xin_square_on_box(running):
    sol = sos.solve(sos.compile_xin_dagger(running, sq(0), 3))
    assert sol.accepted and sol.objective_value == pytest.approx(1.0, abs=1e-5)


def test_xin_constant(running):
    c = Polynomial.constant(0.7, 2)
    assert sos.solve(sos.compile_xin_dagger(running, c, 1)).objective_value == pytest.approx(0.7, abs=1e-6)


def test_xin_norm_matches_grid(running):
    g = np.linspace(-1, 1, 201)
    X, Y = np.meshgrid(g, g)
    oracle = float(np.max(X**2 + Y**2))
    sol = sos.solve(sos.compile_xin_dagger(running, sq(0) + sq(1), 2))
    assert sol.objective_value == pytest.approx(oracle, abs=1e-5)


# -- relaxed cell bounds -------------------------------------------------------------


def test_halving_cell_value_matches_grid():
    S = halving_system()
    q = Polynomial.variable(0, 1) ** 2
    sol = sos.solve(sos.compile_relaxed_Fi(S, 0, q, [q], [1.0], 1))
    oracle = grid_sup(lambda x: 0.25 * x * x, -1, 1)
    assert sol.accepted
    assert sol.objective_value >= oracle - 1e-7
    assert sol.objective_value == pytest.approx(0.25, abs=1e-5)


def test_relaxed_program_structure(running):
    q1, q2 = sq(0), sq(1)
    # q1 o T1 has degree 4 (the x1*x2 term), so even m = 1 gets cap 4
    prob = sos.compile_relaxed_Fi(running, 0, q1, [q1, q2], [2.1391, 2.1391], 1)
    assert prob.meta["cap"] == 4
    prob = sos.compile_relaxed_Fi(running, 0, q1, [q1, q2], [2.1391, 2.1391], 3)
    assert prob.meta["cap"] == 6
    assert [v.name for v in prob.sos_vars] == ["mu1", "sigma"]  # one mu, no gamma (X0 = R^2)
    assert set(prob.scalars) == {"eta", "lambda1", "lambda2"}


def test_ambient_cap_is_larger_and_no_looser(running):
    q1, q2 = sq(0), sq(1)
    ambient = sos.SosOptions(cap_mode=sos.CAP_AMBIENT)
    big = sos.compile_relaxed_Fi(running, 0, q1, [q1, q2], [2.1391, 2.1391], 2, ambient)
    small = sos.compile_relaxed_Fi(running, 0, q1, [q1, q2], [2.1391, 2.1391], 2)
    assert big.meta["cap"] == 8 and small.meta["cap"] == 4
    a, b = sos.solve(big, ambient), sos.solve(small)
    assert a.accepted and b.accepted
    assert a.objective_value <= b.objective_value + 1e-6


def test_infinite_bound_drops_multiplier(running):
    q1, q2 = sq(0), sq(1)
    prob = sos.compile_relaxed_Fi(running, 0, q1, [q1, q2], [math.inf, 2.0], 1)
    assert "lambda1" not in prob.scalars
    sol = sos.solve(prob)
    assert sol.scalar("lambda1") == 0.0


def test_degree_cap_too_small(running):
    with pytest.raises(sos.DegreeCapError):
        sos.compile_relaxed_Fi(running, 0, sq(0), [sq(0)], [1.0], 1, sos.SosOptions(cap=2, noise_tol=0.0))


def test_running_first_cell_policy(running6):
    S, synth, ctx, trace = running6
    basis = synth.basis
    prob = sos.compile_relaxed_Fi(S, 0, basis.templates[0], basis.templates, list(synth.w0.values), 3)
    sol = sos.solve(prob)
    assert sol.accepted and sol.residual <= 1e-6
    assert sol.objective_value == pytest.approx(1.5503, abs=1e-3)
    lam = [sol.scalar(sos.lambda_name(k)) for k in range(3)]
    assert lam[0] == pytest.approx(0.0, abs=1e-5) and lam[1] == pytest.approx(0.0, abs=1e-5)
    # any optimal multiplier is valid; the value depends on the solver path
    assert lam[2] == pytest.approx(2.0331, abs=0.1)


def test_decoded_solution_reproduces_identity(running6):
    S, synth, _, _ = running6
    basis = synth.basis
    prob = sos.compile_relaxed_Fi(S, 1, basis.templates[1], basis.templates, list(synth.w0.values), 3)
    sol = sos.solve(prob)
    assert sos.identity_residual(prob, sol.scalars, sol.grams) == pytest.approx(sol.residual)
    assert sol.residual <= 1e-6


@pytest.mark.parametrize("cell", [0, 1])
@pytest.mark.parametrize("k", [0, 1, 2])
def test_sampled_sup_below_sos_value(running6, cell, k):
    S, synth, _, _ = running6
    basis, w = synth.basis, synth.w0.values
    p = basis.templates[k]
    sol = sos.solve(sos.compile_relaxed_Fi(S, cell, p, basis.templates, list(w), 3))
    box = [(-1.5, 1.5), (-1.5, 1.5)]
    sampled = sim.sampled_post_sup(S, cell, p, basis.templates, w, box, 100_000, seed=cell * 3 + k)
    assert sampled is not None
    assert sampled <= sol.objective_value + 1e-6


# -- basis reduction -----------------------------------------------------------------


@pytest.mark.parametrize("cell", [0, 1])
def test_reduction_does_not_change_the_optimum(running, cell):
    q1, q2 = sq(0), sq(1)
    prob = sos.compile_relaxed_Fi(running, cell, q1, [q1, q2], [1.0, 2.0], 2)
    full, layout = sos.to_sdp(prob, reduce=False)
    a = sos.decode(sdp.solve(full), prob, layout)
    reduced, layout = sos.to_sdp(prob, reduce=True)
    b = sos.decode(sdp.solve(reduced), prob, layout)
    assert sum(reduced.block_sizes) <= sum(full.block_sizes)
    assert a.raw_objective == pytest.approx(b.raw_objective, abs=1e-5)


def test_reduction_drops_forced_zero_rows():
    # x^4 coefficient of  -x^2 * sigma  must vanish, so sigma cannot use x^1 with nothing else
    S = halving_system()
    q = Polynomial.variable(0, 1) ** 2
    prob = sos.compile_relaxed_Fi(S, 0, q, [q], [1.0], 2)
    bases = sos.reduce_bases(prob)
    assert len(bases["sigma"]) <= len(prob.sos_var("sigma").basis)


# -- synthesis and emptiness ---------------------------------------------------------


def test_synthesis_on_zero_map():
    S = zero_map_system(2)
    prob = sos.compile_template_synthesis(S, 1)
    sol = sos.solve(prob)
    assert sol.accepted and sol.residual <= 1e-6
    assert sol.objective_value <= 2 + 1e-6
    p = sos.template_from_solution(sol, 2, 1)
    # the returned template is nonpositive on the initial set and on reachable states
    states, _ = sim.simulate_array(S, 500, 3, seed=0)
    pts = sim.reachable_points(states)
    assert np.all(p.eval_many(pts) <= 1e-6)
    assert np.all((pts**2).sum(axis=1) <= sol.objective_value + p.eval_many(pts) + 1e-6)


def test_running_synthesis_degree_six(running):
    sol = sos.solve(sos.compile_template_synthesis(running, 3))
    assert sol.accepted
    assert sol.objective_value == pytest.approx(2.1343, abs=0.05)


def test_emptiness_certificates():
    ex3 = benchmarks.load("ex3")
    assert analysis.cell_is_empty(ex3, 1)
    assert not analysis.cell_is_empty(ex3, 0)
    running = benchmarks.load("running")
    assert not any(analysis.cell_is_empty(running, i) for i in range(2))
