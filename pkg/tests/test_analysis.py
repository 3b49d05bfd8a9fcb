import json
import math

import numpy as np
import pytest

from sospi import analysis, benchmarks, lp, sim, sos
from sospi.analysis import BoundVector, PolicyEntry, Policy, TemplateBasis
from sospi.poly import Polynomial

from conftest import zero_map_system


def sq(i, d=2):
    return Polynomial.variable(i, d) ** 2


def running_basis():
    p = Polynomial.parse("x1^2 + x2^2 - 2", ["x1", "x2"])
    return TemplateBasis.squares_and(2, [p])


# -- domain types ------------------------------------------------------------------


def test_basis_names_and_duplicates():
    b = running_basis()
    assert b.names == ("q1", "q2", "p") and b.half_degree == 1
    with pytest.raises(ValueError):
        TemplateBasis((sq(0), sq(0)))


def test_bound_vector_ops():
    b = running_basis()
    w = BoundVector(b, (1.0, 2.0, 0.0))
    v = BoundVector(b, (1.0, 1.5, -1.0))
    assert v.leq(w) and not w.leq(v)
    assert w["q2"] == 2.0 and w.sup_distance(v) == 1.0
    inf = BoundVector(b, (math.inf, 2.0, 0.0))
    assert inf.sup_distance(BoundVector(b, (math.inf, 2.0, 0.0))) == 0.0
    assert list(w.contains(np.array([[0.5, 0.5], [2.0, 0.0]]))) == [True, False]
    again = BoundVector.from_json(TemplateBasis.from_json(b.to_json(), 2), json.loads(json.dumps(inf.to_json())))
    assert again.values == inf.values


# -- affine maps and the policy LP ---------------------------------------------------


def test_phi_running_example_shape():
    e = PolicyEntry(0, 0, np.array([0.0, 0.0, 2.0331]), 1.5503)
    w = (2.1343, 2.1343, 0.0)
    for v in [(0.0, 0.0, 0.0), (1.0, 2.0, -0.5), (3.0, 1.0, 0.25)]:
        assert e.phi(v, w) == pytest.approx(2.0331 * v[2] + 1.5503, abs=1e-12)
    (con,) = analysis.build_phi(Policy({(0, 0): e}), w, running_basis())
    assert con.coeffs == (0.0, 0.0, 2.0331) and con.const == pytest.approx(1.5503)


def test_phi_zero_multiplier_is_constant():
    e = PolicyEntry(0, 1, np.zeros(3), 0.42)
    assert e.phi((5.0, -3.0, 1.0), (1.0, 1.0, 1.0)) == 0.42


def test_phi_identity_on_random_policies():
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.uniform(0, 3, 3)
        entries = {(i, k): PolicyEntry(i, k, rng.uniform(0, 2, 3) * (rng.random(3) < 0.6), rng.normal())
                   for i in range(2) for k in range(3)}
        xin = rng.normal(size=3)
        Fw = np.maximum(np.array([max(entries[(i, k)].value for i in range(2)) for k in range(3)]), xin)
        assert np.allclose(analysis.apply_phi(Policy(entries), w, xin, w), Fw, atol=1e-12)


def test_lp_optimum_is_a_fixpoint_of_phi(running6):
    S, synth, ctx, _ = running6
    w = synth.w0.array
    ev = analysis.eval_relaxed_F(ctx, w)
    # the item-4 identity on a real evaluation
    assert np.allclose(analysis.apply_phi(ev.policy, w, ev.xin, w), ev.values, atol=1e-10)
    prob = analysis.policy_improve(analysis.build_phi(ev.policy, w, ctx.basis), ev.xin, ctx.basis)
    res = lp.solve_lp(prob)
    assert res.status == lp.OPTIMAL
    v = res.x
    assert np.max(np.abs(analysis.apply_phi(ev.policy, w, ev.xin, v) - v)) <= 1e-8


# -- iteration -----------------------------------------------------------------------


def test_running_degree_six_trace(running6):
    _, synth, _, trace = running6
    assert synth.w == pytest.approx(2.1343, abs=0.05)
    assert trace.reason == analysis.FIXPOINT
    assert trace.improvements == 1
    assert np.allclose(trace.final[:2], [1.5503, 1.9501], atol=0.05)
    assert trace.final[2] <= 1e-6


def test_restart_from_fixpoint_needs_no_improvement(running6):
    _, _, ctx, trace = running6
    again = analysis.policy_iterate(ctx, trace.final)
    assert again.reason == analysis.FIXPOINT and again.improvements == 0
    assert np.array_equal(again.final, trace.final)


def test_refuses_non_post_fixpoint(running6):
    _, synth, ctx, _ = running6
    w = synth.w0.array.copy()
    w[0] = 0.5  # below the initial set's own bound of 1
    with pytest.raises(analysis.NotPostFixpoint) as err:
        analysis.policy_iterate(ctx, w)
    assert err.value.violations[0][0] == "q1"


@pytest.mark.parametrize("fixture", ["running6", "ex2_4", "ex1_6"])
def test_descent_and_post_fixpoint_chain(fixture, request):
    _, _, _, trace = request.getfixturevalue(fixture)
    for a, b in zip(trace.steps, trace.steps[1:]):
        assert np.all(b.w <= a.w + 1e-8)
    for s in trace.steps:
        assert np.all(s.Fw <= s.w + 1e-6)


def test_failed_program_stops_early_with_sound_bounds(running6):
    S, synth, _, _ = running6
    opts = analysis.AnalysisOptions(m=3, sos=sos.SosOptions(residual_tol=1e-30))  # nothing is accepted
    ctx = analysis.Context(S, synth.basis, opts)
    ctx._xin = np.array([1.0, 1.0, 0.0])  # keep the initial-set bounds valid
    trace = analysis.policy_iterate(ctx, synth.w0)
    assert trace.reason == analysis.SOL_EMPTY
    assert "no accepted SOS solution" in trace.message
    assert np.array_equal(trace.final, synth.w0.array)


def test_threads_give_identical_results(running6):
    S, synth, _, _ = running6
    a = analysis.eval_relaxed_F(analysis.Context(S, synth.basis, analysis.AnalysisOptions(m=3, jobs=1)), synth.w0)
    b = analysis.eval_relaxed_F(analysis.Context(S, synth.basis, analysis.AnalysisOptions(m=3, jobs=3)), synth.w0)
    assert np.array_equal(a.values, b.values)


def test_trace_json_is_deterministic(running6):
    S, synth, _, trace = running6
    ctx = analysis.Context(S, synth.basis, analysis.AnalysisOptions(m=3))
    again = analysis.policy_iterate(ctx, synth.w0)
    assert again.dumps() == trace.dumps()
    assert "seconds" not in trace.dumps() and "seconds" in trace.dumps(timings=True)


# -- synthesis -----------------------------------------------------------------------


def test_synthesis_basis_and_start(running6):
    _, synth, _, _ = running6
    assert synth.basis.names == ("q1", "q2", "p")
    assert synth.w0.values[:2] == (synth.w, synth.w) and synth.w0["p"] == 0.0
    assert synth.p.degree() <= 6


def test_zero_map_synthesis_is_validated():
    S = zero_map_system(2)
    r = analysis.synth_template(S, 1)
    assert r.w <= 2 + 1e-6
    ctx = analysis.Context(S, r.basis, analysis.AnalysisOptions(m=1))
    assert analysis.check_inductive(ctx, r.w0).verdict is True


def test_ex4_low_degree_has_no_good_invariant():
    S = benchmarks.load("ex4")
    with pytest.raises(analysis.NoGoodInvariant):
        analysis.synth_template(S, 2)


def test_running_degree_four_result_is_certified():
    # the tabulated outcome at this degree is a failure; here the synthesis succeeds,
    # so the claim checked is soundness: certified inductive and contains simulations
    S = benchmarks.load("running")
    opts = analysis.AnalysisOptions(m=2)
    r = analysis.synth_template(S, 2, opts)
    ctx = analysis.Context(S, r.basis, opts)
    trace = analysis.policy_iterate(ctx, r.w0)
    assert trace.reason == analysis.FIXPOINT
    assert analysis.check_inductive(ctx, trace.final).verdict is True
    states, _ = sim.simulate_array(S, 2000, 50, seed=5)
    assert trace.final_bounds().contains(sim.reachable_points(states), inflate=1e-6).all()


# -- inductiveness check -------------------------------------------------------------


def test_check_inductive_examples(running6):
    _, _, ctx, trace = running6
    assert analysis.check_inductive(ctx, trace.final).verdict is True
    low = analysis.check_inductive(ctx, np.full(3, -math.inf))
    assert low.verdict is False and low.violations
    assert analysis.check_inductive(ctx, trace.final + 10.0).verdict is True


def test_relax_at_only_absorbs_round_off():
    C = lp.LpConstraint
    w = [1.0, 2.0]
    cons = [C((0.5, 0.0), 0.5 + 3e-7, 0, "tiny"), C((0.0, 0.0), 2.5, 1, "large"), C((0.0, 0.0), 0.1, 0, "slack")]
    out = analysis.relax_at(cons, w, 1e-6)
    assert out[0].const == pytest.approx(0.5, abs=1e-15)  # now tight at w
    assert out[1] == cons[1] and out[2] == cons[2]


def test_ex1_degree_four_improves_past_round_off():
    S = benchmarks.load("ex1")
    opts = analysis.AnalysisOptions(m=2)
    synth = analysis.synth_template(S, 2, opts)
    ctx = analysis.Context(S, synth.basis, opts)
    trace = analysis.policy_iterate(ctx, synth.w0)
    assert trace.reason == analysis.FIXPOINT and trace.improvements >= 1
    assert np.all(trace.final <= synth.w0.array + 1e-12)
    assert analysis.check_inductive(ctx, trace.final).verdict is True
