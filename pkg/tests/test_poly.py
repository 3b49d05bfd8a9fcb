import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sospi.poly import (
    CertificateError,
    MonomialBasis,
    Polynomial,
    gram_expand,
    gram_refit,
    monomials_up_to,
    sos_certificate,
    sum_of_squares,
)

NAMES = ["x1", "x2"]


def P(text, names=NAMES):
    return Polynomial.parse(text, names)


def x(i, d=2):
    return Polynomial.variable(i, d)


def test_cancellation_and_zero():
    assert (x(0) + x(1)) + (x(0) - x(1)) == 2 * x(0)
    p = P("3*x1^2*x2 - x2 + 7")
    assert (0 * p).is_zero()
    assert (p - p).is_zero()


def test_product_matches_coefficient_convolution():
    a = P("1 + x1")
    b = P("1 - x1")
    assert a * b == P("1 - x1^2")
    # brute-force convolution on random dense polynomials
    rng = np.random.default_rng(0)
    mons = monomials_up_to(2, 3)
    ca = {m: rng.normal() for m in mons}
    cb = {m: rng.normal() for m in mons}
    expect = {}
    for (ma, va), (mb, vb) in itertools.product(ca.items(), cb.items()):
        key = (ma[0] + mb[0], ma[1] + mb[1])
        expect[key] = expect.get(key, 0.0) + va * vb
    assert (Polynomial(ca, 2) * Polynomial(cb, 2)).almost_equal(Polynomial(expect, 2), 1e-12)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        x(0, 2) + x(0, 3)


def test_compose_running_square():
    t1 = P("0.687*x1 + 0.558*x2 - 0.0001*x1*x2")
    t2 = P("-0.292*x1 + 0.773*x2")
    q1 = x(0) ** 2
    assert q1.compose([t1, t2]) == t1 * t1


def test_compose_identity_and_swap():
    p = P("x1 + x2^2 - 3*x1*x2^3")
    assert p.compose([x(0), x(1)]) == p
    q = P("x1 + x2^2").compose([x(1), x(0)])
    rng = np.random.default_rng(1)
    for pt in rng.normal(size=(20, 2)):
        assert q.eval(pt) == pytest.approx(pt[1] + pt[0] ** 2, abs=1e-10)


def test_eval_examples():
    assert P("1 + x1^2 - 2*x1*x2 + x2^2").eval([1, 1]) == 1
    assert Polynomial.zero(2).eval([3.0, -4.0]) == 0
    assert (x(0) ** 2).eval([-1.5, 7]) == 2.25


def test_eval_many_agrees_with_eval():
    p = P("x1^3 - 2*x1*x2 + 0.5*x2^4 + 1")
    pts = np.random.default_rng(2).normal(size=(50, 2))
    assert np.allclose(p.eval_many(pts), [p.eval(q) for q in pts])


def test_basis_order_and_size():
    b = MonomialBasis(2, 1)
    assert b.entries == ((0, 0), (1, 0), (0, 1))
    assert len(MonomialBasis(3, 2)) == MonomialBasis.expected_size(3, 2) == 10
    sub = MonomialBasis(2, 2).restrict([(0, 2), (0, 0)])
    assert sub.entries == ((0, 0), (0, 2)) and not sub.is_full


def test_gram_expand_examples():
    b = MonomialBasis(2, 1)
    Q = np.array([[1, 0, 0], [0, 1, -1], [0, -1, 1]], dtype=float)
    assert gram_expand(Q, b) == P("1 + x1^2 - 2*x1*x2 + x2^2")
    assert gram_expand(np.eye(3), b) == P("1 + x1^2 + x2^2")


def test_gram_refit_round_trip():
    rng = np.random.default_rng(3)
    b = MonomialBasis(2, 2)
    M = rng.normal(size=(6, 6))
    p = gram_expand(M.T @ M, b)
    assert gram_expand(gram_refit(p, b), b).almost_equal(p, 1e-10)


def test_certificate_examples():
    b = MonomialBasis(2, 1)
    Q = np.array([[1, 0, 0], [0, 1, -1], [0, -1, 1]], dtype=float)
    squares = sos_certificate(Q, b)
    assert sum_of_squares(squares, 2).almost_equal(P("1 + (x1 - x2)^2"), 1e-12)
    assert sos_certificate(np.zeros((3, 3)), b) == []
    with pytest.raises(CertificateError):
        sos_certificate(-np.eye(3), b)


def test_certificate_random_psd():
    rng = np.random.default_rng(4)
    b = MonomialBasis(2, 1)
    for _ in range(10):
        M = rng.normal(size=(3, 3))
        Q = M.T @ M
        assert sum_of_squares(sos_certificate(Q, b), 2).almost_equal(gram_expand(Q, b), 1e-8)


coeffs = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@st.composite
def polys(draw, dim=3, degree=3):
    mons = monomials_up_to(dim, degree)
    picked = draw(st.lists(st.sampled_from(mons), max_size=6, unique=True))
    return Polynomial({m: draw(coeffs) for m in picked}, dim)


@settings(max_examples=40, deadline=None)
@given(polys(), polys(), polys())
def test_ring_axioms(a, b, c):
    assert ((a * b) * c).almost_equal(a * (b * c), 1e-7)
    assert (a * (b + c)).almost_equal(a * b + a * c, 1e-9)
    assert (a * b) == (b * a)
    assert (a + b) == (b + a)


def test_json_round_trip():
    p = P("x1^3 - 2.5*x1*x2 + 1e-9")
    assert Polynomial.from_json(p.to_json(), 2) == p
