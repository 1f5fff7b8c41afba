import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbcsos.polyalg import (Polynomial, add, basis_size, differentiate, evaluate, jacobian_at, lie_derivative,
                            monomial_basis, mul, truncate, variables)


def poly_strategy(nvars, max_deg=3, max_terms=5):
    mono = st.lists(st.integers(0, max_deg), min_size=nvars, max_size=nvars).filter(lambda e: sum(e) <= max_deg)
    coeff = st.integers(-5, 5).map(float)  # small integers keep products exact
    return st.dictionaries(mono.map(tuple), coeff, max_size=max_terms).map(lambda d: Polynomial(nvars, d))


nv = st.shared(st.integers(1, 4), key="nv")
polys = nv.flatmap(poly_strategy)


def test_add_merges_terms():
    x1, x2 = variables(2)
    assert add(x1 * 3 + x2 * 2, x1 - x2 * 2) == x1 * 4


def test_add_to_zero_is_empty():
    x1, x2 = variables(2)
    p = x1 * 3 + x2 * 2
    z = add(p, -p)
    assert z.is_zero() and len(z) == 0 and z.degree == -1


def test_add_nvars_mismatch():
    with pytest.raises(ValueError):
        add(variables(2)[0], variables(3)[0])


def test_mul_square():
    x1, x2 = variables(2)
    sq = mul(x1 + x2, x1 + x2)
    assert sq.terms == {(2, 0): 1.0, (1, 1): 2.0, (0, 2): 1.0}


def test_mul_zero_and_one():
    x1, x2 = variables(2)
    p = x1 ** 3 - x2 * 2
    assert mul(p, Polynomial.zero(2)).is_zero()
    assert mul(p, Polynomial.constant(2, 1.0)) == p


def test_differentiate_examples():
    x1, x2 = variables(2)
    assert differentiate(x1 ** 3 * x2, 0) == x1 ** 2 * x2 * 3
    assert differentiate(Polynomial.constant(2, 7.0), 1).is_zero()
    with pytest.raises(IndexError):
        differentiate(x1, 2)


def test_evaluate_examples():
    x1, x2 = variables(2)
    assert evaluate(x1 ** 2 * x2 + 1, [2.0, 3.0]) == 13.0
    assert evaluate(Polynomial.constant(2, -4.5), [10.0, -1.0]) == -4.5
    with pytest.raises(ValueError):
        evaluate(x1, [1.0, 2.0, 3.0])


def test_vectorized_call_matches_pointwise(rng):
    x1, x2 = variables(2)
    p = x1 ** 4 - x1 * x2 * 3 + x2 ** 3 * 0.5 - 2
    pts = rng.normal(size=(50, 2))
    np.testing.assert_allclose(p(pts), [p.evaluate(q) for q in pts], rtol=1e-13)


def test_monomial_basis_order_and_count():
    assert monomial_basis(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    for n in range(1, 5):
        for d in range(0, 7):
            basis = monomial_basis(n, d)
            assert len(basis) == math.comb(n + d, d) == basis_size(n, d)
            assert len(set(basis)) == len(basis)
            assert basis == monomial_basis(n, d)


def test_truncate():
    p = Polynomial(1, {(0,): 1.0, (1,): 1e-14, (2,): -3e-13})
    assert truncate(p) == Polynomial.constant(1, 1.0)
    assert truncate(p, 1e-15).terms == p.terms


def test_text_form():
    x1, x2 = variables(2)
    assert str(x1 ** 2 * x2 * 2 + x1 - 1) == "-1.0 + 1.0 * x1 + 2.0 * x1^2*x2"


def test_terms_round_trip():
    x1, x2 = variables(2)
    p = x1 ** 2 * x2 * 2.5 - x2 + 0.125
    q = Polynomial.from_terms(2, [(t["coeff"], t["exponents"]) for t in p.to_terms()])
    assert q == p


def test_vdp_jacobian_at_origin(vdp):
    np.testing.assert_array_equal(jacobian_at(vdp.system.f, [0.0, 0.0]), [[0.0, 1.0], [-1.0, 1.0]])


def test_jacobian_linear_and_constant(rng):
    A = rng.integers(-3, 4, size=(3, 3)).astype(float)
    xs = variables(3)
    f = [sum((xs[j] * A[i, j] for j in range(3)), Polynomial.zero(3)) for i in range(3)]
    np.testing.assert_array_equal(jacobian_at(f, rng.normal(size=3)), A)
    const = [Polynomial.constant(3, 2.0)] * 3
    np.testing.assert_array_equal(jacobian_at(const, [1.0, 2.0, 3.0]), np.zeros((3, 3)))


@settings(max_examples=60, deadline=None)
@given(polys, polys, polys)
def test_ring_axioms(p, q, r):
    assert p + q == q + p
    assert p * q == q * p
    assert (p + q) + r == p + (q + r)
    assert (p * q) * r == p * (q * r)
    assert p * (q + r) == p * q + p * r


@settings(max_examples=60, deadline=None)
@given(polys, polys, st.integers(0, 3))
def test_product_rule(p, q, i):
    i = i % p.nvars
    assert differentiate(p * q, i) == differentiate(p, i) * q + p * differentiate(q, i)


@settings(max_examples=60, deadline=None)
@given(polys, polys, st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_evaluation_homomorphism(p, q, pt):
    pt = pt[:p.nvars]
    lhs = (p * q).evaluate(pt)
    rhs = p.evaluate(pt) * q.evaluate(pt)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
    assert (p + q).evaluate(pt) == pytest.approx(p.evaluate(pt) + q.evaluate(pt), rel=1e-9, abs=1e-9)


def test_lie_derivative_matches_finite_difference(vdp, rng):
    x1, x2 = variables(2)
    b = 1 - x1 ** 4 * 0.3 - x1 * x2 * 0.7 - x2 ** 2 * 1.1 + x1 ** 3 * x2 * 0.2
    u = [x1 * 0.5 - x2 ** 2 * 0.25 + x1 ** 3]
    lie = lie_derivative(b, vdp.system.f, vdp.system.g, u)
    h = 1e-6
    for x in rng.uniform(-1.5, 1.5, size=(25, 2)):
        v = vdp.system.dynamics(x, np.array([u[0].evaluate(x)]))
        fd = (b.evaluate(x + h * v) - b.evaluate(x - h * v)) / (2 * h)
        exact = lie.evaluate(x)
        assert abs(fd - exact) <= 1e-5 * max(1.0, abs(exact))


def test_lie_derivative_dimension_checks():
    x1, x2 = variables(2)
    with pytest.raises(ValueError):
        lie_derivative(x1, [x1], [[x1], [x2]], [x1])
