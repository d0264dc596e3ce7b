import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errorcalc import models, priors
from errorcalc.domain import ParameterDomain
from errorcalc.exceptions import PreconditionError, RegularityError
from errorcalc.structure import (ErrorStructure, Functional, explicit, from_model, propagate_bias,
                                 propagate_variance)

BOX = ParameterDomain(lower=(-2.0, -2.0), upper=(2.0, 2.0))


def const_structure(matrix, domain=BOX):
    m = np.asarray(matrix, dtype=float)
    return explicit(domain, priors.uniform(domain), lambda t: m)


def f(fn, dim=2, jac=None):
    return Functional(fn, dim, jacobian_fn=jac)


def test_from_model_normal_location(squared):
    *_, s = squared
    for t in (-0.7, 0.2, 0.9):
        np.testing.assert_allclose(s.gamma_matrix(t), [[1.0]], atol=1e-12)


def test_from_model_normal_scale():
    m = models.normal_scale(0.5, 2.0)
    s = from_model(m, priors.uniform(m.domain))
    np.testing.assert_allclose(s.gamma_matrix(1.0), [[0.5]], atol=1e-12)
    s_quad = from_model(m, priors.uniform(m.domain), fisher_method="quadrature")
    np.testing.assert_allclose(s_quad.gamma_matrix(1.0), [[0.5]], atol=1e-9)


def test_from_model_product_is_diagonal_inverse():
    pm = models.product_model(models.normal_location(-1, 1), models.normal_scale(0.5, 2.0))
    s = from_model(pm, priors.uniform(pm.domain))
    np.testing.assert_allclose(s.gamma_matrix([0.1, 1.5]), np.diag([1.0, 1.5**2 / 2]), atol=1e-12)


def test_from_model_singular_fisher_raises():
    base = models.normal_location(-1, 1)
    # information vanishes identically: not a regular model
    flat = models.ParametricModel("flat", base.domain, lambda x, t: -0.5 * x**2 - 0.5 * math.log(2 * math.pi)
                                  + 0.0 * t[..., 0], base.sampler_fn,
                                  score_fn=lambda x, t: np.zeros(np.shape(x) + (1,)),
                                  fisher_fn=lambda t: np.zeros(np.shape(t)[:-1] + (1, 1)))
    with pytest.raises(RegularityError):
        from_model(flat, priors.uniform(base.domain))


def test_gamma_examples():
    s = const_structure(np.eye(2))
    total = f(lambda t: t[0] + t[1], jac=lambda t: np.array([[1.0, 1.0]]))
    assert s.gamma(total, theta=[0.3, -0.4]) == pytest.approx(2.0)
    prod = f(lambda t: t[0] * t[1])
    t = np.array([0.7, -1.1])
    assert s.gamma(prod, theta=t) == pytest.approx(t[0] ** 2 + t[1] ** 2, rel=1e-8)
    assert s.gamma(Functional.constant(3.0, 2), theta=t) == 0.0


def test_gradient_examples():
    s1 = explicit(ParameterDomain.interval(-1, 1), priors.uniform(ParameterDomain.interval(-1, 1)),
                  lambda t: np.array([[4.0]]))
    g = s1.gradient(Functional.identity(1), 0.2)
    np.testing.assert_allclose(g, [2.0])
    assert g @ g == pytest.approx(s1.gamma(Functional.identity(1), theta=0.2))
    np.testing.assert_allclose(s1.gradient(Functional.constant(1.0), 0.2), [0.0])
    s2 = const_structure(np.diag([1.0, 0.25]))
    total = f(lambda t: t[0] + t[1])
    g2 = s2.gradient(total, [0.1, 0.1])
    np.testing.assert_allclose(g2, [1.0, 0.5], atol=1e-8)
    assert g2 @ g2 == pytest.approx(1.25, rel=1e-8)
    assert s2.gamma(total, theta=[0.1, 0.1]) == pytest.approx(1.25, rel=1e-8)


def test_propagate_bias_examples():
    assert propagate_bias(lambda u: 3 * u + 1, 0.5, 0.2, 7.0) == pytest.approx(0.6, abs=1e-7)
    assert propagate_bias(lambda u: u**2, 3.0, 0.0, 2.0) == pytest.approx(2.0, rel=1e-6)
    assert propagate_bias(lambda u: u, 1.5, 0.3, 2.0) == pytest.approx(0.3, abs=1e-8)
    assert propagate_bias(np.exp, 0.0, 0.1, 0.2, derivative=np.exp, second_derivative=np.exp) == pytest.approx(0.2)


def test_propagate_bias_against_small_noise_simulation():
    # E[F(u + eps Y)] - F(u) ~ eps^2 (F' bias + F'' gamma / 2) for Y with mean eps*bias, variance gamma
    u, bias, gam = 0.8, 0.5, 2.0
    F = np.sin
    eps = 1e-2
    y = np.random.default_rng(0).normal(eps * bias, math.sqrt(gam), size=2_000_000)
    # subtract the first-order term as a control variate; it has mean eps^2 * F'(u) * bias
    first = math.cos(u) * eps * (y - eps * bias)
    measured = (np.mean(F(u + eps * y) - first) - F(u)) / eps**2
    assert measured == pytest.approx(propagate_bias(F, u, bias, gam), abs=0.01)


def test_propagate_variance():
    assert propagate_variance(lambda u: u**2, 3.0, 2.0) == pytest.approx(72.0, rel=1e-7)


def test_contraction_examples(gen):
    s = const_structure(np.eye(2))
    proj = Functional(lambda t: t[0], 2, lipschitz=1.0)
    t = [0.3, 0.5]
    assert s.check_contraction(proj, t)
    assert math.sqrt(s.gamma(proj, theta=t)) == pytest.approx(1.0)
    mx = Functional(lambda t: max(t[0], t[1]), 2, lipschitz=1.0)
    for _ in range(50):
        p = gen.uniform(-1.5, 1.5, size=2)
        if abs(p[0] - p[1]) < 1e-3:
            continue
        assert s.check_contraction(mx, p)
    doubled = Functional(lambda t: 2 * t[0], 2, lipschitz=1.0)
    with pytest.raises(PreconditionError):
        s.check_contraction(doubled, t)


def _poly(coef):
    def fn(t):
        x, y = t[0], t[1]
        return coef[0] + coef[1] * x + coef[2] * y + coef[3] * x * y + coef[4] * x**2 + coef[5] * y**3

    def jac(t):
        x, y = t[0], t[1]
        return np.array([[coef[1] + coef[3] * y + 2 * coef[4] * x, coef[2] + coef[3] * x + 3 * coef[5] * y**2]])

    return Functional(fn, 2, jacobian_fn=jac)


def _spd_structure(c):
    def gamma(t):
        a = np.array([[1.0 + t[0] ** 2, c * t[1]], [c * t[1], 2.0 + math.sin(t[0])]])
        return a
    return const_structure(np.eye(2)) if c is None else explicit(BOX, priors.uniform(BOX), gamma)


coefs = st.lists(st.floats(-3, 3), min_size=6, max_size=6)
points = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))


@settings(max_examples=60, deadline=None)
@given(coefs, coefs, coefs, st.floats(-2, 2), st.floats(-2, 2), points)
def test_bilinearity(cf, cg, ch, a, b, p):
    s = _spd_structure(0.5)
    F, G, H = _poly(cf), _poly(cg), _poly(ch)
    comb = Functional(lambda t: a * F(t) + b * G(t), 2,
                      jacobian_fn=lambda t: a * F.jacobian(t) + b * G.jacobian(t))
    lhs = s.gamma(comb, H, theta=p)
    rhs = a * s.gamma(F, H, theta=p) + b * s.gamma(G, H, theta=p)
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(lhs)))


@settings(max_examples=60, deadline=None)
@given(coefs, coefs, points)
def test_positivity_symmetry_cauchy_schwarz_gradient(cf, cg, p):
    s = _spd_structure(0.5)
    F, G = _poly(cf), _poly(cg)
    gff, ggg, gfg = s.gamma(F, theta=p), s.gamma(G, theta=p), s.gamma(F, G, theta=p)
    assert gff >= -1e-12
    assert gfg == pytest.approx(s.gamma(G, F, theta=p), abs=1e-12 * (1 + abs(gfg)))
    assert gfg**2 <= gff * ggg + 1e-12 * (1 + gff * ggg)
    grad = s.gradient(F, p)
    assert grad @ grad == pytest.approx(gff, abs=1e-10 * (1 + gff))


@settings(max_examples=60, deadline=None)
@given(coefs, coefs, points, st.floats(-2, 2), st.floats(-2, 2))
def test_gauss_propagation_law(cf, cg, p, u, v):
    s = _spd_structure(0.5)
    fa, ga = _poly(cf), _poly(cg)
    # F(y, z) = u y^2 + v y z + sin z
    F1 = lambda y, z: 2 * u * y + v * z
    F2 = lambda y, z: v * y + math.cos(z)
    comp = Functional(lambda t: u * fa(t) ** 2 + v * fa(t) * ga(t) + math.sin(ga(t)), 2,
                      jacobian_fn=lambda t: F1(fa(t), ga(t)) * fa.jacobian(t) + F2(fa(t), ga(t)) * ga.jacobian(t))
    y, z = fa(p), ga(p)
    expected = (F1(y, z) ** 2 * s.gamma(fa, theta=p) + F2(y, z) ** 2 * s.gamma(ga, theta=p)
                + 2 * F1(y, z) * F2(y, z) * s.gamma(fa, ga, theta=p))
    assert s.gamma(comp, theta=p) == pytest.approx(expected, abs=1e-8 * (1 + abs(expected)))


def test_finite_difference_jacobian_matches_analytic(gen):
    F = _poly(gen.normal(size=6))
    G = Functional(F.fn, 2)
    p = np.array([0.3, -0.6])
    np.testing.assert_allclose(G.jacobian(p, BOX), F.jacobian(p), rtol=1e-6, atol=1e-8)


def test_gamma_many_matches_pointwise(squared):
    *_, s = squared
    pts = np.array([[-0.5], [0.3], [0.8]])
    np.testing.assert_allclose(s.gamma_many(pts), np.stack([s.gamma_matrix(p) for p in pts]))
