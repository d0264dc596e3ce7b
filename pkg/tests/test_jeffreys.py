import math

import numpy as np
import pytest
from scipy import integrate

from errorcalc import models
from errorcalc.exceptions import NonNormalizableError
from errorcalc.jeffreys import factorization_gap, jeffreys_prior, verify_jeffreys_invariance


def test_normal_location_is_uniform():
    p = jeffreys_prior(models.normal_location(0.0, 1.0))
    np.testing.assert_allclose(p.density(np.linspace(0.01, 0.99, 25)[:, None]), 1.0, atol=1e-10)


def test_normal_scale_density():
    p = jeffreys_prior(models.normal_scale(1.0, 2.0))
    t = np.linspace(1.01, 1.99, 30)
    np.testing.assert_allclose(p.density(t[:, None]), 1 / (t * math.log(2)), rtol=1e-9)
    mass, _ = integrate.quad(lambda s: p.density(s), 1.0, 2.0, epsabs=1e-13)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_logistic_normalised():
    p = jeffreys_prior(models.logistic_location(-2.0, 3.0))
    mass, _ = integrate.quad(lambda s: p.density(s), -2.0, 3.0, epsabs=1e-13)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_unbounded_domain_not_normalisable():
    with pytest.raises(NonNormalizableError):
        jeffreys_prior(models.normal_location())


def test_sampler_matches_density():
    p = jeffreys_prior(models.normal_scale(1.0, 2.0))
    x = p.sample(200_000, seed=1)[:, 0]
    # CDF of (1/theta)/ln 2 on ]1,2[ is log(theta)/ln 2; median sqrt(2)
    assert np.median(x) == pytest.approx(math.sqrt(2), abs=5e-3)
    assert np.all((x > 1) & (x < 2))


def test_invariance_identity():
    m = models.normal_scale(1.0, 2.0)
    rep = verify_jeffreys_invariance(m, models.identity_map(m.domain))
    assert rep.gap < 1e-12


def test_invariance_square_on_unit_interval():
    m = models.normal_location(0.0, 1.0)
    rep = verify_jeffreys_invariance(m, models.square_map(m.domain))
    assert rep.gap < 1e-6
    np.testing.assert_allclose(rep.direct, 1 / (2 * np.sqrt(rep.grid)), rtol=1e-6)


def test_invariance_log_scale():
    m = models.normal_scale(1.0, 2.0)
    rep = verify_jeffreys_invariance(m, models.log_map(m.domain))
    assert rep.gap < 1e-6
    np.testing.assert_allclose(rep.direct, 1 / math.log(2), rtol=1e-9)


@pytest.mark.parametrize("model, psi", [
    (models.normal_location(-1.0, 1.0), lambda d: models.affine_map(d, -2.0, 0.3)),
    (models.normal_location(-1.0, 1.0), lambda d: models.cube_map(d)),
    (models.normal_scale(0.5, 3.0), lambda d: models.exp_map(d)),
    (models.logistic_location(0.0, 2.0), lambda d: models.square_map(d)),
])
def test_invariance_builtins(model, psi):
    assert verify_jeffreys_invariance(model, psi(model.domain)).gap < 1e-6


def test_product_factorises():
    m1 = models.normal_location(-1.0, 1.0)
    m2 = models.normal_scale(1.0, 2.0)
    assert factorization_gap(m1, m2, models.product_model(m1, m2)) < 1e-8
