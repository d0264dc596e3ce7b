import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from errorcalc import models, priors
from errorcalc.exceptions import BoundaryError, DomainError

BUILTINS = [
    models.normal_location(),
    models.normal_scale(),
    models.logistic_location(),
    models.squared_location_mixture(),
]
LOG_PHI0 = -0.5 * math.log(2 * math.pi)


def _random_theta(model, gen):
    lo, hi = model.domain.lower[0], model.domain.upper[0]
    lo = lo if math.isfinite(lo) else -3.0
    hi = hi if math.isfinite(hi) else 3.0
    return gen.uniform(lo + 0.2, hi - 0.2) if lo > 0 or hi < 3 else gen.uniform(max(lo, 0.2), hi)


def test_log_density_normal_location():
    m = models.normal_location()
    assert m.log_density(0.0, 0.0) == pytest.approx(LOG_PHI0, abs=1e-12)
    assert m.log_density(1.0, 1.0) == pytest.approx(LOG_PHI0, abs=1e-12)
    assert m.log_density(0.0, 0.0) == pytest.approx(stats.norm.logpdf(0.0), abs=1e-14)


def test_log_density_mixture_at_one():
    m = models.squared_location_mixture()
    expected = math.log(0.5 * (stats.norm.pdf(-1.0) + stats.norm.pdf(1.0)))
    assert m.log_density(0.0, 1.0) == pytest.approx(expected, abs=1e-12)
    assert m.log_density(0.0, 1.0) == pytest.approx(stats.norm.logpdf(1.0), abs=1e-12)


def test_log_density_outside_domain():
    m = models.normal_location(-1.0, 1.0, excluded=[0.0])
    with pytest.raises(DomainError):
        m.log_density(0.0, 2.0)
    with pytest.raises(DomainError):
        m.log_density(0.0, 0.0)


def test_score_examples():
    assert models.normal_location().score(2.0, 0.5)[0] == pytest.approx(1.5, abs=1e-12)
    assert models.logistic_location().score(0.7, 0.7)[0] == pytest.approx(0.0, abs=1e-10)
    # normal-scale: f(x, .) peaks at theta = |x|
    assert models.normal_scale().score(1.3, 1.3)[0] == pytest.approx(0.0, abs=1e-10)


def test_finite_difference_score():
    m = dataclasses.replace(models.logistic_location(-1.0, 1.0), score_fn=None, score_derivative_fn=None)
    assert m.score(0.4, 0.1)[0] == pytest.approx(math.tanh(0.15), rel=1e-7)
    with pytest.raises(BoundaryError):
        m.score(0.0, 1.0 - 1e-12)


@pytest.mark.parametrize("model", BUILTINS, ids=lambda m: m.name)
def test_normalization(model, gen):
    for _ in range(5):
        t = _random_theta(model, gen)
        total, _ = integrate.quad(lambda x: model.density(x, t), -np.inf, np.inf, epsabs=1e-12)
        assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("model", BUILTINS, ids=lambda m: m.name)
def test_score_matches_finite_difference(model, gen):
    for _ in range(20):
        t = _random_theta(model, gen)
        x = gen.normal(0.0, 2.0)
        h = 1e-6 * max(1.0, abs(t))
        fd = (model.log_density(x, t + h) - model.log_density(x, t - h)) / (2 * h)
        assert model.score(x, t)[0] == pytest.approx(fd, rel=1e-6, abs=1e-7)


def test_sample_mean_and_determinism():
    m = models.normal_location()
    x = m.sample(0.0, 1_000_000, seed=7)
    assert abs(x.mean()) < 4 / math.sqrt(1e6)
    np.testing.assert_array_equal(x, m.sample(0.0, 1_000_000, seed=7))
    assert m.sample(0.0, 0, seed=7).size == 0


def test_sample_seed_changes_output():
    m = models.normal_location()
    assert not np.array_equal(m.sample(0.0, 10, seed=1), m.sample(0.0, 10, seed=2))


def test_hellinger_examples():
    m = models.normal_location()
    assert models.hellinger_distance(m, 0.3, 0.3) == pytest.approx(0.0, abs=1e-12)
    assert models.hellinger_distance(m, 0.0, 1.0) == pytest.approx(2 - 2 * math.exp(-1 / 8), abs=1e-9)
    assert models.hellinger_distance(m, 0.0, 60.0) == pytest.approx(2.0, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_hellinger_symmetric_and_bounded(t1, t2):
    m = models.logistic_location()
    r12 = models.hellinger_distance(m, t1, t2)
    r21 = models.hellinger_distance(m, t2, t1)
    assert r12 == pytest.approx(r21, abs=1e-10)
    assert 0.0 <= r12 <= 2.0
    if abs(t1 - t2) > 1e-3:
        assert r12 > 0.0


def test_pushforward_squared_setup(squared):
    model, prior, psi, _ = squared
    Q = models.pushforward_model(model, prior, psi)
    for a in (0.1, 0.25, 0.7):
        for x in (-1.0, 0.3, 2.0):
            expected = 0.5 * (stats.norm.pdf(x - math.sqrt(a)) + stats.norm.pdf(x + math.sqrt(a)))
            assert Q.density(x, a) == pytest.approx(expected, rel=1e-12)
    total, _ = integrate.quad(lambda x: Q.density(x, 0.5), -np.inf, np.inf, epsabs=1e-12)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_pushforward_injective_is_reparameterisation():
    model = models.normal_location(-1.0, 1.0)
    psi = models.affine_map(model.domain, 2.0, 1.0)
    Q = models.pushforward_model(model, priors.uniform(model.domain), psi)
    R = models.reparameterize(model, psi)
    for a in (-0.5, 1.0, 2.5):
        for x in (-1.0, 0.4, 3.0):
            assert Q.log_density(x, a) == pytest.approx(model.log_density(x, (a - 1) / 2), abs=1e-12)
            assert Q.log_density(x, a) == pytest.approx(R.log_density(x, a), abs=1e-12)


def test_pushforward_outside_image(squared):
    model, prior, psi, _ = squared
    Q = models.pushforward_model(model, prior, psi)
    with pytest.raises(DomainError):
        Q.log_density(0.0, 1.5)


def test_branch_map_antecedents(squared):
    _, _, psi, _ = squared
    roots = sorted(t for _, t in psi.antecedents(0.25))
    assert roots == pytest.approx([-0.5, 0.5])
    assert not psi.injective
    psi.validate()
