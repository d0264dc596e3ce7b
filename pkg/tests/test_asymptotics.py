import math

import numpy as np
import pytest
from scipy import integrate, stats

from errorcalc import asymptotics, models, priors
from errorcalc.asymptotics import (crlb_check, fisher_vs_gamma, limit_density, mle, mle_batch,
                                   simulate_mle_asymptotics, simulate_psi_variance, split_information)
from errorcalc.exceptions import DomainError, NoRootError, SimulationError
from errorcalc.structure import Functional, from_model

GRID_A = [round(0.1 * k, 1) for k in range(1, 10)]


def test_mle_normal_is_sample_mean(gen):
    m = models.normal_location()
    for size in (1, 2, 17, 500):
        x = gen.normal(0.3, 1.0, size=size)
        assert mle(m, x)[0] == pytest.approx(x.mean(), abs=1e-12)


def test_mle_single_observation():
    assert mle(models.normal_location(), [1.7])[0] == pytest.approx(1.7, abs=1e-12)


def test_mle_logistic_symmetric_pair():
    assert mle(models.logistic_location(), [-2.5, 2.5])[0] == pytest.approx(0.0, abs=1e-10)


def test_mle_score_is_zero(gen):
    m = models.logistic_location()
    x = gen.logistic(0.5, 1.0, size=300)
    t = mle(m, x)[0]
    assert abs(m.score(x, t)[:, 0].sum()) <= 1e-9 * (1 + np.abs(m.score(x, t)).sum())
    sp = stats.logistic.fit(x, fscale=1.0)[0]
    assert t == pytest.approx(sp, abs=1e-6)


def test_mle_no_root_on_bounded_domain():
    with pytest.raises(NoRootError):
        mle(models.normal_location(-1.0, 1.0), [5.0, 6.0])


def test_mle_batch_statuses():
    m = models.normal_location(-1.0, 1.0)
    est, status = mle_batch(m, np.array([[0.1, 0.3], [5.0, 6.0]]))
    assert est[0] == pytest.approx(0.2)
    assert status[0] == asymptotics.OK and status[1] != asymptotics.OK


def test_simulate_mle_normal_location():
    rep = simulate_mle_asymptotics(models.normal_location(), 0.5, n=2000, reps=4000, seed=1)
    assert abs(rep.estimate - 1.0) < 4 * rep.std_err
    assert abs(rep.extras["scaled_bias"]) < 4 * rep.extras["scaled_bias_std_err"]
    assert rep.reference_value == pytest.approx(1.0)


def test_simulate_mle_normal_scale():
    rep = simulate_mle_asymptotics(models.normal_scale(), 1.0, n=2000, reps=4000, seed=2)
    assert rep.estimate == pytest.approx(0.5, abs=4 * rep.std_err + 0.01)


def test_simulate_mle_deterministic_and_worker_independent():
    m = models.logistic_location()
    a = simulate_mle_asymptotics(m, 0.2, n=200, reps=600, seed=3, workers=1)
    b = simulate_mle_asymptotics(m, 0.2, n=200, reps=600, seed=3, workers=3)
    assert a.estimate == b.estimate and a.std_err == b.std_err
    assert a.to_dict() == b.to_dict()


def test_simulation_gate_on_failures():
    # theta close to the edge of a narrow domain: many samples have their MLE outside
    m = models.normal_location(-1.0, 1.0)
    with pytest.raises(SimulationError):
        simulate_mle_asymptotics(m, 0.99, n=4, reps=500, seed=0)


def test_risk_stable_across_n():
    m = models.normal_location()
    small = simulate_mle_asymptotics(m, 0.0, n=1000, reps=4000, seed=4)
    large = simulate_mle_asymptotics(m, 0.0, n=10_000, reps=4000, seed=5)
    assert abs(small.estimate - large.estimate) < 3 * math.hypot(small.std_err, large.std_err)


def test_psi_variance_injective():
    m = models.normal_location(-1.0, 1.0)
    prior = priors.uniform(m.domain)
    psi = models.affine_map(m.domain, 2.0, 1.0)
    rep = simulate_psi_variance(m, prior, psi, 2.0, n=1000, reps=4000, seed=6)
    assert rep.reference_value == pytest.approx(4.0)
    assert rep.estimate == pytest.approx(4.0, rel=0.05)


def test_psi_variance_identity_matches_plain_simulation():
    m = models.normal_location(-1.0, 1.0)
    prior = priors.uniform(m.domain)
    rep = simulate_psi_variance(m, prior, models.identity_map(m.domain), 0.3, n=1000, reps=4000, seed=7)
    plain = simulate_mle_asymptotics(m, 0.3, n=1000, reps=4000, seed=8)
    assert abs(rep.estimate - plain.estimate) < 4 * math.hypot(rep.std_err, plain.std_err)


def test_psi_variance_squared_and_consistency(squared):
    model, prior, psi, s = squared
    rep = simulate_psi_variance(model, prior, psi, 0.25, n=10_000, reps=3000, seed=9, structure=s)
    assert rep.estimate == pytest.approx(1.0, rel=0.05 + 4 * rep.std_err)
    assert rep.extras["exceed_fraction"] < 1e-3
    assert rep.extras["windowing_bias_bound"] == pytest.approx(10_000 * 0.01**2 / 3)


def test_psi_variance_window_too_small(squared):
    model, prior, psi, s = squared
    with pytest.raises(SimulationError):
        simulate_psi_variance(model, prior, psi, 0.25, n=100, reps=100, kernel_window=1e-9, seed=0, structure=s)


def test_psi_variance_outside_image(squared):
    model, prior, psi, s = squared
    with pytest.raises(DomainError):
        simulate_psi_variance(model, prior, psi, 1.5, n=100, reps=100, structure=s)


def test_limit_density_squared_setup(squared):
    model, prior, psi, _ = squared
    assert limit_density(prior, model, psi, 0.25, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    for a in (0.1, 0.25, 0.7):
        mass, _ = integrate.quad(lambda x: limit_density(prior, model, psi, a, x), -np.inf, np.inf)
        second, _ = integrate.quad(lambda x: x * x * limit_density(prior, model, psi, a, x), -np.inf, np.inf)
        assert mass == pytest.approx(1.0, abs=1e-8)
        assert second == pytest.approx(4 * a, abs=1e-8)
        np.testing.assert_allclose(limit_density(prior, model, psi, a, np.array([-1.0, 0.5])),
                                   stats.norm.pdf([-1.0, 0.5], scale=math.sqrt(4 * a)), rtol=1e-12)


def test_limit_density_matches_simulated_histogram(squared):
    model, prior, psi, s = squared
    rep = simulate_psi_variance(model, prior, psi, 0.25, n=2000, reps=4000, seed=10, structure=s,
                                keep_draws=True)
    d = rep.draws
    cdf = lambda x: stats.norm.cdf(x, scale=1.0)
    assert stats.kstest(d, cdf).statistic < 0.03


def test_crlb_mean_is_efficient():
    res = crlb_check(models.normal_location(), "mean", None, 0.0, n=100, reps=20_000, seed=1)
    assert res.bound == pytest.approx(0.01)
    assert res.passed
    assert abs(res.report.estimate - 0.01) < 4 * res.report.std_err


def test_crlb_median_exceeds_bound():
    res = crlb_check(models.normal_location(), "median", None, 0.0, n=2001, reps=5000, seed=2)
    assert res.passed
    n_risk = res.report.extras["n_times_risk"]
    assert n_risk > 1.0
    assert n_risk == pytest.approx(math.pi / 2, rel=0.1)


def test_crlb_constant_functional():
    res = crlb_check(models.normal_location(), "median", Functional.constant(2.0), 0.0, n=10, reps=500, seed=3)
    assert res.bound == 0.0 and res.passed


def test_crlb_warns_on_bias():
    biased = lambda x: np.mean(x) + 0.5
    res = crlb_check(models.normal_location(), biased, None, 0.0, n=10, reps=500, seed=4)
    assert res.warnings


def test_crlb_plain_callable_matches_vectorized():
    m = models.normal_location()
    a = crlb_check(m, "mean", None, 0.1, n=20, reps=300, seed=5)
    b = crlb_check(m, lambda x: float(np.mean(x)), None, 0.1, n=20, reps=300, seed=5)
    assert a.report.estimate == pytest.approx(b.report.estimate, rel=1e-12)


def test_fisher_vs_gamma_strict_on_grid(squared):
    model, prior, psi, s = squared
    Q = models.pushforward_model(model, prior, psi)
    for a in GRID_A:
        cmp = fisher_vs_gamma(Q, s, psi, a, atol=1e-10)
        assert cmp.gamma_psi == pytest.approx(4 * a, abs=1e-12)
        assert cmp.strict
    assert fisher_vs_gamma(Q, s, psi, 0.25).inv_fisher == pytest.approx(2.9132, abs=1e-4)


def test_fisher_vs_gamma_against_scipy(squared):
    model, prior, psi, s = squared
    Q = models.pushforward_model(model, prior, psi)
    a = 0.4
    J, _ = integrate.quad(lambda x: Q.score(x, a)[0] ** 2 * Q.density(x, a), -np.inf, np.inf, epsabs=1e-12)
    assert fisher_vs_gamma(Q, s, psi, a).inv_fisher == pytest.approx(1 / J, rel=1e-8)


def test_fisher_vs_gamma_injective_coincide():
    m = models.normal_location(-1.0, 1.0)
    prior = priors.uniform(m.domain)
    psi = models.affine_map(m.domain, 2.0, 1.0)
    s = from_model(m, prior)
    Q = models.pushforward_model(m, prior, psi)
    cmp = fisher_vs_gamma(Q, s, psi, 1.4)
    assert cmp.inv_fisher == pytest.approx(cmp.gamma_psi, abs=1e-6)
    assert not cmp.strict or cmp.inv_fisher - cmp.gamma_psi < 1e-6


def test_split_information(squared):
    model, prior, psi, _ = squared
    for a in GRID_A:
        res = split_information(model, prior, psi, a)
        assert res.holds
        assert res.whole <= sum(res.parts) + 1e-8
        assert res.strict


def test_split_information_against_scipy(squared):
    model, prior, psi, _ = squared
    a = 0.25
    r = math.sqrt(a)
    # branch parts p_b = q |dtheta/da| phi(x - b r) with q = 1/2, |dtheta/da| = 1/(2r)
    c, dc = 1 / (4 * r), -1 / (8 * r**3)

    def part(x, b):
        phi = stats.norm.pdf(x - b * r)
        return c * phi, dc * phi + c * phi * (x - b * r) * b / (2 * r)

    def whole_fn(x):
        (p1, d1), (p2, d2) = part(x, 1), part(x, -1)
        return (d1 + d2) ** 2 / (p1 + p2)

    def part_fn(x, b):
        p, d = part(x, b)
        return d * d / p

    whole, _ = integrate.quad(whole_fn, -30, 30, epsabs=1e-13, limit=200)
    first, _ = integrate.quad(part_fn, -30, 30, args=(1,), epsabs=1e-13, limit=200)
    second, _ = integrate.quad(part_fn, -30, 30, args=(-1,), epsabs=1e-13, limit=200)
    res = split_information(model, prior, psi, a)
    assert res.whole == pytest.approx(whole, abs=1e-8)
    assert res.parts == pytest.approx((first, second), abs=1e-8)
    assert whole < first + second
