"""Monte Carlo harness for maximum-likelihood asymptotics and bound checks.

Replications are grouped in chunks of ``CHUNK_REPS``; chunk ``k`` draws from
``rng.stream(seed, 1, k)``, so reports do not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import quadrature, rng
from .domain import as_point, fd_steps
from .exceptions import (DomainError, NoRootError, PreconditionError, RegularityError,
                         SimulationError)
from .fisher import check_regularity, fisher_information, fisher_quadrature
from .models import BranchMap, ParametricModel, branch_weights
from .priors import PriorMeasure
from .structure import ErrorStructure, Functional, from_model
from .transforms import image_gamma_exact

CHUNK_REPS = 256
BRACKET_SHRINK = 1e-6
SCORE_RTOL = 1e-9
MAX_FAILURE_RATE = 0.01
MIN_ACCEPTANCE = 1e-4
WINDOW_FRACTION = 0.01

OK, NO_ROOT, BOUNDARY, NO_CONVERGENCE = "ok", "no-root", "boundary", "no-convergence"


@dataclass(frozen=True)
class SimulationReport:
    target: str
    estimate: float
    std_err: float
    replications: int
    n_per_rep: int
    seed: int
    reference_value: Optional[float] = None
    reference_provenance: Optional[str] = None
    extras: dict = field(default_factory=dict)
    draws: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: clean(u) for k, u in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(u) for u in v]
            return v

        return {
            "target": self.target,
            "estimate": float(self.estimate),
            "std_err": float(self.std_err),
            "replications": int(self.replications),
            "n_per_rep": int(self.n_per_rep),
            "seed": int(self.seed),
            "reference": None if self.reference_value is None else float(self.reference_value),
            "reference_provenance": self.reference_provenance,
            "extras": clean(self.extras),
        }


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        return float(np.mean(v)), math.nan
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size))


# -- maximum likelihood -----------------------------------------------------------

def _bracket(model: ParametricModel):
    lo, hi = model.domain.lower[0], model.domain.upper[0]
    if math.isfinite(lo):
        lo += BRACKET_SHRINK * max(1.0, abs(lo))
    if math.isfinite(hi):
        hi -= BRACKET_SHRINK * max(1.0, abs(hi))
    return lo, hi


def mle_batch(model: ParametricModel, x, *, max_iter: int = 200, max_expand: int = 60):
    """Row-wise MLE for a ``(reps, n)`` block of samples (d = 1).

    Safeguarded Newton on the aggregate score: the bracket is kept with a
    sign change, and a Newton step leaving it is replaced by bisection.

    Returns
    -------
    theta : ndarray, shape (reps,)
    status : ndarray of str, one of ``ok``, ``no-root``, ``boundary``,
        ``no-convergence``
    """
    if model.dim_param != 1:
        raise PreconditionError("mle is implemented for one-parameter models")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    reps = x.shape[0]
    if x.shape[1] == 0:
        raise PreconditionError("mle needs a nonempty sample")

    def agg(t):
        s = model.raw_score(x, t[:, None, None])[..., 0]
        return s.sum(axis=1), np.abs(s).sum(axis=1)

    lo0, hi0 = _bracket(model)
    center = np.median(x, axis=1)
    lo = np.full(reps, lo0)
    hi = np.full(reps, hi0)
    # unbounded ends: expand geometrically from the sample median
    if not math.isfinite(lo0) or not math.isfinite(hi0):
        width = np.ones(reps)
        if not math.isfinite(lo0):
            lo = (np.minimum(center, hi0) if math.isfinite(hi0) else center) - width
        if not math.isfinite(hi0):
            hi = (np.maximum(center, lo0) if math.isfinite(lo0) else center) + width
        with np.errstate(all="ignore"):
            for _ in range(max_expand):
                s_lo, _ = agg(lo)
                s_hi, _ = agg(hi)
                open_ = ~(s_lo * s_hi < 0)
                if not open_.any():
                    break
                width = np.where(open_, 2.0 * width, width)
                if not math.isfinite(lo0):
                    lo = np.where(open_ & (s_lo <= 0), lo - width, lo)
                if not math.isfinite(hi0):
                    hi = np.where(open_ & (s_hi >= 0), hi + width, hi)

    with np.errstate(all="ignore"):
        s_lo, _ = agg(lo)
        s_hi, _ = agg(hi)
    status = np.full(reps, OK, dtype=object)
    bracketed = s_lo * s_hi < 0
    status[~bracketed] = NO_ROOT
    sign_lo = np.sign(s_lo)
    t = np.where(bracketed, 0.5 * (lo + hi), np.nan)
    active = bracketed.copy()
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa = x[idx]
        ta = t[idx]
        s = model.raw_score(xa, ta[:, None, None])[..., 0]
        S = s.sum(axis=1)
        scale = np.abs(s).sum(axis=1)
        done = np.abs(S) <= SCORE_RTOL * (1.0 + scale)
        same = np.sign(S) == sign_lo[idx]
        lo[idx] = np.where(same, ta, lo[idx])
        hi[idx] = np.where(same, hi[idx], ta)
        dS = model.raw_score_derivative(xa, ta[:, None, None]).sum(axis=1)
        with np.errstate(all="ignore"):
            newton = ta - S / dS
        mid = 0.5 * (lo[idx] + hi[idx])
        inside = np.isfinite(newton) & (newton > lo[idx]) & (newton < hi[idx])
        nxt = np.where(inside, newton, mid)
        # bracket collapsed to machine precision: accept
        tight = (hi[idx] - lo[idx]) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(ta))
        finished = done | tight
        t[idx] = np.where(finished, ta, nxt)
        active[idx[finished]] = False
    status[active] = NO_CONVERGENCE
    edge = bracketed & ((np.abs(t - lo0) <= BRACKET_SHRINK * max(1.0, abs(lo0)) if math.isfinite(lo0) else False)
                        | (np.abs(t - hi0) <= BRACKET_SHRINK * max(1.0, abs(hi0)) if math.isfinite(hi0) else False))
    status[edge & (status == OK)] = BOUNDARY
    return t, status.astype(str)


def mle(model: ParametricModel, samples) -> np.ndarray:
    """Root of the aggregate score for one sample.

    Raises
    ------
    NoRootError
        if the aggregate score has no sign change on the domain.
    """
    x = np.asarray(samples, dtype=float).reshape(1, -1)
    t, status = mle_batch(model, x)
    if status[0] == NO_ROOT:
        raise NoRootError(f"aggregate score of {model.name} has no sign change on {model.domain}")
    if status[0] == NO_CONVERGENCE:
        raise NoRootError("safeguarded Newton did not converge", achieved=float(t[0]))
    return np.array([t[0]])


# -- replication drivers ---------------------------------------------------------------

def _chunks(reps: int, size: int = CHUNK_REPS):
    return [(k, min(size, reps - k * size)) for k in range((reps + size - 1) // size)]


def _run_chunks(fn, reps: int, workers: int):
    jobs = _chunks(reps)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda j: fn(*j), jobs))
    return [fn(*j) for j in jobs]


def _sample_block(model: ParametricModel, thetas: np.ndarray, n: int, gen) -> np.ndarray:
    if np.all(thetas == thetas[0]):
        return model.raw_sample(thetas[0], thetas.shape[0] * n, gen).reshape(thetas.shape[0], n)
    return np.stack([model.raw_sample(t, n, gen).reshape(n) for t in thetas])


def _gate_failures(status: np.ndarray, reps: int):
    counts = {s: int(np.sum(status == s)) for s in (NO_ROOT, BOUNDARY, NO_CONVERGENCE)}
    failed = sum(counts.values())
    if failed > MAX_FAILURE_RATE * reps:
        raise SimulationError(f"{failed} of {reps} replications failed ({counts})", achieved=failed / reps)
    return counts


def simulate_mle_asymptotics(model: ParametricModel, theta, n: int, reps: int, seed: int = 0, *,
                             workers: int = 1, keep_draws: bool = False) -> SimulationReport:
    """``n * mean((theta_hat - theta)^2)`` over ``reps`` n-sample experiments.

    Also reports the scaled bias ``sqrt(n) * mean(theta_hat - theta)`` and the
    Kolmogorov-Smirnov distance of ``sqrt(n)(theta_hat - theta)`` to
    ``N(0, 1/J)``.  Replications without an interior root are excluded and
    counted; more than 1% of them fails the run.
    """
    t = model.domain.check(theta)
    J = fisher_information(model, t)
    reg = check_regularity(J)
    if not reg.passed:
        raise RegularityError(f"model {model.name} is not regular at theta={t.tolist()}")
    if n < 1 or reps < 2:
        raise PreconditionError("need n >= 1 and reps >= 2")

    def run(k, size):
        gen = rng.stream(seed, 1, k)
        x = _sample_block(model, np.repeat(t[None, :], size, axis=0), n, gen)
        return mle_batch(model, x)

    parts = _run_chunks(run, reps, workers)
    est = np.concatenate([p[0] for p in parts])
    status = np.concatenate([p[1] for p in parts])
    counts = _gate_failures(status, reps)
    ok = status == OK
    err = est[ok] - t[0]
    z = math.sqrt(n) * err
    risk, risk_se = _mean_se(n * err**2)
    bias, bias_se = _mean_se(z)
    inv_j = 1.0 / J.value
    ks = stats.kstest(z, stats.norm(scale=math.sqrt(inv_j)).cdf).statistic
    return SimulationReport(
        target="n*E[(theta_hat-theta)^2]", estimate=risk, std_err=risk_se, replications=int(ok.sum()),
        n_per_rep=n, seed=seed, reference_value=inv_j, reference_provenance=f"1/J ({J.method})",
        extras={"scaled_bias": bias, "scaled_bias_std_err": bias_se, "ks_distance": float(ks),
                "failures": counts, "theta": t.tolist()},
        draws=z if keep_draws else None,
    )


def _resolve_structure(model, prior, structure, assume_closable):
    if structure is not None:
        return structure
    return from_model(model, prior, assume_closable=assume_closable)


def simulate_psi_variance(model: ParametricModel, prior: PriorMeasure, psi: BranchMap, a: float, n: int,
                          reps: int, kernel_window: float | None = None, seed: int = 0, *,
                          center: str = "antecedent", structure: ErrorStructure | None = None,
                          workers: int = 1, assume_closable: bool = False,
                          consistency_eps: float = 0.05, keep_draws: bool = False) -> SimulationReport:
    """``n * E[(psi(theta_hat) - a)^2 | psi(V) ~ a]`` by windowed rejection (d = 1).

    Parameters ``theta`` are drawn from the prior and kept when
    ``|psi(theta) - a| <= w``; one n-sample MLE is run per kept parameter.
    With ``center="antecedent"`` (default) each deviation is measured from
    ``psi(theta)`` of the kept parameter, which removes the ``n w^2 / 3``
    windowing bias; ``center="a"`` measures from ``a`` itself.  Both are
    reported.

    Raises
    ------
    SimulationError
        if the acceptance rate falls below 1e-4 (window too small) or too
        many replications fail.
    """
    if psi.dim != 1 or model.dim_param != 1:
        raise PreconditionError("simulate_psi_variance is implemented for d = 1")
    if center not in ("antecedent", "a"):
        raise ValueError("center must be 'antecedent' or 'a'")
    image = psi.image_domain
    if not (image.lower[0] <= a <= image.upper[0]):
        raise DomainError(f"a={a} outside the image {image}")
    if kernel_window is None:
        if not image.bounded:
            raise PreconditionError("kernel_window is required for an unbounded image")
        kernel_window = WINDOW_FRACTION * (image.upper[0] - image.lower[0])
    w = float(kernel_window)
    s = _resolve_structure(model, prior, structure, assume_closable)
    reference = image_gamma_exact(s, psi, a)

    # windowed rejection on the prior
    accepted, drawn = [], 0
    batch = max(100_000, 20 * reps)
    k = 0
    while sum(len(v) for v in accepted) < reps:
        t = np.asarray(prior.sampler_fn(batch, rng.stream(seed, 0, k)), dtype=float).reshape(batch)
        k += 1
        drawn += t.size
        keep = t[np.abs(psi.values(t) - a) <= w]
        keep = keep[[model.domain.contains([v]) for v in keep]] if keep.size else keep
        accepted.append(keep)
        rate = sum(len(v) for v in accepted) / drawn
        if rate < MIN_ACCEPTANCE and drawn >= 1_000_000:
            raise SimulationError(f"window {w:g} too small: acceptance rate {rate:.2e} < {MIN_ACCEPTANCE:g}",
                                  achieved=rate)
        if drawn > 1e9:
            raise SimulationError("rejection sampler exhausted its draw budget", achieved=rate)
    thetas = np.concatenate(accepted)[:reps]
    rate = sum(len(v) for v in accepted) / drawn

    def run(k, size):
        gen = rng.stream(seed, 1, k)
        block = thetas[k * CHUNK_REPS:k * CHUNK_REPS + size]
        x = _sample_block(model, block[:, None], n, gen)
        est, status = mle_batch(model, x)
        return est, status

    parts = _run_chunks(run, reps, workers)
    est = np.concatenate([p[0] for p in parts])
    status = np.concatenate([p[1] for p in parts])
    counts = _gate_failures(status, reps)
    ok = status == OK
    image_hat = psi.values(est[ok])
    dev_anchor = image_hat - psi.values(thetas[ok])
    dev_a = image_hat - a
    risk_anchor, se_anchor = _mean_se(n * dev_anchor**2)
    risk_a, se_a = _mean_se(n * dev_a**2)
    estimate, std_err = (risk_anchor, se_anchor) if center == "antecedent" else (risk_a, se_a)
    return SimulationReport(
        target="n*E[(psi(theta_hat)-a)^2 | psi(V)=a]", estimate=estimate, std_err=std_err,
        replications=int(ok.sum()), n_per_rep=n, seed=seed, reference_value=reference,
        reference_provenance="Gamma_psi[Id](a), branch-exact",
        extras={"a": a, "window": w, "center": center, "acceptance_rate": rate,
                "estimate_antecedent_centered": risk_anchor, "std_err_antecedent_centered": se_anchor,
                "estimate_a_centered": risk_a, "std_err_a_centered": se_a,
                "windowing_bias_bound": n * w * w / 3.0,
                "exceed_fraction": float(np.mean(np.abs(dev_a) > consistency_eps)),
                "consistency_eps": consistency_eps, "failures": counts},
        draws=math.sqrt(n) * dev_anchor if keep_draws else None,
    )


# -- limit law and bounds ------------------------------------------------------------

def limit_density(prior: PriorMeasure, model: ParametricModel, psi: BranchMap, a: float, x) -> np.ndarray | float:
    """Limit density of ``sqrt(n)(psi(theta_hat) - a)`` given ``psi(V) = a``.

    Barycenter over antecedents of centered normal densities with variance
    ``psi'^2 / J``; antecedents with ``psi' = 0`` contribute nothing.
    """
    if psi.dim != 1:
        raise PreconditionError("limit_density is implemented for d = 1")
    found = [(b, t) for b, t in psi.antecedents(a) if model.domain.contains([t])]
    if not found:
        raise DomainError(f"a={a} has no antecedent under {psi.name}")
    xs = np.asarray(x, dtype=float)
    num = np.zeros_like(xs)
    den = 0.0
    for b, t in found:
        dpsi = float(b.derivative(np.float64(t)))
        if dpsi == 0.0:
            if len(found) > 1:
                raise DomainError(f"a={a} is a critical value of {psi.name}")
            return 0.0 * xs if xs.ndim else 0.0
        w = float(prior.density([t])) / abs(dpsi)
        var = dpsi * dpsi / fisher_information(model, [t]).value
        num = num + w * stats.norm.pdf(xs, scale=math.sqrt(var))
        den += w
    out = num / den
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CRLBReport:
    report: SimulationReport
    bound: float
    passed: bool
    bias: float
    bias_std_err: float
    warnings: tuple[str, ...] = ()


def _estimator_fn(estimator):
    if callable(estimator):
        return estimator, getattr(estimator, "vectorized", False)
    named = {"mean": lambda x: np.mean(x, axis=-1), "median": lambda x: np.median(x, axis=-1)}
    if estimator in named:
        return named[estimator], True
    raise ValueError(f"unknown estimator {estimator!r}; expected a callable or one of {sorted(named)}")


def crlb_check(model: ParametricModel, estimator, psi: Functional | None, theta, n: int, reps: int,
               seed: int = 0, *, workers: int = 1) -> CRLBReport:
    """Simulated risk of an estimator of ``psi(theta)`` against ``psi' J^{-1} psi'^T / n``.

    ``estimator`` is a callable on one sample, a callable with a true
    ``vectorized`` attribute acting on ``(reps, n)`` blocks row-wise, or one
    of ``"mean"``, ``"median"``.  ``psi`` defaults to the identity.  The
    check passes when ``risk >= bound - 4 std_err``.
    """
    t = model.domain.check(theta)
    psi = psi if psi is not None else Functional.identity(model.dim_param)
    fn, vectorized = _estimator_fn(estimator)
    J = fisher_information(model, t).matrix
    grad = psi.grad(t)
    bound = float(grad @ np.linalg.solve(J, grad)) / n
    target = psi(t)

    def run(k, size):
        gen = rng.stream(seed, 1, k)
        x = model.raw_sample(t, size * n, gen).reshape((size, n) + (() if model.dim_obs == 1 else (-1,)))
        if vectorized:
            return np.asarray(fn(x), dtype=float).reshape(size)
        return np.array([float(fn(row)) for row in x])

    values = np.concatenate(_run_chunks(run, reps, workers))
    err = values - target
    risk, risk_se = _mean_se(err**2)
    bias, bias_se = _mean_se(err)
    warnings = []
    if abs(bias) > 4 * bias_se:
        warnings.append(f"measured bias {bias:.3g} exceeds 4 std err ({bias_se:.3g}); the bound may not apply")
    passed = risk >= bound - 4 * risk_se
    report = SimulationReport(
        target="E[(T-psi(theta))^2]", estimate=risk, std_err=risk_se, replications=reps, n_per_rep=n,
        seed=seed, reference_value=bound, reference_provenance="psi' J^-1 psi'^T / n",
        extras={"bound": bound, "passed": bool(passed), "bias": bias, "bias_std_err": bias_se,
                "n_times_risk": n * risk, "warnings": warnings})
    return CRLBReport(report, bound, bool(passed), bias, bias_se, tuple(warnings))


@dataclass(frozen=True)
class BoundComparison:
    a: float
    inv_fisher: float
    gamma_psi: float

    @property
    def strict(self) -> bool:
        return self.inv_fisher > self.gamma_psi


def fisher_vs_gamma(model_q: ParametricModel, structure: ErrorStructure, psi: BranchMap, a: float,
                    atol: float | None = None) -> BoundComparison:
    """``(1 / J^{psi(V)}(a), Gamma_psi[Id](a))``; the first by quadrature on the observation model."""
    J = fisher_quadrature(model_q, [a], atol=atol)
    reg = check_regularity(J)
    if not reg.passed:
        raise RegularityError(f"observation model is not regular at a={a}")
    return BoundComparison(float(a), 1.0 / J.value, image_gamma_exact(structure, psi, a))


@dataclass(frozen=True)
class SplitInformation:
    a: float
    whole: float
    parts: tuple[float, ...]
    log_derivative_gap: float

    @property
    def holds(self) -> bool:
        return self.whole <= sum(self.parts) + 1e-8

    @property
    def strict(self) -> bool:
        return self.log_derivative_gap > 0


def split_information(model: ParametricModel, prior: PriorMeasure, psi: BranchMap, a: float,
                      atol: float | None = None) -> SplitInformation:
    """Compare ``int s'^2/s`` with ``sum_b int p_b'^2/p_b`` where ``s = sum_b p_b``.

    ``p_b(x, a) = q(theta_b) |dtheta_b/da| f(x, theta_b(a))`` is the branch-``b``
    part of the unnormalised conditional density; primes are ``d/da``.
    Equality would need all ``p_b'/p_b`` to coincide; their largest gap on
    a probe grid is reported.
    """
    if model.dim_param != 1 or model.dim_obs != 1:
        raise PreconditionError("split_information is implemented for scalar models")
    a = float(a)
    thetas, weights, dthetas = branch_weights(prior, psi, np.array([a]))
    live = np.flatnonzero(weights[:, 0] > 0)
    h = float(fd_steps(a))
    _, w_up, _ = branch_weights(prior, psi, np.array([a + h]))
    _, w_dn, _ = branch_weights(prior, psi, np.array([a - h]))
    dlogw = (np.log(w_up[live, 0]) - np.log(w_dn[live, 0])) / (2 * h)
    th = thetas[live, 0]
    wt = weights[live, 0]
    dth = dthetas[live, 0]

    def logderivs(x):
        return np.stack([dlogw[i] + model.raw_score(x, np.array([th[i]]))[..., 0] * dth[i]
                         for i in range(live.size)])

    def parts_fn(x):
        p = np.stack([wt[i] * np.exp(model.raw_logpdf(x, np.array([th[i]]))) for i in range(live.size)])
        g = logderivs(x)
        s = p.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            sd = np.where(s > 0, (p * g).sum(axis=0) / s, 0.0)
        return np.column_stack([s * sd**2] + [p[i] * g[i] ** 2 for i in range(live.size)])

    centers = [model.hint(np.array([t])) for t in th]
    scale = max(c[1] for c in centers)
    peaks = tuple(p for c in centers for p in c[2])
    lo, hi = model.support[0]
    res = quadrature.integrate(parts_fn, lo, hi, atol=atol, center=float(np.mean([c[0] for c in centers])),
                               scale=scale, points=peaks)
    vals = np.atleast_1d(res.value)
    probe = np.linspace(min(peaks) - 3 * scale, max(peaks) + 3 * scale, 41)
    g = logderivs(probe)
    gap = float(np.max(np.ptp(g, axis=0))) if live.size > 1 else 0.0
    return SplitInformation(a, float(vals[0]), tuple(float(v) for v in vals[1:]), gap)


def n_sample_information(model: ParametricModel, theta, n: int) -> np.ndarray:
    """Information of ``n`` i.i.d. observations: ``n J(theta)``."""
    return n * fisher_information(model, as_point(theta, model.dim_param)).matrix

