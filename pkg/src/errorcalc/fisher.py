"""Fisher information: analytic, quadrature and Monte Carlo routes."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import quadrature, rng
from .exceptions import NumericalError, PreconditionError, RegularityError
from .linalg import jacobi_eigh, symmetrize
from .models import ParametricModel

PSD_FLOOR = 1e-10  # relative eigenvalue floor, both for PSD and regularity
SYMMETRY_TOL = 1e-12
MC_CHUNK = 1 << 15
METHODS = ("analytic", "quadrature", "monte-carlo")


@dataclass(frozen=True)
class FisherMatrix:
    theta: np.ndarray
    matrix: np.ndarray
    method: str
    mc_std_err: Optional[np.ndarray] = None
    sample_size: Optional[int] = None

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise RegularityError(f"Fisher matrix must be square, got {m.shape}")
        if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(m))):
            raise RegularityError("Fisher matrix is not symmetric")
        w, _ = jacobi_eigh(m)
        if w[0] < -PSD_FLOOR * max(abs(w[-1]), np.finfo(float).tiny):
            raise RegularityError(f"Fisher matrix at theta={np.ravel(self.theta).tolist()} "
                                  f"is not positive semi-definite (eigenvalue {w[0]:.3g})")
        object.__setattr__(self, "matrix", symmetrize(m))
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def value(self) -> float:
        """Scalar information for one-parameter models."""
        if self.dim != 1:
            raise ValueError("value is only defined for d = 1")
        return float(self.matrix[0, 0])


@dataclass(frozen=True)
class RegularityReport:
    smallest_eigenvalue: float
    largest_eigenvalue: float
    condition_number: float
    threshold: float
    passed: bool


def check_regularity(J, rel_floor: float = PSD_FLOOR) -> RegularityReport:
    """Eigenvalue diagnostics; passes iff ``lambda_min > rel_floor * lambda_max``."""
    m = J.matrix if isinstance(J, FisherMatrix) else np.atleast_2d(np.asarray(J, dtype=float))
    w, _ = jacobi_eigh(m)
    lo, hi = float(w[0]), float(w[-1])
    threshold = rel_floor * abs(hi)
    cond = abs(hi / lo) if lo != 0 else np.inf
    return RegularityReport(lo, hi, float(cond), threshold, bool(hi > 0 and lo > threshold))


def fisher_analytic(model: ParametricModel, theta) -> FisherMatrix:
    t = model.domain.check(theta)
    return FisherMatrix(t, model.fisher(t), "analytic")


def fisher_quadrature(model: ParametricModel, theta, atol: float | None = None) -> FisherMatrix:
    """``J_ij = int s_i s_j f dx`` by adaptive quadrature (scalar observations).

    All upper-triangle entries share one adaptive mesh.
    """
    if model.dim_obs != 1:
        raise NumericalError("quadrature Fisher information needs scalar observations; use Monte Carlo")
    t = model.domain.check(theta) if model.score_fn is not None else model.domain.check_stencil(theta)
    d = model.dim_param
    iu = np.triu_indices(d)
    center, scale, peaks = model.hint(t)

    def integrand(x):
        f = np.exp(model.raw_logpdf(x, t))
        s = model.raw_score(x, t)
        prod = s[:, iu[0]] * s[:, iu[1]] * f[:, None]
        # 0 * inf in far tails where f underflows
        return np.where(f[:, None] > 0, prod, 0.0)

    lo, hi = model.support[0]
    res = quadrature.integrate(integrand, lo, hi, atol=atol, center=center, scale=scale, points=peaks)
    m = np.zeros((d, d))
    m[iu] = np.atleast_1d(res.value)
    m = m + np.triu(m, 1).T
    return FisherMatrix(t, m, "quadrature")


def _mc_chunk(model, t, n, seed, index):
    x = model.raw_sample(t, n, rng.stream(seed, index))
    s = model.raw_score(x, t).reshape(n, -1)
    outer = s[:, :, None] * s[:, None, :]
    return outer.sum(axis=0), (outer**2).sum(axis=0)


def fisher_monte_carlo(model: ParametricModel, theta, n: int, seed: int, workers: int = 1) -> FisherMatrix:
    """Sample mean of ``score score^T`` over ``n`` draws.

    Draws come in fixed-size chunks with their own derived seeds, so the
    estimate does not depend on ``workers``.
    """
    if n < 100:
        raise PreconditionError(f"Monte Carlo Fisher information needs n >= 100, got {n}")
    t = model.domain.check(theta) if model.score_fn is not None else model.domain.check_stencil(theta)
    sizes = [MC_CHUNK] * (n // MC_CHUNK) + ([n % MC_CHUNK] if n % MC_CHUNK else [])
    jobs = [(model, t, size, seed, i) for i, size in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda j: _mc_chunk(*j), jobs))
    else:
        parts = [_mc_chunk(*j) for j in jobs]
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    mean = total / n
    var = np.maximum(total_sq / n - mean**2, 0.0) * n / (n - 1)
    return FisherMatrix(t, symmetrize(mean), "monte-carlo", mc_std_err=np.sqrt(var / n), sample_size=n)


def fisher_information(model: ParametricModel, theta, method: str = "auto", *,
                       n: int = 200_000, seed: int = 0, atol: float | None = None) -> FisherMatrix:
    """Dispatch on ``method``; ``auto`` prefers analytic, then quadrature, then Monte Carlo."""
    if method == "auto":
        if model.fisher_fn is not None:
            method = "analytic"
        elif model.dim_obs == 1:
            method = "quadrature"
        else:
            method = "monte-carlo"
    if method == "analytic":
        return fisher_analytic(model, theta)
    if method == "quadrature":
        return fisher_quadrature(model, theta, atol=atol)
    if method == "monte-carlo":
        return fisher_monte_carlo(model, theta, n, seed)
    raise ValueError(f"unknown Fisher method {method!r}; expected one of {METHODS}")


def continuity_probe(model: ParametricModel, theta, deltas=(1e-1, 1e-2, 1e-3, 1e-4), method: str = "auto"):
    """``max |J(theta + delta) - J(theta)|`` along a shrinking sequence of shifts."""
    base = fisher_information(model, theta, method).matrix
    t = np.atleast_1d(np.asarray(theta, dtype=float))
    out = []
    for delta in deltas:
        shifted = fisher_information(model, t + delta, method).matrix
        out.append(float(np.max(np.abs(shifted - base))))
    return out
