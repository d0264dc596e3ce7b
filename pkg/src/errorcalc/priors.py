"""Prior measures on parameter domains.

Callables follow the package convention: parameter arrays carry the
coordinates on their trailing axis, so ``density(theta)`` maps shape
``(..., d)`` to ``(...)`` and ``sample`` returns ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import quadrature, rng
from .domain import ParameterDomain
from .exceptions import DomainError, NonNormalizableError, NumericalError

MASS_TOLERANCE = 1e-8
DEFAULT_GRID = 2048


@dataclass(frozen=True)
class PriorMeasure:
    """Probability measure ``q(theta) dtheta`` on a parameter domain.

    ``mass`` is the numerically computed integral of ``density`` over the
    domain; it is kept as a witness that the density is normalised.
    """

    domain: ParameterDomain
    density_fn: Callable[[np.ndarray], np.ndarray]
    sampler_fn: Callable[[int, np.random.Generator], np.ndarray]
    mass: float
    name: str = "prior"
    lipschitz: bool = True
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def density(self, theta) -> np.ndarray | float:
        t = np.asarray(theta, dtype=float)
        if t.ndim == 0:
            t = t[None]
        out = np.asarray(self.density_fn(t), dtype=float)
        return float(out) if out.ndim == 0 else out

    def sample(self, n: int, seed: int) -> np.ndarray:
        if n < 0:
            raise DomainError(f"sample size must be non-negative, got {n}")
        if n == 0:
            return np.empty((0, self.dim))
        return np.asarray(self.sampler_fn(n, rng.stream(seed)), dtype=float).reshape(n, self.dim)


def uniform(domain: ParameterDomain) -> PriorMeasure:
    """Normalised Lebesgue measure on a bounded domain."""
    if not domain.bounded:
        raise NonNormalizableError(f"uniform prior needs a bounded domain, got {domain}")
    vol = domain.volume
    lo = np.array(domain.lower)
    hi = np.array(domain.upper)

    def density(t):
        t = np.asarray(t, dtype=float)
        inside = np.all((t > lo) & (t < hi), axis=-1)
        return np.where(inside, 1.0 / vol, 0.0)

    def sampler(n, gen):
        return lo + (hi - lo) * gen.random((n, domain.dim))

    return PriorMeasure(domain, density, sampler, 1.0, name="uniform")


def _tensor_rule(domain: ParameterDomain, per_axis: int):
    """Tensor Gauss-Legendre nodes/weights over a bounded box."""
    x, w = np.polynomial.legendre.leggauss(per_axis)
    axes, weights = [], []
    for lo, hi in zip(domain.lower, domain.upper):
        axes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * w)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    wmesh = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), axis=-1), axis=-1).ravel()
    return mesh, wmesh


def integrate_over(domain: ParameterDomain, fn, atol: float = 1e-12, per_axis: int = 96) -> float:
    """Integral of a density-like ``fn`` over a domain.

    d = 1 uses adaptive quadrature; higher dimensions use a tensor
    Gauss-Legendre rule and need a bounded box.
    """
    if domain.dim == 1:
        res = quadrature.integrate(lambda t: fn(t[:, None]), domain.lower[0], domain.upper[0],
                                   atol=atol, rtol=1e-12,
                                   points=[p[0] for p in domain.excluded_points])
        return float(res.value)
    if not domain.bounded:
        raise NumericalError("multi-dimensional integration needs a bounded domain")
    mesh, w = _tensor_rule(domain, per_axis)
    return float(np.dot(w, fn(mesh)))


def _inverse_cdf_sampler(domain: ParameterDomain, density, grid: int):
    lo, hi = domain.lower[0], domain.upper[0]
    edges = np.linspace(lo, hi, grid + 1)
    # one Gauss-Kronrod panel per cell
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = mid[:, None] + half[:, None] * quadrature._NODES[None, :]
    vals = density(nodes.reshape(-1, 1)).reshape(grid, 15)
    cells = half * (vals * quadrature._KRONROD).sum(axis=1)
    cdf = np.concatenate([[0.0], np.cumsum(cells)])
    cdf /= cdf[-1]

    def sampler(n, gen):
        u = gen.random(n)
        return np.interp(u, cdf, edges)[:, None]

    return sampler


def from_density(domain: ParameterDomain, density: Callable, *, name: str = "density",
                 normalize: bool = True, grid: int = DEFAULT_GRID) -> PriorMeasure:
    """Prior from an (optionally unnormalised) density.

    Sampling is by inverse CDF on ``grid`` cells for d = 1 and by grid-bounded
    rejection for d >= 2.

    Raises
    ------
    NonNormalizableError
        if the integral diverges, vanishes, or the density is negative.
    """
    try:
        mass = integrate_over(domain, density)
    except NumericalError as exc:
        raise NonNormalizableError(f"cannot normalise prior '{name}': {exc}") from exc
    if not np.isfinite(mass) or mass <= 0:
        raise NonNormalizableError(f"prior '{name}' has mass {mass}")
    if not normalize and abs(mass - 1.0) > MASS_TOLERANCE:
        raise NonNormalizableError(f"prior '{name}' integrates to {mass}, not 1")
    k = mass if normalize else 1.0

    def dens(t):
        return np.asarray(density(t), dtype=float) / k

    if domain.dim == 1:
        if not domain.bounded:
            raise NonNormalizableError("inverse-CDF sampling needs a bounded interval")
        probe = dens(np.linspace(domain.lower[0], domain.upper[0], 257)[1:-1, None])
        if np.any(probe < 0):
            raise NonNormalizableError(f"prior '{name}' has negative density")
        sampler = _inverse_cdf_sampler(domain, dens, grid)
    else:
        mesh, _ = _tensor_rule(domain, min(grid, 64))
        envelope = 1.25 * float(np.max(dens(mesh)))
        lo = np.array(domain.lower)
        hi = np.array(domain.upper)

        def sampler(n, gen):
            out = []
            need = n
            while need > 0:
                cand = lo + (hi - lo) * gen.random((2 * need + 16, domain.dim))
                keep = cand[gen.random(cand.shape[0]) * envelope < dens(cand)]
                out.append(keep[:need])
                need -= min(need, keep.shape[0])
            return np.concatenate(out)

    witness = integrate_over(domain, dens)
    return PriorMeasure(domain, dens, sampler, witness, name=name)


def product(p1: PriorMeasure, p2: PriorMeasure) -> PriorMeasure:
    """Independent product ``q1(theta_1) q2(theta_2)``."""
    d1 = p1.dim

    def density(t):
        t = np.asarray(t, dtype=float)
        return p1.density_fn(t[..., :d1]) * p2.density_fn(t[..., d1:])

    def sampler(n, gen):
        s1 = np.asarray(p1.sampler_fn(n, gen), dtype=float).reshape(n, p1.dim)
        s2 = np.asarray(p2.sampler_fn(n, gen), dtype=float).reshape(n, p2.dim)
        return np.concatenate([s1, s2], axis=1)

    return PriorMeasure(p1.domain.product(p2.domain), density, sampler, p1.mass * p2.mass,
                        name=f"{p1.name}*{p2.name}", lipschitz=p1.lipschitz and p2.lipschitz)
