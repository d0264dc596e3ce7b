"""Jeffreys prior ``sqrt(det J(theta)) / K`` and its invariance checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NonNormalizableError
from .fisher import fisher_information
from .linalg import sqrt_det
from .models import BranchMap, ParametricModel, reparameterize
from .priors import DEFAULT_GRID, PriorMeasure, from_density
from .transforms import _injective_prior


def information_density(model: ParametricModel, method: str = "auto"):
    """Unnormalised ``theta -> sqrt(det J(theta))`` on ``(..., d)`` arrays."""
    d = model.dim_param
    batched = model.fisher_fn is not None and method in ("auto", "analytic")

    def density(t):
        t = np.asarray(t, dtype=float)
        if batched:
            return sqrt_det(np.asarray(model.fisher_fn(t), dtype=float))
        flat = t.reshape(-1, d)
        out = np.array([sqrt_det(fisher_information(model, p, method).matrix) for p in flat])
        return out.reshape(t.shape[:-1])

    return density


def jeffreys_prior(model: ParametricModel, grid: int = DEFAULT_GRID, method: str = "auto") -> PriorMeasure:
    """Jeffreys prior induced by ``model`` on its domain.

    Raises
    ------
    NonNormalizableError
        if ``K = int sqrt(det J)`` diverges (for instance on an unbounded domain
        with constant information).
    """
    if not model.domain.bounded:
        raise NonNormalizableError(f"Jeffreys prior of {model.name} on the unbounded domain "
                                   f"{model.domain} is not normalisable here")
    prior = from_density(model.domain, information_density(model, method),
                         name=f"jeffreys({model.name})", grid=grid)
    return prior


@dataclass(frozen=True)
class InvarianceReport:
    grid: np.ndarray
    pushed: np.ndarray
    direct: np.ndarray

    @property
    def gap(self) -> float:
        return float(np.max(np.abs(self.pushed - self.direct)))


def _interior_grid(domain, count: int, margin: float) -> np.ndarray:
    return domain.grid(count, margin=margin)[:, None]


def verify_jeffreys_invariance(model: ParametricModel, psi: BranchMap, count: int = 100,
                               margin: float = 1e-3, grid: int = DEFAULT_GRID) -> InvarianceReport:
    """Compare ``psi_* jeffreys(model)`` with ``jeffreys(model reparameterised by psi)``.

    Both densities are evaluated on ``count`` interior points of the image.
    """
    base = jeffreys_prior(model, grid)
    pushed = _injective_prior(base, psi)
    direct = jeffreys_prior(reparameterize(model, psi), grid)
    pts = _interior_grid(psi.image_domain, count, margin)
    return InvarianceReport(pts[:, 0], np.asarray(pushed.density_fn(pts)), np.asarray(direct.density_fn(pts)))


def factorization_gap(m1: ParametricModel, m2: ParametricModel, product_model: ParametricModel,
                      count: int = 12) -> float:
    """``max |rho^{(V1,V2)} - rho^{V1} rho^{V2}|`` on a ``count x count`` interior grid."""
    joint = jeffreys_prior(product_model)
    p1 = jeffreys_prior(m1)
    p2 = jeffreys_prior(m2)
    g1 = m1.domain.grid(count, margin=1e-3)
    g2 = m2.domain.grid(count, margin=1e-3)
    mesh = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1).reshape(-1, 2)
    outer = p1.density_fn(mesh[:, :1]) * p2.density_fn(mesh[:, 1:])
    return float(np.max(np.abs(joint.density_fn(mesh) - outer)))
