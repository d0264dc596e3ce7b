"""Images of error structures under changes of variables, and products.

Three ways to get ``Gamma_psi`` on the image space:

* ``closed-form``: injective ``psi``, ``Gamma_a = D Gamma(theta) D^T`` with
  ``D = psi'(theta)`` and ``theta = psi^{-1}(a)``;
* ``branch-exact``: piecewise-monotone ``psi`` (d = 1), the barycenter of the
  per-antecedent errors weighted by ``q(theta_b) / |psi'(theta_b)|``;
* ``kernel-mc``: Nadaraya-Watson regression of ``Gamma[F o psi](theta_i)`` on
  ``psi(theta_i)`` over prior draws; accepts a black-box ``psi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from . import rng
from .domain import ParameterDomain, fd_steps
from .exceptions import DomainError, InsufficientDataError, PreconditionError
from .linalg import block_diag, jacobi_eigh, sqrtm, symmetrize
from .models import BranchMap, branch_weights
from .priors import PriorMeasure, product as prior_product
from .structure import ErrorStructure, Functional

MIN_ESS = 50
MIN_MC_SAMPLES = 10_000
KERNEL_CUTOFF = 8.0  # Gaussian kernel ignored beyond this many bandwidths
SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class ImageStructure(ErrorStructure):
    gamma_mode: str = "closed-form"
    source: Optional[ErrorStructure] = None
    psi: Any = None


def _null_projector(D: np.ndarray) -> np.ndarray | None:
    """Projector onto the complement of the left null space of ``D``, or None if regular."""
    w, v = jacobi_eigh(D @ D.T)
    null = w <= SINGULAR_RTOL * max(w[-1], np.finfo(float).tiny)
    if not np.any(null):
        return None
    n = v[:, null]
    return np.eye(D.shape[0]) - n @ n.T


def _injective_prior(prior: PriorMeasure, psi: BranchMap) -> PriorMeasure:
    """``psi_* rho``: density ``q(psi^{-1}(a)) / |det psi'(psi^{-1}(a))|``."""
    branch = psi.pieces[0]
    d = psi.dim

    def density(a):
        a = np.asarray(a, dtype=float)
        if d == 1:
            with np.errstate(invalid="ignore", divide="ignore"):
                t = np.asarray(branch.inverse(a[..., 0]), dtype=float)
                ok = np.isfinite(t) & (t > branch.lower[0]) & (t < branch.upper[0])
                ts = np.where(ok, t, 0.5 * (psi.domain.lower[0] + psi.domain.upper[0])
                              if psi.domain.bounded else 0.0)
                jac = np.abs(np.asarray(branch.derivative(ts), dtype=float))
                q = np.asarray(prior.density_fn(ts[..., None]), dtype=float)
                return np.where(ok & (jac > 0), q / np.where(jac > 0, jac, 1.0), 0.0)
        flat = a.reshape(-1, d)
        out = np.empty(flat.shape[0])
        for i, p in enumerate(flat):
            t = np.asarray(branch.inverse(p), dtype=float)
            jac = abs(np.linalg.det(np.atleast_2d(branch.derivative(t))))
            out[i] = prior.density_fn(t) / jac if jac > 0 and branch.contains(t) else 0.0
        return out.reshape(a.shape[:-1])

    def sampler(n, gen):
        t = np.asarray(prior.sampler_fn(n, gen), dtype=float).reshape(n, d)
        if d == 1:
            return np.asarray(branch.forward(t[:, 0]), dtype=float)[:, None]
        return np.stack([np.asarray(branch.forward(p), dtype=float) for p in t])

    return PriorMeasure(psi.image_domain, density, sampler, prior.mass,
                        name=f"{psi.name}_*{prior.name}", lipschitz=prior.lipschitz)


def image_injective(structure: ErrorStructure, psi: BranchMap) -> ImageStructure:
    """Image structure under an injective ``psi`` (closed form).

    At points where ``psi'`` is singular the null directions of ``psi'^T``
    carry zero error (infinite information there).

    Raises
    ------
    PreconditionError
        if ``psi`` has more than one branch.
    """
    if not psi.injective:
        raise PreconditionError(f"{psi.name} has {len(psi.pieces)} branches; "
                                "use image_conditional_exact or image_conditional_mc")
    if psi.dim != structure.dim:
        raise PreconditionError("psi and structure have different dimensions")
    branch = psi.pieces[0]
    d = psi.dim

    def preimage(a) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        t = np.atleast_1d(np.asarray(branch.inverse(a[0] if d == 1 else a), dtype=float))
        if not structure.domain.contains(t):
            raise DomainError(f"a={a.tolist()} has no antecedent in {structure.domain}")
        return t

    def gamma_fn(a):
        t = preimage(a)
        D = psi.jacobian(t)
        g = symmetrize(D @ structure.gamma_matrix(t) @ D.T)
        proj = _null_projector(D)
        return g if proj is None else symmetrize(proj @ g @ proj)

    batch = None
    if d == 1 and structure.batch_gamma_fn is not None:
        def batch(a):
            a = np.asarray(a, dtype=float).reshape(-1)
            t = np.asarray(branch.inverse(a), dtype=float)
            dpsi = np.asarray(branch.derivative(t), dtype=float)
            return (dpsi**2)[:, None, None] * structure.gamma_many(t[:, None])

    return ImageStructure(psi.image_domain, _injective_prior(structure.prior, psi), gamma_fn,
                          lambda a: sqrtm(gamma_fn(a)), provenance="image", basis=structure.basis,
                          batch_gamma_fn=batch, gamma_mode="closed-form", source=structure, psi=psi)


def _antecedents(structure: ErrorStructure, psi: BranchMap, a: float):
    found = [(b, t) for b, t in psi.antecedents(a) if structure.domain.contains([t])]
    if not found:
        raise DomainError(f"a={a} has no antecedent under {psi.name} in {structure.domain}")
    return found


def image_gamma_exact(structure: ErrorStructure, psi: BranchMap, a: float) -> float:
    """``Gamma_psi[Id](a)`` as the prior-weighted barycenter over antecedents (d = 1).

    Raises
    ------
    DomainError
        if ``a`` has no antecedent, or is a critical value reached by
        several branches (the image is not open there).
    """
    if psi.dim != 1 or structure.dim != 1:
        raise PreconditionError("branch-exact images are implemented for d = 1")
    a = float(a)
    found = _antecedents(structure, psi, a)
    num = den = 0.0
    for b, t in found:
        dpsi = float(b.derivative(np.float64(t)))
        g = dpsi * dpsi * float(structure.gamma_matrix([t])[0, 0])
        if dpsi == 0.0:
            if len(found) == 1:
                return 0.0
            raise DomainError(f"a={a} is a critical value of {psi.name}")
        w = float(structure.prior.density([t])) / abs(dpsi)
        num += w * g
        den += w
    if den <= 0:
        raise DomainError(f"prior puts no mass on the antecedents of a={a}")
    return num / den


def image_conditional_exact(structure: ErrorStructure, psi: BranchMap, F: Functional | None, a: float) -> float:
    """``E[Gamma[F o psi] | psi = a]`` by summing over the branches of ``psi``.

    Equals ``F'(a)^2 Gamma_psi[Id](a)``; ``F`` defaults to the identity.
    """
    g = image_gamma_exact(structure, psi, a)
    if F is None:
        return g
    df = float(F.grad([a])[0])
    return df * df * g


def image_conditional(structure: ErrorStructure, psi: BranchMap) -> ImageStructure:
    """Image structure for a piecewise-monotone ``psi`` (branch-exact, d = 1)."""
    if psi.dim != 1:
        raise PreconditionError("branch-exact images are implemented for d = 1")
    if psi.injective:
        return image_injective(structure, psi)
    prior = structure.prior

    def density(a):
        a = np.asarray(a, dtype=float)[..., 0]
        _, w, _ = branch_weights(prior, psi, a)
        return w.sum(axis=0)

    def sampler(n, gen):
        t = np.asarray(prior.sampler_fn(n, gen), dtype=float).reshape(n)
        return psi.values(t)[:, None]

    image_prior = PriorMeasure(psi.image_domain, density, sampler, prior.mass,
                               name=f"{psi.name}_*{prior.name}", lipschitz=prior.lipschitz)
    gamma_fn = lambda a: np.array([[image_gamma_exact(structure, psi, float(np.ravel(a)[0]))]])
    return ImageStructure(psi.image_domain, image_prior, gamma_fn, lambda a: np.sqrt(gamma_fn(a)),
                          provenance="image", basis=structure.basis, gamma_mode="branch-exact",
                          source=structure, psi=psi)


# -- kernel Monte Carlo path ----------------------------------------------------

@dataclass(frozen=True)
class KernelEstimate:
    estimate: float
    std_err: float
    bandwidth: float
    effective_sample_size: float
    n: int
    seed: int
    bootstrap: int
    meta: dict = field(default_factory=dict, compare=False)


def silverman_bandwidth(y: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    sd = np.std(y, ddof=1)
    q75, q25 = np.percentile(y, [75, 25])
    spread = min(sd, (q75 - q25) / 1.349) if q75 > q25 else sd
    return float(0.9 * spread * y.size ** (-0.2))


def _derivative_many(F: Functional, y: np.ndarray) -> np.ndarray:
    """``F'`` on an array of scalars; the functional callables see ``t[0]`` as the array."""
    if F.jacobian_fn is not None:
        out = np.asarray(F.jacobian_fn(y[None, :]), dtype=float)
        return np.broadcast_to(out.reshape(-1) if out.size == y.size else out.reshape(()), y.shape)
    h = fd_steps(y)
    up = np.broadcast_to(np.asarray(F.fn((y + h)[None, :]), dtype=float), y.shape)
    dn = np.broadcast_to(np.asarray(F.fn((y - h)[None, :]), dtype=float), y.shape)
    return (up - dn) / (2.0 * h)


def _map_many(psi, t: np.ndarray):
    """``(psi(t), psi'(t))`` for a BranchMap or a vectorised black-box callable."""
    if isinstance(psi, BranchMap):
        return psi.values(t), psi.derivatives(t)
    y = np.asarray(psi(t), dtype=float)
    h = fd_steps(t)
    return y, (np.asarray(psi(t + h), dtype=float) - np.asarray(psi(t - h), dtype=float)) / (2.0 * h)


def nadaraya_watson(y: np.ndarray, g: np.ndarray, a: float, bandwidth: float, *,
                    bootstrap: int = 200, seed: int = 0) -> tuple[float, float, float]:
    """Gaussian-kernel regression of ``g`` on ``y`` at ``a``.

    Returns ``(estimate, bootstrap std err, effective sample size)``.  The
    standard error uses Poisson(1) resampling weights on the points inside
    the kernel cutoff.
    """
    local = np.abs(y - a) < KERNEL_CUTOFF * bandwidth
    k = np.exp(-0.5 * ((y[local] - a) / bandwidth) ** 2)
    gl = g[local]
    ksum = k.sum()
    ess = float(ksum * ksum / np.sum(k * k)) if ksum > 0 else 0.0
    if ess < MIN_ESS:
        return np.nan, np.nan, ess
    est = float(np.dot(k, gl) / ksum)
    gen = rng.stream(seed, 1)
    reps = np.empty(bootstrap)
    for b in range(bootstrap):
        w = k * gen.poisson(1.0, k.size)
        reps[b] = np.dot(w, gl) / w.sum()
    return est, float(np.std(reps, ddof=1)), ess


def image_conditional_mc(structure: ErrorStructure, psi, F: Functional | None, a: float, n: int = 1_000_000,
                         bandwidth: float | str = "auto", seed: int = 0, bootstrap: int = 200) -> KernelEstimate:
    """Kernel estimate of ``E[Gamma[F o psi] | psi = a]`` from ``n`` prior draws (d = 1).

    ``psi`` may be a :class:`BranchMap` or a vectorised callable; the latter
    is differentiated by central differences.

    Raises
    ------
    PreconditionError
        if ``n < 10^4``.
    InsufficientDataError
        if the kernel's effective sample size at ``a`` is below 50.
    """
    if n < MIN_MC_SAMPLES:
        raise PreconditionError(f"kernel path needs n >= {MIN_MC_SAMPLES}, got {n}")
    if structure.dim != 1:
        raise PreconditionError("kernel path is implemented for d = 1")
    theta = structure.prior.sample(n, seed)
    t = theta[:, 0]
    y, dpsi = _map_many(psi, t)
    gam = structure.gamma_many(theta)[:, 0, 0]
    df = np.ones_like(y) if F is None else _derivative_many(F, y)
    g = (df * dpsi) ** 2 * gam
    h = silverman_bandwidth(y) if bandwidth == "auto" else float(bandwidth)
    est, se, ess = nadaraya_watson(y, g, float(a), h, bootstrap=bootstrap, seed=seed)
    if not np.isfinite(est):
        raise InsufficientDataError(f"effective sample size {ess:.1f} < {MIN_ESS} at a={a}; "
                                    "increase n or the bandwidth", achieved=ess)
    return KernelEstimate(est, se, h, ess, n, seed, bootstrap)


# -- products -------------------------------------------------------------------

def product(s1: ErrorStructure, s2: ErrorStructure) -> ErrorStructure:
    """``S1 (x) S2``: block-diagonal ``Gamma`` and root on the product domain."""
    d1 = s1.dim

    def gamma_fn(t):
        t = np.asarray(t, dtype=float)
        return block_diag(np.atleast_2d(s1.gamma_fn(t[:d1])), np.atleast_2d(s2.gamma_fn(t[d1:])))

    def root_fn(t):
        t = np.asarray(t, dtype=float)
        return block_diag(s1.root_matrix(t[:d1]), s2.root_matrix(t[d1:]))

    batch = None
    if s1.batch_gamma_fn is not None and s2.batch_gamma_fn is not None:
        def batch(t):
            t = np.asarray(t, dtype=float)
            return block_diag(s1.gamma_many(t[:, :d1]), s2.gamma_many(t[:, d1:]))

    domain: ParameterDomain = s1.domain.product(s2.domain)
    return ErrorStructure(domain, prior_product(s1.prior, s2.prior), gamma_fn, root_fn,
                          provenance="product", basis=tuple(s1.basis) + tuple(s2.basis),
                          batch_gamma_fn=batch)


def product_map(psi1: BranchMap, psi2: BranchMap) -> BranchMap:
    return psi1.product(psi2)


def compose(psi1: BranchMap, psi2: BranchMap) -> BranchMap:
    """``psi2 o psi1`` for injective maps."""
    return psi1.compose(psi2)

