"""Error structures on parameter spaces.

An :class:`ErrorStructure` carries a prior on the domain and a field of
positive semi-definite matrices ``theta -> Gamma(theta)``.  For a smooth
functional ``F`` the quadratic error is ``grad F . Gamma . grad F``.  Built
from a statistical model, ``Gamma`` is the inverse Fisher information.

Only C^1 Lipschitz functionals are handled; the closed extension of the
domain is never materialised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import rng
from .domain import ParameterDomain, as_point, fd_steps
from .exceptions import PreconditionError, RegularityError
from .fisher import check_regularity, fisher_information
from .linalg import inverse, sqrtm, symmetrize
from .models import ParametricModel
from .priors import PriorMeasure

CONTRACTION_SLACK = 1e-10


@dataclass(frozen=True)
class Functional:
    """Map ``R^d -> R^m`` with an optional analytic Jacobian.

    ``fn`` takes a length-``d`` vector.  ``jacobian_fn`` returns an
    ``(m, d)`` matrix, or a length-``d`` gradient when ``m == 1``.
    """

    fn: Callable
    dim_in: int
    dim_out: int = 1
    jacobian_fn: Optional[Callable] = None
    lipschitz: Optional[float] = None
    name: str = "F"

    def __call__(self, theta):
        out = np.asarray(self.fn(as_point(theta, self.dim_in)), dtype=float)
        return float(out) if self.dim_out == 1 else out

    def jacobian(self, theta, domain: ParameterDomain | None = None) -> np.ndarray:
        p = as_point(theta, self.dim_in)
        if self.jacobian_fn is not None:
            return np.asarray(self.jacobian_fn(p), dtype=float).reshape(self.dim_out, self.dim_in)
        h = fd_steps(p)
        if domain is not None:
            domain.check_stencil(p, h)
        cols = []
        for i in range(self.dim_in):
            e = np.zeros(self.dim_in)
            e[i] = h[i]
            up = np.asarray(self.fn(p + e), dtype=float)
            dn = np.asarray(self.fn(p - e), dtype=float)
            cols.append(np.atleast_1d((up - dn) / (2.0 * h[i])))
        return np.stack(cols, axis=-1)

    def grad(self, theta, domain: ParameterDomain | None = None) -> np.ndarray:
        if self.dim_out != 1:
            raise PreconditionError(f"{self.name} is vector-valued; gradient needs a scalar functional")
        return self.jacobian(theta, domain)[0]

    @classmethod
    def identity(cls, dim: int = 1) -> "Functional":
        if dim == 1:
            return cls(lambda t: t[0], 1, 1, lambda t: np.ones(1), lipschitz=1.0, name="Id")
        return cls(lambda t: np.asarray(t), dim, dim, lambda t: np.eye(dim), lipschitz=1.0, name="Id")

    @classmethod
    def coordinate(cls, index: int, dim: int) -> "Functional":
        e = np.zeros(dim)
        e[index] = 1.0
        return cls(lambda t: t[index], dim, 1, lambda t: e, lipschitz=1.0, name=f"theta_{index + 1}")

    @classmethod
    def constant(cls, value: float, dim: int = 1) -> "Functional":
        return cls(lambda t: value, dim, 1, lambda t: np.zeros(dim), lipschitz=0.0, name=f"const({value:g})")

    @classmethod
    def scalar(cls, fn: Callable, derivative: Callable | None = None, name: str = "F") -> "Functional":
        """One-variable functional from a scalar function and optional derivative."""
        jac = (lambda t: np.atleast_1d(derivative(t[0]))) if derivative is not None else None
        return cls(lambda t: fn(t[0]), 1, 1, jac, name=name)


@dataclass(frozen=True)
class ErrorStructure:
    """``(domain, prior, Gamma)`` with ``Gamma[F] = grad F . Gamma(theta) . grad F``."""

    domain: ParameterDomain
    prior: PriorMeasure
    gamma_fn: Callable
    root_fn: Optional[Callable] = None
    provenance: str = "explicit"
    basis: tuple[str, ...] = ()
    batch_gamma_fn: Optional[Callable] = field(default=None, repr=False)
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def gamma_matrix(self, theta) -> np.ndarray:
        """``Gamma(theta)``, the error matrix of the coordinates."""
        p = self.domain.check(theta)
        return symmetrize(np.atleast_2d(np.asarray(self.gamma_fn(p), dtype=float)))

    def root_matrix(self, theta) -> np.ndarray:
        """``R(theta)`` with ``R R^T = Gamma(theta)``; symmetric root unless given."""
        p = self.domain.check(theta)
        if self.root_fn is not None:
            return np.atleast_2d(np.asarray(self.root_fn(p), dtype=float))
        return sqrtm(self.gamma_matrix(p))

    def gamma_many(self, thetas) -> np.ndarray:
        """``Gamma`` on an ``(n, d)`` array of points, without domain checks."""
        t = np.asarray(thetas, dtype=float).reshape(-1, self.dim)
        if self.batch_gamma_fn is not None:
            return np.asarray(self.batch_gamma_fn(t), dtype=float).reshape(-1, self.dim, self.dim)
        return np.stack([np.atleast_2d(self.gamma_fn(p)) for p in t])

    def gamma(self, F: Functional, G: Functional | None = None, theta=None) -> float:
        """Bilinear error ``Gamma[F, G](theta)``; ``Gamma[F]`` when ``G`` is omitted."""
        p = self.domain.check(theta)
        gf = F.grad(p, self.domain)
        gg = gf if G is None or G is F else G.grad(p, self.domain)
        return float(gf @ self.gamma_matrix(p) @ gg)

    def gradient(self, F: Functional, theta) -> np.ndarray:
        """Error gradient ``R^T grad F``; its squared norm is ``Gamma[F]``."""
        p = self.domain.check(theta)
        return self.root_matrix(p).T @ F.grad(p, self.domain)

    def check_contraction(self, F: Functional, theta, probes: int = 64, seed: int = 0) -> bool:
        """Test ``Gamma[F]^(1/2) <= sum_i Gamma[theta_i]^(1/2)`` at ``theta``.

        ``F`` must be a contraction for the l1 distance; this is probed on
        random pairs near ``theta`` first.

        Raises
        ------
        PreconditionError
            if a probe pair violates ``|F(x) - F(y)| <= sum |x_i - y_i|``.
        """
        p = self.domain.check(theta)
        gen = rng.stream(seed)
        spread = 0.1 * np.maximum(1.0, np.abs(p))
        for _ in range(probes):
            x = p + spread * gen.uniform(-1, 1, p.size)
            y = p + spread * gen.uniform(-1, 1, p.size) * 1e-3
            if np.abs(F(x) - F(y)) > np.sum(np.abs(x - y)) * (1 + 1e-9) + 1e-12:
                raise PreconditionError(f"{F.name} is not a contraction near theta={p.tolist()}")
        g = self.gamma_matrix(p)
        lhs = np.sqrt(max(self.gamma(F, theta=p), 0.0))
        rhs = float(np.sum(np.sqrt(np.clip(np.diag(g), 0.0, None))))
        return bool(lhs <= rhs + CONTRACTION_SLACK)


def explicit(domain: ParameterDomain, prior: PriorMeasure, gamma_fn: Callable,
             batch_gamma_fn: Callable | None = None) -> ErrorStructure:
    """Structure with a user-supplied error matrix field."""
    return ErrorStructure(domain, prior, gamma_fn, provenance="explicit", batch_gamma_fn=batch_gamma_fn)


def closability_basis(model: ParametricModel, prior: PriorMeasure, probes: np.ndarray,
                      constant_information: bool) -> tuple[list[str], list[str]]:
    """Sufficient conditions for a closable form: met and missing, by name."""
    met, missing = [], []
    (met if prior.domain.bounded else missing).append("bounded box domain")
    positive = bool(np.all(np.asarray(prior.density_fn(probes)) > 0))
    (met if positive and prior.lipschitz else missing).append("positive Lipschitz prior density")
    if constant_information:
        met.append("constant information (extension not needed)")
    elif model.extendable:
        met.append("model extends beyond the closed domain (declared)")
    else:
        missing.append("model extends beyond the closed domain")
    return met, missing


def from_model(model: ParametricModel, prior: PriorMeasure, fisher_method: str = "auto", *,
               probes: int = 16, seed: int = 0, assume_closable: bool = False,
               cache_size: int = 4096, **fisher_kw) -> ErrorStructure:
    """Error structure with ``Gamma = J^{-1}`` for a regular model.

    The Fisher matrix is checked for regularity at ``probes`` points drawn from
    the prior, and the sufficient closability conditions (bounded box,
    positive Lipschitz prior, extendable model) are recorded in ``basis``.

    Raises
    ------
    RegularityError
        if ``J`` is singular at a probe point.
    PreconditionError
        if a closability condition is missing and ``assume_closable`` is false.
    """
    if prior.domain != model.domain and prior.domain.dim != model.domain.dim:
        raise PreconditionError("prior and model live on different parameter spaces")
    domain = model.domain

    @lru_cache(maxsize=cache_size)
    def info(key: bytes) -> np.ndarray:
        t = np.frombuffer(key, dtype=float)
        return fisher_information(model, t, fisher_method, **fisher_kw).matrix

    def J(theta):
        return info(np.ascontiguousarray(theta, dtype=float).tobytes())

    pts = [p for p in prior.sample(probes, seed) if domain.contains(p)]
    mats = []
    for p in pts:
        report = check_regularity(J(p))
        if not report.passed:
            raise RegularityError(f"Fisher information is singular at theta={p.tolist()} "
                                  f"(smallest eigenvalue {report.smallest_eigenvalue:.3g})")
        mats.append(J(p))
    constant = len(mats) > 1 and all(np.allclose(m, mats[0], rtol=1e-12, atol=0) for m in mats)
    met, missing = closability_basis(model, prior, np.asarray(pts).reshape(-1, domain.dim), constant)
    if missing and not assume_closable:
        raise PreconditionError("closability not established: missing " + "; ".join(missing)
                                + " (pass assume_closable=True to assert it)")
    basis = tuple(met) + tuple(f"asserted: {m}" for m in missing)

    def gamma_fn(theta):
        return inverse(J(theta))

    def root_fn(theta):
        return sqrtm(gamma_fn(theta))

    batch = None
    if model.fisher_fn is not None and fisher_method in ("auto", "analytic"):
        def batch(thetas):
            return inverse(np.asarray(model.fisher_fn(thetas), dtype=float))

    return ErrorStructure(domain, prior, gamma_fn, root_fn, provenance="fundamental-identification",
                          basis=basis, batch_gamma_fn=batch,
                          meta={"model": model, "fisher_method": fisher_method})


def _scalar_derivatives(F, u: float, derivative=None, second_derivative=None):
    if isinstance(F, Functional):
        f = lambda v: F([v])
        if derivative is None and F.jacobian_fn is not None:
            derivative = lambda v: float(F.grad([v])[0])
    else:
        f = F
    h1 = fd_steps(u)
    h2 = np.finfo(float).eps ** 0.25 * max(1.0, abs(u))
    d1 = derivative(u) if derivative is not None else (f(u + h1) - f(u - h1)) / (2 * h1)
    d2 = (second_derivative(u) if second_derivative is not None
          else (f(u + h2) - 2 * f(u) + f(u - h2)) / (h2 * h2))
    return float(d1), float(d2)


def propagate_bias(F, u: float, bias_u: float, gamma_u: float, *,
                   derivative: Callable | None = None,
                   second_derivative: Callable | None = None) -> float:
    """Bias of ``F(U)`` from the bias and error of ``U``.

    ``A[F(U)] = F'(U) A[U] + F''(U) Gamma[U] / 2``; derivatives default to
    central differences.
    """
    d1, d2 = _scalar_derivatives(F, float(u), derivative, second_derivative)
    return d1 * bias_u + 0.5 * d2 * gamma_u


def propagate_variance(F, u: float, gamma_u: float, *, derivative: Callable | None = None) -> float:
    """First-order error of ``F(U)``: ``F'(U)^2 Gamma[U]``."""
    d1, _ = _scalar_derivatives(F, float(u), derivative, lambda v: 0.0)
    return d1 * d1 * gamma_u
