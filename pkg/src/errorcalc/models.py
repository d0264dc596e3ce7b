"""Parametric statistical models.

A model is a family of densities ``f(x, theta)`` on the real line (or a
product of real lines).  Raw callables use broadcasting: ``theta`` carries
the ``d`` coordinates on its last axis and ``theta[..., i]`` must broadcast
against ``x``.  A single point is a length-``d`` vector; a batch of
parameter values for a ``(reps, n)`` sample block is passed as
``(reps, 1, d)``.

Public methods validate ``theta`` against the domain; the ``raw_*`` helpers
skip validation and are used inside solvers that may probe excluded points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import log_expit, logsumexp

from . import quadrature, rng
from .domain import ParameterDomain, as_point, fd_steps
from .exceptions import DomainError, EvaluationError, NumericalError, PreconditionError
from .linalg import block_diag, symmetrize

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ParametricModel:
    name: str
    domain: ParameterDomain
    logpdf_fn: Callable
    sampler_fn: Callable
    support: tuple[tuple[float, float], ...] = ((-math.inf, math.inf),)
    score_fn: Optional[Callable] = None
    score_derivative_fn: Optional[Callable] = None
    fisher_fn: Optional[Callable] = None
    hint_fn: Optional[Callable] = None
    extendable: bool = True
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def dim_param(self) -> int:
        return self.domain.dim

    @property
    def dim_obs(self) -> int:
        return len(self.support)

    # -- raw, broadcasting evaluations -------------------------------------

    def raw_logpdf(self, x, theta):
        return self.logpdf_fn(np.asarray(x, dtype=float), np.asarray(theta, dtype=float))

    def raw_score(self, x, theta):
        """``grad_theta log f``, shape ``broadcast(x, theta[..., 0]) + (d,)``."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.score_fn is not None:
            return self.score_fn(x, theta)
        h = fd_steps(theta)
        cols = []
        for i in range(self.dim_param):
            e = np.zeros(self.dim_param)
            e[i] = 1.0
            hi = h[..., i:i + 1]
            up = self.logpdf_fn(x, theta + hi * e)
            dn = self.logpdf_fn(x, theta - hi * e)
            cols.append((up - dn) / (2.0 * h[..., i]))
        return np.stack(cols, axis=-1)

    def raw_score_derivative(self, x, theta):
        """``d^2/dtheta^2 log f`` for one-parameter models."""
        if self.dim_param != 1:
            raise DomainError("score derivative is only defined for d = 1")
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.score_derivative_fn is not None:
            return self.score_derivative_fn(x, theta)
        h = fd_steps(theta)
        up = self.raw_score(x, theta + h)[..., 0]
        dn = self.raw_score(x, theta - h)[..., 0]
        return (up - dn) / (2.0 * h[..., 0])

    # -- validated point evaluations ----------------------------------------

    def log_density(self, x, theta):
        """``log f(x, theta)``; raises on a bad ``theta`` or a non-finite value."""
        t = self.domain.check(theta)
        out = self.raw_logpdf(x, t)
        if not np.all(np.isfinite(out)):
            raise EvaluationError("non-finite log-density", x=x, theta=t.tolist())
        return float(out) if np.ndim(out) == 0 else out

    def density(self, x, theta):
        return np.exp(self.log_density(x, theta))

    def score(self, x, theta):
        """Analytic score when available, else central differences of the log-density."""
        if self.score_fn is not None:
            t = self.domain.check(theta)
        else:
            t = self.domain.check_stencil(theta)
        out = self.raw_score(x, t)
        if not np.all(np.isfinite(out)):
            raise EvaluationError("non-finite score", x=x, theta=t.tolist())
        return out

    def sample(self, theta, n: int, seed: int) -> np.ndarray:
        """``n`` i.i.d. draws from ``P_theta``; identical for identical arguments."""
        t = self.domain.check(theta)
        if n < 0:
            raise DomainError(f"sample size must be non-negative, got {n}")
        if n == 0:
            return np.empty((0,) if self.dim_obs == 1 else (0, self.dim_obs))
        return self.raw_sample(t, n, rng.stream(seed))

    def raw_sample(self, theta, n, gen):
        return np.asarray(self.sampler_fn(np.asarray(theta, dtype=float), n, gen), dtype=float)

    def fisher(self, theta) -> np.ndarray:
        if self.fisher_fn is None:
            raise NumericalError(f"model '{self.name}' has no analytic Fisher information")
        t = self.domain.check(theta)
        return np.atleast_2d(np.asarray(self.fisher_fn(t), dtype=float))

    def hint(self, theta) -> tuple[float, float, tuple[float, ...]]:
        """Quadrature hint ``(center, scale, peaks)`` for one-dimensional observations.

        Falls back to a fixed-seed pilot sample when the model gives none.
        """
        if self.hint_fn is not None:
            return self.hint_fn(np.asarray(theta, dtype=float))
        pilot = self.raw_sample(theta, 513, rng.stream(0x5EED))
        q1, med, q3 = np.percentile(pilot, [25, 50, 75])
        return float(med), float(max(q3 - q1, 1e-6) / 1.349), (float(med),)

    def with_domain(self, domain: ParameterDomain) -> "ParametricModel":
        return replace(self, domain=domain)


# -- built-in families ------------------------------------------------------

def _loc(theta):
    return theta[..., 0]


def normal_location(lower=-math.inf, upper=math.inf, excluded=()) -> ParametricModel:
    """``N(theta, 1)``; Fisher information 1."""
    return ParametricModel(
        name="normal-location",
        domain=ParameterDomain.interval(lower, upper, excluded),
        logpdf_fn=lambda x, t: -0.5 * (x - _loc(t)) ** 2 - LOG_SQRT_2PI,
        sampler_fn=lambda t, n, g: t[0] + g.standard_normal(n),
        score_fn=lambda x, t: (x - _loc(t))[..., None],
        score_derivative_fn=lambda x, t: np.broadcast_to(-1.0, np.broadcast_shapes(np.shape(x), np.shape(_loc(t)))),
        fisher_fn=lambda t: np.ones(np.shape(t)[:-1] + (1, 1)),
        hint_fn=lambda t: (float(t[..., 0]), 1.0, (float(t[..., 0]),)),
    )


def normal_scale(lower=0.0, upper=math.inf, excluded=()) -> ParametricModel:
    """``N(0, theta^2)``, ``theta > 0``; Fisher information ``2/theta^2``."""
    if lower < 0:
        raise DomainError("normal-scale needs a positive parameter domain")

    def score(x, t):
        s = _loc(t)
        return (-1.0 / s + x * x / s**3)[..., None]

    return ParametricModel(
        name="normal-scale",
        domain=ParameterDomain.interval(lower, upper, excluded),
        logpdf_fn=lambda x, t: -np.log(_loc(t)) - 0.5 * (x / _loc(t)) ** 2 - LOG_SQRT_2PI,
        sampler_fn=lambda t, n, g: t[0] * g.standard_normal(n),
        score_fn=score,
        score_derivative_fn=lambda x, t: 1.0 / _loc(t) ** 2 - 3.0 * x * x / _loc(t) ** 4,
        fisher_fn=lambda t: (2.0 / _loc(t) ** 2)[..., None, None],
        hint_fn=lambda t: (0.0, float(t[..., 0]), (0.0,)),
    )


def logistic_location(lower=-math.inf, upper=math.inf, excluded=()) -> ParametricModel:
    """Standard logistic shifted by ``theta``; Fisher information 1/3."""

    def logpdf(x, t):
        z = x - _loc(t)
        return log_expit(z) + log_expit(-z)

    return ParametricModel(
        name="logistic-location",
        domain=ParameterDomain.interval(lower, upper, excluded),
        logpdf_fn=logpdf,
        sampler_fn=lambda t, n, g: t[0] + g.logistic(size=n),
        score_fn=lambda x, t: np.tanh(0.5 * (x - _loc(t)))[..., None],
        score_derivative_fn=lambda x, t: -0.5 * (1.0 - np.tanh(0.5 * (x - _loc(t))) ** 2),
        fisher_fn=lambda t: np.full(np.shape(t)[:-1] + (1, 1), 1.0 / 3.0),
        hint_fn=lambda t: (float(t[..., 0]), 1.8, (float(t[..., 0]),)),
    )


def squared_location_mixture(lower=0.0, upper=math.inf) -> ParametricModel:
    """``h(x, a) = (phi(x - sqrt a) + phi(x + sqrt a)) / 2`` for ``a > 0``.

    This is the model obtained by observing ``N(theta, 1)`` given
    ``theta^2 = a`` under a uniform prior on ``]-1, 1[``.  The score is
    computed in the stable form ``(x tanh(x sqrt a) - sqrt a) / (2 sqrt a)``.
    """
    if lower < 0:
        raise DomainError("mixture parameter must be non-negative")

    def logpdf(x, t):
        s = np.sqrt(_loc(t))
        return np.logaddexp(-0.5 * (x - s) ** 2, -0.5 * (x + s) ** 2) - LOG_SQRT_2PI - math.log(2.0)

    def score(x, t):
        s = np.sqrt(_loc(t))
        return ((x * np.tanh(x * s) - s) / (2.0 * s))[..., None]

    def score_derivative(x, t):
        a = _loc(t)
        s = np.sqrt(a)
        th = np.tanh(x * s)
        return (x * x * s * (1.0 - th * th) - x * th) / (4.0 * a * s)

    def sampler(t, n, g):
        s = math.sqrt(t[0])
        signs = np.where(g.random(n) < 0.5, -1.0, 1.0)
        return signs * s + g.standard_normal(n)

    def hint(t):
        s = math.sqrt(float(t[..., 0]))
        return 0.0, 1.0 + s, (-s, s)

    return ParametricModel(
        name="squared-mixture",
        domain=ParameterDomain.interval(lower, upper),
        logpdf_fn=logpdf,
        sampler_fn=sampler,
        score_fn=score,
        score_derivative_fn=score_derivative,
        hint_fn=hint,
    )


BUILTIN_FAMILIES = {
    "normal-location": normal_location,
    "normal-scale": normal_scale,
    "logistic-location": logistic_location,
    "squared-mixture": squared_location_mixture,
}


def product_model(m1: ParametricModel, m2: ParametricModel) -> ParametricModel:
    """Independent pair ``(X, Z)`` with density ``f(x, theta_1) g(z, theta_2)``.

    Observations are ``(..., k1 + k2)`` arrays.  Analytic Fisher information is
    block-diagonal when both factors provide one.
    """
    d1, k1 = m1.dim_param, m1.dim_obs

    def split_x(x):
        a = x[..., :k1]
        b = x[..., k1:]
        return (a[..., 0] if k1 == 1 else a), (b[..., 0] if m2.dim_obs == 1 else b)

    def logpdf(x, t):
        xa, xb = split_x(x)
        return m1.logpdf_fn(xa, t[..., :d1]) + m2.logpdf_fn(xb, t[..., d1:])

    def score(x, t):
        xa, xb = split_x(x)
        s1 = m1.raw_score(xa, t[..., :d1])
        s2 = m2.raw_score(xb, t[..., d1:])
        s1, s2 = np.broadcast_arrays(s1[..., :, None], s2[..., None, :])
        return np.concatenate([s1[..., 0], s2[..., 0, :]], axis=-1)

    def sampler(t, n, g):
        a = m1.raw_sample(t[:d1], n, g).reshape(n, -1)
        b = m2.raw_sample(t[d1:], n, g).reshape(n, -1)
        return np.concatenate([a, b], axis=1)

    fisher = None
    if m1.fisher_fn is not None and m2.fisher_fn is not None:

        def fisher(t):
            t = np.asarray(t, dtype=float)
            return block_diag(m1.fisher_fn(t[..., :d1]), m2.fisher_fn(t[..., d1:]))

    return ParametricModel(
        name=f"{m1.name}*{m2.name}",
        domain=m1.domain.product(m2.domain),
        logpdf_fn=logpdf,
        sampler_fn=sampler,
        support=m1.support + m2.support,
        score_fn=score,
        fisher_fn=fisher,
        extendable=m1.extendable and m2.extendable,
        meta={"factors": (m1, m2)},
    )


# -- Hellinger distance -----------------------------------------------------

def hellinger_distance(model: ParametricModel, theta, theta_other, atol: float | None = None) -> float:
    """``r = int (sqrt f(x, theta) - sqrt f(x, theta'))^2 dx``, in ``[0, 2]``."""
    if model.dim_obs != 1:
        raise NumericalError("Hellinger quadrature supports scalar observations only")
    t1 = model.domain.check(theta)
    t2 = model.domain.check(theta_other)
    if np.array_equal(t1, t2):
        return 0.0
    c1, s1, p1 = model.hint(t1)
    c2, s2, p2 = model.hint(t2)

    def integrand(x):
        return (np.exp(0.5 * model.raw_logpdf(x, t1)) - np.exp(0.5 * model.raw_logpdf(x, t2))) ** 2

    lo, hi = model.support[0]
    res = quadrature.integrate(integrand, lo, hi, atol=atol, center=0.5 * (c1 + c2),
                               scale=max(s1, s2), points=tuple(p1) + tuple(p2))
    return float(min(max(res.value, 0.0), 2.0))


# -- branch maps --------------------------------------------------------------

@dataclass(frozen=True)
class Branch:
    """One monotone piece of a change of variables.

    For d = 1 the callables act elementwise on arrays and ``derivative``
    returns ``psi'``.  For d >= 2 they act on length-``d`` vectors and
    ``derivative`` returns the Jacobian matrix.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    forward: Callable
    inverse: Callable
    derivative: Callable

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", tuple(float(v) for v in np.atleast_1d(self.upper)))

    def contains(self, theta, closed: bool = False) -> bool:
        p = np.atleast_1d(np.asarray(theta, dtype=float))
        if closed:
            return bool(np.all(p >= self.lower) and np.all(p <= self.upper))
        return bool(np.all(p > self.lower) and np.all(p < self.upper))


@dataclass(frozen=True)
class BranchMap:
    """Piecewise-monotone change of variables ``psi`` on a parameter domain."""

    domain: ParameterDomain
    pieces: tuple[Branch, ...]
    image_domain: ParameterDomain
    lipschitz_constant: float
    name: str = "psi"
    singular_points: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        object.__setattr__(self, "singular_points",
                           tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in self.singular_points))

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def injective(self) -> bool:
        return len(self.pieces) == 1

    def piece_for(self, theta) -> Branch:
        p = as_point(theta, self.dim)
        for b in self.pieces:
            if b.contains(p):
                return b
        for b in self.pieces:
            if b.contains(p, closed=True):
                return b
        raise DomainError(f"theta={p.tolist()} is not covered by any branch of {self.name}")

    def __call__(self, theta):
        p = as_point(theta, self.dim)
        out = self.piece_for(p).forward(p[0] if self.dim == 1 else p)
        return float(out) if self.dim == 1 else np.asarray(out, dtype=float)

    def jacobian(self, theta) -> np.ndarray:
        p = as_point(theta, self.dim)
        out = self.piece_for(p).derivative(p[0] if self.dim == 1 else p)
        return np.atleast_2d(np.asarray(out, dtype=float))

    def values(self, theta):
        """Vectorised ``psi`` for d = 1 arrays of any shape."""
        t = np.asarray(theta, dtype=float)
        out = np.full(t.shape, np.nan)
        for b in self.pieces:
            mask = (t >= b.lower[0]) & (t <= b.upper[0]) & np.isnan(out)
            out[mask] = b.forward(t[mask])
        return out

    def derivatives(self, theta):
        """Vectorised ``psi'`` for d = 1 arrays of any shape."""
        t = np.asarray(theta, dtype=float)
        out = np.full(t.shape, np.nan)
        done = np.zeros(t.shape, dtype=bool)
        for b in self.pieces:
            mask = (t >= b.lower[0]) & (t <= b.upper[0]) & ~done
            out[mask] = b.derivative(t[mask])
            done |= mask
        return out

    def antecedents(self, a) -> list[tuple[Branch, float]]:
        """All ``(branch, theta)`` with ``psi(theta) = a`` inside an open piece (d = 1)."""
        if self.dim != 1:
            raise DomainError("antecedents are enumerated for d = 1 only")
        a = float(np.asarray(a, dtype=float).reshape(()))
        out = []
        with np.errstate(invalid="ignore", divide="ignore"):
            for b in self.pieces:
                t = float(b.inverse(np.float64(a)))
                if math.isfinite(t) and b.contains(t) and self.domain.contains([t]):
                    out.append((b, t))
        return out

    def validate(self, samples: int = 64, seed: int = 0, rtol: float = 1e-9) -> None:
        """Probe monotonicity, inversion, Lipschitz bound and coverage.

        Raises
        ------
        PreconditionError
            naming the first violated invariant.
        """

        gen = rng.stream(seed)
        for k, b in enumerate(self.pieces):
            lo = np.maximum(b.lower, self.domain.lower)
            hi = np.minimum(b.upper, self.domain.upper)
            lo = np.where(np.isfinite(lo), lo, -20.0)
            hi = np.where(np.isfinite(hi), hi, 20.0)
            pts = lo + (hi - lo) * (0.001 + 0.998 * gen.random((samples, self.dim)))
            if self.dim == 1:
                t = np.sort(pts[:, 0])
                v = np.asarray(b.forward(t), dtype=float)
                dv = np.diff(v)
                if not (np.all(dv > 0) or np.all(dv < 0)):
                    raise PreconditionError(f"piece {k} of {self.name} is not strictly monotone")
                back = np.asarray(b.inverse(v), dtype=float)
                if np.max(np.abs(back - t)) > rtol * max(1.0, np.max(np.abs(t))) * 1e3:
                    raise PreconditionError(f"inverse of piece {k} of {self.name} does not invert forward")
                slope = np.abs(dv) / np.diff(t)
                if np.any(slope > self.lipschitz_constant * (1 + 1e-9)):
                    raise PreconditionError(f"{self.name} exceeds its Lipschitz constant on piece {k}")
            else:
                for p in pts:
                    back = np.asarray(b.inverse(np.asarray(b.forward(p))), dtype=float)
                    if np.max(np.abs(back - p)) > 1e-6 * max(1.0, np.max(np.abs(p))):
                        raise PreconditionError(f"inverse of piece {k} of {self.name} does not invert forward")
                for p, q in zip(pts[::2], pts[1::2]):
                    gap = np.sum(np.abs(np.asarray(b.forward(p)) - np.asarray(b.forward(q))))
                    if gap > self.lipschitz_constant * np.sum(np.abs(p - q)) * (1 + 1e-9):
                        raise PreconditionError(f"{self.name} exceeds its Lipschitz constant on piece {k}")
        probes = self.domain.lower + (np.subtract(self.domain.upper, self.domain.lower)) * gen.random((samples, self.dim)) \
            if self.domain.bounded else None
        if probes is not None:
            for p in probes:
                if self.domain.contains(p) and not any(b.contains(p, closed=True) for b in self.pieces):
                    raise PreconditionError(f"{self.name} pieces do not cover theta={p.tolist()}")

    def compose(self, outer: "BranchMap") -> "BranchMap":
        """``outer o self`` for two injective maps."""
        if not (self.injective and outer.injective):
            raise DomainError("composition is supported for injective maps only")
        b1, b2 = self.pieces[0], outer.pieces[0]
        if self.dim == 1:
            deriv = lambda t: b2.derivative(b1.forward(t)) * b1.derivative(t)
        else:
            deriv = lambda t: np.asarray(b2.derivative(b1.forward(t))) @ np.asarray(b1.derivative(t))
        piece = Branch(b1.lower, b1.upper,
                       forward=lambda t: b2.forward(b1.forward(t)),
                       inverse=lambda a: b1.inverse(b2.inverse(a)),
                       derivative=deriv)
        return BranchMap(self.domain, (piece,), outer.image_domain,
                         self.lipschitz_constant * outer.lipschitz_constant,
                         name=f"{outer.name}o{self.name}")

    def product(self, other: "BranchMap") -> "BranchMap":
        """Componentwise map ``(psi_1(theta_1), psi_2(theta_2))`` of two injective maps."""
        if not (self.injective and other.injective):
            raise DomainError("product maps are supported for injective maps only")
        d1 = self.dim
        b1, b2 = self.pieces[0], other.pieces[0]

        def part(fn, p, lo, hi):
            v = fn(p[lo:hi] if hi - lo > 1 else p[lo])
            return np.atleast_1d(np.asarray(v, dtype=float))

        def forward(t):
            t = np.asarray(t, dtype=float)
            return np.concatenate([part(b1.forward, t, 0, d1), part(b2.forward, t, d1, t.size)])

        def inverse(a):
            a = np.asarray(a, dtype=float)
            return np.concatenate([part(b1.inverse, a, 0, d1), part(b2.inverse, a, d1, a.size)])

        def derivative(t):
            t = np.asarray(t, dtype=float)
            j1 = np.atleast_2d(b1.derivative(t[:d1] if d1 > 1 else t[0]))
            j2 = np.atleast_2d(b2.derivative(t[d1:] if other.dim > 1 else t[d1]))
            return block_diag(j1, j2)

        piece = Branch(b1.lower + b2.lower, b1.upper + b2.upper, forward, inverse, derivative)
        return BranchMap(self.domain.product(other.domain), (piece,),
                         self.image_domain.product(other.image_domain),
                         max(self.lipschitz_constant, other.lipschitz_constant),
                         name=f"({self.name},{other.name})")


def _interval(domain: ParameterDomain) -> tuple[float, float]:
    if domain.dim != 1:
        raise DomainError("built-in maps act on one-dimensional domains")
    return domain.lower[0], domain.upper[0]


def identity_map(domain: ParameterDomain) -> BranchMap:
    if domain.dim == 1:
        piece = Branch(domain.lower, domain.upper, lambda t: t, lambda a: a, lambda t: np.ones_like(t))
    else:
        piece = Branch(domain.lower, domain.upper, lambda t: np.asarray(t), lambda a: np.asarray(a),
                       lambda t: np.eye(domain.dim))
    return BranchMap(domain, (piece,), domain, 1.0, name="identity")


def affine_map(domain: ParameterDomain, slope: float, intercept: float) -> BranchMap:
    lo, hi = _interval(domain)
    if slope == 0:
        raise DomainError("affine map needs a non-zero slope")
    ends = sorted([slope * lo + intercept, slope * hi + intercept])
    image = ParameterDomain.interval(ends[0], ends[1], [slope * p[0] + intercept for p in domain.excluded_points])
    piece = Branch(domain.lower, domain.upper,
                   lambda t: slope * t + intercept,
                   lambda a: (a - intercept) / slope,
                   lambda t: np.full(np.shape(t), float(slope)) if np.ndim(t) else float(slope))
    return BranchMap(domain, (piece,), image, abs(slope), name=f"affine({slope:g},{intercept:g})")


def square_map(domain: ParameterDomain) -> BranchMap:
    """``theta -> theta^2``; two branches when the domain straddles 0."""
    lo, hi = _interval(domain)
    pieces = []
    if lo < 0:
        pieces.append(Branch((lo,), (min(hi, 0.0),), np.square, lambda a: -np.sqrt(a), lambda t: 2.0 * t))
    if hi > 0:
        pieces.append(Branch((max(lo, 0.0),), (hi,), np.square, np.sqrt, lambda t: 2.0 * t))
    top = max(lo * lo, hi * hi)
    bottom = 0.0 if lo < 0 < hi else min(lo * lo, hi * hi)
    lip = 2.0 * max(abs(lo), abs(hi))
    singular = ((0.0,),) if lo < 0 < hi else ()
    return BranchMap(domain, tuple(pieces), ParameterDomain.interval(bottom, top), lip,
                     name="square", singular_points=singular)


def cube_map(domain: ParameterDomain) -> BranchMap:
    """``theta -> theta^3`` (injective, singular derivative at 0)."""
    lo, hi = _interval(domain)
    piece = Branch(domain.lower, domain.upper, lambda t: t**3, np.cbrt, lambda t: 3.0 * t * t)
    singular = ((0.0,),) if lo < 0 < hi else ()
    return BranchMap(domain, (piece,), ParameterDomain.interval(lo**3, hi**3),
                     3.0 * max(lo * lo, hi * hi), name="cube", singular_points=singular)


def exp_map(domain: ParameterDomain) -> BranchMap:
    lo, hi = _interval(domain)
    if not math.isfinite(hi):
        raise DomainError("exp map needs a finite upper bound for its Lipschitz constant")
    piece = Branch(domain.lower, domain.upper, np.exp, np.log, np.exp)
    return BranchMap(domain, (piece,), ParameterDomain.interval(math.exp(lo) if math.isfinite(lo) else 0.0, math.exp(hi)),
                     math.exp(hi), name="exp")


def log_map(domain: ParameterDomain) -> BranchMap:
    lo, hi = _interval(domain)
    if not lo > 0:
        raise DomainError("log map needs a domain bounded away from 0")
    piece = Branch(domain.lower, domain.upper, np.log, np.exp, lambda t: 1.0 / t)
    return BranchMap(domain, (piece,), ParameterDomain.interval(math.log(lo), math.log(hi) if math.isfinite(hi) else math.inf),
                     1.0 / lo, name="log")


# -- change-of-variables models ------------------------------------------------

def reparameterize(model: ParametricModel, psi: BranchMap) -> ParametricModel:
    """Model ``a -> P_{psi^{-1}(a)}`` for an injective ``psi``.

    The analytic Fisher information, when the base has one, is
    ``D^{-T} J D^{-1}`` with ``D = psi'(psi^{-1}(a))``.
    """
    if not psi.injective:
        raise DomainError("reparameterisation needs an injective map; use pushforward_model")
    branch = psi.pieces[0]
    d = model.dim_param

    def to_theta(a):
        a = np.asarray(a, dtype=float)
        if d == 1:
            return np.asarray(branch.inverse(a[..., 0]))[..., None]
        return np.asarray(branch.inverse(a))

    def score(x, a):
        theta = to_theta(a)
        s = model.raw_score(x, theta)
        if d == 1:
            return s / np.asarray(branch.derivative(theta[..., 0]))[..., None]
        jac = np.atleast_2d(branch.derivative(theta))
        return s @ np.linalg.inv(jac)

    fisher = None
    if model.fisher_fn is not None:

        def fisher(a):
            theta = to_theta(a)
            base = np.asarray(model.fisher_fn(theta), dtype=float)
            if d == 1:
                # psi' = 0 gives +inf: infinite information at a singular point
                with np.errstate(divide="ignore"):
                    return base / np.asarray(branch.derivative(theta[..., 0]))[..., None, None] ** 2
            jac = np.atleast_2d(np.asarray(branch.derivative(theta), dtype=float))
            dinv = np.linalg.inv(jac)
            return symmetrize(dinv.T @ base @ dinv)

    def hint(a):
        return model.hint(to_theta(a))

    return ParametricModel(
        name=f"{model.name}@{psi.name}",
        domain=psi.image_domain,
        logpdf_fn=lambda x, a: model.logpdf_fn(x, to_theta(a)),
        sampler_fn=lambda a, n, g: model.sampler_fn(to_theta(a), n, g),
        support=model.support,
        score_fn=score,
        fisher_fn=fisher,
        hint_fn=hint,
        extendable=model.extendable,
        meta={"base": model, "psi": psi},
    )


def branch_weights(prior, psi: BranchMap, a):
    """Per-branch antecedents and conditional weights at image points ``a``.

    Returns arrays ``theta[b]``, ``weight[b]`` = ``q(theta_b) / |psi'(theta_b)|``
    (zero where branch ``b`` has no antecedent), and ``dtheta_da[b]``.  ``a``
    may have any shape; outputs gain a leading branch axis.
    """
    a = np.asarray(a, dtype=float)
    thetas, weights, dthetas = [], [], []
    with np.errstate(invalid="ignore", divide="ignore"):
        for b in psi.pieces:
            t = np.asarray(b.inverse(a), dtype=float)
            ok = np.isfinite(t) & (t > b.lower[0]) & (t < b.upper[0])
            t_safe = np.where(ok, t, 0.5 * (max(b.lower[0], -1e300) + min(b.upper[0], 1e300)))
            dpsi = np.asarray(b.derivative(t_safe), dtype=float)
            q = np.asarray(prior.density_fn(t_safe[..., None]), dtype=float)
            w = np.where(ok & (dpsi != 0), q / np.abs(dpsi), 0.0)
            thetas.append(t_safe)
            weights.append(w)
            dthetas.append(np.where(ok, 1.0 / dpsi, 0.0))
    return np.stack(thetas), np.stack(weights), np.stack(dthetas)


def pushforward_model(model: ParametricModel, prior, psi: BranchMap) -> ParametricModel:
    """Observation model given ``psi(V) = a``.

    ``h(x, a) = sum_b w_b(a) f(x, i_b(a)) / sum_b w_b(a)`` with
    ``w_b = q(i_b(a)) |i_b'(a)|`` over the branch inverses ``i_b``.  For an
    injective ``psi`` this is the reparameterised model.
    """
    if model.dim_param != 1:
        raise DomainError("pushforward_model supports one-dimensional parameters")

    def components(x, a):
        a0 = np.asarray(a, dtype=float)[..., 0]
        thetas, weights, dthetas = branch_weights(prior, psi, a0)
        logf = np.stack([model.logpdf_fn(x, t[..., None]) for t in thetas])
        # align the per-branch arrays with the broadcast (x, a) shape
        lift = (1,) * (logf.ndim - thetas.ndim)
        shape = lambda v: v.reshape(v.shape[:1] + lift + v.shape[1:])
        with np.errstate(divide="ignore"):
            logw = np.log(shape(weights))
        return thetas, shape(weights), shape(dthetas), logw, logf, shape

    def logpdf(x, a):
        _, weights, _, logw, logf, _ = components(x, a)
        total = weights.sum(axis=0)
        if np.any(total <= 0):
            raise DomainError("image point has no antecedent in any branch")
        return logsumexp(logw + logf, axis=0) - np.log(total)

    score = None
    if model.score_fn is not None:
        def score(x, a):
            a = np.asarray(a, dtype=float)
            thetas, weights, dthetas, logw, logf, shape = components(x, a)
            h = fd_steps(a[..., 0])
            _, w_up, _ = branch_weights(prior, psi, a[..., 0] + h)
            _, w_dn, _ = branch_weights(prior, psi, a[..., 0] - h)
            with np.errstate(divide="ignore", invalid="ignore"):
                dlogw = np.where(weights > 0, shape((np.log(w_up) - np.log(w_dn)) / (2 * h)), 0.0)
            total = weights.sum(axis=0)
            dtotal = (weights * dlogw).sum(axis=0)
            post = np.exp(logw + logf - logsumexp(logw + logf, axis=0))
            s_theta = np.stack([model.score_fn(x, t[..., None])[..., 0] for t in thetas])
            value = (post * (dlogw + s_theta * dthetas)).sum(axis=0) - dtotal / total
            return value[..., None]

    def sampler(a, n, g):
        thetas, weights, _ = branch_weights(prior, psi, np.asarray(a, dtype=float)[0])
        p = weights / weights.sum()
        pick = g.choice(len(p), size=n, p=p)
        out = np.empty(n)
        for b in range(len(p)):
            m = pick == b
            if m.any():
                out[m] = model.raw_sample(np.array([thetas[b]]), int(m.sum()), g)
        return out

    def hint(a):
        thetas, weights, _ = branch_weights(prior, psi, np.asarray(a, dtype=float)[..., 0])
        hints = [model.hint(np.array([float(t)])) for t, w in zip(thetas, weights) if w > 0]
        centers = [h[0] for h in hints]
        peaks = tuple(p for h in hints for p in h[2])
        return float(np.mean(centers)), float(max(h[1] for h in hints)), peaks

    return ParametricModel(
        name=f"{model.name}|{psi.name}",
        domain=psi.image_domain,
        logpdf_fn=logpdf,
        sampler_fn=sampler,
        support=model.support,
        score_fn=score,
        hint_fn=hint,
        extendable=model.extendable,
        meta={"base": model, "prior": prior, "psi": psi},
    )
