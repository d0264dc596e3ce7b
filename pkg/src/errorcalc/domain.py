"""Parameter domains: open boxes minus finitely many points."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BoundaryError, DomainError

# central-difference step factor (cube root of machine epsilon)
FD_FACTOR = np.finfo(float).eps ** (1.0 / 3.0)


def as_point(theta, dim: int | None = None) -> np.ndarray:
    """Coerce a scalar or sequence into a float vector of length ``dim``."""
    p = np.atleast_1d(np.asarray(theta, dtype=float))
    if p.ndim != 1:
        raise DomainError(f"expected a single parameter point, got shape {p.shape}")
    if dim is not None and p.size != dim:
        raise DomainError(f"expected a {dim}-dimensional point, got {p.size} components")
    return p


def fd_steps(theta) -> np.ndarray:
    return FD_FACTOR * np.maximum(1.0, np.abs(np.asarray(theta, dtype=float)))


@dataclass(frozen=True)
class ParameterDomain:
    """Open rectangle ``prod ]lower_i, upper_i[`` with excluded points removed.

    Bounds may be infinite.  Excluded points are ignored by samplers (they
    carry no mass) but rejected by every point-evaluation.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    excluded_points: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lower) != len(upper):
            raise DomainError("lower and upper bounds differ in length")
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            if not lo < hi:
                raise DomainError(f"empty interval on axis {i}: ]{lo}, {hi}[")
        excluded = tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in self.excluded_points)
        for p in excluded:
            if len(p) != len(lower) or not all(lo < v < hi for v, lo, hi in zip(p, lower, upper)):
                raise DomainError(f"excluded point {p} is not strictly inside the box")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "excluded_points", excluded)

    @classmethod
    def interval(cls, lower: float, upper: float, excluded=()) -> "ParameterDomain":
        return cls((lower,), (upper,), tuple((float(e),) for e in excluded))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def bounded(self) -> bool:
        return all(math.isfinite(v) for v in self.lower + self.upper)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def contains(self, theta) -> bool:
        p = np.atleast_1d(np.asarray(theta, dtype=float))
        if p.shape != (self.dim,) or not np.all(np.isfinite(p)):
            return False
        if not (np.all(p > self.lower) and np.all(p < self.upper)):
            return False
        return not any(np.array_equal(p, e) for e in self.excluded_points)

    def check(self, theta) -> np.ndarray:
        """Return ``theta`` as a vector, raising :class:`DomainError` if outside."""
        p = as_point(theta, self.dim)
        if not self.contains(p):
            raise DomainError(f"theta={p.tolist()} outside domain {self}")
        return p

    def check_stencil(self, theta, steps=None) -> np.ndarray:
        """Check that a central-difference stencil around ``theta`` stays inside."""
        p = self.check(theta)
        h = fd_steps(p) if steps is None else np.broadcast_to(steps, p.shape)
        if np.any(p - h <= self.lower) or np.any(p + h >= self.upper):
            raise BoundaryError(f"theta={p.tolist()} within finite-difference step of the boundary")
        return p

    def product(self, other: "ParameterDomain") -> "ParameterDomain":
        """Product domain; each factor keeps its own excluded points."""
        return ProductDomain(self.lower + other.lower, self.upper + other.upper,
                             factors=(self, other))

    def grid(self, count: int, margin: float = 0.0) -> np.ndarray:
        """Evenly spaced interior probe points (d = 1), skipping excluded points."""
        if self.dim != 1 or not self.bounded:
            raise DomainError("grid() needs a bounded one-dimensional domain")
        lo, hi = self.lower[0], self.upper[0]
        pad = margin * (hi - lo)
        g = np.linspace(lo + pad, hi - pad, count + 2)[1:-1]
        return np.array([t for t in g if self.contains([t])])

    def __str__(self) -> str:
        box = " x ".join(f"]{lo:g}, {hi:g}[" for lo, hi in zip(self.lower, self.upper))
        if self.excluded_points:
            box += " \\ {" + ", ".join(str(p if len(p) > 1 else p[0]) for p in self.excluded_points) + "}"
        return box


@dataclass(frozen=True)
class ProductDomain(ParameterDomain):
    """Box product that keeps the factor domains for point checks."""

    factors: tuple[ParameterDomain, ...] = ()

    def contains(self, theta) -> bool:
        p = np.atleast_1d(np.asarray(theta, dtype=float))
        if p.shape != (self.dim,):
            return False
        start = 0
        for f in self.factors:
            if not f.contains(p[start:start + f.dim]):
                return False
            start += f.dim
        return True

    def __str__(self) -> str:
        return " x ".join(f"({f})" for f in self.factors)
