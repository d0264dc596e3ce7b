"""Adaptive Gauss-Kronrod quadrature on the real line.

The integrand is called with a 1-d array of abscissae and must return either
an array of the same length or an ``(npts, m)`` array for ``m`` integrands
sharing the same nodes (used for Fisher matrices, where all ``d(d+1)/2``
entries are integrated on one mesh).

Infinite limits are truncated where the integrand drops below ``1e-14`` of its
peak.  What lies beyond the cut is integrated separately after the substitution
``x = cut + scale * u / (1 - u)``, so slowly decaying (algebraic) tails are
still captured.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError

TOLERANCE_ENV = "ERRORCALC_TOL"
TAIL_RATIO = 1e-14

# 15-point Kronrod nodes on [-1, 1] with embedded 7-point Gauss rule.
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
_KRONROD = np.concatenate([_WK[:-1], _WK[::-1]])
_GAUSS = np.zeros(15)
_GAUSS[1:14:2] = np.concatenate([_WG[:-1], _WG[::-1]])


def default_tolerance() -> float:
    """Absolute tolerance, overridable through ``ERRORCALC_TOL``."""
    raw = os.environ.get(TOLERANCE_ENV)
    if raw is None:
        return 1e-10
    try:
        value = float(raw)
    except ValueError as exc:
        raise ValueError(f"{TOLERANCE_ENV} must be numeric, got {raw!r}") from exc
    if not value > 0:
        raise ValueError(f"{TOLERANCE_ENV} must be positive, got {raw!r}")
    return value


@dataclass(frozen=True)
class QuadResult:
    value: float | np.ndarray
    abs_error: float
    n_panels: int
    lower: float
    upper: float


def _eval(fn, x):
    y = np.asarray(fn(x), dtype=float)
    if y.shape[0] != x.shape[0]:
        raise ValueError("integrand must return one row per abscissa")
    return y


def truncate(fn, lower: float, upper: float, center: float = 0.0,
             scale: float = 1.0, ratio: float = TAIL_RATIO) -> tuple[float, float]:
    """Replace infinite limits by points where ``|fn|`` is negligible.

    The peak is located on a probe grid of ``center +- 40*scale``; each
    infinite side is then walked outward geometrically until two successive
    probes fall below ``ratio * peak``.
    """
    if math.isfinite(lower) and math.isfinite(upper):
        return lower, upper
    scale = abs(scale) if scale and math.isfinite(scale) else 1.0
    lo_probe = lower if math.isfinite(lower) else center - 40 * scale
    hi_probe = upper if math.isfinite(upper) else center + 40 * scale
    grid = np.linspace(lo_probe, hi_probe, 801)[1:-1]
    vals = np.abs(_eval(fn, grid))
    if vals.ndim > 1:
        vals = vals.max(axis=1)
    vals = np.where(np.isfinite(vals), vals, 0.0)
    peak = float(vals.max())
    if peak == 0.0:
        # all-zero probe: fall back to the probe window itself
        return lo_probe, hi_probe
    # walk outward from the outermost significant probe, not the peak, so a
    # second bump inside the probe window is never cut off
    significant = grid[vals >= ratio * peak]

    def walk(sign: float, finite_limit: float) -> float:
        start = float(significant.max() if sign > 0 else significant.min())
        step = scale
        below = 0
        x = start
        for _ in range(200):
            x = start + sign * step
            if math.isfinite(finite_limit) and sign * (x - finite_limit) >= 0:
                return finite_limit
            v = np.abs(_eval(fn, np.array([x])))
            v = float(np.max(v)) if np.all(np.isfinite(v)) else 0.0
            below = below + 1 if v < ratio * peak else 0
            if below >= 2:
                return x
            step *= 1.25
        raise NumericalError(f"integrand tail does not decay beyond x={x:.6g}")

    lo = lower if math.isfinite(lower) else walk(-1.0, lower)
    hi = upper if math.isfinite(upper) else walk(1.0, upper)
    return lo, hi


def _panels(fn, a, b):
    """Kronrod value and Kronrod-Gauss error estimate per panel."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
    y = _eval(fn, x)
    extra = y.shape[1:]
    y = y.reshape((a.size, 15) + extra)
    wk = _KRONROD.reshape((1, 15) + (1,) * len(extra))
    wg = _GAUSS.reshape((1, 15) + (1,) * len(extra))
    hk = half.reshape((-1,) + (1,) * len(extra))
    kron = hk * (wk * y).sum(axis=1)
    if not np.all(np.isfinite(kron)):
        raise NumericalError(f"integrand not finite on [{a.min():.6g}, {b.max():.6g}]")
    err = np.abs(kron - hk * (wg * y).sum(axis=1))
    if err.ndim > 1:
        err = err.reshape(a.size, -1).max(axis=1)
    return kron, err


def integrate(fn, lower: float, upper: float, *, atol: float | None = None,
              rtol: float = 1e-10, points=(), center: float | None = None,
              scale: float = 1.0, max_panels: int = 20000) -> QuadResult:
    """Integrate ``fn`` over ``[lower, upper]`` to ``max(atol, rtol*|I|)``.

    Each round bisects the fewest panels whose Kronrod-Gauss error estimates
    cover the excess over the tolerance.  ``points`` are forced panel
    boundaries (peaks, kinks).

    Raises
    ------
    NumericalError
        if the panel budget is exhausted before the tolerance is met.
    """
    if atol is None:
        atol = default_tolerance()
    if lower == upper:
        return QuadResult(0.0, 0.0, 0, lower, upper)
    if lower > upper:
        res = integrate(fn, upper, lower, atol=atol, rtol=rtol, points=points,
                        center=center, scale=scale, max_panels=max_panels)
        return QuadResult(-res.value, res.abs_error, res.n_panels, lower, upper)
    if center is None:
        finite = [p for p in (lower, upper) if math.isfinite(p)]
        center = finite[0] if len(finite) == 1 else (sum(finite) / 2 if finite else 0.0)
    lo, hi = truncate(fn, lower, upper, center, scale)

    inner = sorted({float(p) for p in points if lo < p < hi})
    # seed mesh: a few panels per unit scale so narrow bumps are not missed
    n_seed = int(min(64, max(8, math.ceil((hi - lo) / max(scale, 1e-300)))))
    edges = np.unique(np.concatenate([np.linspace(lo, hi, n_seed + 1), inner]))
    tails = [(sign, cut) for sign, cut, limit in ((-1.0, lo, lower), (1.0, hi, upper)) if not math.isfinite(limit)]
    share = atol / (1 + len(tails))
    total, total_err, panels_used = _adaptive(fn, edges, share, rtol, max_panels)
    for sign, cut in tails:
        t_val, t_err, t_used = _adaptive(_tail(fn, cut, sign, max(scale, abs(cut - center))), np.linspace(0.0, 1.0, 9),
                                         share, rtol, max_panels)
        total = total + t_val
        total_err += t_err
        panels_used += t_used
    value = total if np.ndim(total) else float(total)
    return QuadResult(value, total_err, panels_used, lo, hi)


def _tail(fn, cut: float, sign: float, scale: float):
    """Integrand on ``u in [0, 1)`` equal to ``fn`` beyond ``cut`` in direction ``sign``."""
    scale = abs(scale) if scale and math.isfinite(scale) else 1.0

    def g(u):
        w = 1.0 / (1.0 - u)
        x = cut + sign * scale * u * w
        y = _eval(fn, x)
        jac = scale * w * w
        with np.errstate(invalid="ignore", over="ignore"):
            out = y * (jac if y.ndim == 1 else jac[:, None])
        # inf * 0 far out in the tail is a vanishing contribution
        return np.where(np.isfinite(out), out, 0.0)

    return g


def _adaptive(fn, edges: np.ndarray, atol: float, rtol: float, max_panels: int):
    a, b = edges[:-1], edges[1:]
    lo, hi = float(edges[0]), float(edges[-1])
    val, err = _panels(fn, a, b)
    panels_used = a.size
    while True:
        total = val.sum(axis=0)
        tol = max(atol, rtol * float(np.max(np.abs(total))))
        excess = float(err.sum()) - tol
        if excess <= 0:
            break
        splittable = (b - a) > 8 * np.finfo(float).eps * np.maximum(np.abs(a), np.abs(b))
        order = np.argsort(-np.where(splittable, err, -1.0))
        order = order[splittable[order]]
        if order.size == 0 or panels_used > max_panels:
            raise NumericalError(f"quadrature did not converge on [{lo:.6g}, {hi:.6g}]",
                                 achieved=float(err.sum()))
        # fewest panels whose errors cover the excess
        k = int(np.searchsorted(np.cumsum(err[order]), excess)) + 1
        pick = order[:k]
        keep = np.ones(a.size, dtype=bool)
        keep[pick] = False
        m = 0.5 * (a[pick] + b[pick])
        na = np.concatenate([a[pick], m])
        nb = np.concatenate([m, b[pick]])
        nval, nerr = _panels(fn, na, nb)
        panels_used += na.size
        a = np.concatenate([a[keep], na])
        b = np.concatenate([b[keep], nb])
        val = np.concatenate([val[keep], nval])
        err = np.concatenate([err[keep], nerr])
    return total, float(err.sum()), panels_used
