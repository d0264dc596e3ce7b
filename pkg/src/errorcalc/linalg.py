"""Small symmetric matrices: eigen-decomposition, inverse, square root.

Parameter dimensions here are tiny (d <= 8), so a cyclic Jacobi sweep is
both accurate and fast enough.  Inputs of shape ``(..., d, d)`` are handled
point by point, except for the closed forms used when ``d == 1``.
"""

from __future__ import annotations

import numpy as np

MAX_JACOBI_DIM = 8


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def jacobi_eigh(a, tol: float = 1e-15, max_sweeps: int = 64):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.

    Cyclic Jacobi rotations; converges quadratically once the off-diagonal
    mass is small.  Columns of the returned matrix are eigenvectors.
    """
    a = symmetrize(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n > MAX_JACOBI_DIM:
        raise ValueError(f"jacobi_eigh supports d <= {MAX_JACOBI_DIM}, got {n}")
    a = a.copy()
    v = np.eye(n)
    scale = np.abs(a).max() if a.size else 0.0
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * max(scale, np.finfo(float).tiny):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                with np.errstate(over="ignore"):
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    # theta^2 would overflow; t ~ 1/(2 theta)
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    w = np.diag(a).copy()
    order = np.argsort(w)
    return w[order], v[:, order]


def _batched(fn, a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        return fn(a)
    flat = a.reshape((-1,) + a.shape[-2:])
    out = np.stack([fn(m) for m in flat])
    return out.reshape(a.shape[:-2] + out.shape[1:])


def inverse(a):
    """Inverse of a symmetric matrix (or stack of them).

    Adjugate formula for d <= 3, eigen-decomposition otherwise.
    """
    a = symmetrize(a)
    d = a.shape[-1]
    if d == 1:
        return 1.0 / a
    if d == 2:
        det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
        adj = np.empty_like(a)
        adj[..., 0, 0] = a[..., 1, 1]
        adj[..., 1, 1] = a[..., 0, 0]
        adj[..., 0, 1] = -a[..., 0, 1]
        adj[..., 1, 0] = -a[..., 1, 0]
        return adj / det[..., None, None]
    if d == 3:
        adj = np.empty_like(a)
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != j]
                c = [k for k in range(3) if k != i]
                minor = a[..., r[0], c[0]] * a[..., r[1], c[1]] - a[..., r[0], c[1]] * a[..., r[1], c[0]]
                adj[..., i, j] = (-1) ** (i + j) * minor
        det = np.einsum("...j,...j->...", a[..., 0, :], adj[..., :, 0])
        return adj / det[..., None, None]

    def inv(m):
        w, v = jacobi_eigh(m)
        return (v / w) @ v.T

    return _batched(inv, a)


def sqrtm(a):
    """Symmetric positive square root; tiny negative eigenvalues are clipped."""
    a = symmetrize(a)
    if a.shape[-1] == 1:
        return np.sqrt(np.clip(a, 0.0, None))

    def root(m):
        w, v = jacobi_eigh(m)
        return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T

    return _batched(root, a)


def sqrt_det(a):
    """``sqrt(det a)`` as the product of square-rooted eigenvalues."""
    a = symmetrize(a)
    if a.shape[-1] == 1:
        return np.sqrt(np.clip(a[..., 0, 0], 0.0, None))
    return _batched(lambda m: np.prod(np.sqrt(np.clip(jacobi_eigh(m)[0], 0.0, None))), a)


def block_diag(a, b):
    """Block-diagonal stack of two (possibly batched) square matrices."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    n, m = a.shape[-1], b.shape[-1]
    out = np.zeros(batch + (n + m, n + m))
    out[..., :n, :n] = a
    out[..., n:, n:] = b
    return out
