"""Smallest enclosing ball of a small point set (Welzl's randomized recursion)."""

from __future__ import annotations

import numpy as np


def circumball(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Smallest ball with all ``points`` on its boundary.

    For affinely dependent inputs the least-squares center within their
    affine hull is used.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return np.zeros(points.shape[1]), 0.0
    p0 = points[0]
    if len(points) == 1:
        return p0.copy(), 0.0
    U = points[1:] - p0
    gram = U @ U.T
    rhs = 0.5 * np.sum(U * U, axis=1)
    lam, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    center = p0 + lam @ U
    radius = float(np.max(np.linalg.norm(points - center, axis=1)))
    return center, radius


def _welzl(P: np.ndarray, R: list[int], n: int, pts: np.ndarray, tol: float):
    if n == 0 or len(R) == pts.shape[1] + 1:
        return circumball(pts[R]) if R else (np.zeros(pts.shape[1]), -np.inf)
    idx = P[n - 1]
    center, radius = _welzl(P, R, n - 1, pts, tol)
    if radius >= 0 and np.linalg.norm(pts[idx] - center) <= radius + tol:
        return center, radius
    return _welzl(P, R + [int(idx)], n - 1, pts, tol)


def smallest_enclosing_ball(points, rng=None, tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Center and radius of the minimum enclosing ball.

    Recursion depth grows with the number of points, so this is intended for
    the handful of vertices of one simplex.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("need a non-empty (n, d) point array")
    rng = np.random.default_rng(0 if rng is None else rng)
    order = rng.permutation(len(pts))
    center, radius = _welzl(order, [], len(pts), pts, tol)
    return center, max(radius, 0.0)
