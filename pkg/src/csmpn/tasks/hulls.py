"""Convex hull volume datasets and their geometric oracles."""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy.spatial import ConvexHull

from ..model import GeometricComplex
from ..topology import SimplicialComplex, manual_lift

SUPPORTED_DIMS = (2, 3, 5)
N_POINTS = 8
MIN_REL_STDERR = 0.01


@dataclass
class HullSample:
    points: np.ndarray
    volume: float
    facets: np.ndarray | None = None  # (m, d) vertex ids of boundary (d-1)-simplices
    volume_stderr: float = 0.0

    @property
    def d(self) -> int:
        return self.points.shape[1]


def monotone_chain(points) -> np.ndarray:
    """Indices of the 2-D hull vertices in counter-clockwise order (Andrew's algorithm)."""
    pts = np.asarray(points, dtype=np.float64)
    order = sorted(range(len(pts)), key=lambda i: (pts[i, 0], pts[i, 1]))

    def cross(o, a, b):
        return (pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1]) - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0])

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(i)
    upper: list[int] = []
    for i in reversed(order):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(i)
    return np.array(lower[:-1] + upper[:-1], dtype=np.int64)


def shoelace_area(polygon) -> float:
    p = np.asarray(polygon, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def hull_facets(points) -> np.ndarray:
    """Boundary (d-1)-simplices of the convex hull as ``(m, d)`` vertex ids."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[1] == 2:
        ring = monotone_chain(pts)
        return np.stack([ring, np.roll(ring, -1)], axis=1)
    return np.asarray(ConvexHull(pts).simplices, dtype=np.int64)


def cone_volume(points, facets) -> float:
    """Sum of simplex volumes spanned by the centroid and each boundary facet."""
    pts = np.asarray(points, dtype=np.float64)
    c = pts.mean(axis=0)
    d = pts.shape[1]
    total = 0.0
    for f in facets:
        m = pts[f] - c
        total += abs(np.linalg.det(m)) / factorial(d)
    return total


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto the probability simplex."""
    n = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(v)), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def hull_membership(points, queries, tol: float = 1e-9, max_iter: int = 5000) -> np.ndarray:
    """Whether each query point lies in the convex hull of ``points``.

    Solves ``min |sum_i lam_i x_i - p|^2`` over the simplex by accelerated
    projected gradient.  A query is inside once the residual drops below
    ``tol``; it is outside as soon as the residual direction separates it
    from every hull point.  Queries still undecided at ``max_iter`` are
    classified by their residual against ``sqrt(tol)``.
    """
    X = np.asarray(points, dtype=np.float64)
    P = np.asarray(queries, dtype=np.float64)
    n = len(X)
    step = 1.0 / np.linalg.eigvalsh(X @ X.T).max()
    lam = np.full((len(P), n), 1.0 / n)
    mom = lam.copy()
    t = 1.0
    inside = np.zeros(len(P), dtype=bool)
    active = np.arange(len(P))
    for _ in range(max_iter):
        if not active.size:
            break
        r = mom[active] @ X - P[active]
        new = project_to_simplex(mom[active] - step * (r @ X.T))
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom[active] = new + ((t - 1.0) / t_next) * (new - lam[active])
        lam[active] = new
        t = t_next
        res = new @ X - P[active]
        dist = np.linalg.norm(res, axis=1)
        hit = dist < tol
        # u = p - x_hat separates when max_i <x_i, u> < <p, u>
        u = -res
        sep = (X @ u.T).max(axis=0) < np.einsum("ij,ij->i", P[active], u) - 1e-12
        inside[active[hit]] = True
        active = active[~(hit | sep)]
    if active.size:
        res = lam[active] @ X - P[active]
        inside[active] = np.linalg.norm(res, axis=1) < np.sqrt(tol)
    return inside


def monte_carlo_volume(points, rng, rel_stderr: float = MIN_REL_STDERR, batch: int = 20000,
                       max_samples: int = 4_000_000) -> tuple[float, float]:
    """Hit-or-miss hull volume inside the bounding box; returns (volume, standard error).

    Sampling continues in batches until the relative standard error is at
    most ``rel_stderr`` or the sample cap is hit.
    """
    X = np.asarray(points, dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    box = float(np.prod(hi - lo))
    hits = 0
    total = 0
    while total < max_samples:
        Q = lo + (hi - lo) * rng.random((batch, X.shape[1]))
        hits += int(hull_membership(X, Q).sum())
        total += batch
        if hits:
            p = hits / total
            se = box * np.sqrt(p * (1 - p) / total)
            if se <= rel_stderr * box * p:
                break
    p = hits / total
    return box * p, box * np.sqrt(p * (1 - p) / total)


def hull_volume(points, rng=None) -> tuple[float, float]:
    """Exact area/volume for d <= 3, Monte Carlo estimate with its standard error above."""
    pts = np.asarray(points, dtype=np.float64)
    d = pts.shape[1]
    if d == 2:
        return shoelace_area(pts[monotone_chain(pts)]), 0.0
    if d == 3:
        return cone_volume(pts, hull_facets(pts)), 0.0
    return monte_carlo_volume(pts, np.random.default_rng(rng))


def make_hull_sample(points, rng=None) -> HullSample:
    pts = np.asarray(points, dtype=np.float64)
    volume, se = hull_volume(pts, rng)
    return HullSample(pts, volume, hull_facets(pts), se)


def gen_hulls(count: int, d: int, seed: int = 0, n_points: int = N_POINTS) -> list[HullSample]:
    """``count`` i.i.d. hulls of ``n_points`` standard normal points in R^d.

    Sample ``i`` draws from its own generator seeded by ``(seed, i)``.
    """
    if d not in SUPPORTED_DIMS:
        raise ValueError(f"d must be one of {SUPPORTED_DIMS}, got {d}")
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        pts = rng.standard_normal((n_points, d))
        out.append(make_hull_sample(pts, rng))
    return out


def hull_to_complex(sample: HullSample, max_dim: int = 2) -> SimplicialComplex:
    """Boundary facets and all their faces up to ``max_dim``; interior points stay isolated."""
    if sample.facets is None or len(sample.facets) == 0:
        raise ValueError("sample has no hull facets")
    return manual_lift(len(sample.points), sample.facets.tolist(), max_dim=max_dim)


def hull_geometric_complex(sample: HullSample, max_dim: int = 2) -> GeometricComplex:
    return GeometricComplex(sample.points, hull_to_complex(sample, max_dim))
