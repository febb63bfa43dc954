"""Dense Clifford algebra over R^d with a diagonal quadratic form.

Multivectors are stored as length ``2**d`` coefficient vectors indexed by a
blade bitmask: bit ``i`` of the mask is set when basis vector ``e_i`` is a
factor of the blade.  Mask 0 is the scalar, masks with one bit are vectors,
and so on.  The orthogonal group acts by the outermorphism induced by a
matrix ``R``; this is the action every equivariance test in the package uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Sequence

import numpy as np

MAX_DIM = 16
CAYLEY_MAX_DIM = 8


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def reorder_sign(a: int, b: int) -> int:
    """Sign picked up when sorting the concatenated factors of blades ``a`` and ``b``.

    Counts, for every factor of ``b``, how many factors of ``a`` have a
    larger index and therefore must be swapped past it.
    """
    a >>= 1
    swaps = 0
    while a:
        swaps += popcount(a & b)
        a >>= 1
    return -1 if swaps & 1 else 1


@dataclass(frozen=True)
class Metric:
    """Diagonal quadratic form ``q(v) = sum_i signature[i] * v_i**2``."""

    signature: tuple[float, ...]

    def __post_init__(self):
        sig = tuple(float(s) for s in self.signature)
        if len(sig) < 1:
            raise ValueError("metric needs at least one generator")
        if len(sig) > MAX_DIM:
            raise ValueError(f"dense storage supports d <= {MAX_DIM}, got d={len(sig)}")
        if not all(np.isfinite(sig)):
            raise ValueError("signature entries must be finite")
        object.__setattr__(self, "signature", sig)

    @classmethod
    def euclidean(cls, d: int) -> "Metric":
        return cls((1.0,) * int(d))

    @property
    def d(self) -> int:
        return len(self.signature)

    @property
    def n_blades(self) -> int:
        return 1 << self.d

    @property
    def is_degenerate(self) -> bool:
        return any(s == 0.0 for s in self.signature)

    def bilinear(self, u, v) -> float:
        return float(np.dot(np.asarray(self.signature) * np.asarray(u, float), v))

    def quadratic(self, v) -> float:
        return self.bilinear(v, v)

    @cached_property
    def grades(self) -> np.ndarray:
        """Grade (popcount) of every blade mask."""
        g = np.array([popcount(m) for m in range(self.n_blades)], dtype=np.int64)
        g.setflags(write=False)
        return g

    @cached_property
    def blade_norm_factor(self) -> np.ndarray:
        """``|blade * reverse(blade)|``, i.e. the absolute product of the squared generators."""
        sig = np.abs(np.asarray(self.signature))
        out = np.ones(self.n_blades)
        for m in range(self.n_blades):
            for i in range(self.d):
                if m >> i & 1:
                    out[m] *= sig[i]
        out.setflags(write=False)
        return out

    def blade_factor(self, a: int, b: int) -> float:
        """Coefficient of ``blade(a ^ b)`` in ``blade(a) * blade(b)``."""
        common = a & b
        f = float(reorder_sign(a, b))
        i = 0
        while common:
            if common & 1:
                f *= self.signature[i]
            common >>= 1
            i += 1
        return f

    @cached_property
    def product_table(self) -> np.ndarray:
        """``table[a, b]`` is the factor of ``blade(a) * blade(b) = table[a, b] * blade(a ^ b)``.

        Built once; only available for ``d <= 8``.
        """
        if self.d > CAYLEY_MAX_DIM:
            raise ValueError(f"product table is only built for d <= {CAYLEY_MAX_DIM}")
        n = self.n_blades
        t = np.empty((n, n))
        for a in range(n):
            for b in range(n):
                t[a, b] = self.blade_factor(a, b)
        t.setflags(write=False)
        return t

    def blades_of_grade(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.grades == k)

    def check_grade(self, k: int) -> int:
        if not (0 <= int(k) <= self.d):
            raise ValueError(f"grade {k} out of range [0, {self.d}]")
        return int(k)


@dataclass(frozen=True, eq=False)
class Multivector:
    metric: Metric
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.shape != (self.metric.n_blades,):
            raise ValueError(
                f"expected {self.metric.n_blades} coefficients, got shape {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, metric: Metric) -> "Multivector":
        return cls(metric, np.zeros(metric.n_blades))

    @classmethod
    def blade(cls, metric: Metric, mask: int, value: float = 1.0) -> "Multivector":
        c = np.zeros(metric.n_blades)
        c[mask] = value
        return cls(metric, c)

    @classmethod
    def from_dict(cls, metric: Metric, terms: dict[int, float]) -> "Multivector":
        c = np.zeros(metric.n_blades)
        for mask, value in terms.items():
            c[mask] += value
        return cls(metric, c)

    def _check(self, other: "Multivector"):
        if self.metric != other.metric:
            raise ValueError("multivectors live in different algebras")

    def __add__(self, other):
        if isinstance(other, Multivector):
            self._check(other)
            return Multivector(self.metric, self.coeffs + other.coeffs)
        return self + embed_scalar(other, self.metric)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rsub__(self, other):
        return (-1.0) * self + other

    def __neg__(self):
        return Multivector(self.metric, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Multivector):
            return geometric_product(self, other)
        return Multivector(self.metric, self.coeffs * float(other))

    def __rmul__(self, other):
        return Multivector(self.metric, self.coeffs * float(other))

    def grade(self, k: int) -> "Multivector":
        return grade_projection(self, k)

    def allclose(self, other: "Multivector", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.max(np.abs(self.coeffs - other.coeffs), initial=0.0) <= atol)

    def to_list(self) -> list[float]:
        return [float(c) for c in self.coeffs]

    @classmethod
    def from_list(cls, metric: Metric, values: Sequence[float]) -> "Multivector":
        return cls(metric, np.asarray(values, dtype=np.float64))


def geometric_product_coeffs(metric: Metric, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geometric product of coefficient arrays with blades on the last axis."""
    n = metric.n_blades
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    if metric.d <= CAYLEY_MAX_DIM:
        table = metric.product_table
        for i in range(n):
            ai = a[..., i]
            if not np.any(ai):
                continue
            j = np.arange(n)
            out[..., i ^ j] += (ai[..., None] * b) * table[i]
        return out
    for i in range(n):
        ai = a[..., i]
        if not np.any(ai):
            continue
        for j in range(n):
            out[..., i ^ j] += metric.blade_factor(i, j) * ai * b[..., j]
    return out


def geometric_product(a: Multivector, b: Multivector) -> Multivector:
    a._check(b)
    return Multivector(a.metric, geometric_product_coeffs(a.metric, a.coeffs, b.coeffs))


def grade_projection(x: Multivector, k: int) -> Multivector:
    k = x.metric.check_grade(k)
    return Multivector(x.metric, np.where(x.metric.grades == k, x.coeffs, 0.0))


def embed_vector(v, metric: Metric) -> Multivector:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (metric.d,):
        raise ValueError(f"vector of length {metric.d} expected, got shape {v.shape}")
    c = np.zeros(metric.n_blades)
    c[[1 << i for i in range(metric.d)]] = v
    return Multivector(metric, c)


def embed_scalar(s: float, metric: Metric) -> Multivector:
    c = np.zeros(metric.n_blades)
    c[0] = float(s)
    return Multivector(metric, c)


def extract_vector(x: Multivector) -> np.ndarray:
    return x.coeffs[[1 << i for i in range(x.metric.d)]].copy()


def extract_scalar(x: Multivector) -> float:
    return float(x.coeffs[0])


def vector_blades(d: int) -> np.ndarray:
    return np.array([1 << i for i in range(d)], dtype=np.int64)


def grade_norms_coeffs(metric: Metric, x: np.ndarray) -> np.ndarray:
    """Per-grade norms of coefficient arrays, grades on a new last axis."""
    x = np.asarray(x, dtype=np.float64)
    weighted = x**2 * metric.blade_norm_factor
    out = np.zeros(x.shape[:-1] + (metric.d + 1,))
    for k in range(metric.d + 1):
        out[..., k] = weighted[..., metric.grades == k].sum(axis=-1)
    return np.sqrt(out)


def grade_norms(x: Multivector) -> np.ndarray:
    return grade_norms_coeffs(x.metric, x.coeffs)


@dataclass(frozen=True, eq=False)
class OrthogonalMap:
    """A matrix ``R`` with ``R.T @ diag(signature) @ R == diag(signature)``."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"square matrix expected, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    def check(self, metric: Metric, tol: float = 1e-10):
        if self.d != metric.d:
            raise ValueError(f"map acts on R^{self.d}, algebra is over R^{metric.d}")
        D = np.diag(metric.signature)
        err = np.max(np.abs(self.matrix.T @ D @ self.matrix - D))
        if err > tol:
            raise ValueError(f"matrix is not orthogonal for this metric (error {err:.3g})")

    def blade_matrix(self, metric: Metric) -> np.ndarray:
        """Matrix of the induced algebra automorphism on coefficient vectors.

        Column ``m`` holds the image of ``blade(m)``, obtained by multiplying
        the images of its generating vectors in increasing index order.
        """
        self.check(metric)
        n = metric.n_blades
        images = []
        for i in range(metric.d):
            v = np.zeros(n)
            v[vector_blades(metric.d)] = self.matrix[:, i]
            images.append(v)
        out = np.zeros((n, n))
        out[0, 0] = 1.0
        for m in range(1, n):
            low = m & -m  # lowest set bit
            i = low.bit_length() - 1
            rest = m ^ low
            # blade(m) = e_i * blade(rest) since i is the smallest index in m
            out[:, m] = geometric_product_coeffs(metric, images[i], out[:, rest])
        return out

    def apply_coeffs(self, metric: Metric, x: np.ndarray) -> np.ndarray:
        """Act on coefficient arrays with blades on the last axis."""
        return np.asarray(x, dtype=np.float64) @ self.blade_matrix(metric).T

    def apply_vectors(self, v: np.ndarray) -> np.ndarray:
        """Act on plain R^d vectors stored along the last axis."""
        return np.asarray(v, dtype=np.float64) @ self.matrix.T


def apply_orthogonal(R: OrthogonalMap, x: Multivector) -> Multivector:
    return Multivector(x.metric, R.apply_coeffs(x.metric, x.coeffs))


def random_orthogonal(d: int, seed=None) -> OrthogonalMap:
    """Haar-distributed element of O(d); about half the draws are reflections."""
    if d < 1:
        raise ValueError("d must be positive")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    return OrthogonalMap(q)


def blade_counts(d: int) -> list[int]:
    """Number of blades of each grade, counted from the mask enumeration."""
    metric = Metric.euclidean(d)
    return [int(np.sum(metric.grades == k)) for k in range(d + 1)]


def expected_blade_counts(d: int) -> list[int]:
    return [comb(d, k) for k in range(d + 1)]


def random_multivector(metric: Metric, rng: np.random.Generator, grade: int | None = None) -> Multivector:
    c = rng.standard_normal(metric.n_blades)
    if grade is not None:
        c = np.where(metric.grades == grade, c, 0.0)
    return Multivector(metric, c)
