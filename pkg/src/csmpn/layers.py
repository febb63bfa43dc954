"""Clifford-group-equivariant layers.

Feature tensors are blade-major: shape ``(n_blades, n_items, n_channels)``.
Every layer commutes with the orthogonal action because it only

* mixes channels with one scalar weight per grade (grade-preserving), or
* takes grade projections of channel-wise geometric products, or
* rescales grades by invariant scalars (norms and grade-0 parts).
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from . import autodiff as ad
from .algebra import Metric, OrthogonalMap

NORM_EPS = 1e-8  # smooths the norm cone at zero over a width of 1e-4
LAYERNORM_EPS = 1e-6


class Module:
    """Minimal parameter container; attributes that are Parameters or Modules auto-register."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, ad.Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, ad.Parameter]:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def parameters(self) -> list[ad.Parameter]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        ad.zero_grad(self.parameters())


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        object.__setattr__(self, "_items", [])
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class BladeLayout:
    """Constant index tables derived from a metric, shared by all layers."""

    def __init__(self, metric: Metric):
        if metric.is_degenerate:
            raise ValueError("layers require a nondegenerate quadratic form")
        self.metric = metric
        self.d = metric.d
        self.n_blades = metric.n_blades
        self.n_grades = metric.d + 1
        self.grades = np.asarray(metric.grades)
        self.grade_segments = ad.Segments(self.grades, self.n_grades)
        self.norm_factor = np.asarray(metric.blade_norm_factor).reshape(-1, 1, 1)
        n = self.n_blades
        self.xor = np.arange(n)[:, None] ^ np.arange(n)[None, :]
        table = np.asarray(metric.product_table)
        # out_sign[a, o]: factor of blade(a) * blade(a ^ o) on blade(o)
        self.out_sign = table[np.arange(n)[:, None], self.xor]

    @cached_property
    def grade_onehot(self) -> np.ndarray:
        g = np.zeros((self.n_grades, self.n_blades))
        g[self.grades, np.arange(self.n_blades)] = 1.0
        return g

    @cached_property
    def scalar_onehot(self) -> np.ndarray:
        e = np.zeros(self.n_blades)
        e[0] = 1.0
        return e

    @cached_property
    def product_kernel(self) -> np.ndarray:
        """Kernel of the plain geometric product for ``blade_bilinear``."""
        return self.out_sign[:, :, None].copy()

    @cached_property
    def path_selector(self) -> np.ndarray:
        """``sel[(k, i, j), a, o]``: sign when ``grade(o)=k, grade(a)=i, grade(a^o)=j``."""
        K = self.n_grades
        sel = np.zeros((K, K, K, self.n_blades, self.n_blades))
        g = self.grades
        for a in range(self.n_blades):
            for o in range(self.n_blades):
                sel[g[o], g[a], g[a ^ o], a, o] = self.out_sign[a, o]
        return sel.reshape(K**3, self.n_blades, self.n_blades)

    @cached_property
    def valid_paths(self) -> np.ndarray:
        """Boolean ``(K, K, K)`` mask of grade triples ``(k, i, j)`` the product can reach."""
        K = self.n_grades
        return (np.abs(self.path_selector).sum(axis=(1, 2)) > 0).reshape(K, K, K)

    def embed(self, scalars=None, vectors=None, n_items=None) -> np.ndarray:
        """Blade-major features from grade-0 ``(N, S)`` and grade-1 ``(N, V, d)`` inputs."""
        parts = []
        if scalars is not None:
            s = np.asarray(scalars, dtype=np.float64)
            f = np.zeros((self.n_blades,) + s.shape)
            f[0] = s
            parts.append(f)
        if vectors is not None:
            v = np.asarray(vectors, dtype=np.float64)
            if v.shape[-1] != self.d:
                raise ValueError(f"vector features must have {self.d} components")
            f = np.zeros((self.n_blades,) + v.shape[:-1])
            for i in range(self.d):
                f[1 << i] = v[..., i]
            parts.append(f)
        if not parts:
            return np.zeros((self.n_blades, n_items or 0, 0))
        return np.concatenate(parts, axis=2)

    def vector_part(self, x: np.ndarray) -> np.ndarray:
        """Grade-1 coefficients of blade-major features as ``(N, C, d)``."""
        x = np.asarray(x)
        return np.stack([x[1 << i] for i in range(self.d)], axis=-1)

    def act(self, R: OrthogonalMap, x: np.ndarray) -> np.ndarray:
        """Apply the orthogonal action to blade-major features."""
        M = R.blade_matrix(self.metric)
        return np.einsum("ab,b...->a...", M, np.asarray(x))


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def grade_norms(layout: BladeLayout, x) -> ad.Tensor:
    """Per-grade norms ``(K, N, C)`` of blade-major features."""
    sq = ad.square(x) * layout.norm_factor
    return ad.sqrt(ad.segment_sum(sq, layout.grade_segments, axis=0) + NORM_EPS)


def geometric_product(layout: BladeLayout, x, y) -> ad.Tensor:
    """Channel-wise geometric product of blade-major features."""
    return ad.blade_bilinear(x, y, layout.product_kernel, layout.xor)


class MVLinear(Module):
    """``y_o^(k) = sum_i W[o, i, k] x_i^(k)``, plus a bias on the scalar part."""

    def __init__(self, layout: BladeLayout, in_channels: int, out_channels: int,
                 bias: bool = True, rng=None):
        super().__init__()
        if in_channels < 1 or out_channels < 1:
            raise ValueError("channel counts must be positive")
        rng = _rng(rng)
        self.layout = layout
        self.in_channels = in_channels
        self.out_channels = out_channels
        bound = 1.0 / np.sqrt(in_channels)
        self.weight = ad.Parameter(
            rng.uniform(-bound, bound, size=(out_channels, in_channels, layout.n_grades))
        )
        if bias:
            self.bias = ad.Parameter(np.zeros(out_channels))
        else:
            self.bias = None

    def expanded_weight(self) -> ad.Tensor:
        """Weights repeated over the blades of each grade, shape ``(B, in, out)``."""
        return ad.einsum("oik,kb->bio", self.weight, self.layout.grade_onehot)

    def _add_bias(self, y: ad.Tensor) -> ad.Tensor:
        if self.bias is None:
            return y
        b = ad.einsum("o,b->bo", self.bias, self.layout.scalar_onehot)
        return y + ad.reshape(b, (self.layout.n_blades, 1, self.out_channels))

    def __call__(self, x) -> ad.Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[-1]}")
        return self._add_bias(ad.matmul(x, self.expanded_weight()))

    def gathered(self, parts) -> ad.Tensor:
        """Apply the layer to a channel-concatenation of row-gathered inputs.

        ``parts`` is a list of ``(features, index, segments)`` covering
        consecutive input-channel blocks; ``index`` (or None for no gather)
        selects rows along the item axis.  Each block is mapped before
        gathering, which is cheaper when there are more rows than sources.
        """
        widths = [ad.as_tensor(f).shape[-1] for f, _, _ in parts]
        if sum(widths) != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {sum(widths)}")
        w = self.expanded_weight()
        y = None
        lo = 0
        for (f, index, segments), width in zip(parts, widths):
            term = ad.matmul(f, w[:, lo:lo + width, :])
            if index is not None:
                term = ad.take(term, index, axis=1, segments=segments)
            y = term if y is None else y + term
            lo += width
        return self._add_bias(y)


class GeometricProductLayer(Module):
    """``z_c^(k) = sum_{i,j} W[c, k, i, j] <x_c^(i) y_c^(j)>_k``.

    Weights for grade triples that no blade pair can produce are stored but
    never touched by the forward pass.
    """

    def __init__(self, layout: BladeLayout, channels: int, rng=None):
        super().__init__()
        rng = _rng(rng)
        self.layout = layout
        self.channels = channels
        K = layout.n_grades
        w = rng.normal(0.0, 1.0 / K, size=(channels, K, K, K))
        self.weight = ad.Parameter(w * layout.valid_paths)

    def kernel(self) -> ad.Tensor:
        K = self.layout.n_grades
        flat = ad.reshape(self.weight, (self.channels, K**3))
        return ad.einsum("cp,pao->aoc", flat, self.layout.path_selector)

    def __call__(self, x, y) -> ad.Tensor:
        x, y = ad.as_tensor(x), ad.as_tensor(y)
        if x.shape != y.shape:
            raise ValueError(f"operand shapes differ: {x.shape} vs {y.shape}")
        if x.shape[-1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[-1]}")
        return ad.blade_bilinear(x, y, self.kernel(), self.layout.xor)


class GatedNonlinearity(Module):
    """Scale every (channel, grade) block by a sigmoid of invariant features.

    The invariants are all per-grade norms and all scalar parts of the item,
    so the gate logits mix information across channels.
    """

    def __init__(self, layout: BladeLayout, channels: int):
        super().__init__()
        self.layout = layout
        self.channels = channels
        K = layout.n_grades
        n_inv = K * channels + channels
        self.weight = ad.Parameter(np.zeros((n_inv, K * channels)))
        self.bias = ad.Parameter(np.zeros(K * channels))

    def gates(self, x) -> ad.Tensor:
        """Gate values of shape ``(K, N, C)`` in (0, 1)."""
        x = ad.as_tensor(x)
        K, C = self.layout.n_grades, self.channels
        n = x.shape[1]
        norms = ad.reshape(ad.transpose(grade_norms(self.layout, x), (1, 0, 2)), (n, K * C))
        inv = ad.concat([norms, x[0]], axis=1)
        logits = ad.matmul(inv, self.weight) + self.bias
        return ad.transpose(ad.sigmoid(ad.reshape(logits, (n, K, C))), (1, 0, 2))

    def __call__(self, x) -> ad.Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[-1]}")
        g = ad.take(self.gates(x), self.layout.grades, axis=0, segments=self.layout.grade_segments)
        return x * g


class MVLayerNorm(Module):
    """Divide each grade by its channel-averaged norm (plus a small epsilon).

    With ``per_grade=False`` the whole multivector is divided by the channel
    mean of its full norm instead, which keeps the ratios between grades.
    The per-grade form rescales a grade that is zero in exact arithmetic
    (a wedge of parallel vectors, say) from roundoff level up to order one,
    so stacking it breaks equivariance numerically; the blocks inside
    ``CGMLP`` therefore use the full-norm form.
    """

    def __init__(self, layout: BladeLayout, per_grade: bool = True):
        super().__init__()
        self.layout = layout
        self.per_grade = per_grade

    def __call__(self, x) -> ad.Tensor:
        x = ad.as_tensor(x)
        norms = grade_norms(self.layout, x)
        if not self.per_grade:
            total = ad.sqrt(ad.tsum(ad.square(norms), axis=0))
            scale = ad.mean(total, axis=1)
            return x / (ad.reshape(scale, (1,) + scale.shape + (1,)) + LAYERNORM_EPS)
        scale = ad.mean(norms, axis=2)
        scale = ad.reshape(scale, scale.shape + (1,)) + LAYERNORM_EPS
        return x / ad.take(scale, self.layout.grades, axis=0, segments=self.layout.grade_segments)


class GPBlock(Module):
    """linear -> geometric product with a second linear view of the input -> gate."""

    def __init__(self, layout: BladeLayout, in_channels: int, channels: int,
                 normalize: bool = False, rng=None):
        super().__init__()
        rng = _rng(rng)
        self.left = MVLinear(layout, in_channels, channels, rng=rng)
        self.right = MVLinear(layout, in_channels, channels, rng=rng)
        self.product = GeometricProductLayer(layout, channels, rng=rng)
        self.norm = MVLayerNorm(layout, per_grade=False) if normalize else None
        self.gate = GatedNonlinearity(layout, channels)

    def _finish(self, a, b) -> ad.Tensor:
        z = self.product(a, b)
        if self.norm is not None:
            z = self.norm(z)
        return self.gate(z)

    def __call__(self, x) -> ad.Tensor:
        return self._finish(self.left(x), self.right(x))

    def gathered(self, parts) -> ad.Tensor:
        return self._finish(self.left.gathered(parts), self.right.gathered(parts))


class CGMLP(Module):
    """A stack of ``GPBlock`` followed by a channel-mixing linear readout."""

    def __init__(self, layout: BladeLayout, in_channels: int, channels: int, depth: int = 2,
                 out_channels: int | None = None, normalize: bool = False, rng=None):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be at least 1")
        rng = _rng(rng)
        self.in_channels = in_channels
        self.out_channels = out_channels or channels
        self.blocks = ModuleList(
            GPBlock(layout, in_channels if i == 0 else channels, channels, normalize, rng)
            for i in range(depth)
        )
        self.out = MVLinear(layout, channels, self.out_channels, rng=rng)

    def __call__(self, x) -> ad.Tensor:
        for block in self.blocks:
            x = block(x)
        return self.out(x)

    def gathered(self, parts) -> ad.Tensor:
        """Same as calling on the concatenated gathered inputs (see ``MVLinear.gathered``)."""
        x = self.blocks[0].gathered(parts)
        for block in list(self.blocks)[1:]:
            x = block(x)
        return self.out(x)
