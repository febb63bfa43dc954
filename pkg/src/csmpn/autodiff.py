"""A small reverse-mode autodiff tape over dense float64 numpy arrays.

Only the primitives the equivariant layers need are provided.  Each
primitive records its parents together with a vector-Jacobian product
closure; ``backward`` walks the recorded graph in reverse topological order.
Nodes are only recorded when at least one input requires a gradient, so
inference runs at plain numpy speed.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import _kernels


class Tensor:
    __slots__ = ("value", "grad", "parents", "requires_grad", "name")

    def __init__(self, value, parents=(), requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[tuple["Tensor", Callable[[np.ndarray], np.ndarray]], ...] = tuple(parents)
        self.requires_grad = requires_grad or bool(self.parents)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, value, name: str | None = None):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, *pairs) -> Tensor:
    """Build the output node, recording only parents that need gradients."""
    parents = tuple((t, fn) for t, fn in pairs if t.requires_grad)
    return Tensor(value, parents)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value - b.value,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a, lambda g: -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (a, lambda g: _unbroadcast(g * bv, a.shape)),
        (b, lambda g: _unbroadcast(g * av, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _node(
        out,
        (a, lambda g: _unbroadcast(g / bv, a.shape)),
        (b, lambda g: _unbroadcast(-g * out / bv, b.shape)),
    )


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _node(av * av, (a, lambda g: 2.0 * g * av))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a, lambda g: 0.5 * g / out))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a, lambda g: g * out))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.value)
    return _node(out, (a, lambda g: g * out * (1.0 - out)))


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.value.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        return np.broadcast_to(np.expand_dims(g, axes), shape).copy()

    return _node(out, (a, vjp))


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis) * (1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.value.reshape(shape), (a, lambda g: g.reshape(old)))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    basic = all(isinstance(i, (int, np.integer, slice)) for i in
                (index if isinstance(index, tuple) else (index,)))

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return out

    return _node(a.value[index], (a, vjp))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    values = [t.value for t in tensors]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])
    pairs = []
    for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(lo), int(hi))
        sl = tuple(sl)
        pairs.append((t, lambda g, sl=sl: g[sl]))
    return _node(out, *pairs)


def _parse_einsum(subscripts: str, n_operands: int) -> tuple[list[str], str]:
    if "->" not in subscripts or "." in subscripts:
        raise ValueError("einsum needs explicit output subscripts and no ellipsis")
    lhs, rhs = subscripts.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != n_operands:
        raise ValueError(f"{len(ins)} operand subscripts for {n_operands} operands")
    for s in ins + [rhs]:
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index within one operand is unsupported: {s!r}")
    return ins, rhs


def einsum(subscripts: str, *operands) -> Tensor:
    """Differentiable ``np.einsum`` with explicit output indices.

    The adjoint of each operand is again an einsum of the remaining operands
    with the output adjoint; indices that only the operand itself carries are
    broadcast back.
    """
    ops = [as_tensor(o) for o in operands]
    ins, rhs = _parse_einsum(subscripts, len(ops))
    values = [o.value for o in ops]
    out = np.einsum(subscripts, *values, optimize=len(ops) > 2)

    pairs = []
    for i, t in enumerate(ops):
        if not t.requires_grad:
            continue
        others = [ins[j] for j in range(len(ops)) if j != i] + [rhs]
        available = set("".join(others))
        target = ins[i]
        kept = "".join(c for c in target if c in available)
        sub_expr = ",".join(others) + "->" + kept
        sizes = dict(zip(target, t.shape))

        def vjp(g, i=i, target=target, kept=kept, sub_expr=sub_expr, sizes=sizes):
            args = [values[j] for j in range(len(ops)) if j != i] + [g]
            r = np.einsum(sub_expr, *args, optimize=len(args) > 2)
            if kept != target:
                for pos, c in enumerate(target):
                    if c not in kept:
                        r = np.expand_dims(r, pos)
                r = np.broadcast_to(r, tuple(sizes[c] for c in target)).copy()
            return r

        pairs.append((t, vjp))
    return _node(out, *pairs)


class Segments:
    """Precomputed segment layout: row ``e`` of the data belongs to segment ``ids[e]``.

    Backed by a CSR incidence matrix so reductions run in a fixed order.
    """

    def __init__(self, ids, num_segments: int):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ValueError("segment ids must be one-dimensional")
        if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
            raise ValueError("segment id out of range")
        self.ids = ids
        self.num_segments = int(num_segments)
        self.matrix = sp.csr_matrix(
            (np.ones(ids.size), (ids, np.arange(ids.size))),
            shape=(self.num_segments, ids.size),
        )
        self.counts = np.bincount(ids, minlength=self.num_segments).astype(np.float64)

    def __len__(self):
        return self.ids.size

    def reduce(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        """Segment sums of ``x`` along ``axis``."""
        if axis % x.ndim == 0:
            flat = x.reshape(x.shape[0], int(np.prod(x.shape[1:])))
            return np.asarray(self.matrix @ flat).reshape((self.num_segments,) + x.shape[1:])
        moved = np.moveaxis(x, axis, 0)
        reduced = self.reduce(np.ascontiguousarray(moved), 0)
        return np.ascontiguousarray(np.moveaxis(reduced, 0, axis))


def segment_sum(a, segments, num_segments: int | None = None, axis: int = 0) -> Tensor:
    """Sum rows of ``a`` along ``axis`` into ``segments.num_segments`` buckets."""
    a = as_tensor(a)
    if not isinstance(segments, Segments):
        if num_segments is None:
            raise ValueError("num_segments is required with raw ids")
        segments = Segments(segments, num_segments)
    if a.shape[axis] != len(segments):
        raise ValueError(f"{a.shape[axis]} rows for {len(segments)} segment ids")
    return _node(
        segments.reduce(a.value, axis),
        (a, lambda g: np.take(g, segments.ids, axis=axis)),
    )


def segment_mean(a, segments: Segments, axis: int = 0) -> Tensor:
    out = segment_sum(a, segments, axis=axis)
    inv = 1.0 / np.maximum(segments.counts, 1.0)
    shape = [1] * out.ndim
    shape[axis] = -1
    return out * inv.reshape(shape)


def take(a, index, axis: int = 0, segments: Segments | None = None) -> Tensor:
    """``np.take(a, index, axis)`` for a 1-D index; the adjoint is a segment sum.

    Pass ``segments`` (built from the same index) to reuse the reduction layout.
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[axis]

    def vjp(g):
        s = segments if segments is not None else Segments(index, n)
        return s.reduce(g, axis)

    return _node(np.take(a.value, index, axis=axis), (a, vjp))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(
        np.ascontiguousarray(a.value.transpose(axes)),
        (a, lambda g: np.ascontiguousarray(g.transpose(inverse))),
    )


def matmul(a, b) -> Tensor:
    """Batched ``a @ b`` with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    # stacked matmul only reaches BLAS for contiguous operands
    av, bv = np.ascontiguousarray(a.value), np.ascontiguousarray(b.value)
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands need at least two axes")
    return _node(
        np.matmul(av, bv),
        (a, lambda g: _unbroadcast(np.matmul(g, np.ascontiguousarray(np.swapaxes(bv, -1, -2))), a.shape)),
        (b, lambda g: _unbroadcast(_matmul_tn(av, g), b.shape)),
    )


def _matmul_tn(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``swapaxes(a) @ g``; 2-D BLAS calls read the transposed views without a copy."""
    if a.ndim == 2 and g.ndim == 2:
        return a.T @ g
    a3 = a.reshape((-1,) + a.shape[-2:])
    g3 = g.reshape((-1,) + g.shape[-2:])
    if a3.shape[0] != g3.shape[0]:
        return np.matmul(np.ascontiguousarray(np.swapaxes(a, -1, -2)), g)
    out = np.empty((a3.shape[0], a3.shape[2], g3.shape[2]))
    for i in range(a3.shape[0]):
        np.matmul(a3[i].T, g3[i], out=out[i])
    return out.reshape(g.shape[:-2] + out.shape[1:])


def blade_bilinear(x, y, kernel, xor: np.ndarray) -> Tensor:
    """Channel-wise bilinear map over the blade axis with a sparse Cayley pattern.

    Layout is blade-major: ``x`` and ``y`` have shape ``(B, N, C)`` and
    ``kernel`` has shape ``(B, B, C)`` or ``(B, B, 1)``.  Computes

        out[o] = sum_a kernel[a, o] * x[a] * y[a ^ o]

    which is the geometric product (or any grade-weighted variant of it)
    because ``blade(a) * blade(b)`` only ever lands on ``blade(a ^ b)``.
    ``xor[a, o] == a ^ o``.
    """
    x, y, kernel = as_tensor(x), as_tensor(y), as_tensor(kernel)
    xv = np.ascontiguousarray(x.value)
    yv = np.ascontiguousarray(y.value)
    kv = np.ascontiguousarray(kernel.value)
    nb = xv.shape[0]
    if yv.shape != xv.shape or xv.ndim != 3:
        raise ValueError(f"operands must share a (B, N, C) shape: {xv.shape} vs {yv.shape}")
    if kv.shape[:2] != (nb, nb) or kv.shape[2] not in (1, xv.shape[2]):
        raise ValueError(f"kernel shape {kv.shape} does not match operands {xv.shape}")
    xor = np.ascontiguousarray(xor, dtype=np.int64)
    per_channel = kv.shape[2] != 1
    out = _kernels.bilinear_forward(xv, yv, kv, xor)
    return _node(
        out,
        (x, lambda g: _kernels.bilinear_grad_x(yv, kv, np.ascontiguousarray(g), xor)),
        (y, lambda g: _kernels.bilinear_grad_y(xv, kv, np.ascontiguousarray(g), xor)),
        (kernel, lambda g: _kernels.bilinear_grad_k(xv, yv, np.ascontiguousarray(g), xor, per_channel)),
    )


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in reversed(node.parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Accumulate ``d loss / d node`` into ``.grad`` of every node that requires it.

    Entries of ``params`` that the loss does not depend on get a zero gradient
    instead of staying ``None``.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    for p in params:
        if p.grad is None:
            p.grad = np.zeros(p.shape)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, params: dict[str, Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def zero_grad(self):
        zero_grad(self.params.values())

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.value -= self.lr * self.weight_decay * p.value
            p.value -= self.lr * update


def numerical_gradient(fn: Callable[[], Tensor], param: Parameter, flat_index: int, h: float = 1e-5) -> float:
    view = param.value.reshape(-1)
    old = view[flat_index]
    view[flat_index] = old + h
    up = float(fn().value)
    view[flat_index] = old - h
    down = float(fn().value)
    view[flat_index] = old
    return (up - down) / (2.0 * h)


def gradcheck(fn: Callable[[], Tensor], params: dict[str, Parameter], n_coords: int = 20,
              h: float = 1e-5, rng=None, floor: float = 1e-6, relative_floor: float = 0.0) -> dict:
    """Compare analytic gradients with central finite differences on random coordinates.

    Relative error is ``|a - n| / (max(|a|, |n|) + floor)``.  With
    ``relative_floor`` the floor grows to that fraction of the largest
    analytic gradient entry, so coordinates far below the gradient scale
    (where difference quotients are mostly roundoff, about eps*|f|/h) are
    compared absolutely.
    """
    rng = np.random.default_rng(rng)
    items = list(params.items())
    zero_grad(p for _, p in items)
    backward(fn(), params=[p for _, p in items])
    scale = max(float(np.abs(p.grad).max()) if p.size else 0.0 for _, p in items)
    floor = max(floor, relative_floor * scale)
    sizes = np.array([p.size for _, p in items])
    picks = rng.choice(int(sizes.sum()), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.cumsum(np.concatenate([[0], sizes]))
    rows = []
    for flat in np.sort(picks):
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, p = items[j]
        local = int(flat - offsets[j])
        analytic = float(p.grad.reshape(-1)[local]) if p.grad is not None else 0.0
        numeric = numerical_gradient(fn, p, local, h)
        err = abs(analytic - numeric) / (max(abs(analytic), abs(numeric)) + floor)
        rows.append((name, local, analytic, numeric, err))
    return {"max_rel_error": max(r[4] for r in rows), "checks": rows, "floor": floor}
