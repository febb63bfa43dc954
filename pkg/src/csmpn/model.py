"""Clifford simplicial message passing networks.

Pipeline: node features -> simplex embedding (symmetrised geometric products
of vertex features) -> L message passing layers over the flattened
simplex hypergraph -> invariant or covariant readout.

Batches are disjoint unions of complexes, laid out dimension-major: all
vertices of every complex, then all edges, then all triangles.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from itertools import permutations
from math import factorial
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .algebra import Metric
from .layers import CGMLP, BladeLayout, Module, ModuleList, MVLinear, geometric_product, grade_norms
from .topology import DEFAULT_RELATIONS, RELATIONS, HypergraphEdges, SimplicialComplex, flatten

MODES = ("shared", "separate")
TARGETS = ("invariant_scalar", "per_node_vector")
AGGREGATIONS = ("sum", "mean")
POOLINGS = ("mean", "sum")


@dataclass
class MPConfig:
    d: int = 3
    in_scalars: int = 0
    in_vectors: int = 1
    channels: int = 16
    layers: int = 3
    mlp_depth: int = 2
    relations: tuple[str, ...] = DEFAULT_RELATIONS
    mode: str = "shared"
    max_dim: int = 2
    aggregation: str = "sum"
    target: str = "invariant_scalar"
    out_vectors: int = 1
    residual: bool = True
    normalize: bool = True
    pooling: str = "mean"
    seed: int = 0

    def __post_init__(self):
        self.relations = tuple(self.relations)
        if self.layers < 1:
            raise ValueError("layers must be at least 1")
        if self.channels < 1 or self.mlp_depth < 1:
            raise ValueError("channels and mlp_depth must be positive")
        if self.in_scalars + self.in_vectors < 1:
            raise ValueError("need at least one input channel")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if not self.relations or any(r not in RELATIONS for r in self.relations):
            raise ValueError(f"relations must be a non-empty subset of {RELATIONS}")
        if self.max_dim < 0:
            raise ValueError("max_dim must be non-negative")

    @property
    def n_dims(self) -> int:
        return self.max_dim + 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["relations"] = list(self.relations)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MPConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class GeometricComplex:
    """A simplicial complex with geometric node features.

    ``positions`` (n, d) is always the first vector channel; any extra
    node vectors (n, V, d) and scalars (n, S) follow.
    """

    positions: np.ndarray
    complex: SimplicialComplex
    vectors: np.ndarray | None = None
    scalars: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2:
            raise ValueError("positions must be (n, d)")
        if self.complex.vertex_count != len(self.positions):
            raise ValueError(
                f"complex has {self.complex.vertex_count} vertices, positions has {len(self.positions)}"
            )


class ComplexBatch:
    """Index tables for a disjoint union of complexes (built once, reused every step)."""

    def __init__(self, samples: Sequence[GeometricComplex], config: MPConfig, layout: BladeLayout):
        if not samples:
            raise ValueError("empty batch")
        self.config = config
        self.n_complexes = len(samples)
        D = config.n_dims
        for s in samples:
            if s.complex.dim > config.max_dim:
                raise ValueError(
                    f"complex has {s.complex.dim}-simplices but the model supports max_dim={config.max_dim}"
                )
            if s.positions.shape[1] != config.d:
                raise ValueError(f"positions are {s.positions.shape[1]}-D, model is {config.d}-D")

        counts = np.array([[len(s.complex.simplices(k)) for k in range(D)] for s in samples])
        per_dim_total = counts.sum(axis=0)
        dim_offset = np.concatenate([[0], np.cumsum(per_dim_total)])
        within = np.vstack([np.zeros((1, D), dtype=np.int64), np.cumsum(counts, axis=0)])
        self.n_simplices = int(dim_offset[-1])
        self.n_vertices = int(per_dim_total[0])
        self.dims = np.concatenate([np.full(int(n), k) for k, n in enumerate(per_dim_total)]).astype(np.int64)
        self.complex_of = np.concatenate(
            [np.repeat(np.arange(self.n_complexes), counts[:, k]) for k in range(D)]
        ).astype(np.int64)

        node_offset = within[:, 0]
        # vertex tuples of k-simplices, batch-global vertex ids, dimension-major
        self.simplex_vertices = []
        for k in range(D):
            rows = [s.complex.vertex_array(k) + node_offset[c] for c, s in enumerate(samples)]
            self.simplex_vertices.append(np.concatenate(rows) if rows else np.zeros((0, k + 1), np.int64))

        # edges: local simplex id -> batch id
        src, dst, sdim, ddim, rel = [], [], [], [], []
        for c, s in enumerate(samples):
            local_dims = s.complex.dims()
            local_pos = np.arange(len(local_dims)) - np.concatenate(
                [[0], np.cumsum(counts[c])])[local_dims]
            remap = dim_offset[local_dims] + within[c][local_dims] + local_pos
            e = flatten(s.complex, config.relations)
            src.append(remap[e.src])
            dst.append(remap[e.dst])
            sdim.append(e.src_dim)
            ddim.append(e.dst_dim)
            rel.append(e.relation)
        cat = lambda xs: np.concatenate(xs).astype(np.int64)  # noqa: E731
        self.edges = HypergraphEdges(cat(src), cat(dst), cat(sdim), cat(ddim), cat(rel), self.n_simplices)
        self._edge_tables: dict = {}

        positions = np.concatenate([s.positions for s in samples])
        self.positions = positions
        node_complex = self.complex_of[: self.n_vertices]
        centroids = np.zeros((self.n_complexes, config.d))
        np.add.at(centroids, node_complex, positions)
        centroids /= counts[:, 0:1].clip(min=1)
        self.centroids = centroids
        centered = positions - centroids[node_complex]
        vec_parts = [centered[:, None, :]]
        scal = None
        if config.in_vectors > 1:
            extra = np.concatenate([np.asarray(s.vectors, dtype=np.float64) for s in samples])
            if extra.shape[1:] != (config.in_vectors - 1, config.d):
                raise ValueError(f"expected node vectors of shape (n, {config.in_vectors - 1}, {config.d})")
            vec_parts.append(extra)
        if config.in_scalars:
            scal = np.concatenate([np.asarray(s.scalars, dtype=np.float64).reshape(-1, config.in_scalars)
                                   for s in samples])
        self.node_features = layout.embed(scal, np.concatenate(vec_parts, axis=1))

        self.readout_segments = ad.Segments(self.complex_of * D + self.dims, self.n_complexes * D)
        self.dim_condition = self.onehot_features(self.dims, layout)

    def onehot_features(self, dims: np.ndarray, layout: BladeLayout) -> np.ndarray:
        D = self.config.n_dims
        f = np.zeros((layout.n_blades, len(dims), D))
        f[0, np.arange(len(dims)), dims] = 1.0
        return f

    def edge_tables(self, relation: str | None, layout: BladeLayout) -> dict:
        """Gather/scatter tables for all edges or for one relation (cached)."""
        if relation not in self._edge_tables:
            e = self.edges if relation is None else self.edges.select(relation)
            cond = np.concatenate(
                [self.onehot_features(e.dst_dim, layout), self.onehot_features(e.src_dim, layout)], axis=2
            )
            self._edge_tables[relation] = {
                "src": e.src,
                "dst": e.dst,
                "src_segments": ad.Segments(e.src, self.n_simplices),
                "dst_segments": ad.Segments(e.dst, self.n_simplices),
                "condition": cond,
            }
        return self._edge_tables[relation]


def _ordering_table(k: int) -> tuple[np.ndarray, np.ndarray]:
    """All orderings of ``k + 1`` vertices and their permutation signs."""
    perms = list(permutations(range(k + 1)))
    signs = []
    for p in perms:
        inversions = sum(1 for i in range(len(p)) for j in range(i + 1, len(p)) if p[i] > p[j])
        signs.append(-1.0 if inversions % 2 else 1.0)
    return np.array(perms, dtype=np.int64), np.array(signs)


class SimplexEmbedding(Module):
    """Symmetrised geometric products of vertex features, refined by a conditioned CGMLP.

    For a k-simplex the raw feature stacks three parts: the mean over all
    vertex orderings of the chained geometric product, the plain sum of the
    vertex features, and the grade norms of the alternating (sign-weighted)
    mean as grade-0 channels.  The alternating mean flips sign under odd
    reorderings, so only its norms are kept; for vectors they carry the
    wedge magnitudes (edge length, triangle area, spanned volume) that the
    symmetric mean cancels.  Vertices use their own feature in every slot.
    """

    def __init__(self, layout: BladeLayout, config: MPConfig, rng):
        super().__init__()
        self.layout = layout
        self.config = config
        c = config.channels
        self.node = MVLinear(layout, config.in_scalars + config.in_vectors, c, rng=rng)
        self.raw_channels = 2 * c + layout.n_grades * c
        self.net = CGMLP(layout, self.raw_channels + config.n_dims, c, depth=config.mlp_depth,
                         normalize=config.normalize, rng=rng)

    def _norm_channels(self, x: ad.Tensor) -> ad.Tensor:
        K, n, c = self.layout.n_grades, x.shape[1], x.shape[2]
        flat = ad.reshape(ad.transpose(grade_norms(self.layout, x), (1, 0, 2)), (n, K * c))
        return ad.einsum("b,nf->bnf", self.layout.scalar_onehot, flat)

    def raw(self, h0: ad.Tensor, vertices: np.ndarray) -> ad.Tensor:
        k = vertices.shape[1] - 1
        if k == 0:
            h = ad.take(h0, vertices[:, 0], axis=1)
            return ad.concat([h, h, self._norm_channels(h)], axis=2)
        cols = [ad.take(h0, vertices[:, i], axis=1) for i in range(k + 1)]
        sym = alt = None
        orders, signs = _ordering_table(k)
        for order, sign in zip(orders, signs):
            chain = cols[order[0]]
            for i in order[1:]:
                chain = geometric_product(self.layout, chain, cols[i])
            sym = chain if sym is None else sym + chain
            alt = chain if alt is None else (alt + chain if sign > 0 else alt - chain)
        scale = 1.0 / factorial(k + 1)
        total = cols[0]
        for col in cols[1:]:
            total = total + col
        return ad.concat([sym * scale, total, self._norm_channels(alt * scale)], axis=2)

    def __call__(self, batch: ComplexBatch) -> ad.Tensor:
        h0 = self.node(batch.node_features)
        parts = [self.raw(h0, v) for v in batch.simplex_vertices if len(v)]
        raw = ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        return self.net(ad.concat([raw, batch.dim_condition], axis=2))


def edge_messages(net: CGMLP, h: ad.Tensor, tables: dict) -> ad.Tensor:
    """``net([h_dst, h_src, condition])`` for every edge record."""
    return net.gathered([
        (h, tables["dst"], tables["dst_segments"]),
        (h, tables["src"], tables["src_segments"]),
        (tables["condition"], None, None),
    ])


def _aggregate(x: ad.Tensor, segments: ad.Segments, how: str) -> ad.Tensor:
    if how == "mean":
        return ad.segment_mean(x, segments, axis=1)
    return ad.segment_sum(x, segments, axis=1)


class SharedMPLayer(Module):
    """One message network for every relation and dimension pair, conditioned on the dims."""

    def __init__(self, layout: BladeLayout, config: MPConfig, rng):
        super().__init__()
        c, D = config.channels, config.n_dims
        self.config = config
        self.layout = layout
        self.message = CGMLP(layout, 2 * c + 2 * D, c, depth=config.mlp_depth,
                             normalize=config.normalize, rng=rng)
        self.update = CGMLP(layout, 2 * c + D, c, depth=config.mlp_depth,
                            normalize=config.normalize, rng=rng)

    def messages(self, h: ad.Tensor, tables: dict) -> ad.Tensor:
        return edge_messages(self.message, h, tables)

    def __call__(self, h: ad.Tensor, batch: ComplexBatch) -> ad.Tensor:
        h = ad.as_tensor(h)
        if h.shape[1] != batch.n_simplices:
            raise ValueError(f"{h.shape[1]} feature rows for {batch.n_simplices} simplices")
        tables = batch.edge_tables(None, self.layout)
        m = _aggregate(self.messages(h, tables), tables["dst_segments"], self.config.aggregation)
        out = self.update(ad.concat([h, m, batch.dim_condition], axis=2))
        return h + out if self.config.residual else out


class SeparateMPLayer(Module):
    """One message network per relation type; the update sees every message slot.

    With ``combine="sum"`` the slots are summed before the update, which makes
    the layer directly comparable with the shared one.
    """

    def __init__(self, layout: BladeLayout, config: MPConfig, rng, combine: str = "concat"):
        super().__init__()
        if combine not in ("concat", "sum"):
            raise ValueError("combine must be 'concat' or 'sum'")
        c, D = config.channels, config.n_dims
        self.config = config
        self.layout = layout
        self.combine = combine
        self.relations = tuple(config.relations)
        self.messages = Module()
        for r in self.relations:
            setattr(self.messages, r, CGMLP(layout, 2 * c + 2 * D, c, depth=config.mlp_depth,
                                            normalize=config.normalize, rng=rng))
        slots = len(self.relations) if combine == "concat" else 1
        self.update = CGMLP(layout, c + slots * c + D, c, depth=config.mlp_depth,
                            normalize=config.normalize, rng=rng)

    def network(self, relation: str) -> CGMLP:
        net = self.messages._children.get(relation)
        if net is None:
            raise KeyError(f"no message network for relation {relation!r}")
        return net

    def __call__(self, h: ad.Tensor, batch: ComplexBatch) -> ad.Tensor:
        h = ad.as_tensor(h)
        if h.shape[1] != batch.n_simplices:
            raise ValueError(f"{h.shape[1]} feature rows for {batch.n_simplices} simplices")
        slots = []
        for r in self.relations:
            tables = batch.edge_tables(r, self.layout)
            msg = edge_messages(self.network(r), h, tables)
            slots.append(_aggregate(msg, tables["dst_segments"], self.config.aggregation))
        if self.combine == "sum":
            total = slots[0]
            for s in slots[1:]:
                total = total + s
            slots = [total]
        out = self.update(ad.concat([h] + slots + [batch.dim_condition], axis=2))
        return h + out if self.config.residual else out


def standard_mp_layer(h_nodes: ad.Tensor, n_nodes: int, graph_edges: Sequence[tuple[int, int]],
                      message: CGMLP, update: CGMLP, layout: BladeLayout, n_dims: int,
                      residual: bool = True) -> ad.Tensor:
    """Plain graph message passing, written directly from neighbour lists.

    ``message`` receives ``(h_v, h_w)`` with both dimension one-hots fixed at
    0 so that parameters can be tied with a shared simplicial layer.
    """
    nbrs: list[set[int]] = [set() for _ in range(n_nodes)]
    for u, v in graph_edges:
        nbrs[u].add(v)
        nbrs[v].add(u)
    receivers, senders = [], []
    for v in range(n_nodes):
        for w in sorted(nbrs[v]):
            receivers.append(v)
            senders.append(w)
    receivers = np.array(receivers, dtype=np.int64)
    senders = np.array(senders, dtype=np.int64)
    hv = h_nodes.value
    zero_dim = np.zeros((layout.n_blades, 1, n_dims))
    zero_dim[0, 0, 0] = 1.0
    cond = np.broadcast_to(zero_dim, (layout.n_blades, len(receivers), n_dims))
    msgs = message.gathered([(hv, receivers, None), (hv, senders, None),
                             (np.concatenate([cond, cond], axis=2), None, None)]).value
    m = np.zeros((layout.n_blades, n_nodes, msgs.shape[2]))
    for e, v in enumerate(receivers):
        m[:, v] += msgs[:, e]
    node_cond = np.broadcast_to(zero_dim, (layout.n_blades, n_nodes, n_dims))
    out = update(np.concatenate([hv, m, node_cond], axis=2)).value
    return ad.Tensor(hv + out if residual else out)


class CSMPN(Module):
    """Embedding, message passing stack, and readout."""

    def __init__(self, config: MPConfig):
        super().__init__()
        self.config = config
        self.metric = Metric.euclidean(config.d)
        self.layout = BladeLayout(self.metric)
        rng = np.random.default_rng(config.seed)
        self.embedding = SimplexEmbedding(self.layout, config, rng)
        layer_cls = SharedMPLayer if config.mode == "shared" else SeparateMPLayer
        self.layers = ModuleList(layer_cls(self.layout, config, rng) for _ in range(config.layers))
        c, K, D = config.channels, self.layout.n_grades, config.n_dims
        if config.target == "invariant_scalar":
            n_inv = D * (c + K * c)
            self.readout_weight = ad.Parameter(np.zeros(n_inv))
            self.readout_bias = ad.Parameter(np.zeros(1))
        else:
            self.readout = MVLinear(self.layout, c, config.out_vectors, bias=False, rng=rng)

    def batch(self, samples: Sequence[GeometricComplex]) -> ComplexBatch:
        return ComplexBatch(samples, self.config, self.layout)

    def features(self, batch: ComplexBatch) -> ad.Tensor:
        h = self.embedding(batch)
        for layer in self.layers:
            h = layer(h, batch)
        return h

    def invariants(self, h: ad.Tensor, batch: ComplexBatch) -> ad.Tensor:
        """Per-complex invariant vector: per-dimension pools (mean or sum) of scalar parts and grade norms."""
        c, K, D = self.config.channels, self.layout.n_grades, self.config.n_dims
        n = h.shape[1]
        norms = ad.reshape(ad.transpose(grade_norms(self.layout, h), (1, 0, 2)), (n, K * c))
        inv = ad.concat([h[0], norms], axis=1)
        pool = ad.segment_sum if self.config.pooling == "sum" else ad.segment_mean
        pooled = pool(inv, batch.readout_segments, axis=0)
        return ad.reshape(pooled, (batch.n_complexes, D * (c + K * c)))

    def __call__(self, batch: ComplexBatch) -> ad.Tensor:
        h = self.features(batch)
        if self.config.target == "invariant_scalar":
            inv = self.invariants(h, batch)
            return ad.einsum("nf,f->n", inv, self.readout_weight) + self.readout_bias
        return self.node_vectors(h, batch)

    def node_vectors(self, h: ad.Tensor, batch: ComplexBatch) -> ad.Tensor:
        """Predicted positions ``(n_vertices, out_vectors, d)``: input position plus a covariant offset."""
        hv = h[:, : batch.n_vertices]
        y = self.readout(hv)
        idx = [1 << i for i in range(self.config.d)]
        offset = ad.transpose(ad.take(y, np.array(idx), axis=0), (1, 2, 0))
        return offset + batch.positions[:, None, :]

    def predict(self, samples: Sequence[GeometricComplex]) -> np.ndarray:
        return self(self.batch(samples)).value

    # checkpoints

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value for k, p in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {p.shape}")
            p.value[...] = v


CHECKPOINT_FORMAT = "csmpn-checkpoint/1"


def checkpoint_dict(model: CSMPN, extra: dict | None = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "parameters": [
            {"name": k, "shape": list(p.shape), "data": p.value.reshape(-1).tolist()}
            for k, p in model.named_parameters().items()
        ],
    }
    if extra:
        doc["extra"] = extra
    return doc


def dumps_checkpoint(model: CSMPN, extra: dict | None = None) -> str:
    return json.dumps(checkpoint_dict(model, extra), indent=1) + "\n"


def loads_checkpoint(text: str) -> tuple[CSMPN, dict]:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} document")
    model = CSMPN(MPConfig.from_dict(doc["config"]))
    model.load_state({
        p["name"]: np.asarray(p["data"], dtype=np.float64).reshape(p["shape"]) for p in doc["parameters"]
    })
    return model, doc.get("extra", {})
