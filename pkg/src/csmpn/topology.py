"""Simplicial complexes: lifts from point clouds and graphs, adjacencies, flattening.

A simplex is a strictly increasing tuple of vertex ids.  Complexes store
simplices grouped by dimension in lexicographic order; the global simplex id
is the position in the concatenation ``dim 0, dim 1, ...``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .miniball import smallest_enclosing_ball

RELATIONS = ("boundary", "coboundary", "upper", "lower")
DEFAULT_RELATIONS = ("boundary", "coboundary", "upper")
CECH_TOL = 1e-9
DEFAULT_MAX_DIM = 2


def make_simplex(vertices: Iterable[int]) -> tuple[int, ...]:
    s = tuple(sorted(int(v) for v in vertices))
    if not s:
        raise ValueError("a simplex needs at least one vertex")
    if len(set(s)) != len(s):
        raise ValueError(f"duplicate vertex in simplex {s}")
    return s


class SimplicialComplex:
    """A downward-closed family of simplices on vertices ``0..vertex_count-1``."""

    def __init__(self, vertex_count: int, simplices: Iterable[Sequence[int]] = ()):
        if vertex_count < 0:
            raise ValueError("vertex_count must be non-negative")
        self.vertex_count = int(vertex_count)
        found: set[tuple[int, ...]] = {(v,) for v in range(self.vertex_count)}
        for s in simplices:
            s = make_simplex(s)
            if s[0] < 0 or s[-1] >= self.vertex_count:
                raise ValueError(f"simplex {s} references a vertex outside 0..{self.vertex_count - 1}")
            found.add(s)
        by_dim: dict[int, list[tuple[int, ...]]] = {}
        for s in found:
            by_dim.setdefault(len(s) - 1, []).append(s)
        top = max(by_dim) if by_dim else -1
        self.simplices_by_dim: list[list[tuple[int, ...]]] = [
            sorted(by_dim.get(k, [])) for k in range(top + 1)
        ]
        self.id_index: dict[tuple[int, ...], int] = {}
        for s in self.simplices():
            self.id_index[s] = len(self.id_index)
        missing = self.missing_faces()
        if missing:
            raise ValueError(f"not downward closed, e.g. face {missing[0]} is missing")

    @classmethod
    def from_maximal(cls, vertex_count: int, simplices: Iterable[Sequence[int]],
                     max_dim: int | None = None) -> "SimplicialComplex":
        """Close a list of simplices under taking nonempty subsets."""
        closed: set[tuple[int, ...]] = set()
        for s in simplices:
            s = make_simplex(s)
            top = len(s) if max_dim is None else min(len(s), max_dim + 1)
            for k in range(1, top + 1):
                closed.update(combinations(s, k))
        return cls(vertex_count, closed)

    @property
    def dim(self) -> int:
        return len(self.simplices_by_dim) - 1

    def simplices(self, k: int | None = None) -> list[tuple[int, ...]]:
        if k is None:
            return [s for level in self.simplices_by_dim for s in level]
        if 0 <= k < len(self.simplices_by_dim):
            return list(self.simplices_by_dim[k])
        return []

    def __len__(self):
        return len(self.id_index)

    def __contains__(self, s):
        return tuple(s) in self.id_index

    def __eq__(self, other):
        if not isinstance(other, SimplicialComplex):
            return NotImplemented
        return self.vertex_count == other.vertex_count and self.simplices_by_dim == other.simplices_by_dim

    def __repr__(self):
        return f"SimplicialComplex(vertex_count={self.vertex_count}, counts={self.counts()})"

    def counts(self) -> list[int]:
        return [len(level) for level in self.simplices_by_dim]

    def simplex_set(self) -> set[tuple[int, ...]]:
        return set(self.id_index)

    def dims(self) -> np.ndarray:
        """Dimension of every simplex, indexed by global id."""
        return np.concatenate(
            [np.full(len(level), k, dtype=np.int64) for k, level in enumerate(self.simplices_by_dim)]
        ) if self.simplices_by_dim else np.zeros(0, dtype=np.int64)

    def vertex_array(self, k: int) -> np.ndarray:
        """``(m, k+1)`` integer array of the k-simplices."""
        level = self.simplices(k)
        return np.array(level, dtype=np.int64).reshape(len(level), k + 1)

    def missing_faces(self) -> list[tuple[int, ...]]:
        missing = []
        for s in self.id_index:
            for k in range(1, len(s)):
                for face in combinations(s, k):
                    if face not in self.id_index:
                        missing.append(face)
        return missing

    def truncate(self, max_dim: int) -> "SimplicialComplex":
        return SimplicialComplex(
            self.vertex_count, [s for s in self.id_index if len(s) - 1 <= max_dim]
        )

    def relabel(self, perm: Sequence[int]) -> "SimplicialComplex":
        """Complex with vertex ``v`` renamed to ``perm[v]``."""
        return SimplicialComplex(self.vertex_count, [[perm[v] for v in s] for s in self.id_index])

    def to_text(self) -> str:
        lines = []
        for k, level in enumerate(self.simplices_by_dim):
            lines.append(f"dim {k} count {len(level)}")
            lines.extend(" ".join(str(v) for v in s) for s in level)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SimplicialComplex":
        simplices = []
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        i = 0
        vertex_count = 0
        while i < len(lines):
            head = lines[i].split()
            if len(head) != 4 or head[0] != "dim" or head[2] != "count":
                raise ValueError(f"bad header line: {lines[i]!r}")
            k, m = int(head[1]), int(head[3])
            block = lines[i + 1:i + 1 + m]
            if len(block) != m:
                raise ValueError(f"dimension {k} declares {m} simplices, found {len(block)}")
            for ln in block:
                s = make_simplex(int(t) for t in ln.split())
                if len(s) != k + 1:
                    raise ValueError(f"simplex {s} listed under dim {k}")
                simplices.append(s)
                vertex_count = max(vertex_count, s[-1] + 1)
            i += 1 + m
        return cls(vertex_count, simplices)


def _check_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 1:
        raise ValueError("points must be a non-empty (n, d) array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def _check_eps(eps: float):
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def enumerate_cliques(n: int, adjacency: Sequence[set[int]], max_size: int) -> list[tuple[int, ...]]:
    """All cliques of at most ``max_size`` vertices, each as a sorted tuple.

    Cliques are grown by appending common neighbours with a larger index, so
    every clique is produced exactly once and growth stops at the size cap.
    """
    out: list[tuple[int, ...]] = []
    stack: list[tuple[tuple[int, ...], set[int]]] = [
        ((v,), {w for w in adjacency[v] if w > v}) for v in reversed(range(n))
    ]
    while stack:
        clique, candidates = stack.pop()
        out.append(clique)
        if len(clique) >= max_size:
            continue
        for w in sorted(candidates, reverse=True):
            stack.append((clique + (w,), {u for u in candidates if u > w and u in adjacency[w]}))
    return out


def clique_lift(vertex_count: int, edges: Iterable[Sequence[int]],
                max_dim: int = DEFAULT_MAX_DIM) -> SimplicialComplex:
    """Every clique of at most ``max_dim + 1`` vertices becomes a simplex."""
    if max_dim < 0:
        raise ValueError("max_dim must be non-negative")
    adjacency: list[set[int]] = [set() for _ in range(vertex_count)]
    for e in edges:
        u, v = (int(t) for t in e)
        if u == v:
            raise ValueError(f"self-loop at vertex {u}")
        if not (0 <= u < vertex_count and 0 <= v < vertex_count):
            raise ValueError(f"edge ({u}, {v}) references a vertex outside 0..{vertex_count - 1}")
        adjacency[u].add(v)
        adjacency[v].add(u)
    return SimplicialComplex(vertex_count, enumerate_cliques(vertex_count, adjacency, max_dim + 1))


def neighborhood_graph(points, eps: float) -> list[tuple[int, int]]:
    pts = _check_points(points)
    dist = pairwise_distances(pts)
    n = len(pts)
    return [(i, j) for i in range(n) for j in range(i + 1, n) if dist[i, j] <= eps]


def vietoris_rips(points, eps: float, max_dim: int = DEFAULT_MAX_DIM) -> SimplicialComplex:
    """Simplices whose vertices are pairwise within ``eps`` (Euclidean)."""
    _check_eps(eps)
    pts = _check_points(points)
    return clique_lift(len(pts), neighborhood_graph(pts, eps), max_dim)


def cech(points, eps: float, max_dim: int = DEFAULT_MAX_DIM, tol: float = CECH_TOL) -> SimplicialComplex:
    """Simplices whose closed ``eps``-balls share a point.

    Equivalent to the minimum enclosing ball of the vertices having radius at
    most ``eps``.  Candidates come from the Vietoris-Rips complex at ``2 eps``,
    which contains the Cech complex.
    """
    _check_eps(eps)
    pts = _check_points(points)
    candidates = vietoris_rips(pts, 2.0 * eps, max_dim)
    keep = []
    for s in candidates.simplices():
        if len(s) == 1:
            keep.append(s)
        elif smallest_enclosing_ball(pts[list(s)])[1] <= eps + tol:
            keep.append(s)
    return SimplicialComplex(len(pts), keep)


def manual_lift(vertex_count: int, declared: Iterable[Sequence[int]] = (),
                max_dim: int | None = None) -> SimplicialComplex:
    """Close hand-declared simplices under subsets (optionally capping the dimension)."""
    declared = [make_simplex(s) for s in declared]
    for s in declared:
        if s[0] < 0 or s[-1] >= vertex_count:
            raise ValueError(f"simplex {s} references a vertex outside 0..{vertex_count - 1}")
    return SimplicialComplex.from_maximal(vertex_count, declared, max_dim)


@dataclass
class Adjacencies:
    """Per-simplex neighbour id lists for the four relations, indexed by global id."""

    boundary: list[list[int]]
    coboundary: list[list[int]]
    upper: list[list[int]]
    lower: list[list[int]]

    def __getitem__(self, relation: str) -> list[list[int]]:
        if relation not in RELATIONS:
            raise KeyError(f"unknown relation {relation!r}")
        return getattr(self, relation)


def adjacencies(K: SimplicialComplex) -> Adjacencies:
    n = len(K)
    boundary: list[set[int]] = [set() for _ in range(n)]
    coboundary: list[set[int]] = [set() for _ in range(n)]
    for s, sid in K.id_index.items():
        if len(s) < 2:
            continue
        for face in combinations(s, len(s) - 1):
            fid = K.id_index[face]
            boundary[sid].add(fid)
            coboundary[fid].add(sid)
    upper: list[set[int]] = [set() for _ in range(n)]
    lower: list[set[int]] = [set() for _ in range(n)]
    for sid in range(n):
        # pairs of faces of one simplex share it as a coface
        for a, b in combinations(sorted(boundary[sid]), 2):
            upper[a].add(b)
            upper[b].add(a)
        # pairs of cofaces of one simplex share it as a face
        for a, b in combinations(sorted(coboundary[sid]), 2):
            lower[a].add(b)
            lower[b].add(a)
    as_lists = lambda sets: [sorted(x) for x in sets]  # noqa: E731
    return Adjacencies(as_lists(boundary), as_lists(coboundary), as_lists(upper), as_lists(lower))


@dataclass
class HypergraphEdges:
    """Typed edge list over simplices: simplex ``dst`` receives from ``src``."""

    src: np.ndarray
    dst: np.ndarray
    src_dim: np.ndarray
    dst_dim: np.ndarray
    relation: np.ndarray  # index into RELATIONS
    n_simplices: int

    def __len__(self):
        return int(self.src.size)

    def relation_names(self) -> list[str]:
        return [RELATIONS[r] for r in self.relation]

    def select(self, relation: str) -> "HypergraphEdges":
        mask = self.relation == RELATIONS.index(relation)
        return HypergraphEdges(self.src[mask], self.dst[mask], self.src_dim[mask],
                               self.dst_dim[mask], self.relation[mask], self.n_simplices)

    def records(self) -> list[tuple[int, int, int, int, str]]:
        return [
            (int(s), int(t), int(a), int(b), RELATIONS[r])
            for s, t, a, b, r in zip(self.src, self.dst, self.src_dim, self.dst_dim, self.relation)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["src", "dst", "src_dim", "dst_dim", "relation"])
        w.writerows(self.records())
        return buf.getvalue()

    @classmethod
    def concatenate(cls, parts: Sequence["HypergraphEdges"]) -> "HypergraphEdges":
        """Disjoint union; simplex ids of later parts are shifted."""
        offsets = np.cumsum([0] + [p.n_simplices for p in parts])
        cat = lambda f: np.concatenate([f(p, o) for p, o in zip(parts, offsets)]) if parts else np.zeros(0, np.int64)  # noqa: E731
        return cls(cat(lambda p, o: p.src + o), cat(lambda p, o: p.dst + o),
                   cat(lambda p, o: p.src_dim), cat(lambda p, o: p.dst_dim),
                   cat(lambda p, o: p.relation), int(offsets[-1]))


def flatten(K: SimplicialComplex, relations: Sequence[str] = DEFAULT_RELATIONS,
            adj: Adjacencies | None = None) -> HypergraphEdges:
    """One record per (simplex, neighbour, relation), ordered by relation, dst, src."""
    relations = tuple(relations)
    if not relations:
        raise ValueError("at least one relation is required")
    for r in relations:
        if r not in RELATIONS:
            raise ValueError(f"unknown relation {r!r}; choose from {RELATIONS}")
    adj = adj if adj is not None else adjacencies(K)
    dims = K.dims()
    src, dst, rel = [], [], []
    for r in RELATIONS:
        if r not in relations:
            continue
        code = RELATIONS.index(r)
        for sid, nbrs in enumerate(adj[r]):
            for t in nbrs:
                src.append(t)
                dst.append(sid)
                rel.append(code)
    src = np.array(src, dtype=np.int64)
    dst = np.array(dst, dtype=np.int64)
    return HypergraphEdges(src, dst, dims[src], dims[dst], np.array(rel, dtype=np.int64), len(K))
