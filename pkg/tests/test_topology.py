from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csmpn.miniball import smallest_enclosing_ball
from csmpn.topology import (
    RELATIONS,
    HypergraphEdges,
    SimplicialComplex,
    adjacencies,
    cech,
    clique_lift,
    flatten,
    manual_lift,
    neighborhood_graph,
    vietoris_rips,
)
from oracles import (
    brute_adjacencies,
    brute_cech,
    brute_cliques,
    brute_manual,
    brute_rips,
    enclosing_radius_upto3,
    is_downward_closed,
)


def random_complex(rng, n=7, p=0.5, max_dim=3):
    edges = [e for e in combinations(range(n), 2) if rng.random() < p]
    return clique_lift(n, edges, max_dim)


RIGHT_TRIANGLE = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]


def test_rips_examples():
    K = vietoris_rips(RIGHT_TRIANGLE, 1.2, 2)
    assert K.simplices(1) == [(0, 1), (0, 2)]
    assert K.simplices(2) == []
    K = vietoris_rips(RIGHT_TRIANGLE, 1.5, 2)
    assert K.counts() == [3, 3, 1]
    assert K.simplex_set() == brute_rips(RIGHT_TRIANGLE, 1.5, 2)


def test_rips_infinite_eps_is_complete(rng):
    pts = rng.standard_normal((6, 3))
    K = vietoris_rips(pts, np.inf, 2)
    assert K.counts() == [6, 15, 20]


def test_rips_rejects_bad_input():
    with pytest.raises(ValueError):
        vietoris_rips(RIGHT_TRIANGLE, 0.0)
    with pytest.raises(ValueError):
        vietoris_rips(RIGHT_TRIANGLE, -1.0)
    with pytest.raises(ValueError):
        vietoris_rips(np.zeros((0, 2)), 1.0)


@given(st.integers(0, 2**31 - 1), st.integers(1, 10), st.floats(0.1, 2.0), st.integers(0, 3))
def test_rips_matches_brute_force(seed, n, eps, max_dim):
    pts = np.random.default_rng(seed).uniform(-1, 1, size=(n, 2))
    K = vietoris_rips(pts, eps, max_dim)
    assert K.simplex_set() == brute_rips(pts, eps, max_dim)
    assert K == clique_lift(n, neighborhood_graph(pts, eps), max_dim)
    assert is_downward_closed(K)


def test_cech_examples():
    K = cech([(0.0, 0.0), (2.0, 0.0)], 1.0, 1)
    assert (0, 1) in K
    h = np.sqrt(3) / 2
    tri = [(0.0, 0.0), (1.0, 0.0), (0.5, h)]
    K = cech(tri, 0.5, 2)
    assert K.counts() == [3, 3]
    K = cech(tri, 1 / np.sqrt(3) + 1e-9, 2)
    assert K.counts() == [3, 3, 1]
    with pytest.raises(ValueError):
        cech(tri, 0.0)


def grid_balls_intersect(points, eps, steps=201):
    """Search a grid around the points for a location within eps of all of them."""
    pts = np.asarray(points)
    lo, hi = pts.min(0) - eps, pts.max(0) + eps
    xs = np.linspace(lo[0], hi[0], steps)
    ys = np.linspace(lo[1], hi[1], steps)
    grid = np.stack(np.meshgrid(xs, ys), -1).reshape(-1, 2)
    dist = np.linalg.norm(grid[:, None, :] - pts[None], axis=-1).max(1)
    return dist.min()


def test_cech_triangle_against_grid_oracle():
    h = np.sqrt(3) / 2
    tri = np.array([(0.0, 0.0), (1.0, 0.0), (0.5, h)])
    best = grid_balls_intersect(tri, 0.6)
    assert abs(best - 1 / np.sqrt(3)) < 1e-2
    assert abs(smallest_enclosing_ball(tri)[1] - 1 / np.sqrt(3)) < 1e-12


def test_miniball_obtuse_triangle_uses_longest_side():
    pts = np.array([(0.0, 0.0), (4.0, 0.0), (2.0, 0.5)])
    center, r = smallest_enclosing_ball(pts)
    assert np.allclose(center, [2.0, 0.0]) and np.isclose(r, 2.0)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.sampled_from([2, 3, 4]))
def test_miniball_encloses_and_is_tight(seed, n, d):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, d))
    center, r = smallest_enclosing_ball(pts)
    dist = np.linalg.norm(pts - center, axis=1)
    assert np.all(dist <= r + 1e-9)
    # no enclosing ball is smaller than half the diameter
    diam = max((np.linalg.norm(a - b) for a, b in combinations(pts, 2)), default=0.0)
    assert r >= diam / 2 - 1e-9
    # random nearby centers never do better
    for _ in range(20):
        c2 = center + 1e-3 * rng.standard_normal(d)
        assert np.linalg.norm(pts - c2, axis=1).max() >= r - 1e-9


def test_cech_matches_closed_form_oracle():
    rng = np.random.default_rng(77)
    for _ in range(50):
        n = int(rng.integers(1, 11))
        pts = rng.uniform(0, 1, size=(n, 2))
        eps = float(rng.uniform(0.05, 0.5))
        assert cech(pts, eps, 2).simplex_set() == brute_cech(pts, eps, 2)


def test_closed_form_radius_examples():
    h = np.sqrt(3) / 2
    assert np.isclose(enclosing_radius_upto3([(0, 0), (1, 0), (0.5, h)]), 1 / np.sqrt(3))
    assert np.isclose(enclosing_radius_upto3([(0, 0), (4, 0), (2, 0.5)]), 2.0)
    assert enclosing_radius_upto3([(1, 1)]) == 0.0


def test_manual_matches_closure_oracle():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(1, 11))
        declared = [tuple(rng.choice(n, size=int(rng.integers(1, min(n, 4) + 1)), replace=False))
                    for _ in range(int(rng.integers(0, 5)))]
        K = manual_lift(n, declared)
        assert K.simplex_set() == brute_manual(n, declared)
        assert is_downward_closed(K)


def test_inclusion_chain():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        n = int(rng.integers(3, 11))
        pts = rng.uniform(0, 1, size=(n, 2))
        eps = float(rng.uniform(0.1, 0.6))
        rips = vietoris_rips(pts, eps, 2).simplex_set()
        ch = cech(pts, eps, 2).simplex_set()
        rips2 = vietoris_rips(pts, 2 * eps, 2).simplex_set()
        assert rips <= ch <= rips2


def test_clique_examples():
    assert clique_lift(3, [(0, 1), (1, 2), (0, 2)], 2).counts() == [3, 3, 1]
    assert clique_lift(3, [(0, 1), (1, 2)], 2).simplices(2) == []
    with pytest.raises(ValueError):
        clique_lift(3, [(1, 1)], 2)
    with pytest.raises(ValueError):
        clique_lift(3, [(0, 5)], 2)


def test_clique_random_graphs():
    rng = np.random.default_rng(8)
    for _ in range(20):
        edges = [e for e in combinations(range(8), 2) if rng.random() < 0.5]
        for max_dim in (1, 2, 4):
            K = clique_lift(8, edges, max_dim)
            assert K.simplex_set() == brute_cliques(8, edges, max_dim)
            assert is_downward_closed(K)


def test_manual_examples():
    K = manual_lift(4, [(0, 1, 2)])
    assert K.counts() == [4, 3, 1]
    assert (3,) in K
    assert manual_lift(5).counts() == [5]
    assert manual_lift(4, [(0, 1, 2), (2, 1, 0)]) == K
    with pytest.raises(ValueError):
        manual_lift(3, [(0, 3)])
    assert manual_lift(4, [(0, 1, 2, 3)], max_dim=1).counts() == [4, 6]


def test_complex_rejects_invalid_families():
    with pytest.raises(ValueError):
        SimplicialComplex(3, [(0, 1, 2)])  # faces missing
    with pytest.raises(ValueError):
        SimplicialComplex(3, [(0, 0)])
    with pytest.raises(ValueError):
        SimplicialComplex(2, [(0, 2)])


def test_adjacency_examples():
    K = manual_lift(3, [(0, 1, 2)])
    adj = adjacencies(K)
    tri = K.id_index[(0, 1, 2)]
    faces = {K.simplices()[i] for i in adj.boundary[tri]}
    assert faces == {(0, 1), (0, 2), (1, 2)}
    K = manual_lift(2, [(0, 1)])
    adj = adjacencies(K)
    assert adj.upper[0] == [1] and adj.upper[1] == [0]
    assert adj.lower[K.id_index[(0, 1)]] == []


def test_adjacencies_match_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(25):
        K = random_complex(rng, n=int(rng.integers(1, 8)))
        adj = adjacencies(K)
        ref = brute_adjacencies(K)
        for r in RELATIONS:
            assert [set(x) for x in adj[r]] == ref[r]
            for i, nb in enumerate(adj[r]):
                assert i not in nb or r in ("boundary", "coboundary")
        # duality and symmetry
        for i, faces in enumerate(adj.boundary):
            for j in faces:
                assert i in adj.coboundary[j]
        for r in ("upper", "lower"):
            for i, nb in enumerate(adj[r]):
                assert all(i in adj[r][j] for j in nb)


def test_flatten_single_triangle():
    K = manual_lift(3, [(0, 1, 2)])
    edges = flatten(K, RELATIONS)
    per = {r: len(edges.select(r)) for r in RELATIONS}
    # 6 vertex-edge incidences + 3 edge-triangle incidences per direction;
    # upper: 6 ordered vertex pairs + 6 ordered edge pairs; lower: 6 ordered edge pairs
    assert per == {"boundary": 9, "coboundary": 9, "upper": 12, "lower": 6}
    assert len(edges) == 36
    adj = adjacencies(K)
    assert len(edges) == sum(len(adj[r][s]) for r in RELATIONS for s in range(len(K)))
    b = edges.select("boundary")
    assert np.all(b.src_dim == b.dst_dim - 1)
    c = edges.select("coboundary")
    assert np.all(c.src_dim == c.dst_dim + 1)


def test_flatten_ordering_and_errors():
    rng = np.random.default_rng(5)
    K = random_complex(rng)
    edges = flatten(K, RELATIONS)
    keys = list(zip(edges.relation, edges.dst, edges.src))
    assert keys == sorted(keys)
    with pytest.raises(ValueError):
        flatten(K, ())
    with pytest.raises(ValueError):
        flatten(K, ("sideways",))


def test_flatten_graph_reduces_to_adjacency():
    graph = [(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)]
    K = clique_lift(4, graph, max_dim=1)
    e = flatten(K, ("upper",))
    vertex = e.src_dim == 0
    pairs = {(int(s), int(t)) for s, t in zip(e.src[vertex], e.dst[vertex])}
    assert pairs == {(a, b) for a, b in graph} | {(b, a) for a, b in graph}
    K0 = clique_lift(4, graph, max_dim=0)
    assert len(flatten(K0, ("upper",))) == 0


def test_flatten_csv_and_concatenate():
    K = manual_lift(2, [(0, 1)])
    e = flatten(K)
    text = e.to_csv()
    assert text.splitlines()[0] == "src,dst,src_dim,dst_dim,relation"
    assert len(text.splitlines()) == len(e) + 1
    both = HypergraphEdges.concatenate([e, e])
    assert both.n_simplices == 6
    assert np.array_equal(both.src[len(e):], e.src + 3)


def test_text_round_trip(rng):
    K = random_complex(rng)
    assert SimplicialComplex.from_text(K.to_text()) == K
    with pytest.raises(ValueError):
        SimplicialComplex.from_text("dim 0 count 2\n0\n")


def test_relabel_preserves_counts(rng):
    K = random_complex(rng)
    perm = rng.permutation(K.vertex_count)
    assert K.relabel(perm).counts() == K.counts()
