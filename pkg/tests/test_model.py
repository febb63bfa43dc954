import numpy as np
import pytest

from csmpn import autodiff as ad
from csmpn.algebra import Metric, Multivector
from csmpn.layers import NORM_EPS, BladeLayout
from csmpn.model import (
    CSMPN,
    GeometricComplex,
    MPConfig,
    SeparateMPLayer,
    SharedMPLayer,
    dumps_checkpoint,
    loads_checkpoint,
    standard_mp_layer,
)
from csmpn.topology import clique_lift, manual_lift, vietoris_rips
from csmpn.verify import equivariance_report, perturb_parameters, random_complex, relative_error, trial_map


def small_config(**kw):
    base = dict(d=3, channels=4, layers=2, mlp_depth=2, seed=1)
    base.update(kw)
    return MPConfig(**base)


def triangle_sample(rng, d=3):
    return GeometricComplex(rng.standard_normal((3, d)), manual_lift(3, [(0, 1, 2)]))


def test_config_validation():
    with pytest.raises(ValueError):
        MPConfig(mode="parallel")
    with pytest.raises(ValueError):
        MPConfig(layers=0)
    with pytest.raises(ValueError):
        MPConfig(target="something")
    with pytest.raises(ValueError):
        MPConfig(pooling="max")
    cfg = small_config(relations=("boundary", "upper"))
    assert MPConfig.from_dict(cfg.to_dict()) == cfg


def test_batch_rejects_mismatch(rng):
    model = CSMPN(small_config(max_dim=1))
    with pytest.raises(ValueError):
        model.batch([triangle_sample(rng)])
    with pytest.raises(ValueError):
        model.batch([GeometricComplex(rng.standard_normal((2, 2)), manual_lift(2, [(0, 1)]))])
    with pytest.raises(ValueError):
        model.batch([])
    with pytest.raises(ValueError):
        GeometricComplex(rng.standard_normal((3, 3)), manual_lift(2))


def test_edge_embedding_of_two_vectors():
    """The symmetrised product of two vectors is their inner product."""
    model = CSMPN(small_config(channels=1))
    lay = model.layout
    model.embedding.node.weight.value[...] = 1.0
    model.embedding.node.bias.value[...] = 0.0
    pts = np.array([[1.0, 2.0, 0.0], [-1.0, -2.0, 0.0]]) + 5.0  # centering removes the shift
    batch = model.batch([GeometricComplex(pts, manual_lift(2, [(0, 1)]))])
    h0 = model.embedding.node(batch.node_features)
    raw = model.embedding.raw(h0, batch.simplex_vertices[1]).value[:, 0, :]
    u = Multivector(lay.metric, h0.value[:, 0, 0])
    v = Multivector(lay.metric, h0.value[:, 1, 0])
    sym = 0.5 * (u * v + v * u)
    assert np.allclose(raw[:, 0], sym.coeffs, atol=1e-14)
    assert np.isclose(raw[0, 0], -5.0)
    assert np.allclose(raw[1:, 0], 0.0, atol=1e-14)
    assert np.allclose(raw[:, 1], (u + v).coeffs, atol=1e-14)
    # alternating part of two vectors is the wedge; zero here (parallel), so its norm is the smoothing floor
    assert np.isclose(raw[0, 2 + 2], np.sqrt(NORM_EPS), rtol=0, atol=1e-12)


def test_zero_features_give_bias_only_embedding(rng):
    model = CSMPN(small_config())
    perturb_parameters(model, rng)
    model.embedding.node.bias.value[...] = 0.0
    pts = np.zeros((3, 3))
    batch = model.batch([GeometricComplex(pts, manual_lift(3, [(0, 1, 2)]))])
    h0 = model.embedding.node(batch.node_features)
    assert np.all(h0.value == 0)
    for v in batch.simplex_vertices:
        # everything vanishes except the grade-norm channels, which sit at the smoothing floor
        raw = model.embedding.raw(h0, v).value
        assert np.all((raw == 0) | (raw == np.sqrt(NORM_EPS)))
    out = model.embedding(batch).value
    # only the dimension conditioning differs between simplices, so equal dims give equal rows
    assert np.allclose(out[:, 0], out[:, 1]) and np.allclose(out[:, 3], out[:, 5])


def test_embedding_is_invariant_to_vertex_order(rng):
    model = CSMPN(small_config())
    perturb_parameters(model, rng)
    sample = triangle_sample(rng)
    ref = model.embedding(model.batch([sample])).value
    for perm in ([1, 2, 0], [2, 1, 0], [0, 2, 1]):
        inv = np.argsort(perm)
        moved = GeometricComplex(sample.positions[inv], sample.complex.relabel(perm))
        out = model.embedding(model.batch([moved])).value
        # relabelling maps vertex v to perm[v]; compare simplex by simplex
        K, K2 = sample.complex, moved.complex
        for s, sid in K.id_index.items():
            t = tuple(sorted(perm[v] for v in s))
            assert np.max(np.abs(out[:, K2.id_index[t]] - ref[:, sid])) < 1e-12


def _rips_sample(rng, n=6, d=3):
    pts = rng.standard_normal((n, d))
    return GeometricComplex(pts, vietoris_rips(pts, 1.8, 2))


def test_isolated_singletons_get_zero_messages(rng):
    model = CSMPN(small_config())
    perturb_parameters(model, rng)
    layer = model.layers[0]
    batch = model.batch([GeometricComplex(rng.standard_normal((4, 3)), manual_lift(4))])
    assert len(batch.edges) == 0
    h = model.embedding(batch)
    out = layer(h, batch).value
    zero = np.zeros_like(h.value)
    expect = h.value + layer.update(np.concatenate([h.value, zero, batch.dim_condition], axis=2)).value
    assert np.allclose(out, expect, atol=1e-14)


def test_feature_count_mismatch(rng):
    model = CSMPN(small_config())
    batch = model.batch([_rips_sample(rng)])
    with pytest.raises(ValueError):
        model.layers[0](np.zeros((8, batch.n_simplices + 1, 4)), batch)


def test_reduction_to_standard_message_passing(rng):
    """Vertices plus edges with upper adjacency only: vertex rows follow plain graph message passing."""
    cfg = small_config(max_dim=1, relations=("upper",), layers=1)
    model = CSMPN(cfg)
    perturb_parameters(model, rng)
    graph = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (4, 2)]
    sample = GeometricComplex(rng.standard_normal((5, 3)), clique_lift(5, graph, max_dim=1))
    batch = model.batch([sample])
    e = batch.edges
    assert np.all(e.src_dim == 0) and np.all(e.dst_dim == 0)  # edges have no upper neighbours here
    layer = model.layers[0]
    h = rng.standard_normal((8, batch.n_simplices, cfg.channels))
    ours = layer(h, batch).value[:, :5]
    ref = standard_mp_layer(ad.Tensor(h[:, :5]), 5, graph, layer.message, layer.update,
                            model.layout, cfg.n_dims).value
    assert np.array_equal(ours, ref)


def test_separate_with_tied_networks_matches_shared(rng):
    cfg = small_config()
    lay = BladeLayout(Metric.euclidean(3))
    shared = SharedMPLayer(lay, cfg, rng)
    perturb_parameters(shared, rng)
    sep = SeparateMPLayer(lay, cfg, rng, combine="sum")
    for r in cfg.relations:
        net = sep.network(r)
        for name, p in net.named_parameters().items():
            p.value[...] = shared.message.named_parameters()[name].value
    for name, p in sep.update.named_parameters().items():
        p.value[...] = shared.update.named_parameters()[name].value
    model = CSMPN(cfg)
    batch = model.batch([_rips_sample(rng), _rips_sample(rng, n=5)])
    h = rng.standard_normal((8, batch.n_simplices, cfg.channels))
    assert np.allclose(sep(h, batch).value, shared(h, batch).value, atol=1e-12)
    with pytest.raises(KeyError):
        sep.network("lower")


def test_parameter_counts_scale_with_relations():
    counts = {}
    for rels in (("boundary",), ("boundary", "upper"), ("boundary", "coboundary", "upper"),
                 ("boundary", "coboundary", "upper", "lower")):
        for mode in ("shared", "separate"):
            counts[mode, len(rels)] = CSMPN(small_config(relations=rels, mode=mode)).num_parameters()
    assert len({counts["shared", n] for n in range(1, 5)}) == 1
    # each extra relation adds one message network and widens the update input by one slot
    diffs = np.diff([counts["separate", n] for n in range(1, 5)])
    assert len(set(diffs.tolist())) == 1 and diffs[0] > 0
    assert counts["shared", 3] < counts["separate", 3]


def _model_outputs(model, samples):
    return model.predict(samples)


@pytest.mark.parametrize("mode", ["shared", "separate"])
def test_layer_equivariance_on_random_complexes(mode, rng):
    cfg = small_config(mode=mode)
    model = CSMPN(cfg)
    perturb_parameters(model, rng)
    layer = model.layers[0]
    for t in range(10):
        sample = random_complex(3, rng, n_points=8)
        R = trial_map(3, rng, reflection=bool(t % 2))
        moved = GeometricComplex(R.apply_vectors(sample.positions), sample.complex)
        b1, b2 = model.batch([sample]), model.batch([moved])
        h = rng.standard_normal((8, b1.n_simplices, cfg.channels))
        err = relative_error(layer(model.layout.act(R, h), b2).value,
                             model.layout.act(R, layer(h, b1).value))
        assert err < 1e-8


@pytest.mark.parametrize("d", [2, 3, 5])
def test_end_to_end_equivariance(d):
    report = equivariance_report(d=d, trials=50, seed=d, channels=4, layers=2)
    assert report["overall"] < 1e-7, report["max_relative_error"]


def test_scalar_readout_translation_invariant(rng):
    model = CSMPN(small_config())
    perturb_parameters(model, rng)
    sample = _rips_sample(rng)
    shifted = GeometricComplex(sample.positions + np.array([3.0, -1.0, 7.0]), sample.complex)
    a, b = model.predict([sample]), model.predict([shifted])
    assert np.abs(a - b).max() < 1e-8 * max(1.0, np.abs(a).max())


def test_permutation_equivariance(rng):
    for target in ("invariant_scalar", "per_node_vector"):
        model = CSMPN(small_config(target=target))
        perturb_parameters(model, rng)
        sample = _rips_sample(rng)
        n = len(sample.positions)
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        moved = GeometricComplex(sample.positions[inv], sample.complex.relabel(perm))
        a, b = model.predict([sample]), model.predict([moved])
        if target == "invariant_scalar":
            assert np.allclose(a, b, atol=1e-10)
        else:
            assert np.allclose(a, b[perm], atol=1e-10)


def test_zero_readout_outputs(rng):
    model = CSMPN(small_config())
    assert np.all(model.predict([_rips_sample(rng)]) == 0.0)
    model = CSMPN(small_config(target="per_node_vector"))
    model.readout.weight.value[...] = 0.0
    sample = _rips_sample(rng)
    out = model.predict([sample])
    assert np.allclose(out[:, 0], sample.positions, atol=1e-14)


def test_batching_matches_single(rng):
    model = CSMPN(small_config())
    perturb_parameters(model, rng)
    samples = [_rips_sample(rng, n=int(n)) for n in (4, 6, 5)]
    together = model.predict(samples)
    apart = np.concatenate([model.predict([s]) for s in samples])
    assert np.allclose(together, apart, atol=1e-12)


def test_sum_pooling_and_mean_aggregation(rng):
    sample = _rips_sample(rng)
    for kw in (dict(pooling="sum"), dict(aggregation="mean")):
        model = CSMPN(small_config(**kw))
        perturb_parameters(model, rng)
        R = trial_map(3, rng, reflection=True)
        moved = GeometricComplex(R.apply_vectors(sample.positions), sample.complex)
        assert relative_error(model.predict([moved]), model.predict([sample])) < 1e-10


def test_checkpoint_round_trip(rng):
    model = CSMPN(small_config(target="per_node_vector", out_vectors=2, mode="separate"))
    perturb_parameters(model, rng)
    text = dumps_checkpoint(model, {"note": "x"})
    clone, extra = loads_checkpoint(text)
    assert extra == {"note": "x"}
    assert clone.config == model.config
    sample = _rips_sample(rng)
    assert np.array_equal(clone.predict([sample]), model.predict([sample]))
    assert dumps_checkpoint(clone, {"note": "x"}) == text
    with pytest.raises(ValueError):
        loads_checkpoint('{"format": "other"}')
    state = model.state()
    state.pop(next(iter(state)))
    with pytest.raises(ValueError):
        model.load_state(state)
