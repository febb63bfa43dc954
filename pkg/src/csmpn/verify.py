"""Randomised equivariance checks for every layer and the full model."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .algebra import Metric, OrthogonalMap, random_orthogonal
from .layers import (CGMLP, BladeLayout, GatedNonlinearity, GeometricProductLayer, Module,
                     MVLayerNorm, MVLinear)
from .model import CSMPN, GeometricComplex, MPConfig, SeparateMPLayer, SharedMPLayer
from .topology import vietoris_rips

CHECKS = ("MVLinear", "GeometricProductLayer", "GatedNonlinearity", "MVLayerNorm", "CGMLP",
          "SharedMPLayer", "SeparateMPLayer", "CSMPN_vectors", "CSMPN_scalar", "CSMPN_translation")


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def perturb_parameters(module: Module, rng: np.random.Generator, scale: float = 0.1):
    """Add Gaussian noise to every parameter so zero-initialised gates and readouts get exercised."""
    for p in module.parameters():
        p.value += scale * rng.standard_normal(p.shape)


def trial_map(d: int, rng: np.random.Generator, reflection: bool) -> OrthogonalMap:
    """A Haar rotation, turned into a reflection on request by flipping one axis."""
    R = random_orthogonal(d, rng)
    if (R.det < 0) != reflection:
        m = R.matrix.copy()
        m[:, 0] *= -1.0
        R = OrthogonalMap(m)
    return R


def random_complex(d: int, rng: np.random.Generator, n_points: int = 7,
                   eps: float | None = None) -> GeometricComplex:
    """Rips complex of Gaussian points; the default radius is about 2/3 of the typical pair distance."""
    pts = rng.standard_normal((n_points, d))
    if eps is None:
        eps = 0.65 * np.sqrt(2.0 * d)
    return GeometricComplex(pts, vietoris_rips(pts, eps, 2))


def _layer_errors(layout: BladeLayout, R: OrthogonalMap, rng, channels: int) -> dict[str, float]:
    x = rng.standard_normal((layout.n_blades, 6, channels))
    y = rng.standard_normal((layout.n_blades, 6, channels))
    rx, ry = layout.act(R, x), layout.act(R, y)
    seed = int(rng.integers(2**31))
    lin = MVLinear(layout, channels, channels, rng=seed)
    gp = GeometricProductLayer(layout, channels, rng=seed)
    gate = GatedNonlinearity(layout, channels)
    norm = MVLayerNorm(layout)
    mlp = CGMLP(layout, channels, channels, depth=2, normalize=True, rng=seed)
    for m in (lin, gp, gate, norm, mlp):
        perturb_parameters(m, rng)
    return {
        "MVLinear": relative_error(lin(rx).value, layout.act(R, lin(x).value)),
        "GeometricProductLayer": relative_error(gp(rx, ry).value, layout.act(R, gp(x, y).value)),
        "GatedNonlinearity": relative_error(gate(rx).value, layout.act(R, gate(x).value)),
        "MVLayerNorm": relative_error(norm(rx).value, layout.act(R, norm(x).value)),
        "CGMLP": relative_error(mlp(rx).value, layout.act(R, mlp(x).value)),
    }


def _rotated(sample: GeometricComplex, R: OrthogonalMap, shift=None) -> GeometricComplex:
    pos = R.apply_vectors(sample.positions) if R is not None else sample.positions.copy()
    if shift is not None:
        pos = pos + shift
    return GeometricComplex(pos, sample.complex)


def _model_errors(d: int, R: OrthogonalMap, rng, channels: int, layers: int) -> dict[str, float]:
    seed = int(rng.integers(2**31))
    sample = random_complex(d, rng)
    moved = _rotated(sample, R)
    base = MPConfig(d=d, channels=channels, layers=layers, seed=seed)
    out: dict[str, float] = {}

    vec_model = CSMPN(replace(base, target="per_node_vector", out_vectors=2))
    perturb_parameters(vec_model, rng)
    p = vec_model.predict([sample])
    out["CSMPN_vectors"] = relative_error(vec_model.predict([moved]), R.apply_vectors(p))
    shift = rng.standard_normal(d) * 3.0
    out["CSMPN_translation"] = relative_error(
        vec_model.predict([_rotated(sample, None, shift)]), p + shift)

    scal_model = CSMPN(base)
    perturb_parameters(scal_model, rng)
    out["CSMPN_scalar"] = relative_error(scal_model.predict([moved]), scal_model.predict([sample]))

    for name, cls in (("SharedMPLayer", SharedMPLayer), ("SeparateMPLayer", SeparateMPLayer)):
        cfg = replace(base, mode="shared" if cls is SharedMPLayer else "separate")
        model = CSMPN(cfg)
        perturb_parameters(model, rng)
        layer = model.layers[0]
        b1, b2 = model.batch([sample]), model.batch([moved])
        h = model.embedding(b1).value
        out[name] = relative_error(layer(model.layout.act(R, h), b2).value,
                                   model.layout.act(R, layer(h, b1).value))
    return out


def equivariance_report(d: int = 3, trials: int = 50, seed: int = 0, channels: int = 8,
                        layers: int = 3) -> dict:
    """Maximum relative error per check over ``trials`` random (parameters, input, map) triples.

    Odd trials use reflections and even trials rotations.  ``CSMPN_scalar``
    measures invariance of the scalar readout, ``CSMPN_translation`` the
    translation equivariance of position predictions.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    layout = BladeLayout(Metric.euclidean(d))
    rng = np.random.default_rng(seed)
    worst = {name: 0.0 for name in CHECKS}
    for t in range(trials):
        R = trial_map(d, rng, reflection=bool(t % 2))
        errs = _layer_errors(layout, R, rng, channels)
        errs.update(_model_errors(d, R, rng, channels, layers))
        for k, v in errs.items():
            worst[k] = max(worst[k], v)
    return {"d": d, "trials": trials, "seed": seed, "max_relative_error": worst,
            "overall": max(worst.values())}
