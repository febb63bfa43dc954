"""Inference timing of shared versus per-relation message passing."""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from ..model import CSMPN, GeometricComplex, MPConfig
from ..topology import vietoris_rips


def benchmark_complexes(count: int = 8, n_points: int = 20, d: int = 3, eps: float = 1.2,
                        max_dim: int = 2, seed: int = 0) -> list[GeometricComplex]:
    """Vietoris-Rips complexes of Gaussian point clouds."""
    out = []
    for i in range(count):
        pts = np.random.default_rng([seed, i]).standard_normal((n_points, d))
        out.append(GeometricComplex(pts, vietoris_rips(pts, eps, max_dim)))
    return out


def bench_shared_vs_separate(config: MPConfig | None = None, samples=None, n_batches: int = 50,
                             warmup: int = 5) -> dict:
    """Mean and variance of inference time for both modes on identical complexes.

    The two models share every hyperparameter except ``mode``.  Timing runs
    alternate between modes batch by batch so slow drifts in machine load hit
    both equally.
    """
    if n_batches < 1:
        raise ValueError("n_batches must be positive")
    base = config or MPConfig(d=3, channels=16, layers=2, relations=("boundary", "coboundary", "upper"))
    samples = samples if samples is not None else benchmark_complexes(d=base.d, max_dim=base.max_dim,
                                                                      seed=base.seed)
    models = {mode: CSMPN(replace(base, mode=mode)) for mode in ("shared", "separate")}
    batches = {mode: m.batch(samples) for mode, m in models.items()}
    for mode, m in models.items():
        for _ in range(warmup):
            m(batches[mode])
    times = {mode: np.empty(n_batches) for mode in models}
    for i in range(n_batches):
        for mode, m in models.items():
            t0 = time.perf_counter()
            m(batches[mode])
            times[mode][i] = time.perf_counter() - t0
    any_batch = batches["shared"]
    out = {
        "n_batches": n_batches,
        "warmup": warmup,
        "n_complexes": any_batch.n_complexes,
        "n_simplices": any_batch.n_simplices,
        "n_edges": len(any_batch.edges.src),
        "relations": list(base.relations),
        "channels": base.channels,
        "layers": base.layers,
    }
    for mode, t in times.items():
        out[mode] = {
            "mean_seconds": float(t.mean()),
            "var_seconds": float(t.var()),
            "std_seconds": float(t.std()),
            "parameters": models[mode].num_parameters(),
        }
    out["time_ratio"] = out["shared"]["mean_seconds"] / out["separate"]["mean_seconds"]
    return out
