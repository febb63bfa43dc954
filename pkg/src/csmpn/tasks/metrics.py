"""Regression and trajectory metrics."""

from __future__ import annotations

import numpy as np


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    return p, t


def metric_mse(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean((p - t) ** 2))


def metric_ade_fde(pred, target) -> tuple[float, float]:
    """ADE and FDE for ``(T, n, d)`` trajectories.

    ADE averages the per-timestep RMSE over all ``T`` steps; FDE is the RMSE
    at the last step.
    """
    p, t = _pair(pred, target)
    if p.ndim != 3:
        raise ValueError(f"expected (T, n, d) arrays, got shape {p.shape}")
    rmse = np.sqrt(np.mean((p - t) ** 2, axis=(1, 2)))
    return float(rmse.mean()), float(rmse[-1])
