"""Synthetic spring-system trajectories for per-node position forecasting.

Particles are coupled by random Hookean springs and integrated with
velocity Verlet.  The force law only uses relative positions, so the whole
generator commutes with rotations, reflections and translations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import GeometricComplex
from ..topology import clique_lift


@dataclass
class TrajectorySample:
    positions: np.ndarray  # (T_in, n, d) observed frames
    targets: np.ndarray  # (T_out, n, d) frames to predict
    springs: np.ndarray | None = None  # (m, 2) coupled particle pairs

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.positions.ndim != 3 or self.targets.ndim != 3:
            raise ValueError("positions and targets must be (T, n, d)")
        if self.positions.shape[1:] != self.targets.shape[1:]:
            raise ValueError("positions and targets disagree on (n, d)")
        if not (np.isfinite(self.positions).all() and np.isfinite(self.targets).all()):
            raise ValueError("trajectories must be finite")

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    @property
    def d(self) -> int:
        return self.positions.shape[2]


def simulate_springs(x0, v0, springs, stiffness, steps: int, dt: float = 0.01,
                     every: int = 10) -> np.ndarray:
    """Frames ``(steps, n, d)`` recorded every ``every`` integrator steps (first frame is ``x0``)."""
    x = np.array(x0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    i, j = np.asarray(springs, dtype=np.int64).T if len(springs) else (np.zeros(0, int), np.zeros(0, int))
    k = np.asarray(stiffness, dtype=np.float64)[:, None]

    def accel(x):
        f = k * (x[j] - x[i])
        a = np.zeros_like(x)
        np.add.at(a, i, f)
        np.add.at(a, j, -f)
        return a

    frames = [x.copy()]
    a = accel(x)
    while len(frames) < steps:
        for _ in range(every):
            v += 0.5 * dt * a
            x += dt * v
            a = accel(x)
            v += 0.5 * dt * a
        frames.append(x.copy())
    return np.stack(frames)


def gen_trajectories(count: int, n: int = 5, d: int = 3, t_in: int = 5, t_out: int = 10,
                     seed: int = 0, p_spring: float = 0.5) -> list[TrajectorySample]:
    """``count`` independent spring systems; sample ``i`` uses the generator seeded by ``(seed, i)``."""
    if n < 2 or d < 1 or t_in < 2 or t_out < 1:
        raise ValueError("need n >= 2, d >= 1, t_in >= 2, t_out >= 1")
    out = []
    for s in range(count):
        rng = np.random.default_rng([seed, s])
        pairs = np.array([(a, b) for a in range(n) for b in range(a + 1, n)], dtype=np.int64)
        springs = pairs[rng.random(len(pairs)) < p_spring]
        stiffness = rng.uniform(0.5, 1.5, size=len(springs))
        x0 = rng.standard_normal((n, d))
        v0 = 0.5 * rng.standard_normal((n, d))
        frames = simulate_springs(x0, v0, springs, stiffness, t_in + t_out)
        out.append(TrajectorySample(frames[:t_in], frames[t_in:], springs))
    return out


def trajectory_complex(sample: TrajectorySample, max_dim: int = 2) -> GeometricComplex:
    """Clique complex of the spring graph on the last observed frame.

    Node vectors hold the last ``T_in - 1`` frame-to-frame displacements,
    most recent first.
    """
    pos = sample.positions
    springs = sample.springs if sample.springs is not None else np.zeros((0, 2), np.int64)
    cx = clique_lift(sample.n, [tuple(e) for e in springs.tolist()], max_dim=max_dim)
    vel = np.diff(pos, axis=0)[::-1]  # (T_in - 1, n, d)
    return GeometricComplex(pos[-1], cx, vectors=np.transpose(vel, (1, 0, 2)))


def trajectory_target(sample: TrajectorySample) -> np.ndarray:
    """Targets in the model's per-node layout ``(n, T_out, d)``."""
    return np.transpose(sample.targets, (1, 0, 2))


def node_predictions_to_frames(pred: np.ndarray) -> np.ndarray:
    """Inverse of ``trajectory_target``: ``(n, T, d)`` to ``(T, n, d)``."""
    return np.transpose(np.asarray(pred), (1, 0, 2))
