"""scikit-learn style wrappers: lifts as transformers, CSMPN as a regressor.

Inputs are sequences of point clouds (``(n, d)`` arrays) or already-lifted
``GeometricComplex`` objects, so a lift and a regressor chain in a
``sklearn.pipeline.Pipeline``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_array, check_is_fitted

from .model import CSMPN, GeometricComplex, MPConfig
from .tasks.hulls import HullSample, hull_facets, hull_to_complex
from .tasks.training import TrainConfig, predict, stack_targets, train
from .topology import DEFAULT_MAX_DIM, DEFAULT_RELATIONS, cech, clique_lift, manual_lift, vietoris_rips


def check_point_cloud(points, d: int | None = None, min_points: int = 1) -> np.ndarray:
    """A finite float64 ``(n, d)`` array, optionally with a required ``d``."""
    pts = check_array(points, dtype=np.float64, ensure_min_samples=min_points)
    if d is not None and pts.shape[1] != d:
        raise ValueError(f"expected {d}-D points, got {pts.shape[1]}-D")
    return pts


def check_point_clouds(X, d: int | None = None, min_points: int = 1) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError("expected a sequence of point clouds, got a single 2-D array")
    clouds = [check_point_cloud(x, d, min_points) for x in X]
    if not clouds:
        raise ValueError("empty input")
    dims = {c.shape[1] for c in clouds}
    if len(dims) > 1:
        raise ValueError(f"point clouds mix dimensions {sorted(dims)}")
    return clouds


def check_complexes(X) -> list[GeometricComplex]:
    items = list(X)
    if not items:
        raise ValueError("empty input")
    bad = [type(x).__name__ for x in items if not isinstance(x, GeometricComplex)]
    if bad:
        raise TypeError(f"expected GeometricComplex items (apply a lift first), got {bad[0]}")
    return items


class _Lift(BaseEstimator, TransformerMixin):
    """Stateless: ``fit`` only validates, ``transform`` lifts each point cloud."""

    def fit(self, X, y=None):
        check_point_clouds(X)
        return self

    def transform(self, X) -> list[GeometricComplex]:
        return [GeometricComplex(p, self._lift(p)) for p in check_point_clouds(X)]

    def _lift(self, points):
        raise NotImplementedError


class RipsLift(_Lift):
    def __init__(self, eps: float = 1.0, max_dim: int = DEFAULT_MAX_DIM):
        self.eps = eps
        self.max_dim = max_dim

    def _lift(self, points):
        return vietoris_rips(points, self.eps, self.max_dim)


class CechLift(_Lift):
    def __init__(self, eps: float = 1.0, max_dim: int = DEFAULT_MAX_DIM):
        self.eps = eps
        self.max_dim = max_dim

    def _lift(self, points):
        return cech(points, self.eps, self.max_dim)


class HullLift(_Lift):
    """Closure of the convex hull's boundary facets."""

    def __init__(self, max_dim: int = DEFAULT_MAX_DIM):
        self.max_dim = max_dim

    def _lift(self, points):
        sample = HullSample(points, float("nan"), hull_facets(points))
        return hull_to_complex(sample, self.max_dim)


class CliqueLift(BaseEstimator, TransformerMixin):
    """Clique complex of a graph; ``X`` holds ``(points, edges)`` pairs."""

    def __init__(self, max_dim: int = DEFAULT_MAX_DIM):
        self.max_dim = max_dim

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> list[GeometricComplex]:
        out = []
        for points, edges in X:
            pts = check_point_cloud(points)
            out.append(GeometricComplex(pts, clique_lift(len(pts), edges, self.max_dim)))
        return out


class ManualLift(BaseEstimator, TransformerMixin):
    """Hand-declared simplices; ``X`` holds ``(points, simplices)`` pairs."""

    def __init__(self, max_dim: int | None = None):
        self.max_dim = max_dim

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> list[GeometricComplex]:
        out = []
        for points, simplices in X:
            pts = check_point_cloud(points)
            out.append(GeometricComplex(pts, manual_lift(len(pts), simplices, self.max_dim)))
        return out


class _CSMPNBase(BaseEstimator):
    _target = "invariant_scalar"

    def __init__(self, channels: int = 16, layers: int = 2, mlp_depth: int = 2,
                 mode: str = "shared", relations: Sequence[str] = DEFAULT_RELATIONS,
                 max_dim: int = DEFAULT_MAX_DIM, aggregation: str = "sum", lr: float = 1e-3,
                 batch_size: int = 16, steps: int = 2000, eval_every: int = 100, patience=None,
                 weight_decay: float = 0.0, schedule: str = "constant", validation_fraction: float = 0.0,
                 random_state: int = 0):
        self.channels = channels
        self.layers = layers
        self.mlp_depth = mlp_depth
        self.mode = mode
        self.relations = relations
        self.max_dim = max_dim
        self.aggregation = aggregation
        self.lr = lr
        self.batch_size = batch_size
        self.steps = steps
        self.eval_every = eval_every
        self.patience = patience
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _model_config(self, sample: GeometricComplex, **extra) -> MPConfig:
        n_vec = 1 + (0 if sample.vectors is None else np.asarray(sample.vectors).shape[1])
        n_scal = 0 if sample.scalars is None else np.asarray(sample.scalars).reshape(len(sample.positions), -1).shape[1]
        return MPConfig(d=sample.positions.shape[1], in_scalars=n_scal, in_vectors=n_vec,
                        channels=self.channels, layers=self.layers, mlp_depth=self.mlp_depth,
                        relations=tuple(self.relations), mode=self.mode, max_dim=self.max_dim,
                        aggregation=self.aggregation, target=self._target, seed=self.random_state,
                        **extra)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, steps=self.steps,
                           eval_every=self.eval_every, patience=self.patience,
                           weight_decay=self.weight_decay, schedule=self.schedule,
                           seed=self.random_state)

    def _fit(self, X, targets, **model_extra):
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        X = check_complexes(X)
        if len(targets) != len(X):
            raise ValueError(f"{len(X)} samples but {len(targets)} targets")
        n_val = int(round(self.validation_fraction * len(X)))
        perm = np.random.default_rng(self.random_state).permutation(len(X))
        val, tr = perm[:n_val], perm[n_val:]
        if not len(tr):
            raise ValueError("no training samples left after the validation split")
        model = CSMPN(self._model_config(X[0], **model_extra))
        result = train(model, [X[i] for i in tr], [targets[i] for i in tr],
                       [X[i] for i in val], [targets[i] for i in val], self._train_config())
        self.model_ = result.model
        self.training_log_ = result.log
        self.n_features_in_ = X[0].positions.shape[1]
        return self

    def _predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_complexes(X)
        d = X[0].positions.shape[1]
        if d != self.n_features_in_:
            raise ValueError(f"model was fitted on {self.n_features_in_}-D inputs, got {d}-D")
        return predict(self.model_, X, batch_size=64)


class CSMPNRegressor(RegressorMixin, _CSMPNBase):
    """Invariant scalar regression on simplicial complexes (for example hull volumes)."""

    def fit(self, X, y):
        y = check_array(np.asarray(y, dtype=np.float64).reshape(-1, 1)).ravel()
        return self._fit(X, list(y))

    def predict(self, X) -> np.ndarray:
        return self._predict(X)


class CSMPNPositionRegressor(RegressorMixin, _CSMPNBase):
    """Per-vertex vector regression; ``y[i]`` has shape ``(n_i, out_vectors, d)``.

    ``predict`` returns one ``(n_i, out_vectors, d)`` array per input complex.
    ``score`` is the coefficient of determination over all coordinates.
    """

    _target = "per_node_vector"

    def fit(self, X, y):
        targets = [np.asarray(t, dtype=np.float64) for t in y]
        if any(t.ndim != 3 for t in targets):
            raise ValueError("each target must be (n_vertices, out_vectors, d)")
        shapes = {t.shape[1:] for t in targets}
        if len(shapes) != 1:
            raise ValueError("targets disagree on (out_vectors, d)")
        return self._fit(X, targets, out_vectors=targets[0].shape[1])

    def predict(self, X) -> list[np.ndarray]:
        flat = self._predict(X)
        sizes = np.cumsum([x.complex.vertex_count for x in check_complexes(X)])[:-1]
        return np.split(flat, sizes)

    def score(self, X, y, sample_weight=None) -> float:
        if sample_weight is not None:
            raise ValueError("sample weights are not supported for position targets")
        pred = stack_targets(self.predict(X))
        return float(r2_score(stack_targets(y).ravel(), pred.ravel()))
