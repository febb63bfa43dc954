"""Seeded training and evaluation loops."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..model import CSMPN, GeometricComplex
from .metrics import metric_mse

LOG_COLUMNS = ("step", "train_loss", "val_metric", "seconds_per_step")
SCHEDULES = ("constant", "cosine")


class NumericalError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    steps: int = 2000
    eval_every: int = 100
    patience: int | None = None  # evaluations without improvement before stopping
    weight_decay: float = 0.0
    schedule: str = "constant"
    standardize: bool = True
    eval_batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.batch_size < 1 or self.steps < 0 or self.eval_every < 1 or self.eval_batch_size < 1:
            raise ValueError("batch_size, eval_every and eval_batch_size must be positive, steps non-negative")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainResult:
    model: CSMPN
    log: list[dict]
    losses: list[float]
    best_step: int
    best_val: float
    stopped_early: bool
    target_mean: float = 0.0
    target_std: float = 1.0
    extra: dict = field(default_factory=dict)

    def log_csv(self, wall_clock: bool = True) -> str:
        cols = LOG_COLUMNS if wall_clock else LOG_COLUMNS[:-1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.log:
            w.writerow([_fmt(row[c]) for c in cols])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def stack_targets(targets: Sequence) -> np.ndarray:
    """Scalars stack to ``(B,)``; per-node arrays concatenate along the node axis."""
    return np.concatenate([np.atleast_1d(np.asarray(t, dtype=np.float64)) for t in targets])


def predict(model: CSMPN, samples: Sequence[GeometricComplex], batch_size: int = 64) -> np.ndarray:
    outs = [model.predict(samples[i:i + batch_size]) for i in range(0, len(samples), batch_size)]
    return np.concatenate(outs) if outs else np.zeros(0)


def evaluate(model: CSMPN, samples: Sequence[GeometricComplex], targets: Sequence,
             batch_size: int = 64) -> float:
    """MSE of the model's predictions against the stacked targets."""
    return metric_mse(predict(model, samples, batch_size), stack_targets(targets))


def _lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.schedule == "cosine" and cfg.steps:
        return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / cfg.steps))
    return cfg.lr


def _fold_standardization(model: CSMPN, mean: float, std: float):
    """Rewrite the affine scalar readout so the model predicts unstandardized targets."""
    model.readout_weight.value *= std
    model.readout_bias.value[...] = model.readout_bias.value * std + mean


def train(model: CSMPN, train_samples: Sequence[GeometricComplex], train_targets: Sequence,
          val_samples: Sequence[GeometricComplex] = (), val_targets: Sequence = (),
          config: TrainConfig | None = None, on_log=None) -> TrainResult:
    """Minimise the MSE with Adam; deterministic given ``config.seed`` and the model's init.

    For scalar targets with ``standardize`` the loss is computed on z-scored
    targets and the readout is rescaled at the end, so the returned model
    predicts raw values.  With validation data and ``patience`` the loop stops
    after that many evaluations without improvement, and the parameters from
    the best evaluation are restored.  A non-finite loss raises
    ``NumericalError``.  ``on_log`` is called with every log row as it is written.
    """
    cfg = config or TrainConfig()
    train_samples = list(train_samples)
    if not train_samples:
        raise ValueError("empty training set")
    if len(train_targets) != len(train_samples) or len(val_targets) != len(val_samples):
        raise ValueError("samples and targets differ in length")
    scalar = model.config.target == "invariant_scalar"
    mean, std = 0.0, 1.0
    if scalar and cfg.standardize:
        y = stack_targets(train_targets)
        mean = float(y.mean())
        std = float(y.std()) or 1.0

    rng = np.random.default_rng(cfg.seed)
    params = model.named_parameters()
    opt = ad.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(train_samples)
    bs = min(cfg.batch_size, n)
    order = rng.permutation(n)
    cursor = 0

    def validate() -> float:
        if not val_samples:
            return float("nan")
        pred = predict(model, val_samples, cfg.eval_batch_size) * std + mean if scalar else \
            predict(model, val_samples, cfg.eval_batch_size)
        return metric_mse(pred, stack_targets(val_targets))

    log: list[dict] = []
    losses: list[float] = []
    best_val = validate()
    best_step = 0
    best_state = {k: v.copy() for k, v in model.state().items()}
    log.append({"step": 0, "train_loss": float("nan"), "val_metric": best_val, "seconds_per_step": 0.0})
    if on_log:
        on_log(log[-1])
    bad_evals = 0
    stopped = False
    window: list[float] = []
    elapsed = 0.0

    for step in range(1, cfg.steps + 1):
        if cursor + bs > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + bs]
        cursor += bs
        t0 = time.perf_counter()
        batch = model.batch([train_samples[i] for i in idx])
        target = stack_targets([train_targets[i] for i in idx])
        if scalar:
            target = (target - mean) / std
        out = model(batch)
        loss = ad.mean(ad.square(out - target))
        value = float(loss.value)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite training loss {value} at step {step}")
        opt.zero_grad()
        ad.backward(loss)
        opt.lr = _lr_at(cfg, step - 1)
        opt.step()
        elapsed += time.perf_counter() - t0
        losses.append(value)
        window.append(value)

        if step % cfg.eval_every == 0 or step == cfg.steps:
            val = validate()
            log.append({"step": step, "train_loss": float(np.mean(window)), "val_metric": val,
                        "seconds_per_step": elapsed / len(window)})
            if on_log:
                on_log(log[-1])
            window, elapsed = [], 0.0
            if math.isnan(val) or val < best_val or math.isnan(best_val):
                best_val, best_step, bad_evals = val, step, 0
                best_state = {k: v.copy() for k, v in model.state().items()}
            else:
                bad_evals += 1
                if cfg.patience is not None and bad_evals >= cfg.patience:
                    stopped = True
                    break

    if val_samples:
        model.load_state(best_state)
    if scalar and cfg.standardize:
        _fold_standardization(model, mean, std)
    return TrainResult(model, log, losses, best_step, best_val, stopped, mean, std)
