"""Command-line interface.

Every subcommand reads one flat key-value config (a TOML file via
``--config`` and/or ``--key value`` flags, flags winning), writes its
artifacts under ``out_dir`` and prints a JSON summary on stdout.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import tomli

from .algebra import random_orthogonal
from .model import CSMPN, MPConfig, dumps_checkpoint, loads_checkpoint
from .tasks.bench import bench_shared_vs_separate
from .tasks.datasets import read_jsonl, write_jsonl
from .tasks.hulls import HullSample, gen_hulls, hull_geometric_complex
from .tasks.metrics import metric_ade_fde, metric_mse
from .tasks.training import NumericalError, TrainConfig, predict, stack_targets, train
from .tasks.trajectories import (TrajectorySample, gen_trajectories, node_predictions_to_frames,
                                 trajectory_complex, trajectory_target)
from .topology import RELATIONS, SimplicialComplex, cech, clique_lift, flatten, manual_lift, vietoris_rips
from .verify import equivariance_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
EQUIVARIANCE_TOL = 1e-7
LIFT_METHODS = ("vr", "cech", "clique", "manual")


class ConfigError(ValueError):
    pass


def _relations(value) -> tuple[str, ...]:
    items = value if isinstance(value, (list, tuple)) else [s for s in str(value).split(",") if s.strip()]
    items = tuple(str(s).strip() for s in items)
    bad = [r for r in items if r not in RELATIONS]
    if not items or bad:
        raise ValueError(f"expected a comma-separated subset of {','.join(RELATIONS)}")
    return items


def _split(value) -> tuple[int, ...]:
    items = value if isinstance(value, (list, tuple)) else [s for s in str(value).split(",") if s.strip()]
    out = tuple(int(s) for s in items)
    if out and (len(out) != 3 or min(out) < 0 or out[0] < 1):
        raise ValueError("expected three non-negative counts train,val,test with train >= 1")
    return out


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


@dataclass(frozen=True)
class Option:
    default: Any
    parse: Callable[[Any], Any]
    help: str


SCHEMA: dict[str, Option] = {
    "seed": Option(0, int, "seed for data, initialisation and batching"),
    "out_dir": Option("out", str, "directory for artifacts"),
    "output": Option("", str, "explicit output file (default derived from the subcommand)"),
    "input": Option("", str, "input file: points, graph or simplices (lift), complex (flatten)"),
    "dataset": Option("", str, "JSON-lines dataset (train, eval)"),
    "checkpoint": Option("", str, "model checkpoint (eval)"),
    "d": Option(3, int, "ambient dimension"),
    "count": Option(16, int, "number of generated samples"),
    "n_points": Option(8, int, "points per hull / particles per trajectory"),
    "eps": Option(1.0, float, "lift radius (vr, cech)"),
    "max_dim": Option(2, int, "largest simplex dimension"),
    "channels": Option(16, int, "multivector channels"),
    "layers": Option(2, int, "message passing layers"),
    "mlp_depth": Option(2, int, "geometric product blocks per network"),
    "mode": Option("shared", str, "shared or separate message networks"),
    "relations": Option("boundary,coboundary,upper", _relations, "adjacency relations"),
    "aggregation": Option("sum", str, "sum or mean"),
    "lr": Option(1e-3, float, "Adam learning rate"),
    "weight_decay": Option(0.0, float, "decoupled weight decay"),
    "batch_size": Option(16, int, "training batch size"),
    "steps": Option(2000, int, "maximum optimiser steps"),
    "eval_every": Option(100, int, "steps between validation evaluations"),
    "patience": Option(0, int, "evaluations without improvement before stopping (0 disables)"),
    "schedule": Option("constant", str, "learning rate schedule: constant or cosine"),
    "split": Option("", _split, "train,val,test counts (default 80/10/10 of the dataset)"),
    "rotate": Option(False, _bool, "eval: also score an orthogonally transformed copy"),
    "trials": Option(50, int, "verify-equivariance trials"),
    "n_batches": Option(50, int, "bench: timed batches per mode"),
    "warmup": Option(5, int, "bench: untimed warm-up batches"),
}

COMMANDS = ("gen-hulls", "gen-trajectories", "lift", "flatten", "train", "eval", "verify-equivariance", "bench")


def _parse_value(key: str, value):
    try:
        return SCHEMA[key].parse(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value {value!r} for {key}: {exc}") from None


def load_config(path: str | None, overrides: dict) -> dict:
    """Defaults, then the config file, then flags; unknown keys are rejected."""
    cfg = {k: opt.parse(opt.default) for k, opt in SCHEMA.items()}
    if path:
        try:
            data = tomli.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
        for k, v in data.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            cfg[k] = _parse_value(k, v)
    for k, v in overrides.items():
        cfg[k] = _parse_value(k, v)
    return cfg


def format_config(cfg: dict) -> str:
    lines = []
    for k, opt in SCHEMA.items():
        v = cfg[k]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"# {opt.help}")
        lines.append(f"{k} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"


def _model_config(cfg: dict, **extra) -> MPConfig:
    try:
        return MPConfig(d=cfg["d"], channels=cfg["channels"], layers=cfg["layers"],
                        mlp_depth=cfg["mlp_depth"], relations=cfg["relations"], mode=cfg["mode"],
                        max_dim=cfg["max_dim"], aggregation=cfg["aggregation"], seed=cfg["seed"], **extra)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(lr=cfg["lr"], batch_size=cfg["batch_size"], steps=cfg["steps"],
                           eval_every=cfg["eval_every"], patience=cfg["patience"] or None,
                           weight_decay=cfg["weight_decay"], schedule=cfg["schedule"], seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _out_path(cfg: dict, default_name: str) -> Path:
    path = Path(cfg["output"]) if cfg["output"] else Path(cfg["out_dir"]) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _require(cfg: dict, key: str) -> Path:
    if not cfg[key]:
        raise ConfigError(f"{key} is required for this subcommand")
    path = Path(cfg[key])
    if not path.is_file():
        raise ConfigError(f"{key}: no such file {path}")
    return path


def _read_json_or_rows(path: Path) -> dict:
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        try:
            return {"points": [[float(v) for v in r] for r in rows]}
        except ValueError:
            raise ConfigError(f"input: {path} is neither JSON nor whitespace-separated numbers") from None
    if isinstance(doc, list):
        return {"points": doc}
    if not isinstance(doc, dict):
        raise ConfigError(f"input: {path} must hold a JSON object or list")
    return doc


# subcommands

def cmd_gen(cfg: dict, task: str) -> dict:
    if cfg["count"] < 1:
        raise ConfigError("count must be positive")
    if task == "hulls":
        try:
            samples = gen_hulls(cfg["count"], cfg["d"], cfg["seed"], cfg["n_points"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        name = f"hulls_d{cfg['d']}_n{cfg['count']}_s{cfg['seed']}.jsonl"
        extra = {"mean_volume": float(np.mean([s.volume for s in samples]))}
    else:
        samples = gen_trajectories(cfg["count"], n=cfg["n_points"], d=cfg["d"], seed=cfg["seed"])
        name = f"trajectories_d{cfg['d']}_n{cfg['count']}_s{cfg['seed']}.jsonl"
        extra = {}
    path = _out_path(cfg, name)
    write_jsonl(path, samples)
    return {"path": str(path), "count": len(samples), "d": cfg["d"], **extra}


def cmd_lift(cfg: dict, method: str) -> dict:
    doc = _read_json_or_rows(_require(cfg, "input"))
    md = cfg["max_dim"]
    try:
        if method in ("vr", "cech"):
            if "points" not in doc:
                raise ConfigError("input: vr and cech lifts need 'points'")
            pts = np.asarray(doc["points"], dtype=np.float64)
            cx = vietoris_rips(pts, cfg["eps"], md) if method == "vr" else cech(pts, cfg["eps"], md)
        else:
            n = doc.get("vertex_count", len(doc.get("points", [])))
            key = "edges" if method == "clique" else "simplices"
            if key not in doc:
                raise ConfigError(f"input: {method} lift needs {key!r}")
            cx = clique_lift(n, doc[key], md) if method == "clique" else manual_lift(n, doc[key], md)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"input: {exc}") from None
    path = _out_path(cfg, f"complex_{method}.txt")
    path.write_text(cx.to_text())
    return {"path": str(path), "method": method, "counts": cx.counts(), "total": sum(cx.counts())}


def cmd_flatten(cfg: dict) -> dict:
    path_in = _require(cfg, "input")
    try:
        cx = SimplicialComplex.from_text(path_in.read_text())
    except ValueError as exc:
        raise ConfigError(f"input: {exc}") from None
    edges = flatten(cx, cfg["relations"])
    path = _out_path(cfg, "edges.csv")
    path.write_text(edges.to_csv())
    per = {r: int(len(edges.select(r).src)) for r in cfg["relations"]}
    return {"path": str(path), "records": int(len(edges.src)), "per_relation": per}


def _load_dataset(cfg: dict) -> list:
    path = _require(cfg, "dataset")
    try:
        samples = read_jsonl(path)
    except ValueError as exc:
        raise ConfigError(f"dataset: {exc}") from None
    if not samples:
        raise ConfigError("dataset is empty")
    kinds = {type(s) for s in samples}
    if len(kinds) > 1:
        raise ConfigError("dataset mixes sample kinds")
    return samples


def split_indices(n: int, split: tuple[int, ...]) -> tuple[slice, slice, slice]:
    """Contiguous train/val/test slices; the default is 80/10/10."""
    if split:
        a, b, c = split
        if a + b + c > n:
            raise ConfigError(f"split {a},{b},{c} needs {a + b + c} samples, dataset has {n}")
    else:
        b = c = n // 10
        a = n - b - c
    return slice(0, a), slice(a, a + b), slice(a + b, a + b + c)


def _as_model_inputs(samples: list, max_dim: int):
    if isinstance(samples[0], HullSample):
        return [hull_geometric_complex(s, max_dim) for s in samples], [s.volume for s in samples]
    return ([trajectory_complex(s, max_dim) for s in samples], [trajectory_target(s) for s in samples])


def _scores(model: CSMPN, xs, ys, raw) -> dict:
    if not xs:
        return {}
    pred = predict(model, xs)
    target = stack_targets(ys)
    out = {"mse": metric_mse(pred, target)}
    if isinstance(raw[0], TrajectorySample):
        sizes = np.cumsum([x.complex.vertex_count for x in xs])[:-1]
        pairs = [metric_ade_fde(node_predictions_to_frames(p), s.targets)
                 for p, s in zip(np.split(pred, sizes), raw)]
        out["ade"] = float(np.mean([p[0] for p in pairs]))
        out["fde"] = float(np.mean([p[1] for p in pairs]))
    return out


def _mpconfig_for(cfg: dict, samples: list) -> MPConfig:
    if isinstance(samples[0], HullSample):
        return _model_config({**cfg, "d": samples[0].d})
    s = samples[0]
    return _model_config({**cfg, "d": s.d}, target="per_node_vector", in_vectors=s.positions.shape[0],
                         out_vectors=s.targets.shape[0])


def cmd_train(cfg: dict) -> dict:
    samples = _load_dataset(cfg)
    tr, va, te = split_indices(len(samples), cfg["split"])
    mcfg = _mpconfig_for(cfg, samples)
    xs, ys = _as_model_inputs(samples, mcfg.max_dim)
    model = CSMPN(mcfg)
    result = train(model, xs[tr], ys[tr], xs[va], ys[va], _train_config(cfg))
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.json"
    ckpt.write_text(dumps_checkpoint(model))
    (out_dir / "train_log.csv").write_text(result.log_csv())
    summary = {
        "checkpoint": str(ckpt),
        "log": str(out_dir / "train_log.csv"),
        "parameters": model.num_parameters(),
        "steps_run": len(result.losses),
        "best_step": result.best_step,
        "best_val": result.best_val,
        "stopped_early": result.stopped_early,
        "test": _scores(model, xs[te], ys[te], samples[te]),
    }
    if isinstance(samples[0], HullSample) and summary["test"]:
        base = float(np.mean((np.asarray(ys[te]) - np.mean(ys[tr])) ** 2))
        summary["test"]["baseline_mse"] = base
    return summary


def _transform(samples: list, seed: int) -> list:
    R = random_orthogonal(samples[0].d, seed)
    out = []
    for s in samples:
        if isinstance(s, HullSample):
            out.append(HullSample(R.apply_vectors(s.points), s.volume, s.facets, s.volume_stderr))
        else:
            out.append(TrajectorySample(R.apply_vectors(s.positions), R.apply_vectors(s.targets), s.springs))
    return out


def cmd_eval(cfg: dict) -> dict:
    samples = _load_dataset(cfg)
    path = _require(cfg, "checkpoint")
    try:
        model, _ = loads_checkpoint(path.read_text())
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"checkpoint: {exc}") from None
    _, _, te = split_indices(len(samples), cfg["split"]) if cfg["split"] else (None, None, slice(None))
    subset = samples[te]
    xs, ys = _as_model_inputs(subset, model.config.max_dim)
    summary = {"checkpoint": str(path), "count": len(subset), "scores": _scores(model, xs, ys, subset)}
    if cfg["rotate"]:
        moved = _transform(subset, cfg["seed"])
        mx, my = _as_model_inputs(moved, model.config.max_dim)
        summary["transformed_scores"] = _scores(model, mx, my, moved)
    return summary


def cmd_verify(cfg: dict) -> dict:
    if cfg["trials"] < 1:
        raise ConfigError("trials must be positive")
    report = equivariance_report(d=cfg["d"], trials=cfg["trials"], seed=cfg["seed"])
    report["tolerance"] = EQUIVARIANCE_TOL
    report["passed"] = report["overall"] < EQUIVARIANCE_TOL
    path = _out_path(cfg, "equivariance.json")
    path.write_text(json.dumps(_json_safe(report), indent=1) + "\n")
    return report


def cmd_bench(cfg: dict) -> dict:
    if cfg["n_batches"] < 1 or cfg["warmup"] < 0:
        raise ConfigError("n_batches must be positive and warmup non-negative")
    report = bench_shared_vs_separate(_model_config(cfg), n_batches=cfg["n_batches"], warmup=cfg["warmup"])
    path = _out_path(cfg, "bench.json")
    path.write_text(json.dumps(report, indent=1) + "\n")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csmpn", description="Clifford simplicial message passing toolkit")
    parser.add_argument("--config", help="TOML file with any of the keys listed by --print-config")
    parser.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    parser.add_argument("command", nargs="?", choices=COMMANDS)
    parser.add_argument("method", nargs="?", help="lift method: " + "|".join(LIFT_METHODS))
    for key, opt in SCHEMA.items():
        parser.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=opt.help)
    return parser


def run(argv: list[str] | None = None) -> tuple[int, dict]:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: getattr(args, k) for k in SCHEMA if getattr(args, k) is not None}
    try:
        cfg = load_config(args.config, overrides)
        if args.print_config:
            sys.stdout.write(format_config(cfg))
            return EXIT_OK, {}
        if args.command is None:
            raise ConfigError("a subcommand is required")
        if args.command == "lift":
            if args.method not in LIFT_METHODS:
                raise ConfigError(f"lift method must be one of {', '.join(LIFT_METHODS)}")
        elif args.method is not None:
            raise ConfigError(f"unexpected argument {args.method!r}")
        handlers = {
            "gen-hulls": lambda: cmd_gen(cfg, "hulls"),
            "gen-trajectories": lambda: cmd_gen(cfg, "trajectories"),
            "lift": lambda: cmd_lift(cfg, args.method),
            "flatten": lambda: cmd_flatten(cfg),
            "train": lambda: cmd_train(cfg),
            "eval": lambda: cmd_eval(cfg),
            "verify-equivariance": lambda: cmd_verify(cfg),
            "bench": lambda: cmd_bench(cfg),
        }
        summary = {"command": args.command, **handlers[args.command]()}
    except ConfigError as exc:
        return EXIT_CONFIG, {"command": args.command, "error": str(exc)}
    except NumericalError as exc:
        return EXIT_NUMERIC, {"command": args.command, "error": str(exc)}
    if args.command == "verify-equivariance" and not summary["passed"]:
        return EXIT_NUMERIC, summary
    return EXIT_OK, summary


def _json_safe(value):
    """Replace non-finite floats by ``None`` so the summary stays valid JSON."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def main(argv: list[str] | None = None) -> int:
    code, summary = run(argv)
    if summary:
        if "error" in summary:
            print(f"csmpn: error: {summary['error']}", file=sys.stderr)
        json.dump(_json_safe(summary), sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
