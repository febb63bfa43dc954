"""JSON-lines dataset files and loader stubs for external data.

Each line is one sample.  Arrays are stored row-major flattened next to an
explicit ``<name>_shape`` field, for example::

    {"kind": "hull", "d": 3, "points": [...], "points_shape": [8, 3],
     "volume": 2.18, "volume_stderr": 0.0, "facets": [...], "facets_shape": [12, 3]}
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .hulls import HullSample
from .trajectories import TrajectorySample


def _pack(name: str, arr) -> dict:
    a = np.asarray(arr)
    return {name: a.reshape(-1).tolist(), f"{name}_shape": list(a.shape)}


def _unpack(doc: dict, name: str, dtype=np.float64) -> np.ndarray:
    try:
        return np.asarray(doc[name], dtype=dtype).reshape(doc[f"{name}_shape"])
    except KeyError as exc:
        raise ValueError(f"sample is missing field {exc.args[0]!r}") from None


def sample_to_record(sample) -> dict:
    if isinstance(sample, HullSample):
        rec = {"kind": "hull", "d": sample.d}
        rec.update(_pack("points", sample.points))
        rec["volume"] = float(sample.volume)
        rec["volume_stderr"] = float(sample.volume_stderr)
        if sample.facets is not None:
            rec.update(_pack("facets", np.asarray(sample.facets, dtype=np.int64)))
        return rec
    if isinstance(sample, TrajectorySample):
        rec = {"kind": "trajectory", "d": sample.d}
        rec.update(_pack("positions", sample.positions))
        rec.update(_pack("targets", sample.targets))
        if sample.springs is not None:
            rec.update(_pack("springs", np.asarray(sample.springs, dtype=np.int64).reshape(-1, 2)))
        return rec
    raise TypeError(f"cannot serialise {type(sample).__name__}")


def record_to_sample(rec: dict):
    kind = rec.get("kind")
    if kind == "hull":
        facets = _unpack(rec, "facets", np.int64) if "facets" in rec else None
        return HullSample(_unpack(rec, "points"), float(rec["volume"]), facets,
                          float(rec.get("volume_stderr", 0.0)))
    if kind == "trajectory":
        springs = _unpack(rec, "springs", np.int64) if "springs" in rec else None
        return TrajectorySample(_unpack(rec, "positions"), _unpack(rec, "targets"), springs)
    raise ValueError(f"unknown sample kind {kind!r}")


def dumps_jsonl(samples: Iterable) -> str:
    return "".join(json.dumps(sample_to_record(s), separators=(",", ":")) + "\n" for s in samples)


def loads_jsonl(text: str) -> list:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        out.append(record_to_sample(rec))
    return out


def write_jsonl(path, samples: Iterable) -> None:
    Path(path).write_text(dumps_jsonl(samples))


def read_jsonl(path) -> list:
    return loads_jsonl(Path(path).read_text())


# External datasets are licensed separately and are not bundled.  The stubs
# document the arrays a loader has to produce.

def load_cmu_mocap(path):
    """CMU motion capture, one walking subject.

    Expected output: ``TrajectorySample`` items with ``positions`` of shape
    ``(T_in, 31, 3)`` joint coordinates, ``targets`` ``(T_out, 31, 3)`` and
    ``springs`` the ``(30, 2)`` skeleton bones.
    """
    raise NotImplementedError("CMU motion capture data is not bundled; see the docstring for shapes")


def load_md17(path, molecule: str = "aspirin"):
    """MD17 molecular dynamics.

    Expected output: ``TrajectorySample`` items with heavy-atom ``positions``
    ``(T_in, n_atoms, 3)``, ``targets`` ``(T_out, n_atoms, 3)`` and
    ``springs`` the ``(m, 2)`` covalent bonds.  Atom types go in separately as
    per-node scalars ``(n_atoms, S)``.
    """
    raise NotImplementedError("MD17 data is not bundled; see the docstring for shapes")


def load_nba(path):
    """NBA player tracking.

    Expected output: ``TrajectorySample`` items with ``positions``
    ``(T_in, 11, 2)`` for the ten players and the ball, ``targets``
    ``(T_out, 11, 2)`` and no fixed ``springs``.
    """
    raise NotImplementedError("NBA tracking data is not bundled; see the docstring for shapes")
