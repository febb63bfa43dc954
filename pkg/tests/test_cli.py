import json
import subprocess
import sys

import pytest

from csmpn.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, SCHEMA, load_config, main, split_indices
from csmpn.tasks.datasets import read_jsonl, write_jsonl
from csmpn.tasks.hulls import gen_hulls
from csmpn.topology import SimplicialComplex


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    summary = json.loads(out) if out.strip().startswith("{") else None
    return code, summary, out, err


def test_print_config_lists_every_key(capsys):
    code = main(["--print-config", "--channels", "8"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    for key in SCHEMA:
        assert f"\n{key} = " in "\n" + out
    assert "channels = 8" in out


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('channels = 12\nrelations = "boundary,upper"\nlr = 0.01\n')
    cfg = load_config(str(path), {"lr": "0.5"})
    assert cfg["channels"] == 12 and cfg["relations"] == ("boundary", "upper") and cfg["lr"] == 0.5


def test_unknown_and_invalid_keys_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("chanels = 3\n")
    code, summary, _, err = run_cli(capsys, "--config", str(path), "bench")
    assert code == EXIT_CONFIG and "chanels" in summary["error"] and "chanels" in err
    code, summary, _, _ = run_cli(capsys, "gen-hulls", "--count", "many")
    assert code == EXIT_CONFIG and "count" in summary["error"]
    code, summary, _, _ = run_cli(capsys, "train", "--relations", "sideways")
    assert code == EXIT_CONFIG and "relations" in summary["error"]
    code, summary, _, _ = run_cli(capsys, "gen-hulls", "--d", "4", "--out-dir", str(tmp_path))
    assert code == EXIT_CONFIG
    code, summary, _, _ = run_cli(capsys, "lift", "sideways")
    assert code == EXIT_CONFIG
    code, summary, _, _ = run_cli(capsys, "train")
    assert code == EXIT_CONFIG and "dataset" in summary["error"]


def test_gen_hulls_is_byte_identical(tmp_path, capsys):
    paths = []
    for run in ("a", "b"):
        code, summary, _, _ = run_cli(capsys, "gen-hulls", "--d", "2", "--count", "4", "--seed", "7",
                                      "--out-dir", str(tmp_path / run))
        assert code == EXIT_OK and summary["count"] == 4
        paths.append(summary["path"])
    a, b = (open(p, "rb").read() for p in paths)
    assert a == b
    assert len(read_jsonl(paths[0])) == 4


def test_lift_vr_three_points(tmp_path, capsys):
    src = tmp_path / "points.txt"
    src.write_text("0 0\n1 0\n0 1\n")
    code, summary, _, _ = run_cli(capsys, "lift", "vr", "--eps", "1.5", "--max-dim", "2",
                                  "--input", str(src), "--out-dir", str(tmp_path))
    assert code == EXIT_OK and summary["counts"] == [3, 3, 1] and summary["total"] == 7
    cx = SimplicialComplex.from_text(open(summary["path"]).read())
    assert cx.counts() == [3, 3, 1]


def test_lift_other_methods_and_flatten(tmp_path, capsys):
    graph = tmp_path / "graph.json"
    graph.write_text(json.dumps({"vertex_count": 4, "edges": [[0, 1], [1, 2], [0, 2], [2, 3]]}))
    code, summary, _, _ = run_cli(capsys, "lift", "clique", "--input", str(graph), "--out-dir", str(tmp_path))
    assert code == EXIT_OK and summary["counts"] == [4, 4, 1]
    manual = tmp_path / "manual.json"
    manual.write_text(json.dumps({"vertex_count": 3, "simplices": [[0, 1, 2]]}))
    code, summary, _, _ = run_cli(capsys, "lift", "manual", "--input", str(manual),
                                  "--output", str(tmp_path / "tri.txt"))
    assert code == EXIT_OK and summary["counts"] == [3, 3, 1]
    code, summary, _, _ = run_cli(capsys, "flatten", "--input", str(tmp_path / "tri.txt"),
                                  "--relations", "boundary,coboundary,upper,lower", "--out-dir", str(tmp_path))
    assert code == EXIT_OK and summary["records"] == 36
    assert summary["per_relation"] == {"boundary": 9, "coboundary": 9, "upper": 12, "lower": 6}
    pts = tmp_path / "pts.json"
    pts.write_text(json.dumps({"points": [[0, 0], [2, 0]]}))
    code, summary, _, _ = run_cli(capsys, "lift", "cech", "--eps", "1", "--input", str(pts), "--out-dir", str(tmp_path))
    assert code == EXIT_OK and summary["counts"] == [2, 1]
    code, summary, _, _ = run_cli(capsys, "lift", "clique", "--input", str(pts))
    assert code == EXIT_CONFIG


def test_train_and_eval(tmp_path, capsys):
    code, gen, _, _ = run_cli(capsys, "gen-hulls", "--count", "20", "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    common = ["--dataset", gen["path"], "--channels", "4", "--layers", "1", "--split", "14,3,3"]
    code, summary, _, _ = run_cli(capsys, "train", *common, "--steps", "6", "--eval-every", "3",
                                  "--batch-size", "4", "--out-dir", str(tmp_path / "run"))
    assert code == EXIT_OK
    assert summary["steps_run"] == 6 and set(summary["test"]) == {"mse", "baseline_mse"}
    log = (tmp_path / "run" / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,train_loss,val_metric,seconds_per_step" and len(log) == 4
    code, ev, _, _ = run_cli(capsys, "eval", *common, "--checkpoint", summary["checkpoint"], "--rotate", "true")
    assert code == EXIT_OK and ev["count"] == 3
    assert abs(ev["scores"]["mse"] - summary["test"]["mse"]) < 1e-12
    assert abs(ev["scores"]["mse"] - ev["transformed_scores"]["mse"]) < 1e-9


def test_train_trajectories(tmp_path, capsys):
    code, gen, _, _ = run_cli(capsys, "gen-trajectories", "--count", "6", "--n-points", "4",
                              "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    code, summary, _, _ = run_cli(capsys, "train", "--dataset", gen["path"], "--channels", "4", "--layers", "1",
                                  "--steps", "2", "--batch-size", "2", "--split", "4,1,1",
                                  "--out-dir", str(tmp_path / "run"))
    assert code == EXIT_OK and {"mse", "ade", "fde"} <= set(summary["test"])


def test_nan_training_exits_3(tmp_path, capsys):
    hulls = gen_hulls(6, 3)
    hulls[0].volume = float("nan")
    path = tmp_path / "bad.jsonl"
    write_jsonl(path, hulls)
    code, summary, _, err = run_cli(capsys, "train", "--dataset", str(path), "--channels", "4", "--layers", "1",
                                    "--steps", "3", "--split", "6,0,0", "--out-dir", str(tmp_path))
    assert code == EXIT_NUMERIC and "non-finite" in summary["error"] and err


def test_verify_equivariance_small(tmp_path, capsys):
    code, summary, _, _ = run_cli(capsys, "verify-equivariance", "--d", "2", "--trials", "3",
                                  "--out-dir", str(tmp_path))
    assert code == EXIT_OK and summary["passed"] and summary["overall"] < 1e-7
    assert set(summary["max_relative_error"]) >= {"MVLinear", "CSMPN_scalar"}
    assert json.loads((tmp_path / "equivariance.json").read_text())["trials"] == 3


def test_bench_command(tmp_path, capsys):
    code, summary, _, _ = run_cli(capsys, "bench", "--channels", "4", "--layers", "1", "--n-batches", "2",
                                  "--warmup", "0", "--out-dir", str(tmp_path))
    assert code == EXIT_OK and summary["shared"]["parameters"] < summary["separate"]["parameters"]


def test_split_indices():
    assert split_indices(10, ()) == (slice(0, 8), slice(8, 9), slice(9, 10))
    with pytest.raises(ValueError):
        split_indices(5, (4, 1, 1))


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "csmpn.cli", "gen-hulls", "--count", "2", "--d", "2",
                           "--out-dir", str(tmp_path)], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["count"] == 2
