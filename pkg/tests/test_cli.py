import csv
import json
from pathlib import Path

import numpy as np
import pytest

from pgot.cli import main

DESK_CONFIG = {
    "model": {
        "layers": 1,
        "width": 16,
        "slices": 4,
        "scales": 2,
        "heads": 2,
        "d": 2,
        "d_a": 1,
        "d_u": 1,
        "seed": 0,
    },
    "training": {"steps": 24, "lr": 1e-3},
}


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(DESK_CONFIG))
    return path


def run_gen(tmp_path, name="data", **overrides):
    out = tmp_path / name
    args = {
        "--task": "poisson2d",
        "--samples": "3",
        "--resolution": "12",
        "--seed": "7",
        "--out": str(out),
    }
    args.update(overrides)
    argv = ["gen"] + [x for pair in args.items() for x in pair]
    assert main(argv) == 0
    return out


class TestGen:
    def test_writes_files_and_manifest(self, tmp_path, capsys):
        out = run_gen(tmp_path)
        files = sorted(p.name for p in out.iterdir())
        assert "manifest.json" in files
        assert sum(f.endswith(".pgds") for f in files) == 3
        assert "3 poisson2d samples" in capsys.readouterr().out

    def test_deterministic_bytes(self, tmp_path):
        a = run_gen(tmp_path, "a")
        b = run_gen(tmp_path, "b")
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes()

    def test_zero_samples_usage_error(self, tmp_path):
        assert main(["gen", "--task", "poisson2d", "--samples", "0", "--out", str(tmp_path / "x")]) == 2

    def test_refuses_nonempty_dir_without_force(self, tmp_path):
        out = run_gen(tmp_path)
        argv = ["gen", "--task", "poisson2d", "--samples", "1", "--out", str(out)]
        assert main(argv) == 2
        assert main(argv + ["--force"]) == 0

    def test_help_exits_zero(self, capsys):
        for sub in ("gen", "train", "eval", "bench", "inspect"):
            with pytest.raises(SystemExit) as exc:
                main([sub, "--help"])
            assert exc.value.code == 0
            assert "--" in capsys.readouterr().out


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, config_path, capsys):
        data = run_gen(tmp_path)
        run_dir = tmp_path / "run"
        assert main(["train", "--config", str(config_path), "--data", str(data), "--out", str(run_dir)]) == 0
        out = capsys.readouterr().out
        json_line = [l for l in out.splitlines() if l.startswith("{")][0]
        report = json.loads(json_line)
        assert "final_train_rel_l2" in report
        assert (run_dir / "checkpoint.pgck").exists()
        assert (run_dir / "report.json").exists()

        assert main(["eval", "--checkpoint", str(run_dir / "checkpoint.pgck"), "--data", str(data)]) == 0
        out = capsys.readouterr().out
        json_line = [l for l in out.splitlines() if l.startswith("{")][0]
        metrics = json.loads(json_line)
        assert 0.0 <= metrics["rel_l2"]

    def test_dimension_mismatch_exit_2(self, tmp_path, config_path, capsys):
        data = run_gen(tmp_path, "pc", **{"--task": "pointcloud_stress", "--points": "64"})
        run_dir = tmp_path / "run"
        code = main(["train", "--config", str(config_path), "--data", str(data), "--out", str(run_dir)])
        assert code == 2
        assert "d_a" in capsys.readouterr().err

    def test_bad_config_json_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        assert main(["train", "--config", str(bad), "--data", "x", "--out", "y"]) == 2

    def test_corrupt_dataset_exit_3(self, tmp_path, config_path):
        data = run_gen(tmp_path)
        sample = next(p for p in data.iterdir() if p.suffix == ".pgds")
        sample.write_bytes(b"garbage")
        assert main(["train", "--config", str(config_path), "--data", str(data), "--out", str(tmp_path / "r")]) == 3

    def test_report_stable_under_seed(self, tmp_path, config_path):
        data = run_gen(tmp_path)
        reports = []
        for name in ("r1", "r2"):
            run_dir = tmp_path / name
            assert main(["train", "--config", str(config_path), "--data", str(data), "--out", str(run_dir)]) == 0
            reports.append((run_dir / "report.json").read_bytes())
        a, b = (json.loads(r) for r in reports)
        a.pop("wall_time_s")
        b.pop("wall_time_s")
        assert a == b


class TestBench:
    def test_csv_schema_and_dense_sibling(self, tmp_path, config_path):
        out = tmp_path / "bench.csv"
        assert main(["bench", "--config", str(config_path), "--sizes", "64,128", "--repeats", "3", "--out", str(out)]) == 0
        dense = tmp_path / "bench_dense.csv"
        assert dense.exists()
        for path in (out, dense):
            with open(path) as fh:
                rows = list(csv.reader(fh))
            assert rows[0] == ["n", "fwd_us_med", "fwd_us_min", "fwd_us_max", "fwdbwd_us_med", "peak_bytes", "config_hash"]
            assert [r[0] for r in rows[1:]] == ["64", "128"]

    def test_unsorted_sizes_rejected(self, tmp_path, config_path):
        assert main(["bench", "--config", str(config_path), "--sizes", "128,64", "--out", str(tmp_path / "b.csv")]) == 2


class TestInspect:
    def test_dump_contents(self, tmp_path, config_path):
        data = run_gen(tmp_path)
        run_dir = tmp_path / "run"
        assert main(["train", "--config", str(config_path), "--data", str(data), "--out", str(run_dir)]) == 0
        sample = sorted(p for p in data.iterdir() if p.suffix == ".pgds")[0]
        dump = tmp_path / "dump"
        assert main([
            "inspect",
            "--checkpoint", str(run_dir / "checkpoint.pgck"),
            "--sample", str(sample),
            "--out", str(dump),
        ]) == 0
        assignment = dump / "layer0_assignment.csv"
        gate = dump / "layer0_gate.csv"
        assert assignment.exists() and gate.exists()

        with open(assignment) as fh:
            rows = list(csv.DictReader(fh))
        weights = np.array([[float(r[f"a{j}"]) for j in range(4)] for r in rows])
        assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-5)

        with open(gate) as fh:
            rows = list(csv.DictReader(fh))
        values = np.array([[float(r[f"g{j}"]) for j in range(16)] for r in rows])
        assert np.all(values > 0.0) and np.all(values < 1.0)

        from pgot.data import read_sample

        src = read_sample(sample)
        coords = np.array([[float(r["x0"]), float(r["x1"])] for r in rows], dtype=np.float32)
        assert np.array_equal(coords, src.coords)
