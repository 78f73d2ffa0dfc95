"""End-to-end command line behavior: artifacts, config precedence, exit
codes, and byte-identical reruns."""

import os

import numpy as np
import pytest

from ftlenode.checkpoint import load_checkpoint
from ftlenode.cli import main
from ftlenode.data import load_csv
from ftlenode.presets import TRAIN_DEFAULTS
from ftlenode._backend import has_compiled

TINY_TRAIN = [
    "--n", "64", "--epochs", "2", "--batch", "32", "--seed", "1",
    "--lr", "0.003", "--t-end", "1.0",
]


def _read_cfg(path):
    entries = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            key, val = line.strip().split(" = ", 1)
            entries[key] = val
    return entries


def _tiny_ckpt(tmp_path, arch="ex2"):
    out = tmp_path / "t"
    rc = main(["train", "--arch", arch, *TINY_TRAIN, "--out-dir", str(out)])
    assert rc == 0
    return str(out / "model.ckpt")


def test_data_writes_csv_and_run_cfg(tmp_path):
    rc = main(["data", "--n", "60", "--seed", "3", "--out-dir", str(tmp_path)])
    assert rc == 0
    ds = load_csv(tmp_path / "moons.csv")
    assert len(ds) == 60
    cfg = _read_cfg(tmp_path / "run.cfg")
    assert cfg["command"] == "data"
    assert cfg["n"] == "60"
    assert cfg["seed"] == "3"
    # floats are echoed with full precision
    assert cfg["noise"] == "0.10000000000000001"


def test_data_split_files(tmp_path):
    rc = main(["data", "--n", "40", "--test-fraction", "0.25",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    assert len(load_csv(tmp_path / "moons.train.csv")) == 30
    assert len(load_csv(tmp_path / "moons.test.csv")) == 10


def test_train_artifacts_and_checkpoint_roundtrip(tmp_path, capsys):
    rc = main(["train", "--arch", "ex2", *TINY_TRAIN, "--out-dir", str(tmp_path)])
    assert rc == 0
    assert "epoch 2:" in capsys.readouterr().out
    model = load_checkpoint(tmp_path / "model.ckpt")
    assert model.t_end == 1.0
    assert model.field.schedule.n_blocks == 5
    with open(tmp_path / "train_log.csv", "r", encoding="ascii") as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0].startswith("epoch,")
    assert len(lines) == 3
    cfg = _read_cfg(tmp_path / "run.cfg")
    assert cfg["epochs"] == "2"
    assert cfg["t_end"] == "1"


def test_train_from_csv_data(tmp_path):
    rc = main(["data", "--n", "50", "--out-dir", str(tmp_path)])
    assert rc == 0
    rc = main([
        "train", "--arch", "ex2", *TINY_TRAIN,
        "--data", str(tmp_path / "moons.csv"), "--test-fraction", "0.5",
        "--out-dir", str(tmp_path / "run"),
    ])
    assert rc == 0
    assert (tmp_path / "run" / "model.ckpt").exists()


def test_train_defaults_resolve_per_architecture(tmp_path):
    for arch in ("ex1", "ex2"):
        out = tmp_path / arch
        rc = main(["train", "--arch", arch, "--n", "64", "--epochs", "1",
                   "--t-end", "1.0", "--out-dir", str(out)])
        assert rc == 0
        cfg = _read_cfg(out / "run.cfg")
        want = TRAIN_DEFAULTS[arch]
        assert float(cfg["lr"]) == want["lr"]
        assert int(cfg["seed"]) == want["seed"]
        assert int(cfg["batch"]) == want["batch_size"]
        assert cfg["epochs"] == "1"


def test_evolve_trajectory_rows(tmp_path):
    ckpt = _tiny_ckpt(tmp_path)
    out = tmp_path / "e"
    rc = main(["evolve", "--ckpt", ckpt, "--x0", "0.3:0.4",
               "--out-dir", str(out)])
    assert rc == 0
    rows = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    assert rows.shape == (11, 3)
    assert rows[0, 0] == 0.0
    assert rows[-1, 0] == 1.0
    assert np.array_equal(rows[0, 1:], [0.3, 0.4])


def test_ftle_artifacts_and_modes(tmp_path):
    ckpt = _tiny_ckpt(tmp_path)
    out = tmp_path / "f"
    rc = main(["ftle", "--ckpt", ckpt, "--res", "8", "--ppm",
               "--out-dir", str(out)])
    assert rc == 0
    for ext in (".csv", ".pgm", ".ppm"):
        assert (out / f"field_f0{ext}").exists()
    out2 = tmp_path / "g"
    rc = main(["ftle", "--ckpt", ckpt, "--res", "6", "--mode", "growing",
               "--sample-every", "5", "--out-dir", str(out2)])
    assert rc == 0
    # 10 steps sampled every 5, plus the final frame
    assert (out2 / "field_f0.csv").exists()
    assert (out2 / "field_f1.csv").exists()
    assert not (out2 / "field_f2.csv").exists()
    assert not (out2 / "field_f0.ppm").exists()


def test_analyze_report(tmp_path, capsys):
    ckpt = _tiny_ckpt(tmp_path)
    capsys.readouterr()
    out = tmp_path / "a"
    rc = main(["analyze", "--ckpt", ckpt, "--res", "8", "--eps", "0.2",
               "--tol", "2", "--out-dir", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    with open(out / "report.txt", "r", encoding="ascii") as fh:
        assert fh.read() == text
    assert "margin_area=" in text
    assert "ridge_nodes=" in text
    assert (out / "pred.csv").exists()
    assert (out / "margin.pgm").exists()
    assert (out / "ridges.csv").exists()
    assert (out / "lmax.pgm").exists()


def test_analyze_skip_ridges_and_baseline_ratio(tmp_path, capsys):
    ckpt = _tiny_ckpt(tmp_path)
    capsys.readouterr()
    out = tmp_path / "a2"
    rc = main(["analyze", "--ckpt", ckpt, "--baseline", ckpt, "--res", "6",
               "--skip-ridges", "--out-dir", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "ridge_nodes=" not in text
    assert "margin_area_ratio=1" in text
    assert not (out / "ridges.csv").exists()


def test_config_file_precedence(tmp_path):
    cfg_file = tmp_path / "settings.cfg"
    cfg_file.write_text("n = 50  # file beats default\nseed = 7\n")
    rc = main(["data", "--config", str(cfg_file), "--seed", "9",
               "--out-dir", str(tmp_path)])
    assert rc == 0
    cfg = _read_cfg(tmp_path / "run.cfg")
    # file overrides the default, the flag overrides the file
    assert cfg["n"] == "50"
    assert cfg["seed"] == "9"
    assert len(load_csv(tmp_path / "moons.csv")) == 50


def test_config_file_errors(tmp_path, capsys):
    bad_key = tmp_path / "bad_key.cfg"
    bad_key.write_text("resolution = 10\n")
    assert main(["data", "--config", str(bad_key)]) == 2
    assert "unknown config key" in capsys.readouterr().err
    bad_line = tmp_path / "bad_line.cfg"
    bad_line.write_text("just words\n")
    assert main(["data", "--config", str(bad_line)]) == 2
    assert "expected key = value" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["repro", "nosuchfigure", "--out-dir", str(tmp_path)]) == 2
    assert "valid ids" in capsys.readouterr().err
    assert main(["ftle", "--res", "8"]) == 2
    assert "checkpoint" in capsys.readouterr().err
    assert main(["evolve", "--ckpt", str(tmp_path / "missing.ckpt")]) == 2
    capsys.readouterr()
    ckpt = _tiny_ckpt(tmp_path)
    assert main(["ftle", "--ckpt", ckpt, "--bounds", "2:-2:0:1"]) == 2
    assert main(["analyze", "--ckpt", ckpt, "--res", "1"]) == 2
    capsys.readouterr()


def test_divergent_training_exits_3(tmp_path, capsys):
    rc = main(["train", "--arch", "ex2", "--n", "16", "--epochs", "2",
               "--batch", "8", "--seed", "0", "--lr", "1e160",
               "--t-end", "1.0", "--out-dir", str(tmp_path)])
    assert rc == 3
    assert "non-finite loss/gradient" in capsys.readouterr().err


def test_mode_mismatch_exits_4(tmp_path, capsys):
    ckpt = _tiny_ckpt(tmp_path)
    # 0.5 lies inside a parameter block of the t_end=1.0 five-block model
    rc = main(["ftle", "--ckpt", ckpt, "--mode", "subinterval",
               "--t-end", "0.5", "--res", "4", "--out-dir", str(tmp_path / "m")])
    assert rc == 4
    capsys.readouterr()


def test_bench_writes_timings(tmp_path, capsys):
    rc = main(["bench", "--arch", "ex2", "--res", "6", "--repeats", "1",
               "--t-end", "1.0", "--out-dir", str(tmp_path)])
    assert rc == 0
    text = capsys.readouterr().out
    with open(tmp_path / "bench.txt", "r", encoding="ascii") as fh:
        assert fh.read() == text
    assert "python_flow_seconds=" in text
    assert "python_tangent_seconds=" in text
    if has_compiled():
        assert "compiled_flow_seconds=" in text
        assert "flow_speedup=" in text
        assert "tangent_speedup=" in text


def _tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_repro_reruns_byte_identical(tmp_path, monkeypatch):
    trees = []
    for sub in ("one", "two"):
        workdir = tmp_path / sub
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        rc = main(["repro", "fig2", "--epochs", "2", "--res", "10",
                   "--n", "64", "--probes", "4"])
        assert rc == 0
        trees.append(_tree_bytes(workdir / "fig2"))
    assert sorted(trees[0]) == sorted(trees[1])
    for name in trees[0]:
        assert trees[0][name] == trees[1][name], name


def test_repro_paired_figure_artifacts(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    rc = main(["repro", "fig8", "--epochs", "2", "--res", "8",
               "--n", "64", "--probes", "4"])
    assert rc == 0
    text = capsys.readouterr().out
    for key in (
        "baseline_test_acc=", "regularized_test_acc=",
        "baseline_margin_area=", "regularized_margin_area=",
        "baseline_mean_lmax=", "regularized_mean_lmax=",
        "baseline_adversarial_rate=", "regularized_adversarial_rate=",
    ):
        assert key in text
    for name in ("baseline.ckpt", "regularized.ckpt", "baseline_log.csv",
                 "regularized_log.csv", "baseline_margin.pgm",
                 "regularized_margin.pgm", "data.csv", "report.txt"):
        assert (tmp_path / "fig8" / name).exists()
