import csv
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from csmgan import cli
from csmgan.gan import GanModel


def write_cfg(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


SMALL = {"scale": "desk", "task": 1, "data": {"n_train": 16, "n_test": 8},
         "optimizer": {"epochs": 3, "batch_size": 8}, "seeds": {"models": 0, "init": 1, "train": 2}}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "task1"
    assert cli.main(["--threads", "1", "build-dataset", "--task", "1", "--scale", "desk", "--seed", "0",
                     "--n-train", "16", "--n-test", "8", "--out", str(out)]) == 0
    return out


class TestConfig:
    def test_defaults(self):
        cfg = cli.parse_config({})
        assert (cfg.train.batch_size, cfg.train.lam, cfg.train.kappa) == (16, 200.0, 0.9)
        assert cfg.architecture.in_shape == (12, 12, 4) and cfg.train.noise_sigma == 1e-2
        echoed = yaml.safe_load(cli.echo_config(cfg))
        assert echoed["optimizer"]["batch_size"] == 16 and echoed["optimizer"]["lam"] == 200.0

    def test_unknown_key(self):
        with pytest.raises(cli.ConfigError, match="optimiser"):
            cli.parse_config({"optimiser": {}})
        with pytest.raises(cli.ConfigError, match="optimizer.learning_rate"):
            cli.parse_config({"optimizer": {"learning_rate": 1e-3}})

    def test_type_and_range(self):
        with pytest.raises(cli.ConfigError, match="optimizer.batch_size"):
            cli.parse_config({"optimizer": {"batch_size": "16"}})
        with pytest.raises(cli.ConfigError, match="optimizer.kappa"):
            cli.parse_config({"optimizer": {"kappa": 1.5}})
        with pytest.raises(cli.ConfigError, match="task"):
            cli.parse_config({"task": 7})

    def test_hpo_grid_membership(self):
        with pytest.raises(cli.ConfigError, match="n_gen: 48 is not on the search grid"):
            cli.parse_config({"mode": "hpo", "architecture": {"n_gen": 48}})
        cfg = cli.parse_config({"mode": "hpo", "architecture": {"n_lay": [1, 2]}, "hpo": {"budget": 3}})
        assert cfg.hpo_restrict == {"n_lay": [1, 2]} and cfg.hpo_budget == 3

    def test_parse_error_has_line(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("scale: desk\noptimizer:\n  epochs: [3\n")
        with pytest.raises(cli.ConfigError, match=r"bad.yaml:\d+:\d+: parse error"):
            cli.load_config(p)

    def test_missing_file_exit(self, tmp_path, capsys):
        assert cli.main(["train", "--config", str(tmp_path / "nope.yaml")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_usage_exit(self):
        assert cli.main(["--threads", "0", "export-scatter", "--report", "a", "--out", "b"]) == 1
        with pytest.raises(SystemExit) as exc:
            cli.main(["no-such-command"])
        assert exc.value.code == 1

    def test_thread_env(self, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "3")
        assert cli._thread_cap(None) == 3
        assert cli._thread_cap(1) == 1
        monkeypatch.setenv(cli.THREADS_ENV, "x")
        with pytest.raises(cli.UsageError):
            cli._thread_cap(None)


class TestPipeline:
    def test_gen_models_roundtrip(self, tmp_path):
        out = tmp_path / "models.txt"
        assert cli.main(["gen-models", "--seed", "4", "--count", "3", "--out", str(out)]) == 0
        from csmgan.acoustics import format_models, parse_models, sample_model
        expected = format_models([sample_model(4, i) for i in range(3)])
        assert out.read_text() == expected
        assert format_models(parse_models(expected)) == expected

    def test_dataset_from_model_file(self, tmp_path, dataset):
        models = tmp_path / "m.txt"
        cli.main(["gen-models", "--seed", "0", "--count", "24", "--out", str(models)])
        out = tmp_path / "d"
        assert cli.main(["--threads", "1", "build-dataset", "--task", "1", "--models", str(models),
                         "--n-train", "16", "--n-test", "8", "--out", str(out)]) == 0
        for name in ("train.csmd", "test.csmd"):
            assert (out / name).read_bytes() == (dataset / name).read_bytes()

    def test_train_eval_export(self, tmp_path, dataset):
        run = tmp_path / "run"
        cfg = write_cfg(tmp_path / "c.yaml", SMALL)
        assert cli.main(["--threads", "1", "train", "--config", str(cfg), "--dataset", str(dataset),
                         "--checkpoint-dir", str(run)]) == 0
        for name in ("config.echo", "versions.json", "epochs.csv", "run.log", "scatter.csv",
                     "checkpoints/last.cxck", "checkpoints/final.cxck"):
            assert (run / name).is_file(), name
        rows = list(csv.reader(open(run / "epochs.csv")))
        assert rows[0] == list(cli.EPOCH_COLUMNS) and [r[0] for r in rows[1:]] == ["1", "2", "3"]
        _, meta = GanModel.load(run / "checkpoints/final.cxck")
        assert meta["epoch"] == 3 and len(meta["dataset_sha256"]) == 64

        report = tmp_path / "report.csv"
        assert cli.main(["eval", "--checkpoint", str(run / "checkpoints/final.cxck"),
                         "--dataset", str(dataset), "--report", str(report)]) == 0
        assert len(report.read_text().splitlines()) == 1 + 8
        assert report.read_text() == (run / "scatter.csv").read_text()
        scatter = tmp_path / "scatter.csv"
        assert cli.main(["export-scatter", "--report", str(report), "--out", str(scatter)]) == 0
        assert scatter.read_text() == report.read_text()

    def test_existing_checkpoint_needs_resume(self, tmp_path, dataset):
        run = tmp_path / "run"
        cfg = write_cfg(tmp_path / "c.yaml", SMALL)
        args = ["--threads", "1", "train", "--config", str(cfg), "--dataset", str(dataset), "--checkpoint-dir", str(run)]
        assert cli.main(args) == 0
        assert cli.main(args) == 2
        assert cli.main(args + ["--resume", "--epochs", "4"]) == 2  # effective config changed

    def test_task_mismatch(self, tmp_path, dataset):
        cfg = write_cfg(tmp_path / "c.yaml", {**SMALL, "task": 2})
        assert cli.main(["train", "--config", str(cfg), "--dataset", str(dataset),
                         "--checkpoint-dir", str(tmp_path / "r")]) == 2

    def test_eval_missing_checkpoint(self, tmp_path, dataset):
        assert cli.main(["eval", "--checkpoint", str(tmp_path / "x.cxck"), "--dataset", str(dataset),
                         "--report", str(tmp_path / "r.csv")]) == 2

    def test_hpo(self, tmp_path, dataset):
        grid = write_cfg(tmp_path / "g.yaml", {"mode": "hpo", "architecture": {"n_gen": 32, "n_den": 512, "n_lay": 1},
                                               "optimizer": {"batch_size": 8}})
        out = tmp_path / "hpo"
        assert cli.main(["--threads", "1", "hpo", "--grid", str(grid), "--subset", "2", "--budget", "1",
                         "--dataset", str(dataset), "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out / "hpo.csv")))
        assert [r["rank"] for r in rows] == ["1", "2"]
        assert float(rows[0]["g_acc"]) >= float(rows[1]["g_acc"])


def _run(args, **kw):
    env = dict(os.environ, PYTHONHASHSEED="0")
    return subprocess.Popen([sys.executable, "-m", "csmgan", "--threads", "1"] + args, env=env,
                            stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, **kw)


@pytest.mark.slow
def test_kill_and_resume(tmp_path, dataset):
    data = dict(SMALL, optimizer={"epochs": 150, "batch_size": 8})
    cfg = write_cfg(tmp_path / "c.yaml", data)
    base = ["train", "--config", str(cfg), "--dataset", str(dataset)]

    ref = _run(base + ["--checkpoint-dir", str(tmp_path / "ref")])
    victim = _run(base + ["--checkpoint-dir", str(tmp_path / "run")])
    last = tmp_path / "run" / "checkpoints" / "last.cxck"
    deadline = time.time() + 120
    while time.time() < deadline and victim.poll() is None:
        if last.exists() and GanModel.load(last)[0].epoch >= 5:
            break
        time.sleep(0.05)
    assert victim.poll() is None, "run finished before it could be interrupted"
    victim.send_signal(signal.SIGKILL)
    victim.wait()

    model, meta = GanModel.load(last)  # the rolling checkpoint survives the kill
    assert 5 <= model.epoch < 150
    resumed = _run(base + ["--checkpoint-dir", str(tmp_path / "run"), "--resume"])
    assert resumed.wait(timeout=300) == 0, resumed.stderr.read().decode()
    assert ref.wait(timeout=300) == 0, ref.stderr.read().decode()
    for name in ("epochs.csv", "scatter.csv", "checkpoints/final.cxck", "checkpoints/last.cxck"):
        assert (tmp_path / "run" / name).read_bytes() == (tmp_path / "ref" / name).read_bytes(), name


def test_single_thread_reproducible(tmp_path, dataset):
    cfg = write_cfg(tmp_path / "c.yaml", SMALL)
    for name in ("a", "b"):
        assert cli.main(["--threads", "1", "train", "--config", str(cfg), "--dataset", str(dataset),
                         "--checkpoint-dir", str(tmp_path / name)]) == 0
    for name in ("epochs.csv", "checkpoints/final.cxck", "scatter.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
