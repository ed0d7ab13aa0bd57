"""Command-line entry point: ``csmgan <subcommand> ...``.

Subcommands: gen-models, build-dataset, train, eval, hpo, export-scatter.
Exit codes: 0 success, 1 usage, 2 validation (bad config, missing input), 3 runtime failure.

Run directory layout (train, hpo)::

    config.echo        effective configuration (YAML)
    versions.json      package/python/numpy versions and seeds
    epochs.csv         one row per epoch (train)
    checkpoints/       last.cxck (rolling, atomic) and final.cxck
    hpo.csv            ranked grid results (hpo)
    run.log            human-readable log with timestamps
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from . import acoustics as ac
from . import tasks
from .cxnn import ActivationSpec
from .gan import GanArchitecture, GanModel, TrainConfig, train_loop, train_rng

log = logging.getLogger("csmgan")

THREADS_ENV = "CSMGAN_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration or input; maps to exit code 2."""


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SCHEMA = {
    "mode": str,
    "scale": str,
    "task": int,
    "architecture": {"n_gen": int, "n_dis": int, "n_den": int, "n_lay": int, "activation": dict},
    "optimizer": {"lr_gen": float, "lr_dis": float, "batch_size": int, "epochs": int,
                  "lam": float, "kappa": float, "d_clamp": float, "checkpoint_every": int},
    "noise": {"sigma": float},
    "seeds": {"models": int, "init": int, "train": int},
    "data": {"n_train": int, "n_test": int},
    "hpo": {"subset": int, "budget": int},
    "paths": {"dataset": str, "checkpoint_dir": str, "report": str},
}
_GRID_KEYS = ("n_gen", "n_dis", "n_den", "n_lay")


@dataclass
class RunConfig:
    mode: str = "train"
    scale: str = "desk"
    task: int = 1
    architecture: GanArchitecture | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: dict = field(default_factory=lambda: {"models": 0, "init": 0, "train": 0})
    n_train: int | None = None
    n_test: int | None = None
    checkpoint_every: int = 1
    hpo_subset: int | None = None
    hpo_budget: int = 20
    hpo_restrict: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    @property
    def profile(self) -> tasks.ScaleProfile:
        p = tasks.get_profile(self.scale)
        return p.with_sizes(self.n_train or p.n_train, self.n_test or p.n_test)

    def to_dict(self) -> dict:
        arch = self.architecture
        tc = self.train
        d = {
            "mode": self.mode,
            "scale": self.scale,
            "task": self.task,
            "architecture": None if arch is None else {
                "n_gen": arch.n_gen, "n_dis": arch.n_dis, "n_den": arch.n_den, "n_lay": arch.n_lay,
                "activation": arch.activation.to_dict()},
            "optimizer": {"lr_gen": tc.lr_gen, "lr_dis": tc.lr_dis, "batch_size": tc.batch_size,
                          "epochs": tc.epochs, "lam": tc.lam, "kappa": tc.kappa, "d_clamp": tc.d_clamp,
                          "checkpoint_every": self.checkpoint_every},
            "noise": {"sigma": tc.noise_sigma},
            "seeds": dict(self.seeds),
            "data": {"n_train": self.profile.n_train, "n_test": self.profile.n_test},
            "paths": dict(self.paths),
        }
        if self.mode == "hpo":
            d["architecture"] = {k: list(v) if not isinstance(v, list) else v for k, v in self.hpo_restrict.items()}
            d["hpo"] = {"subset": self.hpo_subset, "budget": self.hpo_budget}
        return d


def _check_type(key: str, value, typ):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, typ):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}")
    return value


def _check_keys(data: dict, schema: dict, prefix: str = "") -> None:
    for key in data:
        if key not in schema:
            raise ConfigError(f"unknown configuration key {prefix + str(key)!r}")
        if isinstance(schema[key], dict):
            if data[key] is None:
                continue
            if not isinstance(data[key], dict):
                raise ConfigError(f"{prefix + key}: expected a mapping")
            _check_keys(data[key], schema[key], prefix + key + ".")


def _activation(key: str, d) -> ActivationSpec:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{key}: expected a mapping with 'kind'")
    kind = d["kind"]
    allowed = {"modrelu": {"kind", "b"}, "cardioid": {"kind", "alpha"}}
    if kind not in allowed:
        raise ConfigError(f"{key}.kind: must be 'modrelu' or 'cardioid', got {kind!r}")
    extra = set(d) - allowed[kind]
    if extra:
        raise ConfigError(f"unknown configuration key {key + '.' + sorted(extra)[0]!r}")
    if kind == "modrelu":
        return ActivationSpec("modrelu", b=_check_type(key + ".b", d.get("b", -0.25), float))
    alpha = _check_type(key + ".alpha", d.get("alpha", 0.5), float)
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"{key}.alpha: must lie in [0, 1], got {alpha}")
    return ActivationSpec("cardioid", alpha=alpha)


def _positive(key: str, v, strict: bool = True):
    if (v <= 0) if strict else (v < 0):
        raise ConfigError(f"{key}: must be {'positive' if strict else 'non-negative'}, got {v}")
    return v


def parse_config(data: dict | None, source: str = "<config>") -> RunConfig:
    """Validate a parsed mapping and apply defaults."""
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    _check_keys(data, _SCHEMA)
    sec = {k: (data.get(k) or {}) for k, v in _SCHEMA.items() if isinstance(v, dict)}

    mode = _check_type("mode", data.get("mode", "train"), str)
    if mode not in ("train", "hpo"):
        raise ConfigError(f"mode: must be 'train' or 'hpo', got {mode!r}")
    scale = _check_type("scale", data.get("scale", "desk"), str)
    if scale not in tasks.PROFILES:
        raise ConfigError(f"scale: must be one of {sorted(tasks.PROFILES)}, got {scale!r}")
    task = _check_type("task", data.get("task", 1), int)
    if task not in tasks.TASK_IDS:
        raise ConfigError(f"task: must be one of {tasks.TASK_IDS}, got {task}")
    profile = tasks.get_profile(scale)

    opt = sec["optimizer"]
    lr_gen = _positive("optimizer.lr_gen", _check_type("optimizer.lr_gen", opt.get("lr_gen", profile.lr), float))
    lr_dis = _positive("optimizer.lr_dis", _check_type("optimizer.lr_dis", opt.get("lr_dis", profile.lr), float))
    kappa = _check_type("optimizer.kappa", opt.get("kappa", 0.9), float)
    if not 0.0 <= kappa <= 1.0:
        raise ConfigError(f"optimizer.kappa: must lie in [0, 1], got {kappa}")
    seeds = {k: _check_type(f"seeds.{k}", sec["seeds"].get(k, 0), int) for k in ("models", "init", "train")}
    for k, v in seeds.items():
        if v < 0:
            raise ConfigError(f"seeds.{k}: must be non-negative, got {v}")
    train = TrainConfig(
        batch_size=_positive("optimizer.batch_size", _check_type("optimizer.batch_size", opt.get("batch_size", 16), int)),
        lam=_positive("optimizer.lam", _check_type("optimizer.lam", opt.get("lam", 200.0), float)),
        kappa=kappa,
        lr_gen=lr_gen,
        lr_dis=lr_dis,
        noise_sigma=_positive("noise.sigma", _check_type("noise.sigma", sec["noise"].get("sigma", 1e-2), float), False),
        epochs=_positive("optimizer.epochs", _check_type("optimizer.epochs", opt.get("epochs", 100), int), False),
        seed=seeds["train"],
        d_clamp=_positive("optimizer.d_clamp", _check_type("optimizer.d_clamp", opt.get("d_clamp", 1e-7), float)),
    )
    ckpt_every = _positive("optimizer.checkpoint_every",
                           _check_type("optimizer.checkpoint_every", opt.get("checkpoint_every", 1), int))
    n_train = sec["data"].get("n_train")
    n_test = sec["data"].get("n_test")
    if n_train is not None:
        _positive("data.n_train", _check_type("data.n_train", n_train, int))
    if n_test is not None:
        _positive("data.n_test", _check_type("data.n_test", n_test, int))
    paths = {k: _check_type(f"paths.{k}", v, str) for k, v in sec["paths"].items()}

    cfg = RunConfig(mode=mode, scale=scale, task=task, train=train, seeds=seeds, n_train=n_train,
                    n_test=n_test, checkpoint_every=ckpt_every, paths=paths)
    arch = sec["architecture"]
    if mode == "hpo":
        restrict = {}
        grids = {"n_gen": tasks.N_GEN_GRID, "n_dis": tasks.N_DIS_GRID, "n_den": tasks.N_DEN_GRID,
                 "n_lay": tasks.N_LAY_GRID}
        for key in _GRID_KEYS:
            if key in arch:
                vals = arch[key] if isinstance(arch[key], list) else [arch[key]]
                vals = [_check_type(f"architecture.{key}", v, int) for v in vals]
                bad = [v for v in vals if v not in grids[key]]
                if bad:
                    raise ConfigError(f"architecture.{key}: {bad[0]} is not on the search grid {grids[key]}")
                restrict[key] = vals
        if "activation" in arch:
            spec = _activation("architecture.activation", arch["activation"])
            if spec not in tasks.ACTIVATION_GRID:
                raise ConfigError(f"architecture.activation: {spec.describe()} is not on the search grid")
            restrict["activation"] = [spec]
        for key in ("lr_gen", "lr_dis"):
            if key in opt and opt[key] not in tasks.LR_GRID:
                raise ConfigError(f"optimizer.{key}: {opt[key]} is not on the search grid {tasks.LR_GRID}")
            if key in opt:
                restrict[key] = [float(opt[key])]
        cfg.hpo_restrict = restrict
        hpo = sec["hpo"]
        if "subset" in hpo:
            cfg.hpo_subset = _positive("hpo.subset", _check_type("hpo.subset", hpo["subset"], int))
        cfg.hpo_budget = _positive("hpo.budget", _check_type("hpo.budget", hpo.get("budget", 20), int))
    else:
        if sec["hpo"]:
            raise ConfigError("hpo: section only valid with mode: hpo")
        kw = {}
        for key in _GRID_KEYS:
            if key in arch:
                kw[key] = _positive(f"architecture.{key}", _check_type(f"architecture.{key}", arch[key], int))
        if "activation" in arch:
            kw["activation"] = _activation("architecture.activation", arch["activation"])
        cfg.architecture = profile.architecture(**kw)
    return cfg


def load_config(path) -> RunConfig:
    """Read and validate a YAML run configuration."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark is not None else str(path)
        context = ""
        if mark is not None:
            lines = text.splitlines()
            if 0 <= mark.line < len(lines):
                context = f"\n    {lines[mark.line]}\n    {' ' * mark.column}^"
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: parse error: {problem}{context}") from None
    return parse_config(data, str(path))


def echo_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)


# ---------------------------------------------------------------------------
# run-directory helpers
# ---------------------------------------------------------------------------


def _timestamped(root: Path, kind: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    path = root / f"{stamp}-{kind}"
    n = 1
    while path.exists():
        n += 1
        path = root / f"{stamp}-{kind}-{n}"
    return path


def _versions(cfg: RunConfig | None = None) -> dict:
    d = {"csmgan": __version__, "python": platform.python_version(), "numpy": np.__version__,
         "yaml": yaml.__version__}
    if cfg is not None:
        d["seeds"] = dict(cfg.seeds)
    return d


def _write_atomic(path: Path, data: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(data)
    os.replace(tmp, path)


def _save_atomic(model: GanModel, path: Path, extra: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    model.save(tmp, extra)
    os.replace(tmp, path)


def _attach_log(run_dir: Path) -> logging.Handler:
    h = logging.FileHandler(run_dir / "run.log")
    h.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    logging.getLogger().addHandler(h)
    return h


def _dataset_paths(path: Path) -> tuple[Path, Path]:
    return path / "train.csmd", path / "test.csmd"


def _dataset_digest(train: tasks.TaskDataset, test: tasks.TaskDataset) -> str:
    h = hashlib.sha256()
    for ds in (train, test):
        for arr in (ds.model_indices, ds.X, ds.Y):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _load_split(path) -> tuple[tasks.TaskDataset, tasks.TaskDataset]:
    path = Path(path)
    train_p, test_p = _dataset_paths(path)
    if not train_p.is_file() or not test_p.is_file():
        raise ConfigError(f"dataset directory {path} lacks train.csmd/test.csmd")
    return tasks.load_dataset(train_p), tasks.load_dataset(test_p)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_models(args) -> int:
    if args.count < 0 or args.start < 0:
        raise ConfigError("--count and --start must be non-negative")
    models = tasks.sample_models(args.seed, args.start, args.count)
    Path(args.out).write_text(ac.format_models(models))
    print(f"wrote {len(models)} models to {args.out}")
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    profile = tasks.get_profile(args.scale)
    profile = profile.with_sizes(args.n_train or profile.n_train, args.n_test or profile.n_test)
    models = None
    if args.models:
        mpath = Path(args.models)
        if not mpath.is_file():
            raise ConfigError(f"model file not found: {mpath}")
        models = ac.parse_models(mpath.read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = tasks.build_task_split(args.task, profile, args.seed, workers=args.workers, models=models)
    train_p, test_p = _dataset_paths(out)
    tasks.save_dataset(train, train_p)
    tasks.save_dataset(test, test_p)
    print(f"task {args.task} ({tasks.TASK_NAMES[args.task]}): {len(train)} train / {len(test)} test pairs "
          f"of shape {profile.in_shape} -> {out}")
    return EXIT_OK


EPOCH_COLUMNS = ("epoch", "loss_d", "loss_g", "trafo", "g_acc")


def _read_epoch_rows(path: Path) -> list[list[str]]:
    if not path.is_file():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[1:]


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else parse_config({})
    if cfg.mode != "train":
        raise ConfigError("train requires a config with mode: train")
    if args.task is not None:
        cfg.task = args.task
    if args.epochs is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    dataset = args.dataset or cfg.paths.get("dataset")
    run_dir = args.checkpoint_dir or cfg.paths.get("checkpoint_dir")
    run_dir = Path(run_dir) if run_dir else _timestamped(Path("runs"), f"train-task{cfg.task}")
    cfg.paths = {**cfg.paths, "checkpoint_dir": str(run_dir)}

    if dataset:
        train, test = _load_split(dataset)
        cfg.paths["dataset"] = str(dataset)
    else:
        train, test = tasks.build_task_split(cfg.task, cfg.profile, cfg.seeds["models"], workers=args.workers)
    if train.task != cfg.task:
        raise ConfigError(f"dataset holds task {train.task}, config asks for task {cfg.task}")
    arch = replace(cfg.architecture, in_shape=tuple(train.X.shape[1:]))
    cfg.architecture = arch

    ckpt_dir = run_dir / "checkpoints"
    last = ckpt_dir / "last.cxck"
    epochs_csv = run_dir / "epochs.csv"
    echo = echo_config(cfg)
    if last.exists():
        if not args.resume:
            raise ConfigError(f"{run_dir} already holds a checkpoint; pass --resume to continue it")
        if (run_dir / "config.echo").read_text() != echo:
            raise ConfigError(f"{run_dir}: effective config differs from the one the run started with")
        model, meta = GanModel.load(last)
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
        rows = [r for r in _read_epoch_rows(epochs_csv) if int(r[0]) <= model.epoch]
        log.info("resuming %s at epoch %d", run_dir, model.epoch)
    else:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        _write_atomic(run_dir / "config.echo", echo)
        _write_atomic(run_dir / "versions.json", json.dumps(_versions(cfg), indent=2, sort_keys=True) + "\n")
        model = GanModel(arch, cfg.train.lr_gen, cfg.train.lr_dis, seed=cfg.seeds["init"])
        rng = train_rng(cfg.train)
        rows = []
    handler = _attach_log(run_dir)
    try:
        with open(epochs_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EPOCH_COLUMNS)
            w.writerows(rows)
        remaining = cfg.train.epochs - model.epoch
        meta_base = {"task": cfg.task, "seeds": cfg.seeds, "dataset_sha256": _dataset_digest(train, test)}

        def on_epoch(m, rec, r):
            with open(epochs_csv, "a", newline="") as fh:
                csv.writer(fh).writerow([rec["epoch"], repr(float(rec["loss_d"])), repr(float(rec["loss_g"])),
                                         repr(float(rec["trafo"])), repr(float(rec.get("g_acc", float("nan"))))])
            if m.epoch % cfg.checkpoint_every == 0 or m.epoch == cfg.train.epochs:
                _save_atomic(m, last, {**meta_base, "rng_state": r.bit_generator.state})
            print(f"epoch {rec['epoch']:4d}  L_D={rec['loss_d']:.4f}  L_G={rec['loss_g']:.4f}  "
                  f"g_acc={rec.get('g_acc', float('nan')):.4f}", flush=True)

        if remaining > 0:
            train_loop(model, train.X, train.Y, replace(cfg.train, epochs=remaining), test.X, test.Y,
                       rng=rng, on_epoch=on_epoch)
        _save_atomic(model, ckpt_dir / "final.cxck", {**meta_base, "rng_state": rng.bit_generator.state})
        report = tasks.evaluate(model, test, cfg.train.kappa)
        tasks.write_report(report, run_dir / "scatter.csv")
        print(f"final g_acc(G)={report.mean_G:.4f}  g_acc(Id)={report.mean_Id:.4f}  run dir: {run_dir}")
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model, meta = GanModel.load(ckpt)
    dpath = Path(args.dataset)
    ds = tasks.load_dataset(dpath) if dpath.is_file() else _load_split(dpath)[1]
    if tuple(ds.X.shape[1:]) != tuple(model.arch.in_shape):
        raise ConfigError(f"dataset tensors {ds.X.shape[1:]} do not match the model input {model.arch.in_shape}")
    report = tasks.evaluate(model, ds)
    tasks.write_report(report, args.report)
    summary = report.summary()
    Path(args.report).with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"task {ds.task}: g_acc(G)={summary['g_acc_G']:.4f}  g_acc(Id)={summary['g_acc_Id']:.4f}  "
          f"({summary['samples']} samples) -> {args.report}")
    return EXIT_OK


def cmd_hpo(args) -> int:
    cfg = load_config(args.grid) if args.grid else parse_config({"mode": "hpo"})
    if cfg.mode != "hpo":
        raise ConfigError("hpo requires a config with mode: hpo")
    subset = args.subset if args.subset is not None else cfg.hpo_subset
    budget = args.budget if args.budget is not None else cfg.hpo_budget
    if budget < 1:
        raise ConfigError("--budget must be >= 1")
    points = tasks.hpo_grid(cfg.hpo_restrict)
    chosen = tasks.select_subset(points, subset)
    run_dir = Path(args.out) if args.out else _timestamped(Path("runs"), "hpo")
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_atomic(run_dir / "config.echo", echo_config(cfg))
    _write_atomic(run_dir / "versions.json", json.dumps(_versions(cfg), indent=2, sort_keys=True) + "\n")
    if args.dataset:
        train, test = _load_split(args.dataset)
        if train.task != 1:
            raise ConfigError(f"the grid search runs on task 1; {args.dataset} holds task {train.task}")
    else:
        train, test = tasks.build_task_split(1, cfg.profile, cfg.seeds["models"], workers=args.workers)
    print(f"hpo: {len(chosen)} of {len(points)} grid points, {budget} epochs each, task {train.task}")
    results = tasks.run_hpo(chosen, train, test, replace(cfg.train, epochs=budget),
                            seed=cfg.seeds["init"], workers=args.workers)
    tasks.write_hpo_results(results, run_dir / "hpo.csv")
    for r in results:
        print(f"{r.rank:3d}  g_acc={r.g_acc:.4f}  [{r.grid_index}] {r.point.label()}")
    return EXIT_OK


def cmd_export_scatter(args) -> int:
    rpath = Path(args.report)
    if not rpath.is_file():
        raise ConfigError(f"report not found: {rpath}")
    n = tasks.export_scatter(tasks.read_report(rpath), args.out)
    print(f"wrote {n} rows to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _task_arg(s: str) -> int:
    try:
        return int(tasks.TaskId(int(s)))
    except ValueError:
        raise argparse.ArgumentTypeError(f"task must be one of {tasks.TASK_IDS}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="csmgan", description="Spherical-piston CSM simulation and complex GAN filtering.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help=f"cap on BLAS threads and worker processes (default: ${THREADS_ENV} or CPU count); "
                        "1 gives bit-reproducible runs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-models", help="sample a model set and write it as text")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_models)

    s = sub.add_parser("build-dataset", help="simulate a task's train/test CSM pairs")
    s.add_argument("--task", type=_task_arg, required=True)
    s.add_argument("--scale", choices=sorted(tasks.PROFILES), default="desk")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--models", help="model-set file from gen-models (default: sample from --seed)")
    s.add_argument("--n-train", type=int, default=None)
    s.add_argument("--n-test", type=int, default=None)
    s.add_argument("--out", required=True, help="output directory (train.csmd, test.csmd)")
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("train", help="train a GAN; the checkpoint dir doubles as the run directory")
    s.add_argument("--task", type=_task_arg, default=None)
    s.add_argument("--config")
    s.add_argument("--dataset", help="directory written by build-dataset")
    s.add_argument("--checkpoint-dir")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--resume", action="store_true", help="continue from checkpoints/last.cxck")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-sample g_acc of a checkpoint against the identity baseline")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True, help="dataset directory (test split) or .csmd file")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("hpo", help="train grid points on task 1 and rank them by test g_acc")
    s.add_argument("--grid", help="config with mode: hpo")
    s.add_argument("--subset", type=int, default=None)
    s.add_argument("--budget", type=int, default=None, help="epochs per grid point")
    s.add_argument("--dataset")
    s.add_argument("--out")
    s.set_defaults(func=cmd_hpo)

    s = sub.add_parser("export-scatter", help="per-sample (g_acc(G), g_acc(Id)) CSV from a report")
    s.add_argument("--report", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_scatter)
    return p


def _thread_cap(arg: int | None) -> int:
    if arg is not None:
        if arg < 1:
            raise UsageError("--threads must be >= 1")
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError(f"{THREADS_ENV} must be >= 1")
        return n
    return tasks.default_workers()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _thread_cap(args.threads)
    except UsageError as exc:
        print(f"csmgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args.workers = threads
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except ConfigError as exc:
        print(f"csmgan: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, ValueError) as exc:
        print(f"csmgan: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"csmgan: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
