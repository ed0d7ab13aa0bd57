"""Transformation-task datasets, evaluation against the identity baseline, and the HPO driver.

A task pairs two simulation variants of the same acoustic model: the input
CSM ``x`` carries some effect (ambient sound, reflections, directivity) and
the target ``y`` does not. Train and test sets use disjoint model index
ranges of one model set.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import acoustics as ac
from .csm import KAPPA, CsmRecord, build_csm, csm_distance_batch, normalize_slices, read_csmd, write_csmd
from .cxnn import ActivationSpec
from .gan import (
    ACTIVATION_GRID,
    LR_GRID,
    N_DEN_GRID,
    N_DIS_GRID,
    N_GEN_GRID,
    N_LAY_GRID,
    GanArchitecture,
    GanModel,
    TrainConfig,
    evaluate_accuracy,
    train_loop,
    train_rng,
)

log = logging.getLogger(__name__)

TASK_IDS = (1, 2, 3, 4, 5)
TASK_NAMES = {
    1: "auto-encoder",
    2: "ambient removal",
    3: "reflection removal",
    4: "directivity removal",
    5: "combined removal",
}


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskId:
    id: int

    def __post_init__(self):
        if isinstance(self.id, bool) or not isinstance(self.id, (int, np.integer)) or self.id not in TASK_IDS:
            raise ValueError(f"task id must be one of {TASK_IDS}, got {self.id!r}")

    def __int__(self) -> int:
        return int(self.id)


def _task(task) -> int:
    return int(task if isinstance(task, TaskId) else TaskId(task))


def task_variants(task) -> tuple[ac.SimulationVariant, ac.SimulationVariant]:
    """Input and target variants; everything not toggled stays monopole, dry and quiet."""
    t = _task(task)
    base = ac.BASELINE
    if t == 1:
        return base, base
    if t == 2:
        return ac.SimulationVariant(ambient=True), base
    if t == 3:
        return ac.SimulationVariant(reflections=True), base
    if t == 4:
        return ac.SimulationVariant(directivity=True), base
    return ac.SimulationVariant(True, True, True), base


# ---------------------------------------------------------------------------
# scale profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleProfile:
    """Tensor dimensions, set sizes and default architecture for one scale."""

    name: str
    n_mics: int
    bin_indices: tuple[int, ...]
    n_train: int
    n_test: int
    n_gen: int
    n_dis: int
    n_den: int
    n_lay: int = 1
    activation: ActivationSpec = field(default_factory=lambda: ActivationSpec("cardioid", alpha=0.5))
    lr: float = 2e-5

    @property
    def n_bins(self) -> int:
        return len(self.bin_indices)

    @property
    def in_shape(self) -> tuple[int, int, int]:
        return (self.n_mics, self.n_mics, self.n_bins)

    def array(self) -> ac.ArrayGeometry:
        return ac.paper_array(self.n_mics)

    def grid(self) -> ac.FrequencyGrid:
        return ac.FrequencyGrid.from_indices(self.bin_indices)

    def architecture(self, **overrides) -> GanArchitecture:
        kw = dict(n_gen=self.n_gen, n_dis=self.n_dis, n_den=self.n_den, n_lay=self.n_lay,
                  activation=self.activation, in_shape=self.in_shape)
        kw.update(overrides)
        return GanArchitecture(**kw)

    def with_sizes(self, n_train: int, n_test: int) -> "ScaleProfile":
        return replace(self, n_train=int(n_train), n_test=int(n_test))


PAPER = ScaleProfile("paper", n_mics=48, bin_indices=tuple(range(10, 26)), n_train=2560, n_test=512,
                     n_gen=64, n_dis=16, n_den=512)
DESK = ScaleProfile("desk", n_mics=12, bin_indices=(10, 11, 12, 13), n_train=256, n_test=64,
                    n_gen=16, n_dis=16, n_den=64)
PROFILES = {"paper": PAPER, "desk": DESK}


def get_profile(name: str) -> ScaleProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown scale profile {name!r}; choose from {sorted(PROFILES)}") from None


# ---------------------------------------------------------------------------
# simulation with variant caching
# ---------------------------------------------------------------------------


def simulate_csm(model: ac.AcousticModel, profile: ScaleProfile, variant: ac.SimulationVariant) -> np.ndarray:
    """Normalised CSM tensor ``(n_mics, n_mics, n_bins)`` of one model under one variant."""
    p = ac.simulate_pressures(model, profile.array(), profile.grid(), variant)
    return normalize_slices(build_csm(p))


class SimulationCache:
    """Memo of normalised CSMs keyed by (seed, index, variant flags, profile)."""

    def __init__(self):
        self._store: dict[tuple, np.ndarray] = {}
        self.hits = 0
        self.misses = 0

    def _key(self, model, profile, variant):
        return (model.seed, model.index, variant.flags, profile.name, profile.n_mics, profile.bin_indices)

    def __contains__(self, item) -> bool:
        return self._key(*item) in self._store

    def __len__(self) -> int:
        return len(self._store)

    def get(self, model, profile, variant) -> np.ndarray:
        key = self._key(model, profile, variant)
        if key in self._store:
            self.hits += 1
        else:
            self.misses += 1
            self._store[key] = simulate_csm(model, profile, variant)
        return self._store[key]

    def put(self, model, profile, variant, value) -> None:
        self._store[self._key(model, profile, variant)] = value

    def peek(self, model, profile, variant) -> np.ndarray:
        return self._store[self._key(model, profile, variant)]


def _simulate_job(args):
    model, profile, flags = args
    return simulate_csm(model, profile, ac.SimulationVariant.from_flags(flags))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class TaskDataset:
    """Paired CSM tensors ``y_i = f(x_i)`` with model provenance."""

    task: int
    role: str
    X: np.ndarray
    Y: np.ndarray
    model_indices: np.ndarray
    seed: int = 0
    profile: str = "desk"

    def __post_init__(self):
        if self.role not in ("train", "test"):
            raise ValueError(f"role must be 'train' or 'test', got {self.role!r}")
        if len(self.X) != len(self.Y) or len(self.X) != len(self.model_indices):
            raise ValueError("X, Y and model indices must have equal length")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def variants(self):
        return task_variants(self.task)


def sample_models(seed: int, start: int, count: int) -> list[ac.AcousticModel]:
    return [ac.sample_model(seed, i) for i in range(start, start + count)]


def build_task_dataset(models: Sequence[ac.AcousticModel], task, role: str,
                       profile: ScaleProfile = DESK, cache: SimulationCache | None = None,
                       workers: int = 1) -> TaskDataset:
    """Simulate each model under both task variants, build and normalise CSMs.

    ``workers > 1`` farms uncached simulations out to processes; results are
    gathered in model order, so the output does not depend on scheduling.
    """
    t = _task(task)
    vx, vy = task_variants(t)
    cache = SimulationCache() if cache is None else cache
    jobs = []
    for m in models:
        for v in {vx.flags: vx, vy.flags: vy}.values():
            if (m, profile, v) in cache:
                cache.hits += 1
            else:
                jobs.append((m, profile, v.flags))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_simulate_job(j) for j in jobs]
    for (m, _, flags), res in zip(jobs, results):
        cache.put(m, profile, ac.SimulationVariant.from_flags(flags), res)
    cache.misses += len(jobs)
    shape = (len(models),) + profile.in_shape
    X = np.empty(shape, dtype=complex)
    Y = np.empty(shape, dtype=complex)
    for i, m in enumerate(models):
        X[i] = cache.peek(m, profile, vx)
        Y[i] = cache.peek(m, profile, vy)
    seeds = {m.seed for m in models}
    return TaskDataset(task=t, role=role, X=X, Y=Y,
                       model_indices=np.array([m.index for m in models], dtype=np.int64),
                       seed=seeds.pop() if len(seeds) == 1 else 0, profile=profile.name)


def build_task_split(task, profile: ScaleProfile = DESK, seed: int = 0,
                     cache: SimulationCache | None = None, workers: int = 1,
                     models: Sequence[ac.AcousticModel] | None = None) -> tuple[TaskDataset, TaskDataset]:
    """Train set on indices ``[0, n_train)``, test set on ``[n_train, n_train + n_test)``."""
    if models is None:
        models = sample_models(seed, 0, profile.n_train + profile.n_test)
    if len(models) < profile.n_train + profile.n_test:
        raise ValueError(f"need {profile.n_train + profile.n_test} models, got {len(models)}")
    train_models = list(models[:profile.n_train])
    test_models = list(models[profile.n_train:profile.n_train + profile.n_test])
    train_ids = {(m.seed, m.index) for m in train_models}
    assert not train_ids & {(m.seed, m.index) for m in test_models}, "train/test model sets overlap"
    cache = SimulationCache() if cache is None else cache
    train = build_task_dataset(train_models, task, "train", profile, cache, workers)
    test = build_task_dataset(test_models, task, "test", profile, cache, workers)
    return train, test


def save_dataset(ds: TaskDataset, path) -> None:
    """CSMD file of alternating x/y records plus a ``.json`` sidecar."""
    path = Path(path)
    vx, vy = ds.variants
    recs = []
    for idx, x, y in zip(ds.model_indices, ds.X, ds.Y):
        recs.append(CsmRecord(int(idx), vx.flags, x))
        recs.append(CsmRecord(int(idx), vy.flags, y))
    write_csmd(path, recs, dims=ds.X.shape[1:])
    meta = {"task": ds.task, "role": ds.role, "seed": ds.seed, "profile": ds.profile,
            "pairs": len(ds), "x_flags": vx.flags, "y_flags": vy.flags}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> TaskDataset:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    recs = read_csmd(path)
    if len(recs) != 2 * meta["pairs"]:
        raise ValueError(f"{path}: expected {2 * meta['pairs']} records, found {len(recs)}")
    xs, ys = recs[0::2], recs[1::2]
    for rx, ry in zip(xs, ys):
        if rx.model_index != ry.model_index or rx.flags != meta["x_flags"] or ry.flags != meta["y_flags"]:
            raise ValueError(f"{path}: record pairing broken at model {rx.model_index}")
    dims = (0,) + tuple(xs[0].data.shape) if xs else (0, 0, 0, 0)
    X = np.stack([r.data for r in xs]) if xs else np.zeros(dims, dtype=complex)
    Y = np.stack([r.data for r in ys]) if ys else np.zeros(dims, dtype=complex)
    return TaskDataset(task=meta["task"], role=meta["role"], X=X, Y=Y,
                       model_indices=np.array([r.model_index for r in xs], dtype=np.int64),
                       seed=meta["seed"], profile=meta["profile"])


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    task: int
    model_indices: np.ndarray
    g_acc_G: np.ndarray
    g_acc_Id: np.ndarray

    @property
    def mean_G(self) -> float:
        return float(np.mean(self.g_acc_G))

    @property
    def mean_Id(self) -> float:
        return float(np.mean(self.g_acc_Id))

    def summary(self) -> dict:
        return {"task": self.task, "samples": len(self.model_indices),
                "g_acc_G": self.mean_G, "g_acc_Id": self.mean_Id}


def identity_accuracy(ds: TaskDataset, kappa: float = KAPPA) -> np.ndarray:
    """Per-sample ``1 - eps(f(x), x)``, the do-nothing baseline."""
    if ds.task == 1:
        return np.ones(len(ds))
    return 1.0 - csm_distance_batch(ds.Y, ds.X, kappa)


def evaluate(model: GanModel, testset: TaskDataset, kappa: float = KAPPA) -> EvalReport:
    """Generator and identity accuracies per test sample, on clean inputs."""
    g = evaluate_accuracy(model, testset.X, testset.Y, kappa)
    return EvalReport(task=testset.task, model_indices=np.asarray(testset.model_indices),
                      g_acc_G=g, g_acc_Id=identity_accuracy(testset, kappa))


REPORT_COLUMNS = ("model_index", "g_acc_G", "g_acc_Id")


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for idx, g, gi in zip(report.model_indices, report.g_acc_G, report.g_acc_Id):
            w.writerow([int(idx), repr(float(g)), repr(float(gi))])


def read_report(path, task: int = 0) -> EvalReport:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(REPORT_COLUMNS) - set(rows[0]):
        raise ValueError(f"{path}: missing report columns")
    return EvalReport(task=task,
                      model_indices=np.array([int(r["model_index"]) for r in rows], dtype=np.int64),
                      g_acc_G=np.array([float(r["g_acc_G"]) for r in rows]),
                      g_acc_Id=np.array([float(r["g_acc_Id"]) for r in rows]))


def export_scatter(report: EvalReport, path) -> int:
    """Write the (g_acc(Id), g_acc(G)) scatter data; returns the row count."""
    if not (np.all(np.isfinite(report.g_acc_G)) and np.all(np.isfinite(report.g_acc_Id))):
        raise ValueError("report contains non-finite accuracies")
    write_report(report, path)
    return len(report.model_indices)


# ---------------------------------------------------------------------------
# hyperparameter grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HpoGridPoint:
    n_gen: int
    n_dis: int
    n_den: int
    n_lay: int
    lr_gen: float
    lr_dis: float
    activation: ActivationSpec

    def __post_init__(self):
        checks = (("n_gen", self.n_gen, N_GEN_GRID), ("n_dis", self.n_dis, N_DIS_GRID),
                  ("n_den", self.n_den, N_DEN_GRID), ("n_lay", self.n_lay, N_LAY_GRID),
                  ("lr_gen", self.lr_gen, LR_GRID), ("lr_dis", self.lr_dis, LR_GRID),
                  ("activation", self.activation, ACTIVATION_GRID))
        for name, value, grid in checks:
            if value not in grid:
                raise ValueError(f"{name}={value!r} is not on the grid {grid}")

    def architecture(self, in_shape) -> GanArchitecture:
        return GanArchitecture(n_gen=self.n_gen, n_dis=self.n_dis, n_den=self.n_den, n_lay=self.n_lay,
                               activation=self.activation, in_shape=tuple(in_shape))

    def label(self) -> str:
        act = self.activation.describe()
        return (f"n_gen={self.n_gen} n_dis={self.n_dis} n_den={self.n_den} n_lay={self.n_lay} "
                f"lr_gen={self.lr_gen:g} lr_dis={self.lr_dis:g} {act}")


def hpo_grid(restrict: dict | None = None) -> list[HpoGridPoint]:
    """All grid combinations in a fixed order, optionally restricted per axis.

    ``restrict`` maps an axis name to the allowed values; each must lie on the grid.
    """
    axes = {"n_gen": N_GEN_GRID, "n_dis": N_DIS_GRID, "n_den": N_DEN_GRID, "n_lay": N_LAY_GRID,
            "lr_gen": LR_GRID, "lr_dis": LR_GRID, "activation": ACTIVATION_GRID}
    for name, allowed in (restrict or {}).items():
        if name not in axes:
            raise ValueError(f"unknown grid axis {name!r}")
        bad = [v for v in allowed if v not in axes[name]]
        if bad:
            raise ValueError(f"{name}: values {bad} are not on the grid {axes[name]}")
        axes[name] = tuple(v for v in axes[name] if v in allowed)
    names = list(axes)
    return [HpoGridPoint(**dict(zip(names, combo))) for combo in itertools.product(*axes.values())]


def select_subset(points: Sequence[HpoGridPoint], subset) -> list[tuple[int, HpoGridPoint]]:
    """Pick grid points by count (evenly spaced over the enumeration) or explicit indices."""
    n = len(points)
    if subset is None:
        idx = list(range(n))
    elif isinstance(subset, (int, np.integer)):
        if not 1 <= subset <= n:
            raise ValueError(f"subset size must lie in [1, {n}]")
        idx = sorted({int(round(v)) for v in np.linspace(0, n - 1, int(subset))})
    else:
        idx = [int(i) for i in subset]
        if any(i < 0 or i >= n for i in idx) or len(set(idx)) != len(idx):
            raise ValueError("subset indices must be distinct and within the grid")
    return [(i, points[i]) for i in idx]


@dataclass
class HpoResult:
    grid_index: int
    point: HpoGridPoint
    g_acc: float
    epochs: int
    rank: int = 0


def _hpo_job(args):
    i, point, train, test, base, seed = args
    model = GanModel(point.architecture(train.X.shape[1:]), point.lr_gen, point.lr_dis,
                     seed=int(np.random.SeedSequence(seed, spawn_key=(i, 0)).generate_state(1)[0]))
    cfg = replace(base, lr_gen=point.lr_gen, lr_dis=point.lr_dis, eval_every=0,
                  seed=int(np.random.SeedSequence(seed, spawn_key=(i, 1)).generate_state(1)[0]))
    train_loop(model, train.X, train.Y, cfg, rng=train_rng(cfg))
    return float(evaluate(model, test, cfg.kappa).mean_G)


def run_hpo(points: Sequence[tuple[int, HpoGridPoint]], train: TaskDataset, test: TaskDataset,
            config: TrainConfig, seed: int = 0, workers: int = 1) -> list[HpoResult]:
    """Train each point for ``config.epochs`` on the task data; rank by test g_acc (best first).

    Each point derives its own initialisation and training seeds from
    ``(seed, grid index)``, so results do not depend on which points run together.
    """
    jobs = [(i, p, train, test, config, seed) for i, p in points]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_hpo_job, jobs))
    else:
        scores = [_hpo_job(j) for j in jobs]
    results = [HpoResult(i, p, s, config.epochs) for (i, p), s in zip(points, scores)]
    results.sort(key=lambda r: (-r.g_acc, r.grid_index))
    for rank, r in enumerate(results, 1):
        r.rank = rank
    return results


HPO_COLUMNS = ("rank", "grid_index", "g_acc", "epochs", "n_gen", "n_dis", "n_den", "n_lay",
               "lr_gen", "lr_dis", "activation")


def write_hpo_results(results: Iterable[HpoResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HPO_COLUMNS)
        for r in results:
            p = r.point
            w.writerow([r.rank, r.grid_index, repr(r.g_acc), r.epochs, p.n_gen, p.n_dis, p.n_den, p.n_lay,
                        repr(p.lr_gen), repr(p.lr_dis), p.activation.describe()])


def default_workers() -> int:
    return max(1, min(os.cpu_count() or 1, 8))
