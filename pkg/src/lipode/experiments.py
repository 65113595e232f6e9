"""Weight-difference penalty experiments.

fig1 pairs the weight Lipschitz constant of trained networks with their
generalization gap, epoch by epoch; fig2 measures the gap as a function of
the penalty factor lambda with frozen projections (lambda = inf is the
weight-tied network).
"""
from __future__ import annotations

import csv
import io
import math
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .config import project_root
from .datasets import (
    MNIST_FILES,
    Dataset,
    find_mnist_files,
    load_mnist,
    subset,
    synth_dataset,
)
from .errors import ConfigurationError
from .resnet import ResNetModel, build_model
from .results_analyzer import (
    FIG1_FIELDS,
    FIG2_FIELDS,
    FIG2_SUMMARY_FIELDS,
    analyze_fig1_csv,
    analyze_fig2_csv,
    summarize_gaps,
)
from .spec_store import atomic_write, write_json
from .training import train
from .types import PENALTY_KINDS, LogFn, RunResult, TrainConfig

DEFAULT_LAMBDAS: Tuple[float, ...] = (0.0, 0.01, 0.1, 1.0, math.inf)
MNIST_CLASSES = 10


@dataclass(frozen=True)
class Profile:
    name: str
    d: int
    L: int
    train_size: int
    test_size: int
    fig1_runs: int
    fig1_epochs: int
    fig2_repeats: int
    fig2_epochs: int
    batch_size: int = 128
    learning_rate: float = 0.02
    bandwidth: float = 0.1


PROFILES: Dict[str, Profile] = {
    "desk": Profile(
        "desk",
        d=16,
        L=100,
        train_size=10_000,
        test_size=2_000,
        fig1_runs=3,
        fig1_epochs=10,
        fig2_repeats=5,
        fig2_epochs=10,
    ),
    "paper": Profile(
        "paper",
        d=30,
        L=1000,
        train_size=60_000,
        test_size=10_000,
        fig1_runs=10,
        fig1_epochs=30,
        fig2_repeats=20,
        fig2_epochs=50,
    ),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigurationError(
            f"profile must be one of {', '.join(PROFILES)}, got {name!r}"
        ) from None


@dataclass(frozen=True)
class ExperimentConfig:
    d: int
    L: int
    epochs: int
    train_size: int
    test_size: int
    output_dir: Path
    data_dir: Optional[Path] = None
    batch_size: int = 128
    learning_rate: float = 0.02
    bandwidth: float = 0.1
    seed: int = 0
    jobs: int = 1
    checkpoint: bool = False
    # synthetic fallback when no MNIST files are found
    synth_dim: int = 64
    synth_separation: float = 1.5
    profile: str = "desk"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"empty epoch range (epochs = {self.epochs})")
        if min(self.d, self.L, self.train_size, self.test_size) < 1:
            raise ConfigurationError("d, L and the split sizes must be >= 1")
        if self.batch_size < 1 or self.jobs < 1:
            raise ConfigurationError("batch_size and jobs must be >= 1")


@dataclass(frozen=True)
class Fig1Config(ExperimentConfig):
    runs: int = 3
    projection_settings: Tuple[bool, ...] = (True, False)

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.runs < 1 or not self.projection_settings:
            raise ConfigurationError("fig1 needs at least one run and one setting")


@dataclass(frozen=True)
class Fig2Config(ExperimentConfig):
    repeats: int = 5
    lambdas: Tuple[float, ...] = DEFAULT_LAMBDAS
    penalty_kind: str = "frob_l2"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.repeats < 1 or not self.lambdas:
            raise ConfigurationError("fig2 needs at least one repeat and one lambda")
        if any(math.isnan(lam) or lam < 0 for lam in self.lambdas):
            raise ConfigurationError(f"lambdas must be >= 0: {self.lambdas}")
        if self.penalty_kind not in PENALTY_KINDS:
            raise ConfigurationError(f"unknown penalty kind {self.penalty_kind!r}")


def fig1_config(profile: str, output_dir: Path, **overrides: Any) -> Fig1Config:
    p = get_profile(profile)
    base = Fig1Config(
        d=p.d,
        L=p.L,
        epochs=p.fig1_epochs,
        train_size=p.train_size,
        test_size=p.test_size,
        output_dir=Path(output_dir),
        batch_size=p.batch_size,
        learning_rate=p.learning_rate,
        bandwidth=p.bandwidth,
        profile=p.name,
        runs=p.fig1_runs,
    )
    return replace(base, **overrides) if overrides else base


def fig2_config(profile: str, output_dir: Path, **overrides: Any) -> Fig2Config:
    p = get_profile(profile)
    base = Fig2Config(
        d=p.d,
        L=p.L,
        epochs=p.fig2_epochs,
        train_size=p.train_size,
        test_size=p.test_size,
        output_dir=Path(output_dir),
        batch_size=p.batch_size,
        learning_rate=p.learning_rate,
        bandwidth=p.bandwidth,
        profile=p.name,
        repeats=p.fig2_repeats,
    )
    return replace(base, **overrides) if overrides else base


def load_experiment_data(
    cfg: ExperimentConfig, log: Optional[LogFn] = None
) -> Tuple[Dataset, Dataset]:
    """MNIST train/test subsets when the files exist, synthetic blobs otherwise."""
    log = log or (lambda _m: None)
    files = find_mnist_files(cfg.data_dir) if cfg.data_dir else None
    if files:
        train = load_mnist(files["train_images"], files["train_labels"], "train")
        test = load_mnist(files["test_images"], files["test_labels"], "test")
        log(f"MNIST from {cfg.data_dir}: {cfg.train_size} train / {cfg.test_size} test")
        return subset(train, cfg.train_size, cfg.seed), subset(
            test, cfg.test_size, cfg.seed
        )

    if cfg.data_dir:
        log(
            f"MNIST files not found in {cfg.data_dir} "
            f"(expected {', '.join(MNIST_FILES.values())}); using synthetic data"
        )
    per_train = math.ceil(cfg.train_size / MNIST_CLASSES)
    per_test = math.ceil(cfg.test_size / MNIST_CLASSES)
    train = synth_dataset(
        MNIST_CLASSES, per_train, cfg.synth_dim, cfg.synth_separation, cfg.seed
    )
    test = synth_dataset(
        MNIST_CLASSES,
        per_test,
        cfg.synth_dim,
        cfg.synth_separation,
        cfg.seed + 1,
        split="test",
    )
    return subset(train, cfg.train_size, cfg.seed), subset(
        test, cfg.test_size, cfg.seed
    )


def package_version() -> str:
    try:
        return version("lipode")
    except PackageNotFoundError:
        return __version__


def version_string() -> str:
    """``git describe --always --dirty`` of the checkout, else the package version."""
    try:
        r = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=str(project_root()),
            capture_output=True,
            text=True,
            check=True,
            timeout=10,
        )
        described = r.stdout.strip()
        if described:
            return described
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{package_version()}"


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_manifest(
    output_dir: Path,
    command: str,
    config: Any,
    argv: Optional[Sequence[str]] = None,
    extra: Optional[Dict[str, Any]] = None,
    name: str = "manifest.json",
) -> Path:
    """Manifest with the command, argv, config echo and version string."""
    echo = asdict(config) if hasattr(config, "__dataclass_fields__") else config
    manifest = {
        "command": command,
        "argv": list(argv) if argv is not None else list(sys.argv[1:]),
        "config": _jsonable(echo),
        "version": version_string(),
    }
    if extra:
        manifest.update(_jsonable(extra))
    return write_json(Path(output_dir) / name, manifest)


def write_csv(
    path: Path, fieldnames: Sequence[str], rows: List[Dict[str, Any]]
) -> Path:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return atomic_write(Path(path), buf.getvalue())


# Per-process datasets for pooled workers; filled by _init_worker.
_WORKER_DATA: Optional[Tuple[Dataset, Dataset]] = None


def _init_worker(cfg: ExperimentConfig) -> None:
    global _WORKER_DATA
    _WORKER_DATA = load_experiment_data(cfg)


def _train_cfg(
    cfg: ExperimentConfig,
    seed: int,
    train_projections: bool,
    lam: float = 0.0,
    penalty_kind: str = "frob_l2",
    tag: str = "",
) -> TrainConfig:
    ckpt = cfg.output_dir / "checkpoints" / tag if cfg.checkpoint else None
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        lam=lam,
        penalty_kind=penalty_kind,
        train_projections=train_projections,
        seed=seed,
        checkpoint_dir=ckpt,
    )


def _fresh_model(
    cfg: ExperimentConfig, data: Dataset, seed: int, frozen: bool
) -> ResNetModel:
    return build_model(
        data.dim,
        cfg.d,
        data.classes,
        cfg.L,
        init="smooth",
        bandwidth=cfg.bandwidth,
        seed=seed,
        train_projections=not frozen,
    )


def _fig1_task(
    cfg: Fig1Config,
    task: Tuple[bool, int],
    data: Optional[Tuple[Dataset, Dataset]] = None,
) -> List[Dict[str, Any]]:
    trained, run = task
    train_set, test_set = data if data is not None else _WORKER_DATA
    seed = cfg.seed + run
    model = _fresh_model(cfg, train_set, seed, frozen=not trained)
    tcfg = _train_cfg(cfg, seed, trained, tag=f"fig1_proj{int(trained)}_run{run:02d}")
    _, record = train(model, train_set, tcfg, test=test_set)
    return [
        {
            "run": run,
            "epoch": m.epoch,
            "weight_lipschitz": m.weight_lipschitz,
            "gap": m.gap,
            "projections_trained": int(trained),
        }
        for m in record.epochs[1:]
    ]


def _fig2_task(
    cfg: Fig2Config,
    task: Tuple[float, int],
    data: Optional[Tuple[Dataset, Dataset]] = None,
) -> List[Dict[str, Any]]:
    lam, repeat = task
    train_set, test_set = data if data is not None else _WORKER_DATA
    seed = cfg.seed + repeat
    model = _fresh_model(cfg, train_set, seed, frozen=True)
    tcfg = _train_cfg(
        cfg, seed, False, lam, cfg.penalty_kind, tag=f"fig2_lam{lam:g}_rep{repeat:02d}"
    )
    _, record = train(model, train_set, tcfg, test=test_set)
    return [{"lambda": lam, "repeat": repeat, "gap": record.final.gap}]


def _run_tasks(
    cfg: ExperimentConfig,
    worker,
    tasks: List[Tuple[Any, int]],
    fieldnames: Sequence[str],
    csv_path: Path,
    log: LogFn,
) -> List[Dict[str, Any]]:
    """Run independent tasks, in-process or on a pool; rows come back in task order.

    When a task fails or the run is interrupted, the rows finished so far are
    written to ``csv_path`` before the exception propagates.
    """
    done: Dict[int, List[Dict[str, Any]]] = {}
    completed = False

    def merged() -> List[Dict[str, Any]]:
        return [row for i in sorted(done) for row in done[i]]

    try:
        if cfg.jobs == 1:
            data = load_experiment_data(cfg, log)
            for i, task in enumerate(tasks):
                done[i] = worker(cfg, task, data)
                log(f"[{i + 1}/{len(tasks)}] finished {task}")
        else:
            log(f"Dispatching {len(tasks)} tasks to {cfg.jobs} worker processes")
            with ProcessPoolExecutor(
                max_workers=cfg.jobs, initializer=_init_worker, initargs=(cfg,)
            ) as pool:
                futures = {
                    pool.submit(worker, cfg, task): i for i, task in enumerate(tasks)
                }
                for fut in as_completed(futures):
                    i = futures[fut]
                    done[i] = fut.result()
                    log(f"[{len(done)}/{len(tasks)}] finished {tasks[i]}")
        completed = True
    finally:
        if not completed:
            write_csv(csv_path, fieldnames, merged())
            log(
                f"Partial results ({len(done)}/{len(tasks)} tasks) "
                f"flushed to {csv_path}"
            )
    return merged()


def run_fig1(
    cfg: Fig1Config,
    *,
    argv: Optional[Sequence[str]] = None,
    log: Optional[LogFn] = None,
) -> RunResult:
    log = log or (lambda _m: None)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    csv_path = cfg.output_dir / "fig1.csv"
    write_manifest(cfg.output_dir, "fig1", cfg, argv)

    tasks = [(s, run) for s in cfg.projection_settings for run in range(cfg.runs)]
    log(
        f"fig1: d={cfg.d} L={cfg.L}, {cfg.runs} runs x {cfg.epochs} epochs "
        f"per setting, {len(tasks)} trainings"
    )
    rows = _run_tasks(cfg, _fig1_task, tasks, FIG1_FIELDS, csv_path, log)
    write_csv(csv_path, FIG1_FIELDS, rows)

    analysis = analyze_fig1_csv(csv_path)
    msg = (
        f"fig1: {analysis['rows']} rows, correlation "
        f"{analysis['correlation']:+.4f} ({analysis['status']})"
    )
    log(msg)
    complete = analysis["rows"] == len(tasks) * cfg.epochs
    return RunResult(complete, msg, analysis, csv_path)


def run_fig2(
    cfg: Fig2Config,
    *,
    argv: Optional[Sequence[str]] = None,
    log: Optional[LogFn] = None,
) -> RunResult:
    log = log or (lambda _m: None)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    csv_path = cfg.output_dir / "fig2.csv"
    write_manifest(cfg.output_dir, "fig2", cfg, argv)

    tasks = [(lam, r) for lam in cfg.lambdas for r in range(cfg.repeats)]
    log(
        f"fig2: d={cfg.d} L={cfg.L}, penalty {cfg.penalty_kind}, "
        f"{len(cfg.lambdas)} lambdas x {cfg.repeats} repeats"
    )
    rows = _run_tasks(cfg, _fig2_task, tasks, FIG2_FIELDS, csv_path, log)
    write_csv(csv_path, FIG2_FIELDS, rows)

    summary = summarize_gaps(rows)
    write_csv(cfg.output_dir / "fig2_summary.csv", FIG2_SUMMARY_FIELDS, summary)
    for s in summary:
        log(f"lambda={s['lambda']:g}: gap {s['mean_gap']:+.4f} +/- {s['std_gap']:.4f}")

    analysis = analyze_fig2_csv(csv_path)
    msg = f"fig2: {analysis['rows']} rows, {analysis['status']}"
    log(msg)
    return RunResult(analysis["rows"] == len(tasks), msg, analysis, csv_path)
