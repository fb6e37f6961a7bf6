"""Experiment specs and the grid runner behind the CLI.

A spec is a flat ``key = value`` text file (``#`` starts a comment;
lists are comma-separated), describing the synthetic dataset, the
training template and the grid to sweep:

    n_classes      = 8
    dim            = 16
    n_per_class    = 50
    cluster_spread = 1.0
    mix_size       = 2
    noise          = 0.05
    strategies     = baseline, lsro, dmprl2
    counts         = 0, 200, 400
    seeds          = 1, 2, 3
    epochs         = 50
    out_dir        = results

The grid expands to one cell per (strategy, count, seed), except that
the baseline ignores the generated-data counts and runs once per seed.
Every cell writes ``history.csv`` and ``report.json`` into its own
directory; ``summary.csv`` aggregates one row per cell plus a mean row
per (strategy, count) group when several seeds ran.  All cell artifacts
are byte-reproducible from the spec; the summary's wall_seconds column
is the only timing (hence non-reproducible) field anywhere.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import MprlError, SpecError
from .labels import TiePolicy
from .losses import GradientMode
from .net import Activation
from .retrieval import evaluate, pairwise_sq_euclidean, save_report
from .synthgen import Dataset, make_generated_dataset, make_real_dataset
from .trainer import (
    Strategy,
    TrainConfig,
    assign_static_labels,
    extract_embeddings,
    pretrain_baseline,
    train,
)

# dataset sub-seed tags, composed with the cell seed
_SEED_REAL_DATA = 10
_SEED_GEN_DATA = 11

SUMMARY_COLUMNS = "strategy,n_generated,seed,rank1,mAP,l1_final,l2_final,wall_seconds"


@dataclass
class ExperimentSpec:
    n_classes: int = 8
    dim: int = 16
    n_per_class: int = 50
    cluster_spread: float = 1.0
    mix_size: int = 2
    noise: float = 0.05
    strategies: tuple[Strategy, ...] = (Strategy.BASELINE,)
    counts: tuple[int, ...] = (400,)
    seeds: tuple[int, ...] = (0,)
    epochs: int = 50
    batch_size: int = 64
    lr_initial: float = 0.1
    lr_after_decay: float = 0.01
    decay_epoch: int = 40
    momentum: float = 0.9
    gen_weight: float | None = None
    warmup_epoch: int = 20
    tie_policy: TiePolicy = TiePolicy.AVERAGE_RANK
    gradient_mode: GradientMode = GradientMode.ANALYTIC
    dropout_rate: float = 0.5
    hidden_sizes: tuple[int, ...] = (32, 16)
    init_scale: float = 1.0
    activation: Activation = Activation.RELU
    track_trajectories: int = 0
    out_dir: str = "results"

    def validate(self) -> None:
        if not self.strategies:
            raise SpecError("strategies list must not be empty")
        if not self.seeds:
            raise SpecError("seeds list must not be empty")
        if any(c < 0 for c in self.counts):
            raise SpecError("generated-data counts must be >= 0")
        if not self.counts:
            raise SpecError("counts list must not be empty")

    def train_config(self, strategy: Strategy, seed: int) -> TrainConfig:
        return TrainConfig(
            strategy=strategy,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_initial=self.lr_initial,
            lr_after_decay=self.lr_after_decay,
            decay_epoch=self.decay_epoch,
            momentum=self.momentum,
            gen_weight=self.gen_weight,
            warmup_epoch=self.warmup_epoch,
            tie_policy=self.tie_policy,
            gradient_mode=self.gradient_mode,
            dropout_rate=self.dropout_rate,
            hidden_sizes=self.hidden_sizes,
            init_scale=self.init_scale,
            activation=self.activation,
            seed=seed,
            track_trajectories=self.track_trajectories,
        )


def _parse_scalar(key: str, raw: str, target_type, line_no: int):
    raw = raw.strip()
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is str:
            return raw
        if target_type is Strategy:
            return Strategy(raw)
        if target_type is TiePolicy:
            return TiePolicy(raw)
        if target_type is GradientMode:
            return GradientMode(raw)
        if target_type is Activation:
            return Activation(raw)
    except ValueError as exc:
        raise SpecError(f"line {line_no}: bad value {raw!r} for {key}: {exc}") from None
    raise SpecError(f"line {line_no}: unsupported type for {key}")


_LIST_KEYS = {
    "strategies": Strategy,
    "counts": int,
    "seeds": int,
    "hidden_sizes": int,
}
_OPTIONAL_FLOAT_KEYS = {"gen_weight"}


def parse_spec_text(text: str) -> ExperimentSpec:
    """Parse spec text; errors carry the offending line number."""
    known = {f.name: f for f in fields(ExperimentSpec)}
    scalar_types = {
        "n_classes": int, "dim": int, "n_per_class": int, "cluster_spread": float,
        "mix_size": int, "noise": float, "epochs": int, "batch_size": int,
        "lr_initial": float, "lr_after_decay": float, "decay_epoch": int,
        "momentum": float, "warmup_epoch": int, "dropout_rate": float,
        "init_scale": float, "track_trajectories": int, "out_dir": str,
        "tie_policy": TiePolicy, "gradient_mode": GradientMode,
        "activation": Activation,
    }
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise SpecError(f"line {line_no}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in known:
            raise SpecError(f"line {line_no}: unknown key {key!r}")
        if key in values:
            raise SpecError(f"line {line_no}: duplicate key {key!r}")
        if key in _LIST_KEYS:
            elem_type = _LIST_KEYS[key]
            parts = [p for p in (piece.strip() for piece in raw.split(",")) if p]
            if not parts:
                raise SpecError(f"line {line_no}: list {key!r} must not be empty")
            values[key] = tuple(_parse_scalar(key, p, elem_type, line_no) for p in parts)
        elif key in _OPTIONAL_FLOAT_KEYS:
            raw = raw.strip()
            values[key] = None if raw.lower() in ("none", "auto") else _parse_scalar(
                key, raw, float, line_no)
        else:
            values[key] = _parse_scalar(key, raw, scalar_types[key], line_no)
    spec = ExperimentSpec(**values)
    spec.validate()
    return spec


def parse_spec(path) -> ExperimentSpec:
    return parse_spec_text(Path(path).read_text())


@dataclass(frozen=True)
class Cell:
    strategy: Strategy
    n_generated: int
    seed: int

    @property
    def name(self) -> str:
        return f"{self.strategy.value}_n{self.n_generated}_seed{self.seed}"


def expand_cells(spec: ExperimentSpec) -> list[Cell]:
    """Grid expansion; the baseline collapses over the count axis."""
    cells = []
    for strategy in spec.strategies:
        counts = (0,) if strategy is Strategy.BASELINE else spec.counts
        for count in counts:
            for seed in spec.seeds:
                cells.append(Cell(strategy, count, seed))
    return cells


def build_datasets(spec: ExperimentSpec, seed: int, count: int) -> tuple[Dataset, Dataset | None]:
    real = make_real_dataset(
        spec.n_classes, spec.n_per_class, spec.dim, spec.cluster_spread,
        seed=(seed, _SEED_REAL_DATA),
    )
    generated = None
    if count > 0:
        generated = make_generated_dataset(
            real, count, spec.mix_size, spec.noise, seed=(seed, _SEED_GEN_DATA),
        )
    return real, generated


@dataclass
class CellResult:
    cell: Cell
    rank1: float
    mean_ap: float
    l1_final: float
    l2_final: float
    wall_seconds: float


def run_cell(spec: ExperimentSpec, cell: Cell, out_dir: Path | None) -> CellResult:
    """Train one grid cell, write its artifacts, return its summary row."""
    start = time.perf_counter()
    real, generated = build_datasets(spec, cell.seed, cell.n_generated)
    cfg = spec.train_config(cell.strategy, cell.seed)
    static = None
    if cell.strategy is Strategy.SMPRL:
        pretrained = pretrain_baseline(real, cfg)
        static = assign_static_labels(
            pretrained, generated, cfg.tie_policy) if generated else {}
    params, history = train(real, generated, cfg, static_labels=static)

    queries = extract_embeddings(params, real, "query")
    gallery = extract_embeddings(params, real, "gallery")
    report = evaluate(pairwise_sq_euclidean(queries, gallery), queries.labels, gallery.labels)

    if out_dir is not None:
        cell_dir = out_dir / cell.name
        cell_dir.mkdir(parents=True, exist_ok=True)
        history.to_csv(cell_dir / "history.csv")
        save_report(report, cell_dir / "report.json")

    last = history.records[-1]
    return CellResult(cell, report.rank1, report.mean_ap, last.real_loss,
                      last.gen_loss, time.perf_counter() - start)


def _run_cell_job(args):
    spec, cell, out_dir = args
    return run_cell(spec, cell, Path(out_dir) if out_dir else None)


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1,
                   progress=None) -> list[CellResult]:
    """Run every cell of the grid and write summary.csv.

    ``jobs > 1`` distributes cells over worker processes; each cell is
    internally deterministic, and the summary is assembled in sorted cell
    order, so parallelism never changes any artifact except the
    wall_seconds timing column.
    """
    spec.validate()
    for strategy in spec.strategies:
        # config problems should surface before any cell trains
        spec.train_config(strategy, spec.seeds[0]).validate()
    out_path = Path(out_dir if out_dir is not None else spec.out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    cells = expand_cells(spec)

    results: list[CellResult] = []
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for result in pool.map(
                        _run_cell_job, [(spec, c, str(out_path)) for c in cells]):
                    results.append(result)
                    if progress:
                        progress(result)
        else:
            for cell in cells:
                result = run_cell(spec, cell, out_path)
                results.append(result)
                if progress:
                    progress(result)
    except Exception as exc:
        # leave completed artifacts in place and record what broke
        failed = cells[len(results)] if len(results) < len(cells) else None
        manifest = {
            "failed_cell": failed.name if failed else "unknown",
            "error": f"{type(exc).__name__}: {exc}",
            "completed": [r.cell.name for r in results],
        }
        (out_path / "failure_manifest.json").write_text(
            _manifest_json(manifest) + "\n")
        if results:
            write_summary(results, out_path / "summary.csv")
        raise RunFailure(failed or cells[0], exc) from exc

    write_summary(results, out_path / "summary.csv")
    return results


def _manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, indent=2)


def write_summary(results: list[CellResult], path) -> None:
    """One row per cell (sorted), plus mean rows for multi-seed groups."""
    ordered = sorted(results, key=lambda r: (r.cell.strategy.value, r.cell.n_generated,
                                             r.cell.seed))
    lines = [SUMMARY_COLUMNS]
    groups: dict[tuple[str, int], list[CellResult]] = {}
    for r in ordered:
        lines.append(
            f"{r.cell.strategy.value},{r.cell.n_generated},{r.cell.seed},"
            f"{r.rank1:.6f},{r.mean_ap:.6f},{r.l1_final:.6g},{r.l2_final:.6g},"
            f"{r.wall_seconds:.3f}"
        )
        groups.setdefault((r.cell.strategy.value, r.cell.n_generated), []).append(r)
    for (strategy, count), rows in sorted(groups.items()):
        if len(rows) < 2:
            continue
        lines.append(
            f"{strategy},{count},mean,"
            f"{np.mean([r.rank1 for r in rows]):.6f},"
            f"{np.mean([r.mean_ap for r in rows]):.6f},"
            f"{np.mean([r.l1_final for r in rows]):.6g},"
            f"{np.mean([r.l2_final for r in rows]):.6g},"
            f"{np.sum([r.wall_seconds for r in rows]):.3f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def run_trace(spec: ExperimentSpec, n_samples: int, out_dir) -> tuple[Path, int]:
    """Train the first grid cell with trajectory logging and dump the CSV.

    Returns the CSV path and the number of samples actually tracked
    (clipped to the generated set size).  With zero samples requested the
    CSV still appears, header only.
    """
    if n_samples < 0:
        raise SpecError("trace sample count must be >= 0")
    # first strategy, first count, first seed of the grid; trajectories are
    # forward-only so even the baseline can trace generated samples
    strategy = spec.strategies[0]
    count = spec.counts[0]
    seed = spec.seeds[0]
    real, generated = build_datasets(spec, seed, count)
    available = len(generated.samples) if generated else 0
    tracked = min(n_samples, available)

    cfg = replace(spec.train_config(strategy, seed), track_trajectories=tracked)
    static = None
    if strategy is Strategy.SMPRL:
        pretrained = pretrain_baseline(real, cfg)
        static = assign_static_labels(pretrained, generated, cfg.tie_policy) if generated else {}
    _, history = train(real, generated, cfg, static_labels=static)

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    csv_path = out_path / "trajectory.csv"
    if tracked == 0:
        csv_path.write_text("sample_id,epoch,argmax_class\n")
    else:
        history.trajectory_csv(csv_path)
    return csv_path, tracked


class RunFailure(MprlError):
    """A cell failed mid-run; partial artifacts stay on disk."""

    def __init__(self, cell: Cell, cause: Exception):
        super().__init__(f"cell {cell.name} failed: {cause}")
        self.cell = cell
        self.cause = cause
