"""Experiment grid execution and result aggregation.

`run_experiment` expands a config into (grid cell x seed) runs, executes
them (optionally across worker processes), and writes a metrics CSV plus a
per-run loss trace CSV and summary JSON. Outputs embed the config digest;
`aggregate` refuses to merge rows whose digests disagree. Re-running the
same config overwrites the same files with identical bytes.
"""

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seeds as seedmod
from .config import ExperimentConfig, GridCell
from .data import (AuxiliaryPool, Dataset, TaskSequence, build_aux_pool,
                   build_sequence, load_cifar10, make_synthetic, relabel, split_dataset)
from .errors import ConfigError
from .methods import MethodConfig, RunResult, run_sequence
from .models import BackboneConfig

METRICS_FILE = "metrics.csv"
RUNS_DIR = "runs"


# ---------------------------------------------------------------------------
# dataset assembly


def build_task_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    spec = cfg.dataset
    if spec.kind == "cifar10":
        train, test = load_cifar10(spec.path)
        if spec.classes:
            train, test = train.subset(spec.classes), test.subset(spec.classes)
        return train, test
    shape = spec.image_shape if spec.image_shape else spec.input_dim
    content = make_synthetic(
        spec.num_classes, spec.samples_per_class + spec.eval_per_class, shape,
        spec.class_separation, np.random.default_rng([spec.seed, 0]),
    )
    return split_dataset(content, spec.eval_per_class, np.random.default_rng([spec.seed, 1]))


def build_aux_dataset(cfg: ExperimentConfig) -> Dataset:
    spec = cfg.aux
    if spec is None:
        raise ConfigError("this configuration has no [aux] section")
    if spec.kind == "cifar10":
        train, _ = load_cifar10(spec.path)
        if spec.classes:
            train = train.subset(spec.classes)
        ds = train
    else:
        shape = spec.image_shape if spec.image_shape else spec.input_dim
        ds = make_synthetic(spec.num_classes, spec.samples_per_class, shape,
                            spec.class_separation, np.random.default_rng([spec.seed, 0]))
    # keep aux class ids out of the task id space
    task_max = 9 if cfg.dataset.kind == "cifar10" else cfg.dataset.num_classes - 1
    if cfg.dataset.classes:
        task_max = max(cfg.dataset.classes)
    return relabel(ds, task_max + 1)


def model_config(cfg: ExperimentConfig) -> BackboneConfig:
    num_heads = cfg.sequence_classes_per_task * cfg.sequence_num_tasks
    if cfg.dataset.kind == "cifar10":
        input_shape = (3, 32, 32)
    elif cfg.dataset.image_shape:
        input_shape = cfg.dataset.image_shape
    else:
        input_shape = (cfg.dataset.input_dim,)
    return BackboneConfig(
        kind=cfg.model_kind, input_shape=input_shape, num_heads=num_heads,
        hidden=cfg.model_hidden, channels=cfg.model_channels, dtype=cfg.model_dtype,
    )


def method_config(cfg: ExperimentConfig, cell: GridCell, seed: int) -> MethodConfig:
    tr = cfg.training
    return MethodConfig(
        method=cell.method, use_aux=cell.use_aux, use_mah=cell.use_mah,
        alpha=tr.alpha, beta=tr.beta, lr=tr.lr, epochs_per_task=tr.epochs_per_task,
        task_batch=tr.task_batch, aux_batch=tr.aux_batch, replay_batch=tr.replay_batch,
        buffer_capacity=cell.buffer, pretrain_epochs=cell.pretrain_epochs,
        pretrain_lr=tr.pretrain_lr if tr.pretrain_lr >= 0 else None,
        augment_images=tr.augment, seed=seed,
    )


# ---------------------------------------------------------------------------
# single runs


@dataclass
class RunRow:
    """One metrics-CSV row: a (cell, seed) result."""

    digest: str
    seed: int
    cell: GridCell
    class_il: float
    task_il: float
    task_il_final: float
    mean_boundary_peak: float
    per_task: list

    def as_csv(self, num_tasks: int) -> list:
        return [
            self.digest, repr(self.seed), self.cell.method, repr(self.cell.buffer),
            repr(self.cell.use_aux).lower(), repr(self.cell.use_mah).lower(),
            repr(self.cell.pretrain_epochs),
            repr(self.class_il), repr(self.task_il), repr(self.task_il_final),
            repr(self.mean_boundary_peak),
        ] + [repr(v) for v in self.per_task[:num_tasks]]


def execute_run(cfg: ExperimentConfig, cell: GridCell, seed: int) -> tuple[RunRow, RunResult]:
    """Build datasets, sequence, and pool for one seed, then run it."""
    train, test = build_task_datasets(cfg)
    sequence = build_sequence(train, test, cfg.sequence_classes_per_task,
                              cfg.sequence_num_tasks, seedmod.stream(seed, "class_split"))
    pool = None
    if cell.use_aux or cell.pretrain_epochs > 0:
        aux_ds = build_aux_dataset(cfg)
        pool = build_aux_pool(aux_ds, sequence, seedmod.stream(seed, "aux_select"))
    result = run_sequence(model_config(cfg), method_config(cfg, cell, seed), sequence, pool)
    row = RunRow(
        digest=cfg.digest(), seed=seed, cell=cell,
        class_il=result.record.class_il_final,
        task_il=result.record.task_il_avg,
        task_il_final=result.record.task_il_final,
        mean_boundary_peak=result.record.mean_boundary_peak,
        per_task=[float(v) for v in result.record.per_task_final],
    )
    return row, result


def _run_and_persist(cfg: ExperimentConfig, cell: GridCell, seed: int) -> RunRow:
    row, result = execute_run(cfg, cell, seed)
    runs_dir = Path(cfg.output_dir) / RUNS_DIR
    runs_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{cell.label()}__seed{seed}"
    _write_trace(runs_dir / f"{stem}.trace.csv", result)
    _write_summary(runs_dir / f"{stem}.summary.json", cfg, cell, seed, result)
    return row


def _write_trace(path: Path, result: RunResult):
    task_index = np.zeros(len(result.total_loss), dtype=int)
    for t, start in enumerate(result.boundaries):
        task_index[start:] = t
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "task", "total", "ce", "replay_mse", "replay_ce"])
        for i in range(len(result.total_loss)):
            writer.writerow([
                i, task_index[i], repr(float(result.total_loss[i])),
                repr(float(result.ce_loss[i])), repr(float(result.replay_mse_loss[i])),
                repr(float(result.replay_ce_loss[i])),
            ])


def _matrix_rows(matrix: np.ndarray) -> list:
    rows = []
    for t in range(matrix.shape[0]):
        rows.append([float(v) for v in matrix[t, : t + 1]])
    return rows


def _write_summary(path: Path, cfg: ExperimentConfig, cell: GridCell, seed: int,
                   result: RunResult):
    peaks = result.record.boundary_peaks
    summary = {
        "config_digest": cfg.digest(),
        "cell": cell.label(),
        "seed": seed,
        "head_map": result.head_map.to_summary(),
        "class_il_matrix": _matrix_rows(result.record.class_il_matrix),
        "task_il_matrix": _matrix_rows(result.record.task_il_matrix),
        "class_il_final": result.record.class_il_final,
        "task_il_avg": result.record.task_il_avg,
        "task_il_final": result.record.task_il_final,
        "boundary_peaks": None if peaks is None else [float(p) for p in peaks],
        "boundaries": list(result.boundaries),
        "run_digest": result.digest(),
    }
    path.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# grid execution


def metrics_header(num_tasks: int) -> list:
    return [
        "digest", "seed", "method", "buffer", "use_aux", "use_mah", "pretrain_epochs",
        "class_il", "task_il", "task_il_final", "mean_boundary_peak",
    ] + [f"acc_task_{t}" for t in range(num_tasks)]


def run_experiment(cfg: ExperimentConfig, dry_run: bool = False, workers: int | None = None) -> int:
    """Execute every grid cell under every seed; returns the run count."""
    jobs = [(cell, seed) for cell in cfg.grid for seed in cfg.seeds]
    if dry_run:
        return len(jobs)

    workers = workers if workers is not None else cfg.workers
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_and_persist, cfg, cell, seed) for cell, seed in jobs]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_and_persist(cfg, cell, seed) for cell, seed in jobs]

    with open(out_dir / METRICS_FILE, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(metrics_header(cfg.sequence_num_tasks))
        for row in rows:
            writer.writerow(row.as_csv(cfg.sequence_num_tasks))
    return len(jobs)


# ---------------------------------------------------------------------------
# reporting


def _mean_std(values: list) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def aggregate(results_dir) -> list:
    """Aggregate metrics rows into per-cell mean +/- std summaries.

    Rows are grouped by config digest first and never merged across
    digests; groups with fewer seeds than the fullest cell are flagged as
    partial rather than dropped.
    """
    path = Path(results_dir) / METRICS_FILE
    if not path.exists():
        raise ConfigError(f"no {METRICS_FILE} found in {results_dir}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path} contains no result rows")

    groups = {}
    for row in rows:
        key = (row["digest"], row["method"], int(row["buffer"]),
               row["use_aux"] == "true", row["use_mah"] == "true",
               int(row["pretrain_epochs"]))
        groups.setdefault(key, []).append(row)

    max_seeds = max(len(v) for v in groups.values())
    summaries = []
    for key in sorted(groups, key=lambda k: (k[0], k[2], k[1], k[3], k[4], k[5])):
        cell_rows = groups[key]
        digest, method, buffer, use_aux, use_mah, pretrain = key
        class_mean, class_std = _mean_std([float(r["class_il"]) for r in cell_rows])
        task_mean, task_std = _mean_std([float(r["task_il"]) for r in cell_rows])
        peaks = [float(r["mean_boundary_peak"]) for r in cell_rows]
        peak_mean = float(np.nanmean(peaks)) if not all(math.isnan(p) for p in peaks) else float("nan")
        summaries.append({
            "digest": digest, "method": method, "buffer": buffer,
            "use_aux": use_aux, "use_mah": use_mah, "pretrain_epochs": pretrain,
            "n": len(cell_rows), "partial": len(cell_rows) < max_seeds,
            "class_il_mean": class_mean, "class_il_std": class_std,
            "task_il_mean": task_mean, "task_il_std": task_std,
            "peak_mean": peak_mean,
        })
    return summaries


def render_report(summaries: list, fmt: str = "text") -> str:
    if fmt == "csv":
        lines = ["digest,method,buffer,use_aux,use_mah,pretrain_epochs,n,partial,"
                 "class_il_mean,class_il_std,task_il_mean,task_il_std,peak_mean"]
        for s in summaries:
            lines.append(
                f"{s['digest']},{s['method']},{s['buffer']},{str(s['use_aux']).lower()},"
                f"{str(s['use_mah']).lower()},{s['pretrain_epochs']},{s['n']},"
                f"{str(s['partial']).lower()},{s['class_il_mean']!r},{s['class_il_std']!r},"
                f"{s['task_il_mean']!r},{s['task_il_std']!r},{s['peak_mean']!r}"
            )
        return "\n".join(lines) + "\n"

    header = (f"{'method':<10} {'buffer':>6} {'aux':>4} {'mah':>4} {'pre':>4} "
              f"{'class_il':>18} {'task_il':>18} {'peak':>9} {'n':>3}")
    lines = [header, "-" * len(header)]
    for s in summaries:
        flag = "*" if s["partial"] else " "
        lines.append(
            f"{s['method']:<10} {s['buffer']:>6} {'yes' if s['use_aux'] else 'no':>4} "
            f"{'yes' if s['use_mah'] else 'no':>4} {s['pretrain_epochs']:>4} "
            f"{s['class_il_mean']:>9.4f} ± {s['class_il_std']:<6.4f} "
            f"{s['task_il_mean']:>9.4f} ± {s['task_il_std']:<6.4f} "
            f"{s['peak_mean']:>9.4f} {s['n']:>2}{flag}"
        )
    return "\n".join(lines) + "\n"
