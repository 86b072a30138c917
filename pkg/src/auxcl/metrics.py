"""Accuracy evaluation, loss-trace statistics, and run records.

Two protocols are computed from the same accuracy matrices: class-level
prediction over every head owned by a seen class, and task-level prediction
restricted to the queried task's heads. Evaluation always uses raw
(un-augmented) inputs and is a pure function of the model state.
"""

from dataclasses import dataclass

import numpy as np

from .data import TaskSpec, TaskSequence
from .mah import HeadMap
from .models import Backbone, masked_logits

EVAL_BATCH = 512
PEAK_WINDOW = 50


def _predict_classes(model: Backbone, inputs: np.ndarray, heads, head_map: HeadMap) -> np.ndarray:
    """Argmax over the allowed heads, mapped back to class ids."""
    heads = sorted(heads)
    mask = head_map.class_mask(heads)
    head_to_class = np.asarray([head_map.class_of_head(h) for h in heads], dtype=np.int64)
    preds = np.empty(len(inputs), dtype=np.int64)
    for start in range(0, len(inputs), EVAL_BATCH):
        rows = slice(start, start + EVAL_BATCH)
        logits = masked_logits(model.forward(inputs[rows]), mask)
        winners = logits[:, heads].argmax(axis=1)
        preds[rows] = head_to_class[winners]
    return preds


def eval_class_il(model: Backbone, sequence: TaskSequence, head_map: HeadMap,
                  upto: int | None = None) -> np.ndarray:
    """Per-task test accuracy with predictions over all task-owned heads."""
    tasks = sequence.tasks if upto is None else sequence.tasks[: upto + 1]
    allowed = head_map.task_owned_heads()
    accs = np.empty(len(tasks))
    for i, task in enumerate(tasks):
        preds = _predict_classes(model, task.test.inputs, allowed, head_map)
        accs[i] = float((preds == task.test.labels).mean())
    return accs


def eval_task_il(model: Backbone, task: TaskSpec, head_map: HeadMap) -> float:
    """Test accuracy when prediction is restricted to the task's own heads."""
    heads = head_map.task_heads(task.index)
    preds = _predict_classes(model, task.test.inputs, heads, head_map)
    return float((preds == task.test.labels).mean())


def boundary_peaks(total_loss, boundaries, window: int = PEAK_WINDOW) -> np.ndarray:
    """Loss spike per task boundary.

    For each boundary: the max loss over the first `window` iterations of
    the new task minus the mean loss over the last `window` iterations of
    the previous task.
    """
    loss = np.asarray(total_loss, dtype=np.float64)
    boundaries = list(boundaries)
    if len(boundaries) < 2:
        raise ValueError("boundary_peaks needs a trace covering at least two tasks")
    edges = boundaries + [len(loss)]
    peaks = np.empty(len(boundaries) - 1)
    for i in range(1, len(boundaries)):
        start = edges[i]
        prev_start = edges[i - 1]
        pre = loss[max(prev_start, start - window) : start]
        post = loss[start : min(edges[i + 1], start + window)]
        peaks[i - 1] = post.max() - pre.mean()
    return peaks


@dataclass
class EvalRecord:
    """Accuracy matrices plus the scalar summaries reported per run.

    Matrix rows are the task trained last; columns are the task evaluated.
    Entries above the diagonal are NaN (tasks not yet seen). `task_il_avg`
    averages each task's accuracy measured right after training it (the
    matrix diagonal); `task_il_final` averages the final row instead.
    """

    class_il_matrix: np.ndarray
    task_il_matrix: np.ndarray
    class_il_final: float
    task_il_avg: float
    task_il_final: float
    per_task_final: np.ndarray
    boundary_peaks: np.ndarray | None

    @property
    def mean_boundary_peak(self) -> float:
        if self.boundary_peaks is None:
            return float("nan")
        return float(self.boundary_peaks.mean())


def build_eval_record(class_il_matrix: np.ndarray, task_il_matrix: np.ndarray,
                      peaks: np.ndarray | None) -> EvalRecord:
    last = class_il_matrix[-1]
    diag = np.diagonal(task_il_matrix)
    return EvalRecord(
        class_il_matrix=class_il_matrix,
        task_il_matrix=task_il_matrix,
        class_il_final=float(last.mean()),
        task_il_avg=float(diag.mean()),
        task_il_final=float(task_il_matrix[-1].mean()),
        per_task_final=last.copy(),
        boundary_peaks=peaks,
    )
