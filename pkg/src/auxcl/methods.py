"""Continual training loops: plain fine-tuning, replay, and logit replay.

All methods share one loop shape per task: draw a mixed task/auxiliary
mini-batch, take one cross-entropy over the union, add the method's replay
terms from the reservoir, step SGD, and insert the task-side samples (with
the logits they just produced) into the reservoir. Auxiliary samples never
enter the buffer.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .buffer import BufferEntry, Reservoir
from .data import AuxiliaryPool, MixedStream, TaskSequence, TaskSpec, augment
from .errors import ConfigError, StateError
from .mah import HeadMap, assign_heads, compute_profiles, sequential_assign
from .metrics import PEAK_WINDOW, EvalRecord, boundary_peaks, build_eval_record, eval_class_il, eval_task_il
from .models import Backbone, BackboneConfig, build_model
from .seeds import SeedStreams

METHODS = ("finetune", "er", "der", "derpp")
REPLAY_METHODS = ("er", "der", "derpp")


@dataclass
class MethodConfig:
    method: str = "derpp"
    use_aux: bool = False
    use_mah: bool = False
    alpha: float = 0.5  # logit-matching weight
    beta: float = 0.5  # replayed cross-entropy weight
    lr: float = 0.03
    epochs_per_task: int = 5
    task_batch: int = 32
    aux_batch: int = 32
    replay_batch: int = 32
    buffer_capacity: int = 50
    pretrain_epochs: int = 0
    pretrain_lr: float | None = None
    augment_images: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.use_mah and not self.use_aux:
            raise ConfigError("use_mah requires use_aux")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.task_batch < 1:
            raise ConfigError("task_batch must be positive")


@dataclass
class TrainTrace:
    """Per-iteration loss decomposition for one task."""

    total: list = field(default_factory=list)
    ce: list = field(default_factory=list)
    replay_mse: list = field(default_factory=list)
    replay_ce: list = field(default_factory=list)
    head_grad_l1: np.ndarray | None = None


@dataclass
class RunResult:
    """Everything a finished run hands to metrics and reporting."""

    record: EvalRecord
    total_loss: np.ndarray
    ce_loss: np.ndarray
    replay_mse_loss: np.ndarray
    replay_ce_loss: np.ndarray
    boundaries: list
    head_map: HeadMap
    model: Backbone
    head_grad_per_task: np.ndarray
    buffer: Reservoir

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.total_loss, self.ce_loss, self.replay_mse_loss,
                    self.replay_ce_loss, self.record.class_il_matrix,
                    self.record.task_il_matrix, self.head_grad_per_task):
            h.update(np.ascontiguousarray(np.asarray(arr, dtype=np.float64)).tobytes())
        h.update(json.dumps(self.head_map.to_summary(), sort_keys=True).encode())
        return h.hexdigest()


def _is_image_batch(inputs: np.ndarray) -> bool:
    return inputs.ndim == 4


def train_task(model: Backbone, task: TaskSpec, pool: AuxiliaryPool | None,
               buf: Reservoir, head_map: HeadMap, cfg: MethodConfig,
               streams: SeedStreams, step_offset: int = 0) -> TrainTrace:
    """Train the model on one task for `cfg.epochs_per_task` passes.

    The loss is CE over the mixed task/aux batch plus, depending on the
    method, a logit-matching term and/or a replayed CE term from the
    reservoir. Replay terms silently contribute zero while the buffer is
    empty. The returned trace decomposes every iteration's loss exactly.
    """
    for c in task.classes:
        head_map.head_of(c)  # raises if the class has no head yet

    stream = MixedStream(
        task, pool if cfg.use_aux else None, cfg.task_batch, cfg.aux_batch,
        streams.task_batches, streams.aux_batches,
    )
    image_mode = _is_image_batch(task.train.inputs) and cfg.augment_images
    uses_buffer = cfg.method in REPLAY_METHODS
    iters = cfg.epochs_per_task * math.ceil(len(task.train) / cfg.task_batch)

    trace = TrainTrace()
    head_grad = np.zeros(model.num_heads, dtype=np.float64)
    params = model.parameters()
    bias_out = model.output_parameters()[1]

    for it in range(iters):
        mb = stream.next_mixed_batch()
        task_x = augment(mb.task_inputs, streams.augment_task) if image_mode else mb.task_inputs
        task_heads = head_map.heads_for_labels(mb.task_classes)
        if len(mb.aux_inputs):
            aux_x = augment(mb.aux_inputs, streams.augment_aux) if image_mode else mb.aux_inputs
            x = np.concatenate([task_x, aux_x])
            y = np.concatenate([task_heads, mb.aux_heads])
        else:
            x, y = task_x, task_heads

        logits = model.forward(x)
        ce = ad.softmax_cross_entropy(logits, y)
        loss = ce
        mse_term = 0.0
        replay_ce_term = 0.0

        if uses_buffer and len(buf):
            if cfg.method == "er":
                rx, ry, _ = buf.sample_arrays(cfg.replay_batch, streams.replay_draws)
                rx = augment(rx, streams.augment_replay) if image_mode else rx
                r_ce = ad.softmax_cross_entropy(model.forward(rx), head_map.heads_for_labels(ry))
                loss = ad.add(loss, r_ce)
                replay_ce_term = float(r_ce.data)
            else:
                rx, _, r_logits = buf.sample_arrays(cfg.replay_batch, streams.replay_draws)
                rx = augment(rx, streams.augment_replay) if image_mode else rx
                matching = ad.mul(ad.mse(model.forward(rx), Tensor(r_logits)), cfg.alpha)
                loss = ad.add(loss, matching)
                mse_term = float(matching.data)
                if cfg.method == "derpp":
                    rx2, ry2, _ = buf.sample_arrays(cfg.replay_batch, streams.replay_draws)
                    rx2 = augment(rx2, streams.augment_replay) if image_mode else rx2
                    r_ce = ad.softmax_cross_entropy(model.forward(rx2), head_map.heads_for_labels(ry2))
                    weighted = ad.mul(r_ce, cfg.beta)
                    loss = ad.add(loss, weighted)
                    replay_ce_term = float(weighted.data)

        loss.backward()
        head_grad += np.abs(bias_out.grad)
        ad.sgd_step(params, cfg.lr)

        if uses_buffer:
            task_logits = logits.data[: len(mb.task_inputs)]
            for i in range(len(mb.task_inputs)):
                entry = BufferEntry(
                    x=mb.task_inputs[i].copy(),
                    label=int(mb.task_classes[i]),
                    logits=task_logits[i].copy(),
                    step=step_offset + it,
                )
                buf.insert(entry, streams.reservoir)

        trace.total.append(float(loss.data))
        trace.ce.append(float(ce.data))
        trace.replay_mse.append(mse_term)
        trace.replay_ce.append(replay_ce_term)

    trace.head_grad_l1 = head_grad
    return trace


def pretrain_on_aux(model: Backbone, pool: AuxiliaryPool, epochs: int, lr: float,
                    rng: np.random.Generator, batch_size: int = 32,
                    augment_images: bool = True) -> Backbone:
    """Supervised pre-training of the full backbone on every auxiliary class.

    Classes are mapped to fixed heads (cycling if there are more classes
    than heads); the output layer is re-initialized afterwards so only the
    feature layers carry over. With zero epochs the model is untouched.
    """
    if epochs <= 0:
        return model
    classes = sorted(pool.class_ids)
    head_of = {c: i % model.num_heads for i, c in enumerate(classes)}
    labels = np.asarray([head_of[int(c)] for c in pool.dataset.labels], dtype=np.int64)
    inputs = pool.dataset.inputs
    image_mode = _is_image_batch(inputs) and augment_images
    params = model.parameters()

    for _ in range(epochs):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), batch_size):
            rows = order[start : start + batch_size]
            x = augment(inputs[rows], rng) if image_mode else inputs[rows]
            loss = ad.softmax_cross_entropy(model.forward(x), labels[rows])
            loss.backward()
            ad.sgd_step(params, lr)

    model.reinit_output(rng)
    return model


def run_sequence(backbone_cfg: BackboneConfig, cfg: MethodConfig,
                 sequence: TaskSequence, pool: AuxiliaryPool | None = None) -> RunResult:
    """Run the full continual sequence and evaluate after every task."""
    if backbone_cfg.num_heads != sequence.num_heads:
        raise ConfigError(
            f"model has {backbone_cfg.num_heads} heads but the sequence defines "
            f"{sequence.num_heads} classes"
        )
    if cfg.use_aux and pool is None:
        raise ConfigError("use_aux requires an auxiliary pool")
    if cfg.pretrain_epochs > 0 and pool is None:
        raise ConfigError("pretraining requires an auxiliary pool")

    streams = SeedStreams(cfg.seed)
    model = build_model(backbone_cfg, streams.model_init)
    if cfg.pretrain_epochs > 0:
        pretrain_on_aux(model, pool, cfg.pretrain_epochs,
                        cfg.pretrain_lr if cfg.pretrain_lr is not None else cfg.lr,
                        streams.pretrain, batch_size=cfg.task_batch,
                        augment_images=cfg.augment_images)

    head_map = HeadMap(sequence.num_heads)
    sequential_assign(sequence.tasks[0], head_map)
    if cfg.use_aux:
        for aux_class, head in sorted(pool.head_for_class.items()):
            head_map.set_aux_owner(head, aux_class)

    buf = Reservoir(cfg.buffer_capacity)
    n_tasks = sequence.num_tasks
    class_il = np.full((n_tasks, n_tasks), np.nan)
    task_il = np.full((n_tasks, n_tasks), np.nan)
    total, ce_l, mse_l, ce2_l = [], [], [], []
    boundaries = []
    head_grads = np.zeros((n_tasks, sequence.num_heads))

    for t, task in enumerate(sequence.tasks):
        if t > 0:
            if cfg.use_mah:
                model.freeze()
                profiles = compute_profiles(model, task)
                retired = assign_heads(profiles, head_map, t)
                model.unfreeze()
            else:
                retired = sequential_assign(task, head_map)
            if cfg.use_aux and retired:
                pool.retire(retired)

        boundaries.append(len(total))
        trace = train_task(model, task, pool, buf, head_map, cfg, streams,
                           step_offset=len(total))
        total.extend(trace.total)
        ce_l.extend(trace.ce)
        mse_l.extend(trace.replay_mse)
        ce2_l.extend(trace.replay_ce)
        head_grads[t] = trace.head_grad_l1

        class_il[t, : t + 1] = eval_class_il(model, sequence, head_map, upto=t)
        for j in range(t + 1):
            task_il[t, j] = eval_task_il(model, sequence.tasks[j], head_map)

    peaks = boundary_peaks(total, boundaries, PEAK_WINDOW) if n_tasks >= 2 else None
    record = build_eval_record(class_il, task_il, peaks)
    return RunResult(
        record=record,
        total_loss=np.asarray(total),
        ce_loss=np.asarray(ce_l),
        replay_mse_loss=np.asarray(mse_l),
        replay_ce_loss=np.asarray(ce2_l),
        boundaries=boundaries,
        head_map=head_map,
        model=model,
        head_grad_per_task=head_grads,
        buffer=buf,
    )
