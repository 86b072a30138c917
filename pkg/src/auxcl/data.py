"""Task sequences, the auxiliary pool, and mixed mini-batch streams.

Class-incremental streams are built by partitioning a labelled dataset's
classes into disjoint ordered tasks. The auxiliary pool is a second,
class-disjoint dataset whose classes stand in for future-task heads; its
active subset shrinks as tasks claim heads.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

CROP_PAD = 4

CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
_CIFAR_RECORD = 3073  # 1 label byte + 3 * 1024 channel-major pixel bytes


@dataclass
class Dataset:
    """A flat labelled dataset: inputs (N, ...) and integer labels (N,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ConfigError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def class_ids(self) -> tuple:
        return tuple(np.unique(self.labels).tolist())

    def subset(self, class_ids) -> "Dataset":
        keep = np.isin(self.labels, np.asarray(list(class_ids)))
        return Dataset(self.inputs[keep], self.labels[keep])

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


@dataclass
class TaskSpec:
    """One task: its class set and the train/test samples restricted to it."""

    index: int
    classes: tuple
    train: Dataset
    test: Dataset
    class_counts: dict = field(init=False)

    def __post_init__(self):
        self.classes = tuple(int(c) for c in self.classes)
        for name, ds in (("train", self.train), ("test", self.test)):
            stray = set(ds.class_ids) - set(self.classes)
            if stray:
                raise ConfigError(f"task {self.index} {name} split contains foreign classes {sorted(stray)}")
        self.class_counts = {c: int((self.train.labels == c).sum()) for c in self.classes}


@dataclass
class TaskSequence:
    tasks: list

    def __post_init__(self):
        seen = set()
        for task in self.tasks:
            overlap = seen & set(task.classes)
            if overlap:
                raise ConfigError(f"classes {sorted(overlap)} appear in more than one task")
            seen |= set(task.classes)

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def all_classes(self) -> tuple:
        return tuple(c for task in self.tasks for c in task.classes)

    @property
    def num_heads(self) -> int:
        return len(self.all_classes)

    def classes_after_first(self) -> int:
        return sum(len(t.classes) for t in self.tasks[1:])


@dataclass
class AuxiliaryPool:
    """The auxiliary dataset plus its live class -> head mapping.

    `head_for_class` holds only the currently active placeholder classes;
    retiring a class removes it, shrinking the pool until it is exhausted
    after the final task's head assignment.
    """

    dataset: Dataset
    class_ids: tuple
    head_for_class: dict

    @property
    def active_classes(self) -> tuple:
        return tuple(sorted(self.head_for_class))

    @property
    def is_exhausted(self) -> bool:
        return not self.head_for_class

    def retire(self, classes):
        for c in classes:
            if c not in self.head_for_class:
                raise ConfigError(f"auxiliary class {c} is not active, cannot retire it")
            del self.head_for_class[c]


@dataclass
class MixedBatch:
    """Task-side samples (with raw class labels) plus head-labelled aux samples."""

    task_inputs: np.ndarray
    task_classes: np.ndarray
    aux_inputs: np.ndarray
    aux_heads: np.ndarray


# ---------------------------------------------------------------------------
# sequence / pool construction


def build_sequence(train: Dataset, test: Dataset, classes_per_task: int,
                   num_tasks: int, rng: np.random.Generator) -> TaskSequence:
    """Partition classes into `num_tasks` disjoint ordered tasks.

    The class order is a seeded shuffle, so the same generator state always
    produces the same split.
    """
    classes = sorted(train.class_ids)
    needed = classes_per_task * num_tasks
    if len(classes) < needed:
        raise ConfigError(
            f"need {needed} classes for {num_tasks} tasks of {classes_per_task}, "
            f"dataset has {len(classes)}"
        )
    order = [classes[i] for i in rng.permutation(len(classes))[:needed]]
    tasks = []
    for t in range(num_tasks):
        task_classes = tuple(order[t * classes_per_task : (t + 1) * classes_per_task])
        tasks.append(TaskSpec(
            index=t,
            classes=task_classes,
            train=train.subset(task_classes),
            test=test.subset(task_classes),
        ))
    return TaskSequence(tasks)


def build_aux_pool(aux_dataset: Dataset, sequence: TaskSequence,
                   rng: np.random.Generator) -> AuxiliaryPool:
    """Select placeholder classes and map them onto future-task heads.

    The pool must offer at least as many classes as the sequence has beyond
    its first task; the selected classes are drawn uniformly without
    replacement and assigned, in selection order, to the head indices left
    free by the first task.
    """
    available = sorted(aux_dataset.class_ids)
    needed = sequence.classes_after_first()
    if len(available) < needed:
        raise ConfigError(
            f"auxiliary class budget: need {needed} aux classes, have {len(available)}"
        )
    overlap = set(available) & set(sequence.all_classes)
    if overlap:
        raise ConfigError(f"auxiliary classes {sorted(overlap)} collide with task classes")

    chosen = [available[i] for i in rng.permutation(len(available))[:needed]]
    first_task_heads = len(sequence.tasks[0].classes)
    head_for_class = {c: first_task_heads + i for i, c in enumerate(chosen)}
    return AuxiliaryPool(dataset=aux_dataset, class_ids=tuple(available),
                         head_for_class=head_for_class)


# ---------------------------------------------------------------------------
# batch streams


class _EpochCursor:
    """Yields indices in shuffled order, reshuffling on every wrap."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = np.empty(k, dtype=np.int64)
        filled = 0
        while filled < k:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            step = min(k - filled, self.n - self.pos)
            out[filled : filled + step] = self.order[self.pos : self.pos + step]
            self.pos += step
            filled += step
        return out


class MixedStream:
    """Produces mixed task/auxiliary mini-batches for one task.

    The task side walks the task dataset in shuffled epochs. The auxiliary
    side is balanced: samples are drawn round-robin across the currently
    active placeholder classes, each with its own shuffled cursor, and
    labels are emitted already remapped to head indices. When the pool is
    empty (or the aux batch size is zero) the aux side stays empty and no
    auxiliary randomness is consumed.
    """

    def __init__(self, task: TaskSpec, pool: AuxiliaryPool | None,
                 task_batch: int, aux_batch: int,
                 task_rng: np.random.Generator, aux_rng: np.random.Generator):
        if len(task.train) == 0:
            raise ConfigError(f"task {task.index} has no training samples")
        self.task = task
        self.task_batch = task_batch
        self.cursor = _EpochCursor(len(task.train), task_rng)

        self.aux_active = pool is not None and aux_batch > 0 and not pool.is_exhausted
        if self.aux_active:
            self.pool = pool
            self.aux_batch = aux_batch
            self.aux_classes = list(pool.active_classes)
            self.aux_rows = {
                c: np.flatnonzero(pool.dataset.labels == c) for c in self.aux_classes
            }
            empty = [c for c, rows in self.aux_rows.items() if rows.size == 0]
            if empty:
                raise ConfigError(f"auxiliary classes {empty} have no samples")
            self.aux_cursors = {
                c: _EpochCursor(self.aux_rows[c].size, aux_rng) for c in self.aux_classes
            }
            self.aux_rr = 0

    def next_mixed_batch(self) -> MixedBatch:
        rows = self.cursor.take(self.task_batch)
        task_inputs = self.task.train.inputs[rows]
        task_classes = self.task.train.labels[rows]

        if not self.aux_active:
            aux_inputs = np.empty((0, *task_inputs.shape[1:]), dtype=task_inputs.dtype)
            aux_heads = np.empty(0, dtype=np.int64)
        else:
            picks = []
            heads = []
            for _ in range(self.aux_batch):
                c = self.aux_classes[self.aux_rr % len(self.aux_classes)]
                self.aux_rr += 1
                local = self.aux_cursors[c].take(1)[0]
                picks.append(self.aux_rows[c][local])
                heads.append(self.pool.head_for_class[c])
            aux_inputs = self.pool.dataset.inputs[np.asarray(picks)]
            aux_heads = np.asarray(heads, dtype=np.int64)
        return MixedBatch(task_inputs, task_classes, aux_inputs, aux_heads)


# ---------------------------------------------------------------------------
# augmentation


def augment(batch: np.ndarray, rng: np.random.Generator,
            pad: int = CROP_PAD, flip_prob: float = 0.5) -> np.ndarray:
    """Per-sample random crop (zero pad then crop back) and horizontal flip.

    Only image batches (N, C, H, W) are accepted; flat inputs should skip
    augmentation entirely.
    """
    x = np.asarray(batch)
    if x.ndim != 4:
        raise ConfigError(f"augmentation needs (N, C, H, W) image batches, got shape {x.shape}")
    n, _, h, w = x.shape
    if n == 0:
        return x.copy()
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < flip_prob
    out = np.empty_like(x)
    for i in range(n):
        dy, dx = offsets[i]
        crop = padded[i, :, dy : dy + h, dx : dx + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


# ---------------------------------------------------------------------------
# dataset ingestion


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse one CIFAR-10 binary batch file into (N,3,32,32) floats in [0,1]."""
    raw = np.fromfile(str(path), dtype=np.uint8)
    if raw.size == 0 or raw.size % _CIFAR_RECORD:
        raise FormatError(
            f"{path}: size {raw.size} is not a multiple of the {_CIFAR_RECORD}-byte record"
        )
    records = raw.reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise FormatError(f"{path}: label byte {labels.max()} outside the valid range 0..9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    """Load the standard binary CIFAR-10 layout into (train, test) datasets."""
    directory = Path(directory)
    train_parts = [read_cifar_batch(directory / name) for name in CIFAR_TRAIN_FILES]
    train = Dataset(
        np.concatenate([p[0] for p in train_parts]),
        np.concatenate([p[1] for p in train_parts]),
    )
    test_images, test_labels = read_cifar_batch(directory / CIFAR_TEST_FILE)
    return train, Dataset(test_images, test_labels)


# ---------------------------------------------------------------------------
# synthetic data


def make_synthetic(num_classes: int, samples_per_class: int, shape,
                   class_separation: float, rng: np.random.Generator) -> Dataset:
    """Gaussian class blobs with unit noise and seeded means.

    Means are drawn once and rescaled so the minimum pairwise distance
    equals `class_separation`; zero separation collapses all means to the
    origin, giving chance-level class structure.
    """
    if num_classes < 2:
        raise ConfigError("make_synthetic needs at least 2 classes")
    dims = (shape,) if isinstance(shape, int) else tuple(shape)
    flat = int(np.prod(dims))
    means = rng.standard_normal((num_classes, flat))
    diffs = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(-1))
    min_dist = dist[~np.eye(num_classes, dtype=bool)].min()
    means = means * (class_separation / min_dist) if min_dist > 0 else means * 0.0

    n = num_classes * samples_per_class
    inputs = np.empty((n, flat))
    labels = np.empty(n, dtype=np.int64)
    for c in range(num_classes):
        rows = slice(c * samples_per_class, (c + 1) * samples_per_class)
        inputs[rows] = means[c] + rng.standard_normal((samples_per_class, flat))
        labels[rows] = c
    return Dataset(inputs.reshape(n, *dims), labels)


def split_dataset(dataset: Dataset, eval_per_class: int,
                  rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Stratified split holding out `eval_per_class` samples of each class."""
    train_rows, eval_rows = [], []
    for c in sorted(dataset.class_ids):
        rows = np.flatnonzero(dataset.labels == c)
        if rows.size <= eval_per_class:
            raise ConfigError(
                f"class {c} has {rows.size} samples, cannot hold out {eval_per_class}"
            )
        rows = rows[rng.permutation(rows.size)]
        eval_rows.append(rows[:eval_per_class])
        train_rows.append(rows[eval_per_class:])
    train_rows = np.sort(np.concatenate(train_rows))
    eval_rows = np.sort(np.concatenate(eval_rows))
    return (
        Dataset(dataset.inputs[train_rows], dataset.labels[train_rows]),
        Dataset(dataset.inputs[eval_rows], dataset.labels[eval_rows]),
    )


def relabel(dataset: Dataset, offset: int) -> Dataset:
    """Shift all class ids by a constant, e.g. to keep aux ids disjoint."""
    return Dataset(dataset.inputs, dataset.labels + offset)
