"""Declarative experiment configuration (TOML, versioned).

A config names the task dataset, the auxiliary dataset, the sequence
layout, the backbone, shared training hyperparameters, a list of grid
cells (method x buffer x feature flags), and the seeds to run each cell
under. Validation happens at load time so a bad config never starts
training; every violated constraint is reported by name and count.
"""

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError

CONFIG_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    kind: str  # "synthetic" | "cifar10"
    path: str = ""
    num_classes: int = 10
    samples_per_class: int = 100
    eval_per_class: int = 50
    input_dim: int = 16
    image_shape: tuple = ()
    class_separation: float = 3.0
    seed: int = 1234
    classes: tuple = ()  # optional class-id restriction (real datasets)

    def __post_init__(self):
        if self.kind not in ("synthetic", "cifar10"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "cifar10" and not self.path:
            raise ConfigError("cifar10 dataset needs a path")
        object.__setattr__(self, "image_shape", tuple(self.image_shape))
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def available_classes(self) -> int:
        if self.classes:
            return len(self.classes)
        return 10 if self.kind == "cifar10" else self.num_classes


@dataclass(frozen=True)
class GridCell:
    method: str = "derpp"
    buffer: int = 50
    use_aux: bool = False
    use_mah: bool = False
    pretrain_epochs: int = 0

    def label(self) -> str:
        parts = [self.method, f"b{self.buffer}"]
        if self.use_aux:
            parts.append("aux")
        if self.use_mah:
            parts.append("mah")
        if self.pretrain_epochs:
            parts.append(f"pre{self.pretrain_epochs}")
        return "-".join(parts)


@dataclass(frozen=True)
class TrainingSpec:
    lr: float = 0.03
    epochs_per_task: int = 5
    task_batch: int = 32
    aux_batch: int = 32
    replay_batch: int = 32
    alpha: float = 0.5
    beta: float = 0.5
    augment: bool = True
    pretrain_lr: float = -1.0  # negative: fall back to lr


@dataclass(frozen=True)
class ExperimentConfig:
    sequence_classes_per_task: int
    sequence_num_tasks: int
    dataset: DatasetSpec
    aux: DatasetSpec | None
    model_kind: str
    model_hidden: tuple
    model_channels: tuple
    model_dtype: str
    training: TrainingSpec
    grid: tuple
    seeds: tuple
    output_dir: str
    workers: int = 1
    version: int = CONFIG_VERSION

    def digest(self) -> str:
        blob = json.dumps(_as_plain(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _as_plain(cfg: ExperimentConfig):
    d = asdict(cfg)
    # the output directory is where results land, not what they are
    d.pop("output_dir")
    d.pop("workers")
    return d


def _dataset_spec(section: dict, name: str) -> DatasetSpec:
    known = {f for f in DatasetSpec.__dataclass_fields__}
    stray = set(section) - known
    if stray:
        raise ConfigError(f"[{name}] has unknown keys: {sorted(stray)}")
    return DatasetSpec(**section)


def load_config(path, env_output_dir: str | None = None) -> ExperimentConfig:
    """Parse and validate a TOML experiment config."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc

    version = raw.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version} unsupported (expected {CONFIG_VERSION})")

    for section in ("dataset", "sequence", "grid"):
        if section not in raw:
            raise ConfigError(f"config is missing the [{section}] section")

    seq = raw["sequence"]
    classes_per_task = int(seq.get("classes_per_task", 2))
    num_tasks = int(seq.get("num_tasks", 5))
    if classes_per_task < 1 or num_tasks < 1:
        raise ConfigError("sequence sizes must be positive")

    dataset = _dataset_spec(raw["dataset"], "dataset")
    aux = _dataset_spec(raw["aux"], "aux") if "aux" in raw else None

    needed = dataset.available_classes
    if needed < classes_per_task * num_tasks:
        raise ConfigError(
            f"task stream needs {classes_per_task * num_tasks} classes, "
            f"dataset offers {needed}"
        )

    model = raw.get("model", {})
    training_raw = raw.get("training", {})
    known_training = set(TrainingSpec.__dataclass_fields__)
    stray = set(training_raw) - known_training
    if stray:
        raise ConfigError(f"[training] has unknown keys: {sorted(stray)}")
    training = TrainingSpec(**training_raw)

    cells = []
    for i, cell_raw in enumerate(raw["grid"]):
        known = set(GridCell.__dataclass_fields__)
        stray = set(cell_raw) - known
        if stray:
            raise ConfigError(f"grid cell {i} has unknown keys: {sorted(stray)}")
        cell = GridCell(**cell_raw)
        if cell.method not in ("finetune", "er", "der", "derpp"):
            raise ConfigError(f"grid cell {i}: unknown method {cell.method!r}")
        if cell.use_mah and not cell.use_aux:
            raise ConfigError(f"grid cell {i}: use_mah requires use_aux")
        if (cell.use_aux or cell.pretrain_epochs > 0) and aux is None:
            raise ConfigError(f"grid cell {i} needs auxiliary data but no [aux] section is set")
        cells.append(cell)
    if not cells:
        raise ConfigError("the grid is empty")

    if aux is not None:
        aux_needed = classes_per_task * (num_tasks - 1)
        if aux.available_classes < aux_needed:
            raise ConfigError(
                f"auxiliary class budget: need {aux_needed} aux classes, "
                f"have {aux.available_classes}"
            )

    seeds = tuple(int(s) for s in raw.get("seeds", [0]))
    if not seeds:
        raise ConfigError("seeds must not be empty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds contain duplicates")

    output_dir = raw.get("output_dir") or env_output_dir or "results"

    return ExperimentConfig(
        sequence_classes_per_task=classes_per_task,
        sequence_num_tasks=num_tasks,
        dataset=dataset,
        aux=aux,
        model_kind=model.get("kind", "mlp"),
        model_hidden=tuple(model.get("hidden", (256, 128))),
        model_channels=tuple(model.get("channels", (32, 64))),
        model_dtype=model.get("dtype", "float64"),
        training=training,
        grid=tuple(cells),
        seeds=seeds,
        output_dir=str(output_dir),
        workers=int(raw.get("workers", 1)),
        version=version,
    )
