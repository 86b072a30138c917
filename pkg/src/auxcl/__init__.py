"""Continual learning with an auxiliary data stream and activation-based head mapping.

A numpy library for class-incremental experiments: a minimal autodiff
tensor core, small classification backbones, task/auxiliary data streams,
reservoir replay buffers, the most-activated-heads assignment rule, and a
seeded experiment grid runner.
"""

from .autodiff import Parameter, Tensor
from .buffer import BufferEntry, Reservoir
from .config import ExperimentConfig, GridCell, load_config
from .data import (AuxiliaryPool, Dataset, MixedBatch, MixedStream, TaskSequence,
                   TaskSpec, augment, build_aux_pool, build_sequence, load_cifar10,
                   make_synthetic, split_dataset)
from .errors import ConfigError, FormatError, ShapeError, StateError
from .mah import ClassLogitProfile, HeadMap, assign_heads, compute_profiles, sequential_assign
from .methods import MethodConfig, RunResult, pretrain_on_aux, run_sequence, train_task
from .metrics import EvalRecord, boundary_peaks, eval_class_il, eval_task_il
from .models import (BackboneConfig, build_model, load_checkpoint, masked_logits,
                     save_checkpoint)
from .seeds import SeedStreams, stream

__version__ = "0.1.0"

__all__ = [
    "AuxiliaryPool", "BackboneConfig", "BufferEntry", "ClassLogitProfile",
    "ConfigError", "Dataset", "EvalRecord", "ExperimentConfig", "FormatError",
    "GridCell", "HeadMap", "MethodConfig", "MixedBatch", "MixedStream",
    "Parameter", "Reservoir", "RunResult", "SeedStreams", "ShapeError",
    "StateError", "TaskSequence", "TaskSpec", "Tensor", "assign_heads",
    "augment", "boundary_peaks", "build_aux_pool", "build_model",
    "build_sequence", "compute_profiles", "eval_class_il", "eval_task_il",
    "load_checkpoint", "load_cifar10", "load_config", "make_synthetic",
    "masked_logits", "pretrain_on_aux", "run_sequence", "save_checkpoint",
    "sequential_assign", "split_dataset", "stream", "train_task",
]
