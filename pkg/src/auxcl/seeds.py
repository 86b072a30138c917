"""Seed derivation: every source of randomness in a run is a named stream.

A run is driven by one master seed. Each consumer (model init, class split,
reservoir, ...) gets its own `numpy` Generator derived from
``SeedSequence([master_seed, stream_id])``, so adding or removing draws in
one stream never perturbs another. This is what makes degenerate
configurations (empty auxiliary pool, zero-size auxiliary batches)
bit-identical to their vanilla counterparts.
"""

from dataclasses import dataclass, field

import numpy as np

# Stream ids are part of the on-disk reproducibility contract: renumbering
# them changes every seeded result.
STREAM_IDS = {
    "model_init": 0,
    "class_split": 1,
    "aux_select": 2,
    "task_batches": 3,
    "aux_batches": 4,
    "replay_draws": 5,
    "reservoir": 6,
    "augment_task": 7,
    "augment_aux": 8,
    "augment_replay": 9,
    "pretrain": 10,
}


def stream(master_seed: int, name: str) -> np.random.Generator:
    """Return the named random stream derived from the master seed."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([master_seed, STREAM_IDS[name]]))
    )


@dataclass
class SeedStreams:
    """All named streams for one run, derived from one master seed."""

    master_seed: int
    model_init: np.random.Generator = field(init=False)
    class_split: np.random.Generator = field(init=False)
    aux_select: np.random.Generator = field(init=False)
    task_batches: np.random.Generator = field(init=False)
    aux_batches: np.random.Generator = field(init=False)
    replay_draws: np.random.Generator = field(init=False)
    reservoir: np.random.Generator = field(init=False)
    augment_task: np.random.Generator = field(init=False)
    augment_aux: np.random.Generator = field(init=False)
    augment_replay: np.random.Generator = field(init=False)
    pretrain: np.random.Generator = field(init=False)

    def __post_init__(self):
        for name in STREAM_IDS:
            setattr(self, name, stream(self.master_seed, name))
