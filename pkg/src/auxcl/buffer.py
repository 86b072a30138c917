"""Fixed-capacity episodic memory with reservoir sampling.

Entries keep the raw (pre-augmentation) input, the global class label, and
the logits the model produced when the sample was seen, so replay can both
re-train on labels and match stored logits.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class BufferEntry:
    x: np.ndarray
    label: int
    logits: np.ndarray
    step: int


class Reservoir:
    """Uniform sample of an unbounded stream, capped at `capacity` entries."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("reservoir capacity must be positive")
        self.capacity = capacity
        self.entries: list[BufferEntry] = []
        self.seen = 0

    def __len__(self):
        return len(self.entries)

    def insert(self, entry: BufferEntry, rng: np.random.Generator):
        """Classic reservoir rule: item i survives with probability capacity/i."""
        self.seen += 1
        if len(self.entries) < self.capacity:
            self.entries.append(entry)
            return
        slot = int(rng.integers(0, self.seen))
        if slot < self.capacity:
            self.entries[slot] = entry

    def sample(self, k: int, rng: np.random.Generator) -> list[BufferEntry]:
        """k entries drawn uniformly with replacement; empty buffer yields []."""
        if k <= 0 or not self.entries:
            return []
        rows = rng.integers(0, len(self.entries), size=k)
        return [self.entries[i] for i in rows]

    def sample_arrays(self, k: int, rng: np.random.Generator):
        """Stacked (inputs, labels, logits) for a with-replacement sample."""
        entries = self.sample(k, rng)
        if not entries:
            return None
        return (
            np.stack([e.x for e in entries]),
            np.asarray([e.label for e in entries], dtype=np.int64),
            np.stack([e.logits for e in entries]),
        )

    def dump(self, path):
        """Debug dump: one tab-separated line per entry."""
        with open(path, "w") as fh:
            for e in self.entries:
                logits = ",".join(repr(float(v)) for v in e.logits)
                fh.write(f"{e.label}\t{e.step}\t{logits}\n")
