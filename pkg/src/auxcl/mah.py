"""Head ownership bookkeeping and the most-activated-heads assignment.

At every task boundary after the first, the incoming classes must claim
output heads. The default rule hands out the lowest free indices; the
most-activated-heads rule instead forwards the new task through the frozen
model, averages the logits per class, and assigns each class to the
placeholder head it activates most, displacing that head's auxiliary class.
"""

from dataclasses import dataclass

import numpy as np

from .data import TaskSpec
from .errors import StateError


@dataclass
class ClassLogitProfile:
    """Mean pre-softmax activations of one class over its task samples."""

    class_id: int
    mean_logits: np.ndarray
    count: int


class HeadMap:
    """Tracks, per head, whether a task class, an aux class, or nobody owns it."""

    def __init__(self, num_heads: int):
        self.num_heads = num_heads
        self._owner = [None] * num_heads  # None | ("task", class_id) | ("aux", class_id)
        self._head_of_class = {}
        self._task_heads = {}

    def owner(self, head: int):
        return self._owner[head]

    def head_of(self, class_id: int) -> int:
        if class_id not in self._head_of_class:
            raise StateError(f"class {class_id} has no head assigned yet")
        return self._head_of_class[class_id]

    def heads_for_labels(self, labels: np.ndarray) -> np.ndarray:
        return np.asarray([self.head_of(int(c)) for c in labels], dtype=np.int64)

    def task_heads(self, task_index: int) -> tuple:
        return self._task_heads.get(task_index, ())

    def aux_heads(self) -> list:
        return [h for h, o in enumerate(self._owner) if o is not None and o[0] == "aux"]

    def task_owned_heads(self) -> list:
        return [h for h, o in enumerate(self._owner) if o is not None and o[0] == "task"]

    def unassigned_heads(self) -> list:
        return [h for h, o in enumerate(self._owner) if o is None]

    def num_aux_owned(self) -> int:
        return len(self.aux_heads())

    def class_of_head(self, head: int) -> int:
        o = self._owner[head]
        if o is None or o[0] != "task":
            raise StateError(f"head {head} is not owned by a task class")
        return o[1]

    def set_aux_owner(self, head: int, aux_class: int):
        if self._owner[head] is not None:
            raise StateError(f"head {head} already owned by {self._owner[head]}")
        self._owner[head] = ("aux", int(aux_class))

    def assign_task_class(self, head: int, class_id: int, task_index: int) -> int | None:
        """Give `head` to a task class; returns the displaced aux class, if any.

        Task ownership is permanent: reassigning a task-owned head is an error.
        """
        current = self._owner[head]
        if current is not None and current[0] == "task":
            raise StateError(f"head {head} already belongs to task class {current[1]}")
        if class_id in self._head_of_class:
            raise StateError(f"class {class_id} already owns head {self._head_of_class[class_id]}")
        displaced = current[1] if current is not None else None
        self._owner[head] = ("task", int(class_id))
        self._head_of_class[int(class_id)] = head
        self._task_heads.setdefault(task_index, [])
        self._task_heads[task_index] = tuple(list(self._task_heads[task_index]) + [head])
        return displaced

    def class_mask(self, heads) -> np.ndarray:
        mask = np.zeros(self.num_heads, dtype=bool)
        mask[list(heads)] = True
        return mask

    def to_summary(self) -> dict:
        out = {}
        for h, o in enumerate(self._owner):
            if o is None:
                out[str(h)] = "unassigned"
            else:
                out[str(h)] = f"{o[0]}:{o[1]}"
        return out


# ---------------------------------------------------------------------------
# profiles


def compute_profiles(model, task: TaskSpec, batch_size: int = 256) -> list:
    """Average the frozen model's logits per class over the task's train set.

    One pass over the data, accumulating sums in 64-bit regardless of the
    model dtype so the means are reproducible to summation-order noise.
    """
    if not model.frozen:
        raise StateError("compute_profiles requires a frozen model")
    sums = {c: np.zeros(model.num_heads, dtype=np.float64) for c in task.classes}
    counts = {c: 0 for c in task.classes}
    inputs, labels = task.train.inputs, task.train.labels
    for start in range(0, len(labels), batch_size):
        rows = slice(start, start + batch_size)
        logits = model.forward(inputs[rows]).data.astype(np.float64)
        for row, c in zip(logits, labels[rows]):
            sums[int(c)] += row
            counts[int(c)] += 1
    profiles = []
    for c in task.classes:
        if counts[c] == 0:
            raise StateError(f"task {task.index} has no samples of class {c}")
        profiles.append(ClassLogitProfile(c, sums[c] / counts[c], counts[c]))
    return profiles


# ---------------------------------------------------------------------------
# assignment rules


def assign_heads(profiles: list, head_map: HeadMap, task_index: int) -> list:
    """Most-activated-heads assignment over the placeholder heads.

    Only aux-owned heads compete. All (class, head) activation pairs are
    ranked by mean logit, descending, and committed greedily: the largest
    value whose class and head are both unclaimed wins, so on a collision
    the stronger class keeps the head and the weaker one falls back to its
    best remaining placeholder. Exact ties break toward the lower head
    index, then the lower class id. Returns the displaced aux classes.
    """
    aux = head_map.aux_heads()
    if len(aux) < len(profiles):
        raise StateError(
            f"{len(profiles)} classes need placeholder heads but only {len(aux)} are aux-owned"
        )
    ranked = sorted(
        ((p.mean_logits[h], h, p.class_id) for p in profiles for h in aux),
        key=lambda item: (-item[0], item[1], item[2]),
    )
    taken_heads = set()
    placed = set()
    retired = []
    for _, head, class_id in ranked:
        if len(placed) == len(profiles):
            break
        if head in taken_heads or class_id in placed:
            continue
        displaced = head_map.assign_task_class(head, class_id, task_index)
        retired.append(displaced)
        taken_heads.add(head)
        placed.add(class_id)
    return retired


def sequential_assign(task: TaskSpec, head_map: HeadMap) -> list:
    """Assign task classes to the lowest-index heads not owned by a task.

    This is the plain fallback used when activation mapping is disabled;
    displaced aux classes (if the heads were placeholders) are returned.
    """
    free = [h for h in range(head_map.num_heads)
            if head_map.owner(h) is None or head_map.owner(h)[0] == "aux"]
    if len(free) < len(task.classes):
        raise StateError(
            f"task {task.index} needs {len(task.classes)} heads but only {len(free)} are free"
        )
    retired = []
    for class_id, head in zip(task.classes, free):
        displaced = head_map.assign_task_class(head, class_id, task.index)
        if displaced is not None:
            retired.append(displaced)
    return retired
