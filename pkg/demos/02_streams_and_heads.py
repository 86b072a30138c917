"""How task sequences, the auxiliary pool, and head ownership interact.

Run:  python demos/02_streams_and_heads.py
"""

import numpy as np

from auxcl.data import (MixedStream, build_aux_pool, build_sequence, make_synthetic,
                        relabel, split_dataset)
from auxcl.mah import HeadMap, assign_heads, compute_profiles, sequential_assign
from auxcl.models import BackboneConfig, build_model
from auxcl.seeds import stream

# --- a 5-task class-incremental stream over 10 synthetic classes ------------
content = make_synthetic(10, 120, 16, 3.0, np.random.default_rng([7, 0]))
train, test = split_dataset(content, 40, np.random.default_rng([7, 1]))
sequence = build_sequence(train, test, classes_per_task=2, num_tasks=5,
                          rng=stream(0, "class_split"))
print("task class sets:", [t.classes for t in sequence.tasks])

# --- the auxiliary pool fills the 8 future heads with placeholder classes ---
aux_data = relabel(make_synthetic(10, 120, 16, 3.0, np.random.default_rng([8, 0])), 10)
pool = build_aux_pool(aux_data, sequence, stream(0, "aux_select"))
print("aux class -> head:", dict(sorted(pool.head_for_class.items())))

head_map = HeadMap(sequence.num_heads)
sequential_assign(sequence.tasks[0], head_map)
for aux_class, head in sorted(pool.head_for_class.items()):
    head_map.set_aux_owner(head, aux_class)
print("initial ownership:", head_map.to_summary())

# --- mixed batches carry task samples plus head-labelled aux samples --------
mixed = MixedStream(sequence.tasks[0], pool, task_batch=4, aux_batch=4,
                    task_rng=stream(0, "task_batches"), aux_rng=stream(0, "aux_batches"))
mb = mixed.next_mixed_batch()
print("task labels:", mb.task_classes, " aux head targets:", mb.aux_heads)

# --- at a boundary, the most activated heads claim the new classes ----------
model = build_model(BackboneConfig(kind="mlp", input_shape=(16,), num_heads=10), stream(0, "model_init"))
model.freeze()
profiles = compute_profiles(model, sequence.tasks[1])
for p in profiles:
    masked = {h: round(p.mean_logits[h], 3) for h in head_map.aux_heads()}
    print(f"class {p.class_id}: activation per placeholder head {masked}")
retired = assign_heads(profiles, head_map, task_index=1)
pool.retire(retired)
model.unfreeze()
print("after mapping task 2:", head_map.to_summary())
print("placeholders left:", head_map.num_aux_owned(), " pool active:", len(pool.active_classes))
