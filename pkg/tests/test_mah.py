"""Head-map bookkeeping and the most-activated-heads assignment rule."""

import numpy as np
import pytest
from helpers import greedy_assignment_oracle

from auxcl.data import Dataset, TaskSpec
from auxcl.errors import StateError
from auxcl.mah import (ClassLogitProfile, HeadMap, assign_heads, compute_profiles,
                       sequential_assign)
from auxcl.models import BackboneConfig, build_model


def make_task(classes=(0, 1), per_class=4, dim=6, seed=0, index=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(list(classes), per_class)
    inputs = rng.standard_normal((labels.size, dim))
    ds = Dataset(inputs, labels)
    return TaskSpec(index=index, classes=classes, train=ds, test=ds)


def make_map(num_heads=10, task_heads=(), aux_start=None):
    hm = HeadMap(num_heads)
    for i, c in enumerate(task_heads):
        hm.assign_task_class(i, c, task_index=0)
    if aux_start is not None:
        for j, h in enumerate(range(aux_start, num_heads)):
            hm.set_aux_owner(h, 100 + j)
    return hm


def profile(class_id, values):
    return ClassLogitProfile(class_id, np.asarray(values, dtype=float), count=1)


class TestHeadMap:
    def test_task_ownership_is_permanent(self):
        hm = make_map(task_heads=(0, 1))
        with pytest.raises(StateError):
            hm.assign_task_class(0, 7, task_index=1)

    def test_class_cannot_own_two_heads(self):
        hm = make_map(task_heads=(0, 1))
        with pytest.raises(StateError):
            hm.assign_task_class(5, 0, task_index=1)

    def test_aux_owner_requires_unassigned_head(self):
        hm = make_map(task_heads=(0, 1))
        with pytest.raises(StateError):
            hm.set_aux_owner(0, 42)

    def test_summary_lists_every_head(self):
        hm = make_map(num_heads=4, task_heads=(3, 7), aux_start=2)
        summary = hm.to_summary()
        assert summary == {"0": "task:3", "1": "task:7", "2": "aux:100", "3": "aux:101"}

    def test_heads_for_labels(self):
        hm = make_map(task_heads=(4, 9))
        np.testing.assert_array_equal(hm.heads_for_labels(np.array([9, 4, 4])), [1, 0, 0])
        with pytest.raises(StateError):
            hm.head_of(123)


class TestComputeProfiles:
    def _model(self, dim=6, heads=10, seed=1):
        cfg = BackboneConfig(kind="mlp", input_shape=(dim,), num_heads=heads, hidden=(8,))
        model = build_model(cfg, np.random.default_rng(seed))
        model.freeze()
        return model

    def test_single_sample_profile_is_its_logits(self):
        model = self._model()
        task = make_task(per_class=1)
        profiles = compute_profiles(model, task)
        for p in profiles:
            row = task.train.inputs[task.train.labels == p.class_id]
            np.testing.assert_allclose(p.mean_logits, model.forward(row).data[0], atol=1e-12)

    def test_duplicating_samples_leaves_profiles_unchanged(self):
        model = self._model()
        task = make_task(per_class=3)
        doubled = TaskSpec(
            index=0, classes=task.classes,
            train=Dataset(np.concatenate([task.train.inputs] * 2),
                          np.concatenate([task.train.labels] * 2)),
            test=task.test,
        )
        a = compute_profiles(model, task)
        b = compute_profiles(model, doubled)
        for pa, pb in zip(a, b):
            np.testing.assert_allclose(pa.mean_logits, pb.mean_logits, atol=1e-12)

    def test_matches_naive_summation(self):
        model = self._model()
        task = make_task(per_class=50, seed=3)
        profiles = compute_profiles(model, task, batch_size=7)
        for p in profiles:
            rows = task.train.inputs[task.train.labels == p.class_id]
            naive = np.zeros(model.num_heads)
            for r in rows:  # one-at-a-time summation order
                naive += model.forward(r[None]).data[0]
            np.testing.assert_allclose(p.mean_logits, naive / len(rows), atol=1e-9)

    def test_requires_frozen_model(self):
        model = self._model()
        model.unfreeze()
        with pytest.raises(StateError):
            compute_profiles(model, make_task())

    def test_counts_match_dataset(self):
        model = self._model()
        profiles = compute_profiles(model, make_task(per_class=5))
        assert [p.count for p in profiles] == [5, 5]


class TestAssignHeads:
    def test_single_class_takes_peak_head(self):
        hm = make_map(num_heads=5, task_heads=(0, 1), aux_start=2)
        values = np.array([0.0, 9.0, 1.0, 5.0, 2.0])  # peak at masked head 1, aux peak at 3
        retired = assign_heads([profile(7, values)], hm, task_index=1)
        assert hm.head_of(7) == 3
        assert retired == [101]  # aux class sitting on head 3
        assert hm.owner(3) == ("task", 7)

    def test_collision_largest_value_wins(self):
        hm = make_map(num_heads=8, task_heads=(0, 1), aux_start=2)
        winner = profile(10, [0, 0, 1, 2, 3, 9.0, 4, 0])
        loser = profile(11, [0, 0, 1, 2, 3, 7.0, 6.0, 0])
        assign_heads([winner, loser], hm, task_index=1)
        assert hm.head_of(10) == 5
        assert hm.head_of(11) == 6  # second-best remaining aux head

    def test_argmax_ignores_task_owned_heads(self):
        hm = make_map(num_heads=5, task_heads=(0, 1), aux_start=2)
        values = np.array([100.0, 100.0, 1.0, 0.5, 0.2])
        assign_heads([profile(7, values)], hm, task_index=1)
        assert hm.head_of(7) == 2

    def test_matches_greedy_oracle_on_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(300):
            hm = make_map(num_heads=10, task_heads=(0, 1), aux_start=2)
            values = rng.standard_normal((4, 10))
            profiles = [profile(20 + c, values[c]) for c in range(4)]
            assign_heads(profiles, hm, task_index=1)
            expected = greedy_assignment_oracle(values, [20 + c for c in range(4)],
                                                list(range(2, 10)))
            got = {20 + c: hm.head_of(20 + c) for c in range(4)}
            assert got == expected

    def test_crafted_ties_break_low_head_then_low_class(self):
        hm = make_map(num_heads=6, task_heads=(0,), aux_start=1)
        a = profile(3, [0.0, 5.0, 5.0, 0.0, 0.0, 0.0])
        b = profile(2, [0.0, 5.0, 5.0, 0.0, 0.0, 0.0])
        assign_heads([a, b], hm, task_index=1)
        assert hm.head_of(2) == 1  # lower class id wins the lower head
        assert hm.head_of(3) == 2

    def test_too_few_aux_heads(self):
        hm = make_map(num_heads=4, task_heads=(0, 1), aux_start=3)
        with pytest.raises(StateError):
            assign_heads([profile(5, np.zeros(4)), profile(6, np.zeros(4))], hm, 1)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(77)
        values = rng.standard_normal((3, 8))
        hm = make_map(num_heads=8, task_heads=(0, 1), aux_start=2)
        profiles = [profile(30 + c, values[c]) for c in range(3)]
        assign_heads(profiles, hm, task_index=1)
        base = {30 + c: hm.head_of(30 + c) for c in range(3)}

        perm = np.concatenate([[0, 1], 2 + rng.permutation(6)])  # permute aux heads only
        hm2 = HeadMap(8)
        hm2.assign_task_class(0, 0, 0)
        hm2.assign_task_class(1, 1, 0)
        inverse = np.argsort(perm)
        for h in range(2, 8):
            hm2.set_aux_owner(int(inverse[h]), 100 + h - 2)
        permuted = [profile(30 + c, values[c][perm]) for c in range(3)]
        assign_heads(permuted, hm2, task_index=1)
        for c in range(3):
            assert hm2.head_of(30 + c) == int(inverse[base[30 + c]])

    def test_shift_invariance(self):
        rng = np.random.default_rng(78)
        values = rng.standard_normal((3, 8))
        results = []
        for shift in (0.0, 1000.0):
            hm = make_map(num_heads=8, task_heads=(0, 1), aux_start=2)
            profiles = [profile(30 + c, values[c] + shift) for c in range(3)]
            assign_heads(profiles, hm, task_index=1)
            results.append({30 + c: hm.head_of(30 + c) for c in range(3)})
        assert results[0] == results[1]


class TestSequentialAssign:
    def test_second_task_takes_next_heads(self):
        hm = make_map(num_heads=10, task_heads=(0, 1))
        task = make_task(classes=(5, 6), index=1)
        sequential_assign(task, hm)
        assert hm.head_of(5) == 2 and hm.head_of(6) == 3

    def test_five_tasks_fill_heads_in_order(self):
        hm = HeadMap(10)
        for t in range(5):
            task = make_task(classes=(2 * t, 2 * t + 1), index=t)
            sequential_assign(task, hm)
        for c in range(10):
            assert hm.head_of(c) == c

    def test_never_overlaps_task_owned_heads(self):
        hm = make_map(num_heads=6, task_heads=(9, 8), aux_start=2)
        task = make_task(classes=(3, 4), index=1)
        sequential_assign(task, hm)
        assert {hm.head_of(3), hm.head_of(4)} == {2, 3}
        assert hm.owner(0) == ("task", 9) and hm.owner(1) == ("task", 8)

    def test_retires_displaced_aux_classes(self):
        hm = make_map(num_heads=4, task_heads=(0, 1), aux_start=2)
        retired = sequential_assign(make_task(classes=(5, 6), index=1), hm)
        assert retired == [100, 101]

    def test_not_enough_free_heads(self):
        hm = make_map(num_heads=2, task_heads=(0, 1))
        with pytest.raises(StateError):
            sequential_assign(make_task(classes=(5, 6), index=1), hm)


class TestFullRunBookkeeping:
    def test_aux_budget_shrinks_to_zero_over_five_tasks(self):
        # 5 tasks of 2 classes; 8 placeholders shrink by 2 per boundary
        hm = HeadMap(10)
        hm.assign_task_class(0, 0, 0)
        hm.assign_task_class(1, 1, 0)
        for j in range(8):
            hm.set_aux_owner(2 + j, 100 + j)
        expected = [8, 6, 4, 2, 0]
        assert hm.num_aux_owned() == expected[0]
        rng = np.random.default_rng(5)
        for t in range(1, 5):
            classes = (2 * t, 2 * t + 1)
            values = rng.standard_normal((2, 10))
            profiles = [profile(classes[i], values[i]) for i in range(2)]
            assign_heads(profiles, hm, task_index=t)
            assert hm.num_aux_owned() == expected[t]
        assert hm.num_aux_owned() == 0
        assert sorted(hm.head_of(c) for c in range(10)) == list(range(10))
