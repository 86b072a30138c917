"""Training loops: loss composition, degeneracies, determinism, pretraining."""

import copy

import numpy as np
import pytest

from auxcl.buffer import Reservoir
from auxcl.data import build_aux_pool, build_sequence, make_synthetic, relabel, split_dataset
from auxcl.errors import ConfigError, StateError
from auxcl.mah import HeadMap, sequential_assign
from auxcl.methods import MethodConfig, pretrain_on_aux, run_sequence, train_task
from auxcl.models import BackboneConfig, build_model
from auxcl.seeds import SeedStreams, stream

DIM = 8
BACKBONE = BackboneConfig(kind="mlp", input_shape=(DIM,), num_heads=10, hidden=(16, 8))


def make_world(seed=0, num_tasks=5, classes_per_task=2, per_class=24, sep=3.0):
    num_classes = num_tasks * classes_per_task
    content = make_synthetic(num_classes, per_class + 8, DIM, sep, np.random.default_rng([99, 0]))
    train, test = split_dataset(content, 8, np.random.default_rng([99, 1]))
    seq = build_sequence(train, test, classes_per_task, num_tasks, stream(seed, "class_split"))
    aux_ds = relabel(make_synthetic(10, per_class, DIM, sep, np.random.default_rng([98, 0])),
                     num_classes)
    pool = build_aux_pool(aux_ds, seq, stream(seed, "aux_select"))
    return seq, pool


def cfg_for(method="derpp", **kw):
    defaults = dict(method=method, lr=0.05, epochs_per_task=2, task_batch=8,
                    aux_batch=8, replay_batch=8, buffer_capacity=20, seed=0)
    defaults.update(kw)
    return MethodConfig(**defaults)


def backbone_for(seq):
    return BackboneConfig(kind="mlp", input_shape=(DIM,), num_heads=seq.num_heads, hidden=(16, 8))


class TestMethodConfig:
    def test_mah_requires_aux(self):
        with pytest.raises(ConfigError):
            MethodConfig(method="derpp", use_aux=False, use_mah=True)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            MethodConfig(method="icarl")

    def test_negative_weights(self):
        with pytest.raises(ConfigError):
            MethodConfig(alpha=-0.1)


class TestTrainTask:
    def test_finetune_loss_is_pure_ce_and_buffer_untouched(self):
        seq, _ = make_world()
        cfg = cfg_for("finetune")
        streams = SeedStreams(cfg.seed)
        model = build_model(backbone_for(seq), streams.model_init)
        hm = HeadMap(seq.num_heads)
        sequential_assign(seq.tasks[0], hm)
        buf = Reservoir(cfg.buffer_capacity)
        trace = train_task(model, seq.tasks[0], None, buf, hm, cfg, streams)
        assert len(buf) == 0 and buf.seen == 0
        np.testing.assert_array_equal(trace.total, trace.ce)
        assert all(v == 0.0 for v in trace.replay_mse)
        assert all(v == 0.0 for v in trace.replay_ce)

    def test_derpp_replay_terms_zero_while_buffer_empty(self):
        seq, _ = make_world()
        cfg = cfg_for("derpp")
        streams = SeedStreams(cfg.seed)
        model = build_model(backbone_for(seq), streams.model_init)
        hm = HeadMap(seq.num_heads)
        sequential_assign(seq.tasks[0], hm)
        buf = Reservoir(cfg.buffer_capacity)
        trace = train_task(model, seq.tasks[0], None, buf, hm, cfg, streams)
        # the very first iteration starts from an empty buffer
        assert trace.replay_mse[0] == 0.0 and trace.replay_ce[0] == 0.0
        assert trace.total[0] == trace.ce[0]
        # afterwards the buffer is populated and the terms engage
        assert any(v != 0.0 for v in trace.replay_mse[1:])
        assert len(buf) == cfg.buffer_capacity

    def test_unmapped_class_is_a_state_error(self):
        seq, _ = make_world()
        cfg = cfg_for()
        streams = SeedStreams(cfg.seed)
        model = build_model(backbone_for(seq), streams.model_init)
        hm = HeadMap(seq.num_heads)  # nothing assigned
        with pytest.raises(StateError):
            train_task(model, seq.tasks[0], None, Reservoir(8), hm, cfg, streams)

    def test_loss_decomposition_sums_exactly(self):
        seq, pool = make_world()
        cfg = cfg_for("derpp", use_aux=True)
        result = run_sequence(backbone_for(seq), cfg, seq, pool)
        total = result.ce_loss + result.replay_mse_loss + result.replay_ce_loss
        np.testing.assert_allclose(result.total_loss, total, atol=1e-9)

    def test_buffer_holds_only_task_stream_labels(self):
        seq, pool = make_world()
        cfg = cfg_for("derpp", use_aux=True, use_mah=True)
        result = run_sequence(backbone_for(seq), cfg, seq, pool)
        task_classes = set(seq.all_classes)
        assert len(result.buffer) > 0
        for e in result.buffer.entries:
            assert e.label in task_classes

    def test_final_task_with_exhausted_pool_matches_no_aux(self):
        # drive two tasks by hand, clone the world, and train the final task
        # once with the exhausted pool and once with auxiliary data disabled
        seq, pool = make_world(num_tasks=2)
        cfg_aux = cfg_for("derpp", use_aux=True)
        cfg_van = cfg_for("derpp", use_aux=False)
        streams = SeedStreams(cfg_aux.seed)
        model = build_model(backbone_for(seq), streams.model_init)
        hm = HeadMap(seq.num_heads)
        sequential_assign(seq.tasks[0], hm)
        for aux_class, head in sorted(pool.head_for_class.items()):
            hm.set_aux_owner(head, aux_class)
        buf = Reservoir(cfg_aux.buffer_capacity)
        train_task(model, seq.tasks[0], pool, buf, hm, cfg_aux, streams)
        retired = sequential_assign(seq.tasks[1], hm)
        pool.retire(retired)
        assert pool.is_exhausted

        model_b = copy.deepcopy(model)
        buf_b = copy.deepcopy(buf)
        streams_b = copy.deepcopy(streams)
        hm_b = copy.deepcopy(hm)

        ta = train_task(model, seq.tasks[1], pool, buf, hm, cfg_aux, streams)
        tb = train_task(model_b, seq.tasks[1], None, buf_b, hm_b, cfg_van, streams_b)
        assert ta.total == tb.total
        assert model.param_checksum() == model_b.param_checksum()


class TestDegeneracies:
    def test_empty_aux_pool_run_is_bit_identical_to_no_aux(self):
        # a single-task sequence needs zero placeholder classes, so the pool
        # is empty from the start and the aux flag must change nothing
        results = []
        for use_aux in (True, False):
            seq, pool = make_world(num_tasks=1)
            cfg = cfg_for("derpp", use_aux=use_aux)
            results.append(run_sequence(backbone_for(seq), cfg, seq,
                                        pool if use_aux else None))
        assert results[0].total_loss.tobytes() == results[1].total_loss.tobytes()
        assert results[0].model.param_checksum() == results[1].model.param_checksum()

    def test_zero_aux_batch_reproduces_vanilla(self):
        seq, pool = make_world()
        aux_run = run_sequence(backbone_for(seq), cfg_for("derpp", use_aux=True, aux_batch=0),
                               seq, pool)
        seq2, _ = make_world()
        vanilla = run_sequence(backbone_for(seq2), cfg_for("derpp", use_aux=False), seq2, None)
        assert aux_run.total_loss.tobytes() == vanilla.total_loss.tobytes()
        assert aux_run.record.class_il_final == vanilla.record.class_il_final


class TestRunSequence:
    def test_fixed_seed_runs_are_digest_identical(self):
        digests = []
        for _ in range(2):
            seq, pool = make_world()
            cfg = cfg_for("derpp", use_aux=True, use_mah=True)
            digests.append(run_sequence(backbone_for(seq), cfg, seq, pool).digest())
        assert digests[0] == digests[1]

    def test_sequential_fallback_assigns_ascending_heads(self):
        seq, pool = make_world()
        cfg = cfg_for("derpp", use_aux=True, use_mah=False)
        result = run_sequence(backbone_for(seq), cfg, seq, pool)
        for t, task in enumerate(seq.tasks):
            expected = list(range(2 * t, 2 * t + 2))
            assert sorted(result.head_map.task_heads(t)) == expected

    def test_vanilla_derpp_has_boundary_loss_spikes(self):
        seq, _ = make_world()
        cfg = cfg_for("derpp", use_aux=False, epochs_per_task=4)
        result = run_sequence(backbone_for(seq), cfg, seq, None)
        losses = result.total_loss
        for t in range(1, seq.num_tasks):
            start = result.boundaries[t]
            prev = slice(result.boundaries[t - 1], start)
            spike = losses[start : start + 3].max()
            assert spike > losses[prev].mean()

    def test_aux_gradient_reaches_every_head_each_task(self):
        seq, pool = make_world()
        cfg = cfg_for("derpp", use_aux=True, use_mah=True)
        result = run_sequence(backbone_for(seq), cfg, seq, pool)
        assert (result.head_grad_per_task > 0).all()

    def test_mah_run_exhausts_the_pool(self):
        seq, pool = make_world()
        cfg = cfg_for("derpp", use_aux=True, use_mah=True)
        result = run_sequence(backbone_for(seq), cfg, seq, pool)
        assert pool.is_exhausted
        assert result.head_map.num_aux_owned() == 0
        assert sorted(result.head_map.task_owned_heads()) == list(range(10))

    def test_aux_requires_pool(self):
        seq, _ = make_world()
        with pytest.raises(ConfigError):
            run_sequence(backbone_for(seq), cfg_for("derpp", use_aux=True), seq, None)

    def test_head_count_must_match_sequence(self):
        seq, _ = make_world()
        bad = BackboneConfig(kind="mlp", input_shape=(DIM,), num_heads=6, hidden=(16, 8))
        with pytest.raises(ConfigError):
            run_sequence(bad, cfg_for(), seq, None)

    def test_er_uses_replay_ce_not_mse(self):
        seq, _ = make_world()
        result = run_sequence(backbone_for(seq), cfg_for("er"), seq, None)
        assert (result.replay_mse_loss == 0.0).all()
        assert (result.replay_ce_loss[1:] > 0.0).any()

    def test_der_has_no_replay_ce(self):
        seq, _ = make_world()
        result = run_sequence(backbone_for(seq), cfg_for("der"), seq, None)
        assert (result.replay_ce_loss == 0.0).all()
        assert (result.replay_mse_loss[1:] > 0.0).any()


class TestUnassignedHeadGradients:
    def test_only_softmax_pressure_without_aux(self):
        # during task 1 without aux, heads 2..9 are unassigned: their bias
        # gradient is the mean softmax mass, which is strictly positive
        seq, _ = make_world()
        cfg = cfg_for("finetune")
        streams = SeedStreams(cfg.seed)
        model = build_model(backbone_for(seq), streams.model_init)
        hm = HeadMap(seq.num_heads)
        sequential_assign(seq.tasks[0], hm)
        from auxcl import autodiff as ad

        x = seq.tasks[0].train.inputs[:8]
        y = hm.heads_for_labels(seq.tasks[0].train.labels[:8])
        loss = ad.softmax_cross_entropy(model.forward(x), y)
        loss.backward()
        bias_grad = model.output_parameters()[1].grad
        assigned = set(hm.task_owned_heads())
        for h in range(seq.num_heads):
            if h not in assigned:
                assert bias_grad[h] > 0.0


class TestPretraining:
    def test_zero_epochs_leaves_model_unchanged(self):
        seq, pool = make_world()
        model = build_model(backbone_for(seq), np.random.default_rng(1))
        before = model.param_checksum()
        pretrain_on_aux(model, pool, 0, 0.05, np.random.default_rng(2))
        assert model.param_checksum() == before

    def test_pretraining_changes_feature_layers(self):
        seq, pool = make_world()
        model = build_model(backbone_for(seq), np.random.default_rng(1))
        before = model.feature_checksum()
        pretrain_on_aux(model, pool, 1, 0.05, np.random.default_rng(2))
        assert model.feature_checksum() != before

    def test_paired_seed_harness(self):
        # same master seed: downstream randomness identical, so the only
        # difference between the runs is the pre-trained feature stack
        scores = {}
        for pre in (0, 3):
            seq, pool = make_world()
            cfg = cfg_for("derpp", use_aux=False, pretrain_epochs=pre)
            result = run_sequence(backbone_for(seq), cfg, seq, pool)
            scores[pre] = result.record.class_il_final
        assert scores[0] != scores[3]  # pretraining had a real effect

    def test_pretrain_run_reinitializes_output(self):
        seq, pool = make_world()
        model = build_model(backbone_for(seq), np.random.default_rng(1))
        w_before = model.output_parameters()[0].data.copy()
        pretrain_on_aux(model, pool, 1, 0.05, np.random.default_rng(2))
        w_after = model.output_parameters()[0].data
        assert not np.array_equal(w_before, w_after)
        assert (model.output_parameters()[1].data == 0).all()  # bias reset
