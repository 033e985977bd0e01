import itertools
import math

import numpy as np
import pytest
from helpers import gradcheck, gradcheck_instance, random_batch

from clickgraph.data import N_FIELDS, EncodedBatch
from clickgraph.models import (
    MODEL_KINDS,
    CheckpointError,
    ConfigError,
    DivergenceError,
    IndexRangeError,
    ModelConfig,
    fignn_forward,
    fm_pairwise,
    init_model,
    load_checkpoint,
    logits,
    loss,
    predict,
    save_checkpoint,
    train_step,
)
from clickgraph.models import deepfm

SIZES = (5,) * N_FIELDS


def small_config(kind, **kw):
    base = dict(embed_dim=4, attention_heads=2, gnn_steps=2, mlp_hidden=(8, 4), init_scale=0.1, seed=0)
    base.update(kw)
    return ModelConfig(kind, **base)


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert (cfg.model_kind, cfg.embed_dim, cfg.attention_heads, cfg.gnn_steps) == ("fignn", 16, 2, 2)
        assert cfg.mlp_hidden == (64, 32) and cfg.init_scale == 0.01
        assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) == (1e-3, 0.9, 0.999, 1e-8)

    @pytest.mark.parametrize("kw", [
        dict(model_kind="svm"), dict(embed_dim=5, attention_heads=2), dict(mlp_hidden=(0,)),
        dict(init_scale=-1.0), dict(embed_dim=0),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig(**kw)

    def test_case_insensitive_kind(self):
        assert ModelConfig("DeepFM").model_kind == "deepfm"

    def test_json_roundtrip(self):
        cfg = small_config("deepfm")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_wrong_field_count(self):
        with pytest.raises(ConfigError):
            init_model(ModelConfig("lr"), (3,) * 10)


class TestInit:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_same_seed_bit_identical(self, kind):
        a, b = init_model(small_config(kind), SIZES), init_model(small_config(kind), SIZES)
        assert a.params.keys() == b.params.keys()
        for name in a.params:
            assert a.params[name].tobytes() == b.params[name].tobytes()

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_different_seeds_differ(self, kind):
        a = init_model(small_config(kind, seed=1), SIZES)
        b = init_model(small_config(kind, seed=2), SIZES)
        assert any(not np.array_equal(a.params[n], b.params[n]) for n in a.params)

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_zero_scale_gives_half(self, kind, rng):
        state = init_model(small_config(kind, init_scale=0.0), SIZES)
        assert all(np.all(p == 0) for p in state.params.values())
        np.testing.assert_array_equal(predict(state, random_batch(rng, SIZES, 7)), 0.5)
        assert state.generation == 0 and state.adam.t == 0

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_weights_within_scale_and_biases_zero(self, kind):
        state = init_model(small_config(kind, init_scale=0.05), SIZES)
        for name, p in state.params.items():
            assert np.all(np.abs(p) <= 0.05)
            if name in ("bias", "out.b") or name.startswith(("mlp.b", "gru.b")):
                assert np.all(p == 0), name


class TestPredict:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_open_interval_and_pure(self, kind, rng):
        state = init_model(small_config(kind, init_scale=0.5), SIZES)
        before = {n: p.copy() for n, p in state.params.items()}
        batch = random_batch(rng, SIZES, 20)
        p1, p2 = predict(state, batch), predict(state, batch)
        assert np.all((p1 > 0) & (p1 < 1))
        assert p1.tobytes() == p2.tobytes()
        for n in before:
            np.testing.assert_array_equal(state.params[n], before[n])

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_extreme_logits_stay_inside(self, kind, rng):
        state = init_model(small_config(kind), SIZES)
        state.params["bias" if kind != "fignn" else "out.b"][...] = 900.0
        p = predict(state, random_batch(rng, SIZES, 3))
        assert np.all(p < 1) and np.all(p > 0)

    def test_index_out_of_range(self, rng):
        state = init_model(small_config("lr"), SIZES)
        batch = random_batch(rng, SIZES, 2)
        batch.indices[1, 3] = 0  # belongs to field 0
        with pytest.raises(IndexRangeError):
            predict(state, batch)

    def test_accepts_example_lists(self, rng):
        state = init_model(small_config("fm"), SIZES)
        batch = random_batch(rng, SIZES, 4)
        np.testing.assert_array_equal(predict(state, list(batch)), predict(state, batch))

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_permutation_equivariant(self, kind, rng):
        state = init_model(small_config(kind, init_scale=0.3), SIZES)
        batch = random_batch(rng, SIZES, 9)
        perm = rng.permutation(9)
        np.testing.assert_allclose(predict(state, batch[perm]), predict(state, batch)[perm], rtol=0, atol=1e-15)


class TestFM:
    def test_zero_embeddings_equal_lr(self, rng):
        fm = init_model(small_config("fm", init_scale=0.3), SIZES)
        fm.params["v"][...] = 0.0
        lr = init_model(small_config("lr"), SIZES)
        lr.params["w"][...] = fm.params["w"]
        lr.params["bias"][...] = 0.7
        fm.params["bias"][...] = 0.7
        batch = random_batch(rng, SIZES, 11)
        np.testing.assert_array_equal(predict(fm, batch), predict(lr, batch))

    @pytest.mark.parametrize("seed", range(10))
    def test_identity_matches_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        n, k = rng.integers(2, 40), rng.integers(1, 9)
        V = rng.normal(size=(n, k))
        x = rng.normal(size=n)
        brute = sum(V[i] @ V[j] * x[i] * x[j] for i, j in itertools.combinations(range(n), 2))
        fast = fm_pairwise((V * x[:, None])[None])[0]
        assert abs(fast - brute) <= 1e-10 * max(1.0, abs(brute))


class TestLoss:
    def test_half_is_ln2(self):
        assert loss([0.5] * 4, [0, 1, 1, 0]) == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect_prediction(self):
        assert loss([0.0, 1.0, 1.0], [0, 1, 1]) <= -math.log(1 - 1e-7) + 1e-15

    def test_hand_value(self):
        assert loss([0.9, 0.2], [1, 0]) == pytest.approx(0.164252, abs=1e-6)

    def test_empty(self):
        with pytest.raises(ValueError):
            loss([], [])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss([0.5, 0.5], [1])


class TestTrainStep:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_loss_decreases_on_fixed_batch(self, kind, rng):
        state = init_model(ModelConfig(kind, seed=3), SIZES)
        batch = random_batch(rng, SIZES, 4, labels=np.array([1, 0, 1, 0]))
        losses = []
        for _ in range(50):
            state, value = train_step(state, batch)
            losses.append(value)
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert state.adam.t == 50 and state.generation == 0

    def test_pre_update_loss_and_purity(self, rng):
        state = init_model(small_config("fm"), SIZES)
        batch = random_batch(rng, SIZES, 6)
        w_before = state.params["w"].copy()
        new, value = train_step(state, batch)
        assert value == pytest.approx(loss(predict(state, batch), batch.labels), abs=1e-14)
        np.testing.assert_array_equal(state.params["w"], w_before)
        assert not np.array_equal(new.params["w"], w_before)

    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_saturated_batch_barely_moves(self, kind, rng):
        state = init_model(small_config(kind, init_scale=0.0), SIZES)
        state.params["bias" if kind != "fignn" else "out.b"][...] = 40.0
        batch = random_batch(rng, SIZES, 5, labels=np.ones(5, dtype=int))
        new, _ = train_step(state, batch)
        for name in state.params:
            assert np.max(np.abs(new.params[name] - state.params[name]), initial=0.0) <= 1e-8 * state.config.lr

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            train_step(init_model(small_config("lr"), SIZES), EncodedBatch.empty())

    def test_divergence_reported(self, rng):
        state = init_model(small_config("lr"), SIZES)
        state.params["w"][0] = np.nan
        batch = random_batch(rng, SIZES, 3)
        batch.indices[:, 0] = 0
        with pytest.raises(DivergenceError) as info:
            train_step(state, batch)
        assert info.value.generation == 0


class TestGradients:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    @pytest.mark.parametrize("seed", range(2))
    def test_finite_differences(self, kind, seed):
        state, batch = gradcheck_instance(kind, seed)
        assert gradcheck(state, batch) < 1e-4


class TestFiGNN:
    def test_zero_steps_still_probability(self, rng):
        state = init_model(small_config("fignn", gnn_steps=0, init_scale=0.5), SIZES)
        probs, cache = fignn_forward(state, random_batch(rng, SIZES, 5), return_cache=True)
        assert np.all((probs > 0) & (probs < 1))
        assert cache.edge_weights == []

    def test_identical_rows_identical_probs(self, rng):
        state = init_model(small_config("fignn", init_scale=0.5), SIZES)
        batch = random_batch(rng, SIZES, 1)
        twin = EncodedBatch.concat([batch, batch])
        p = fignn_forward(state, twin)
        assert p[0] == p[1]

    def test_edge_weight_rows_sum_to_one(self, rng):
        state = init_model(small_config("fignn", init_scale=0.8), SIZES)
        _, cache = fignn_forward(state, random_batch(rng, SIZES, 6), return_cache=True)
        assert len(cache.edge_weights) == 2
        for w in cache.edge_weights:
            assert np.all(np.diagonal(w, axis1=1, axis2=2) == 0)
            np.testing.assert_allclose(w.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    def test_rejects_other_kinds(self, rng):
        with pytest.raises(ConfigError):
            fignn_forward(init_model(small_config("fm"), SIZES), random_batch(rng, SIZES, 1))

    def test_per_node_projection_shape(self):
        state = init_model(small_config("fignn"), SIZES)
        assert state.params["edge.W"].shape == (N_FIELDS, 4, 4)


class TestDeepFM:
    def test_shared_embedding_table(self, rng):
        state = init_model(small_config("deepfm", init_scale=0.5), SIZES)
        assert "v" in state.params and not any(n.startswith("emb") for n in state.params)
        batch = random_batch(rng, SIZES, 1)
        row = batch.indices[0, 7]
        cfg, p = state.config, state.params
        fm_part = lambda: logits(state, batch)[0] - deepfm.mlp_logit(p, cfg, batch.indices, batch.values)[0]  # noqa: E731
        mlp_before, fm_before = deepfm.mlp_logit(p, cfg, batch.indices, batch.values)[0], fm_part()
        p["v"][row] += 0.3
        assert deepfm.mlp_logit(p, cfg, batch.indices, batch.values)[0] != mlp_before
        assert fm_part() != fm_before


class TestCheckpoint:
    @pytest.mark.parametrize("kind", MODEL_KINDS)
    def test_roundtrip_bit_exact(self, kind, rng, tmp_path):
        state = init_model(small_config(kind), SIZES)
        batch = random_batch(rng, SIZES, 8)
        for _ in range(3):
            state, _ = train_step(state, batch)
        state = state.with_generation(4)
        save_checkpoint(state, tmp_path / "m.ctrm")
        loaded = load_checkpoint(tmp_path / "m.ctrm")
        assert loaded.config == state.config and loaded.field_sizes == state.field_sizes
        assert loaded.generation == 4 and loaded.adam.t == 3
        for name in state.params:
            assert loaded.params[name].tobytes() == state.params[name].tobytes()
            assert loaded.adam.m[name].tobytes() == state.adam.m[name].tobytes()
            assert loaded.adam.v[name].tobytes() == state.adam.v[name].tobytes()
        save_checkpoint(loaded, tmp_path / "n.ctrm")
        assert (tmp_path / "m.ctrm").read_bytes() == (tmp_path / "n.ctrm").read_bytes()
        # training continues identically from the restored optimizer state
        a, _ = train_step(state, batch)
        b, _ = train_step(loaded, batch)
        assert all(a.params[n].tobytes() == b.params[n].tobytes() for n in a.params)

    def test_rejects_garbage(self, tmp_path):
        (tmp_path / "bad.ctrm").write_bytes(b"nope")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "bad.ctrm")

    def test_rejects_truncated(self, tmp_path):
        save_checkpoint(init_model(small_config("fm"), SIZES), tmp_path / "m.ctrm")
        data = (tmp_path / "m.ctrm").read_bytes()
        (tmp_path / "t.ctrm").write_bytes(data[:-5])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "t.ctrm")
