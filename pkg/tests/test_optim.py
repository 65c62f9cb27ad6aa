import io
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vete import encoders as enc
from vete.contrastive import COVARIANCE, PEARSON, RANK, SKT, LossSpec, PairBatch
from vete.corpus import SPECIAL_TOKENS, CaptionRecord, FeatureTable, Vocabulary
from vete.encoders import EncoderSpec
from vete.errors import ConfigError, DataError, FormatError, NonFiniteGradient, UnsupportedConfiguration
from vete.optim import (
    AdamState,
    HyperParams,
    TrainingSet,
    VeteModel,
    adam_step,
    backward_batch,
    batch_loss,
    check_model_gradients,
    expand_word_level,
    finite_difference_check,
    forward_batch,
    read_checkpoint,
    train,
    train_word_level,
    write_checkpoint,
)


def toy_model():
    vocab = Vocabulary(list(SPECIAL_TOKENS) + ["a", "b"])
    emb = np.zeros((5, 2))
    emb[3] = [1, 0]
    emb[4] = [1, 1]
    params = {"embedding": emb, "image.W": np.eye(2), "image.b": np.zeros(2)}
    return VeteModel(vocab, EncoderSpec(enc.BOW_SUM), params)


def toy_batch():
    return PairBatch(np.eye(2), [np.array([3]), np.array([4])], np.array([1, 0]))


class TestForward:
    def test_hand_computed(self):
        sims = forward_batch(toy_model(), toy_batch())
        r = 1 / np.sqrt(2)
        np.testing.assert_allclose(sims, [1, r, r, 0], atol=1e-15)

    def test_length_2b(self, rng):
        params = enc.init_params(EncoderSpec(), 6, 3, 5, rng)
        model = VeteModel(Vocabulary(list(SPECIAL_TOKENS) + ["x", "y", "z"]), EncoderSpec(),
                          params)
        batch = PairBatch(rng.normal(size=(5, 5)), [np.array([3, 4])] * 5,
                          np.array([1, 2, 3, 4, 0]))
        assert forward_batch(model, batch).shape == (10,)

    def test_duplicate_pair_equal_sims(self):
        batch = PairBatch(np.array([[1.0, 0.3], [1.0, 0.3], [0.0, 1.0]]),
                          [np.array([3])] * 2 + [np.array([4])], np.array([1, 2, 0]))
        sims = forward_batch(toy_model(), batch)
        assert sims[0] == sims[1]

    def test_scale_robustness(self, rng):
        model = toy_model()
        model.params["image.W"] = rng.normal(size=(2, 2))
        batch = toy_batch()
        scaled_model = model.copy()
        scaled_model.params["image.W"] = model.params["image.W"] * 0.1
        scaled_batch = PairBatch(batch.image_features * 10, batch.sentence_ids, batch.sigma)
        np.testing.assert_allclose(forward_batch(scaled_model, scaled_batch),
                                   forward_batch(model, batch), atol=1e-14)


LOSSES = [LossSpec(PEARSON), LossSpec(COVARIANCE), LossSpec(SKT, alpha=1.0),
          LossSpec(RANK, gamma=0.2)]


class TestBackward:
    @pytest.mark.parametrize("loss", LOSSES, ids=lambda s: s.kind)
    @pytest.mark.parametrize("kind", [enc.BOW_SUM, enc.RNN_GRU])
    def test_full_model_finite_differences(self, kind, loss, rng):
        assert check_model_gradients(kind, loss, rng) < 1e-4

    def test_rank_satisfied_gives_zero_gradients(self):
        loss, grads = backward_batch(toy_model(), toy_batch(), LossSpec(RANK, gamma=0.2))
        assert loss == 0
        assert all(not np.any(g) for g in grads.values())

    def test_absent_tokens_zero_rows(self, rng):
        model = toy_model()
        model.params["image.W"] = rng.normal(size=(2, 2))
        _, grads = backward_batch(model, toy_batch(), LossSpec(PEARSON))
        assert not np.any(grads["embedding"][:3])
        assert np.any(grads["embedding"][3:])

    def test_batch_loss_matches_backward(self, rng):
        model = toy_model()
        model.params["image.W"] = rng.normal(size=(2, 2))
        loss, _ = backward_batch(model, toy_batch(), LossSpec(PEARSON))
        assert loss == batch_loss(model.params, model.spec, toy_batch(), LossSpec(PEARSON))


class TestAdam:
    def test_first_step(self):
        params = {"w": np.array([0.0])}
        adam_step(AdamState.zeros(params), params, {"w": np.array([1.0])}, 0.001)
        assert params["w"][0] == pytest.approx(-0.001, rel=1e-7)

    def test_zero_gradient_no_change(self):
        params = {"w": np.array([0.3, -2.0])}
        state = AdamState.zeros(params)
        adam_step(state, params, {"w": np.zeros(2)}, 0.1)
        np.testing.assert_array_equal(params["w"], [0.3, -2.0])
        assert state.t == 1

    def test_nan_rejected_without_mutation(self):
        params = {"w": np.array([1.0])}
        state = AdamState.zeros(params)
        with pytest.raises(NonFiniteGradient):
            adam_step(state, params, {"w": np.array([np.nan])}, 0.1)
        assert params["w"][0] == 1.0 and state.t == 0

    @settings(max_examples=30)
    @given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=5),
           st.integers(1, 5))
    def test_opposite_gradients_opposite_deltas(self, g, steps):
        g = np.array(g)
        pa, pb = {"w": np.zeros_like(g)}, {"w": np.zeros_like(g)}
        sa, sb = AdamState.zeros(pa), AdamState.zeros(pb)
        for _ in range(steps):
            adam_step(sa, pa, {"w": g}, 0.01)
            adam_step(sb, pb, {"w": -g}, 0.01)
        np.testing.assert_array_equal(pa["w"], -pb["w"])

    def test_deterministic(self, rng):
        g = [rng.normal(size=3) for _ in range(5)]
        runs = []
        for _ in range(2):
            params = {"w": np.ones(3)}
            state = AdamState.zeros(params)
            for gi in g:
                adam_step(state, params, {"w": gi}, 0.01)
            runs.append(params["w"].tobytes())
        assert runs[0] == runs[1]


class TestFiniteDifference:
    def test_quadratic_exact(self, rng):
        theta = rng.normal(size=7)
        assert finite_difference_check(lambda t: float(t @ t), 2 * theta, theta) < 1e-9

    def test_detects_wrong_gradient(self, rng):
        theta = rng.uniform(1, 2, size=4)
        err = finite_difference_check(lambda t: float(t @ t), theta, theta)
        # analytic theta vs numeric 2*theta: |theta - 2 theta| / (2 theta) = 0.5
        assert err == pytest.approx(0.5, abs=1e-6)

    def test_h_range(self):
        with pytest.raises(ValueError):
            finite_difference_check(lambda t: 0.0, np.zeros(1), np.zeros(1), h=1e-2)


HYPER = HyperParams(embedding_dim=8, batch_size=16, learning_rate=0.01, epochs=3, seed=11)


class TestTrain:
    def test_loss_decreases(self, small_synthetic):
        data, sts, _ = small_synthetic
        _, history = train(HYPER, data, [sts])
        assert history.epoch_losses[-1] < history.epoch_losses[0]
        assert len(history.val_metrics) == 3 and history.skipped_batches == 0

    def test_deterministic(self, small_synthetic):
        data, sts, _ = small_synthetic
        m1, h1 = train(HYPER, data, [sts])
        m2, h2 = train(HYPER, data, [sts])
        assert h1 == h2
        assert all(m1.params[k].tobytes() == m2.params[k].tobytes() for k in m1.params)

    def test_epochs_zero_rejected(self):
        with pytest.raises(ConfigError):
            HyperParams(epochs=0)

    def test_missing_feature_names_id(self):
        data = TrainingSet([CaptionRecord("known", "a b"), CaptionRecord("ghost", "c")],
                           FeatureTable(3, ["known"], np.ones((1, 3))))
        with pytest.raises(DataError, match="ghost"):
            train(HYPER, data)

    def test_lr_decay_applies_per_epoch(self, small_synthetic):
        data, _, _ = small_synthetic
        h = replace(HYPER, lr_decay=1e-9, epochs=2)
        one, _ = train(replace(h, epochs=1), data)
        two, _ = train(h, data)
        # second epoch runs at lr * 1e-9, so parameters barely move
        diff = max(np.max(np.abs(one.params[k] - two.params[k])) for k in one.params)
        assert diff < 1e-6

    def test_log_lines(self, small_synthetic):
        data, sts, _ = small_synthetic
        stream = io.StringIO()
        train(replace(HYPER, epochs=2), data, [sts], log_stream=stream)
        lines = stream.getvalue().splitlines()
        assert len(lines) == 2
        assert [len(line.split("\t")) for line in lines] == [5, 5]
        assert lines[1].split("\t")[0] == "2"

    def test_rnn_trains(self, small_synthetic):
        data, _, _ = small_synthetic
        small = TrainingSet(data.records[:64], data.features)
        h = replace(HYPER, epochs=1, encoder=EncoderSpec.create("rnn_gru", hidden=6))
        assert h.effective_clip_norm == 5.0
        model, history = train(h, small)
        assert history.step_losses and "rnn.out" in model.params


class TestWordLevel:
    def test_expansion_counts_content_tokens(self):
        vocab = Vocabulary(list(SPECIAL_TOKENS) + list("abcde"))
        seq = np.array([vocab.bos_id, 3, 4, 5, 6, 7, vocab.eos_id])
        words, feats = expand_word_level([seq], np.ones((1, 2)), vocab)
        assert len(words) == 5 and feats.shape == (5, 2)
        assert [w.tolist() for w in words] == [[3], [4], [5], [6], [7]]

    def test_rnn_unsupported(self, small_synthetic):
        data, _, _ = small_synthetic
        h = replace(HYPER, encoder=EncoderSpec.create("rnn_lstm"))
        with pytest.raises(UnsupportedConfiguration):
            train_word_level(h, data)

    def test_runs_and_keeps_bow_inference(self, small_synthetic):
        data, sts, _ = small_synthetic
        model, history = train_word_level(replace(HYPER, epochs=1), data, [sts])
        assert model.spec.kind == enc.BOW_SUM
        assert np.isfinite(history.val_metrics[0])


class TestCheckpoint:
    @pytest.mark.parametrize("kind", enc.ENCODER_KINDS)
    def test_roundtrip_byte_identical(self, kind, tmp_path, rng):
        spec = EncoderSpec.create(kind, hidden=3, layers=2, normalize_output=True)
        vocab = Vocabulary(list(SPECIAL_TOKENS) + ["dog", "ünïcode"])
        model = VeteModel.initialize(vocab, spec, 4, 6, rng)
        model.steps = 17
        write_checkpoint(model, tmp_path / "a.vetm")
        loaded = read_checkpoint(tmp_path / "a.vetm")
        write_checkpoint(loaded, tmp_path / "b.vetm")
        assert (tmp_path / "a.vetm").read_bytes() == (tmp_path / "b.vetm").read_bytes()
        assert loaded.spec == spec and loaded.steps == 17
        assert loaded.vocab.id_to_token == vocab.id_to_token
        for k, v in model.params.items():
            np.testing.assert_array_equal(loaded.params[k], v.astype(np.float32))

    def test_truncated(self, tmp_path, rng):
        model = VeteModel.initialize(Vocabulary(list(SPECIAL_TOKENS)), EncoderSpec(), 2, 3, rng)
        write_checkpoint(model, tmp_path / "a.vetm")
        data = (tmp_path / "a.vetm").read_bytes()
        (tmp_path / "b.vetm").write_bytes(data[:-3])
        with pytest.raises(FormatError):
            read_checkpoint(tmp_path / "b.vetm")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"VETF" + bytes(40))
        with pytest.raises(FormatError):
            read_checkpoint(tmp_path / "x")
