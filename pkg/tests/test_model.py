"""Span mapping, forward invariants, context regimes, parameter counts."""

import numpy as np
import pytest

from accentdet.corpus import Token, Utterance, Vocabulary
from accentdet.featurizer import FeatureMatrix, ablate
from accentdet.model import (
    ModelConfig,
    PitchAccentModel,
    Prediction,
    downsampled_length,
    make_windows,
    map_spans,
    prepare_utterance,
    spans_from_cuts,
)

SMALL = dict(cnn_channels=(8, 12, 12), lstm_hidden=6, text_embed_dim=8, vocab_size=20)


def utt(words_durs, uid="u", speaker="s", labels=None):
    tokens = []
    clock = 0.05
    labels = labels or [0] * len(words_durs)
    for (w, d), lab in zip(words_durs, labels):
        tokens.append(Token(w, clock, clock + d, lab))
        clock += d + 0.03
    return Utterance(uid, speaker, tuple(tokens))


def features_for(u, n_extra=5, fill=None, rng=None):
    n = int(round((u.tokens[-1].end_s + 0.05) / 0.01)) + n_extra
    if fill is not None:
        data = np.full((n, 6), fill, dtype=np.float32)
    else:
        rng = rng or np.random.default_rng(0)
        data = rng.standard_normal((n, 6)).astype(np.float32)
    return FeatureMatrix(data)


class TestConfig:
    def test_channel_count_must_match_layers(self):
        with pytest.raises(ValueError, match="cnn_channels"):
            ModelConfig(cnn_layers=2, cnn_channels=(128, 256, 256))

    def test_one_token_is_cnn_only(self):
        with pytest.raises(ValueError, match="one_token"):
            ModelConfig(context="one_token", use_lstm=True)
        ModelConfig(context="one_token", use_lstm=False)  # legal

    def test_mode_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(input_mode="audio")
        with pytest.raises(ValueError):
            ModelConfig(pooling="avg")


class TestSpanMapping:
    def test_spec_worked_example(self):
        # [0.00, 0.20) at 10 ms hop -> original [0, 20) -> ceil(20/8) = 3
        cfg = ModelConfig()
        u = Utterance("u", "s", (Token("w", 0.0, 0.20, 0),))
        fm = FeatureMatrix(np.ones((20, 6), dtype=np.float32))
        assert map_spans(u, fm, cfg).spans == ((0, 3),)

    def test_index_map_oracle(self):
        # brute-force oracle: boundary = round(start/hop), downsampled by
        # repeated ceil-halving, end sentinel at the frame count
        cfg = ModelConfig()
        u = utt([("a", 0.17), ("b", 0.23), ("c", 0.11)])
        fm = features_for(u)
        got = map_spans(u, fm, cfg)
        cuts = [round(t.start_s / 0.01) for t in u.tokens] + [fm.n]

        def down(x):
            for _ in range(3):
                x = -(-x // 2)
            return x

        expected = [min(down(c), down(fm.n)) for c in cuts]
        expected[-1] = down(fm.n)
        assert list(got.orig_cuts) == cuts
        assert [s for s, _ in got.spans] == expected[:-1]
        assert [e for _, e in got.spans] == expected[1:]

    def test_single_token_covers_everything(self):
        cfg = ModelConfig()
        u = Utterance("u", "s", (Token("w", 0.0, 0.3, 1),))
        fm = FeatureMatrix(np.ones((35, 6), dtype=np.float32))
        sm = map_spans(u, fm, cfg)
        assert sm.spans == ((0, sm.n_out),)

    def test_adjacent_tokens_partition(self):
        cfg = ModelConfig()
        u = Utterance(
            "u", "s", (Token("a", 0.0, 0.2, 0), Token("b", 0.2, 0.4, 1), Token("c", 0.4, 0.66, 0))
        )
        fm = FeatureMatrix(np.ones((66, 6), dtype=np.float32))
        sm = map_spans(u, fm, cfg)
        for (a_s, a_e), (b_s, b_e) in zip(sm.spans, sm.spans[1:]):
            assert a_e == b_s
        assert sm.spans[0][0] == 0 and sm.spans[-1][1] == sm.n_out

    def test_repair_steals_from_larger_neighbor(self):
        cfg = ModelConfig()
        # boundaries 0, 16, 17, 40: middle token maps to ceil(16/8)=2, ceil(17/8)=3 -> fine;
        # force a collision with 0, 16, 18, then 16/8=2, 18/8 -> ceil = 3... use tighter cuts
        sm = spans_from_cuts([0, 16, 17, 80], 80, cfg)
        assert all(e > s for s, e in sm.spans)
        sm2 = spans_from_cuts([0, 2, 3, 80], 80, cfg)
        assert all(e > s for s, e in sm2.spans)
        assert sm2.repairs > 0

    def test_too_short_utterance_errors(self):
        cfg = ModelConfig()
        with pytest.raises(ValueError, match="too short"):
            spans_from_cuts([0, 1, 2, 3, 4, 5, 6, 7, 8], 8, cfg)  # 8 tokens, 1 out frame

    def test_downsampled_length_matches_conv(self):
        from accentdet.nn import ops as nnops
        from accentdet.nn.tensor import Tensor

        cfg = ModelConfig(**SMALL)
        for L in (17, 64, 100, 133):
            x = Tensor(np.zeros((1, 6, L), dtype=np.float32))
            for i in range(cfg.cnn_layers):
                w = Tensor(np.zeros((4, x.data.shape[1], 11), dtype=np.float32))
                x = nnops.conv1d(x, w, None, stride=2, padding=5)
            assert x.data.shape[2] == downsampled_length(L, cfg)


def make_items(cfg, utts, fms, vocab=None):
    return [prepare_utterance(u, fm, vocab, cfg) for u, fm in zip(utts, fms)]


class TestForward:
    def test_prediction_invariants_untrained(self):
        cfg = ModelConfig(input_mode="speech", **SMALL)
        u = utt([("a", 0.2), ("b", 0.25), ("c", 0.15)], labels=[1, 0, 1])
        items = make_items(cfg, [u], [features_for(u)])
        model = PitchAccentModel(cfg, seed=3)
        (pred,) = model.predict(items)
        assert pred.probs.shape == (3, 2)
        assert np.allclose(pred.probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.array_equal(pred.labels, pred.probs.argmax(axis=1))

    def test_bidirectional_context_flows_backward(self):
        # changing the last token's frames changes the first token's logits
        cfg = ModelConfig(input_mode="speech", **SMALL)
        u = utt([("a", 0.2), ("b", 0.2), ("c", 0.2)])
        fm = features_for(u)
        model = PitchAccentModel(cfg, seed=1)
        (before,) = model.predict(make_items(cfg, [u], [fm]))
        bumped = fm.data.copy()
        sm = map_spans(u, fm, cfg)
        bumped[sm.orig_cuts[2] :, :] += 3.0
        (after,) = model.predict(make_items(cfg, [u], [FeatureMatrix(bumped)]))
        assert not np.allclose(before.logits[0], after.logits[0])

    def test_cnn_only_locality(self):
        # without the LSTM, far-away frames outside the receptive field
        # cannot move a token's logits
        cfg = ModelConfig(input_mode="speech", use_lstm=False, **SMALL)
        words = [("w", 0.2)] * 10
        u = utt(words)
        fm = features_for(u)
        model = PitchAccentModel(cfg, seed=2)
        (before,) = model.predict(make_items(cfg, [u], [fm]))
        bumped = fm.data.copy()
        bumped[-30:, :] += 5.0  # far tail, > receptive field from token 0
        (after,) = model.predict(make_items(cfg, [u], [FeatureMatrix(bumped)]))
        assert np.allclose(before.logits[0], after.logits[0], atol=1e-6)
        assert not np.allclose(before.logits[-1], after.logits[-1])

    def test_feature_order_matters(self):
        cfg = ModelConfig(input_mode="speech", **SMALL)
        u = utt([("a", 0.2), ("b", 0.2)])
        fm = features_for(u)
        model = PitchAccentModel(cfg, seed=4)
        (before,) = model.predict(make_items(cfg, [u], [fm]))
        permuted = fm.data.copy()[:, [1, 0, 2, 3, 4, 5]]
        (after,) = model.predict(make_items(cfg, [u], [FeatureMatrix(permuted)]))
        assert not np.allclose(before.logits, after.logits)

    def test_batch_composition_does_not_change_predictions(self):
        cfg = ModelConfig(input_mode="speech", **SMALL)
        u1 = utt([("a", 0.2), ("b", 0.2)], uid="u1")
        u2 = utt([("c", 0.3), ("d", 0.25), ("e", 0.2), ("f", 0.28)], uid="u2")
        fm1, fm2 = features_for(u1), features_for(u2, rng=np.random.default_rng(9))
        model = PitchAccentModel(cfg, seed=5)
        alone = model.predict(make_items(cfg, [u1], [fm1]))[0]
        pair = model.predict(make_items(cfg, [u1, u2], [fm1, fm2]))[0]
        swapped = model.predict(make_items(cfg, [u2, u1], [fm2, fm1]))[1]
        assert np.allclose(alone.logits, pair.logits, atol=1e-5)
        assert np.allclose(pair.logits, swapped.logits, atol=1e-5)

    def test_duration_only_equal_spans_equal_embeddings(self):
        # all-ones features: interior tokens with equal span lengths are
        # indistinguishable to the conv encoder
        cfg = ModelConfig(input_mode="speech", **SMALL)
        u = utt([(w, 0.2) for w in "abcdefghi"])
        fm = ablate(features_for(u, n_extra=0), "duration_only")
        item = prepare_utterance(u, fm, None, cfg)
        model = PitchAccentModel(cfg, seed=6)
        pooled = model._conv_stack([item], training=False)[0]
        spans = item.span_map.spans
        lens = [j - i for i, j in spans]
        # tokens 3..5 sit beyond the conv receptive field of either edge;
        # with constant input, equal span lengths give equal vectors
        for a in range(3, 6):
            for b in range(3, 6):
                if lens[a] == lens[b]:
                    assert np.allclose(pooled.data[a], pooled.data[b], atol=1e-5)
        assert any(lens[a] == lens[b] for a in range(3, 6) for b in range(3, 6) if a != b)

    def test_text_mode_unk_handling(self):
        cfg = ModelConfig(input_mode="text", **SMALL)
        vocab = Vocabulary({"a": 1, "b": 2})
        u = utt([("a", 0.2), ("zzz", 0.2)], labels=[1, 0])
        items = make_items(cfg, [u], [None], vocab)
        assert items[0].token_ids.tolist() == [1, 0]
        model = PitchAccentModel(cfg, seed=7)
        (pred,) = model.predict(items)
        assert pred.logits.shape == (2, 2)


class TestWindowedContexts:
    def test_one_token_invariant_to_other_tokens(self):
        cfg = ModelConfig(input_mode="speech", context="one_token", use_lstm=False, **SMALL)
        u = utt([("a", 0.2), ("b", 0.2), ("c", 0.2)])
        fm = features_for(u)
        model = PitchAccentModel(cfg, seed=8)
        (before,) = model.predict(make_items(cfg, [u], [fm]))
        bumped = fm.data.copy()
        sm = map_spans(u, fm, ModelConfig(input_mode="speech", **SMALL))
        bumped[: sm.orig_cuts[1]] += 4.0  # only token 0's frames
        (after,) = model.predict(make_items(cfg, [u], [FeatureMatrix(bumped)]))
        assert not np.allclose(before.logits[0], after.logits[0])
        assert np.allclose(before.logits[1:], after.logits[1:], atol=1e-6)

    def test_three_token_invariant_beyond_neighbors(self):
        cfg = ModelConfig(input_mode="speech", context="three_token", **SMALL)
        u = utt([("a", 0.2), ("b", 0.2), ("c", 0.2), ("d", 0.2), ("e", 0.2)])
        fm = features_for(u)
        model = PitchAccentModel(cfg, seed=9)
        (before,) = model.predict(make_items(cfg, [u], [fm]))
        bumped = fm.data.copy()
        sm = map_spans(u, fm, ModelConfig(input_mode="speech", **SMALL))
        bumped[sm.orig_cuts[4] :] += 4.0  # token 4's frames
        (after,) = model.predict(make_items(cfg, [u], [FeatureMatrix(bumped)]))
        # tokens 0..2 cannot see token 4
        assert np.allclose(before.logits[:3], after.logits[:3], atol=1e-6)
        assert not np.allclose(before.logits[3:], after.logits[3:])

    def test_single_token_utterance_three_token_window(self):
        cfg = ModelConfig(input_mode="speech", context="three_token", **SMALL)
        u = Utterance("u", "s", (Token("solo", 0.05, 0.3, 1),))
        fm = features_for(u)
        items = make_items(cfg, [u], [fm])
        windows, centers, owners = make_windows(items, cfg)
        assert len(windows) == 1
        assert centers == [0]
        model = PitchAccentModel(cfg, seed=10)
        (pred,) = model.predict(items)
        assert pred.logits.shape == (1, 2)


class TestParameterCounts:
    def test_paper_scale_order_of_magnitude(self):
        # combined-model reference point: ~12M parameters, checked within
        # one order of magnitude
        cfg = ModelConfig(input_mode="speech_text")
        model = PitchAccentModel(cfg, seed=0)
        count = model.param_count()
        assert 1.2e6 <= count <= 1.2e8

    def test_cnn_only_beats_lstm_only_with_raised_widths(self):
        lstm_cfg = ModelConfig(input_mode="speech")
        wide_cnn_only = ModelConfig(
            input_mode="speech", use_lstm=False, cnn_channels=(128, 512, 512)
        )
        a = PitchAccentModel(lstm_cfg, seed=0).param_count()
        b = PitchAccentModel(wide_cnn_only, seed=0).param_count()
        assert b > a

    def test_exact_count_small_config(self):
        cfg = ModelConfig(input_mode="text", use_lstm=False, vocab_size=10,
                          text_embed_dim=4, cnn_layers=0, cnn_channels=())
        model = PitchAccentModel(cfg, seed=0)
        # embedding (11*4) + head (4*2 + 2)
        assert model.param_count() == 44 + 10


class TestCheckpointIntegration:
    def test_save_load_same_predictions(self, tmp_path):
        from accentdet.nn import load_checkpoint, save_checkpoint

        cfg = ModelConfig(input_mode="speech", **SMALL)
        u = utt([("a", 0.2), ("b", 0.25)], labels=[1, 0])
        items = make_items(cfg, [u], [features_for(u)])
        model = PitchAccentModel(cfg, seed=11)
        (before,) = model.predict(items)
        save_checkpoint(tmp_path / "m.ckpt", model.parameters(), {"note": "test"})
        params, meta = load_checkpoint(tmp_path / "m.ckpt")
        fresh = PitchAccentModel(cfg, seed=99)
        fresh.load_params(params)
        (after,) = fresh.predict(items)
        assert np.array_equal(before.logits.astype(np.float32), after.logits.astype(np.float32))
