"""Synthetic corpus generator: determinism, balance, acoustic encoding."""

import numpy as np
import pytest

from accentdet import featurizer as fz
from accentdet.corpus import content_word_mask, save_corpus
from accentdet.synth import SynthSpec, synth_corpus


def small_spec(**kw):
    base = dict(n_utterances=8, tokens_min=4, tokens_max=8, n_speakers=2)
    base.update(kw)
    return SynthSpec(**base)


def test_determinism_byte_identical(tmp_path):
    spec = small_spec()
    c1 = synth_corpus(spec, seed=7, out_dir=tmp_path / "a")
    c2 = synth_corpus(spec, seed=7, out_dir=tmp_path / "b")
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_corpus(c1, p1)
    save_corpus(c2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    wav1 = (tmp_path / "a/wav/u0003.wav").read_bytes()
    wav2 = (tmp_path / "b/wav/u0003.wav").read_bytes()
    assert wav1 == wav2


def test_different_seeds_differ(tmp_path):
    spec = small_spec()
    c1 = synth_corpus(spec, seed=1, out_dir=tmp_path / "a")
    c2 = synth_corpus(spec, seed=2, out_dir=tmp_path / "b")
    texts1 = [t.text for u in c1 for t in u.tokens]
    texts2 = [t.text for u in c2 for t in u.tokens]
    assert texts1 != texts2


def test_class_balance_matches_policy(tmp_path):
    spec = small_spec(n_utterances=40, p_accent_content=0.8, p_accent_function=0.1)
    c = synth_corpus(spec, seed=3, out_dir=tmp_path)
    content = [t for u in c for t in u.tokens if t.is_content]
    function = [t for u in c for t in u.tokens if not t.is_content]
    content_rate = np.mean([t.label for t in content])
    function_rate = np.mean([t.label for t in function])
    assert abs(content_rate - 0.8) < 0.05
    assert abs(function_rate - 0.1) < 0.05


def test_mask_equals_labels_under_pure_policy(tmp_path):
    spec = small_spec(p_accent_content=1.0, p_accent_function=0.0)
    c = synth_corpus(spec, seed=5, out_dir=tmp_path)
    for u in c:
        assert content_word_mask(u) == [t.label for t in u.tokens]


def test_accented_tokens_have_higher_f0(tmp_path):
    spec = small_spec(
        n_utterances=12,
        accent_f0_semitones=4.0,
        # isolate the pitch effect and nail down the baseline
        speaker_f0_min_hz=110.0,
        speaker_f0_max_hz=150.0,
        utterance_f0_jitter_semitones=0.5,
        token_f0_jitter_semitones=0.25,
    )
    c = synth_corpus(spec, seed=11, out_dir=tmp_path)
    acc, unacc = [], []
    for u in c:
        w = fz.read_wav(c.audio_path(u))
        fm = fz.extract_features(w)
        for t in u.tokens:
            lo = int(round(t.start_s / fm.hop_s))
            hi = int(round(t.end_s / fm.hop_s))
            f0 = fm.data[lo:hi, 0]
            f0 = f0[f0 > 0]
            if f0.size:
                (acc if t.label else unacc).append(np.median(f0))
    assert len(acc) > 10 and len(unacc) > 10
    assert np.mean(acc) > np.mean(unacc) * 1.1


def test_zero_signal_indistinguishable(tmp_path):
    spec = small_spec(
        n_utterances=20,
        accent_f0_semitones=0.0,
        accent_energy_db=0.0,
        accent_lengthening=1.0,
    )
    c = synth_corpus(spec, seed=13, out_dir=tmp_path)
    acc, unacc = [], []
    for u in c:
        w = fz.read_wav(c.audio_path(u))
        fm = fz.extract_features(w)
        for t in u.tokens:
            lo = int(round(t.start_s / fm.hop_s))
            hi = int(round(t.end_s / fm.hop_s))
            f0 = fm.data[lo:hi, 0]
            f0 = f0[f0 > 0]
            if f0.size:
                (acc if t.label else unacc).append(np.median(f0))
    acc, unacc = np.array(acc), np.array(unacc)
    # two-sample mean comparison: |t| below ~3 at desk scale
    pooled = np.sqrt(acc.var(ddof=1) / acc.size + unacc.var(ddof=1) / unacc.size)
    tstat = abs(acc.mean() - unacc.mean()) / pooled
    assert tstat < 3.0


def test_token_timestamps_inside_audio(tmp_path):
    c = synth_corpus(small_spec(), seed=17, out_dir=tmp_path)
    for u in c:
        w = fz.read_wav(c.audio_path(u))
        assert u.tokens[-1].end_s <= w.duration_s + 1e-6
        for t in u.tokens:
            assert t.end_s > t.start_s


def test_invalid_spec_ranges():
    with pytest.raises(ValueError, match="token count"):
        SynthSpec(tokens_min=5, tokens_max=3)
    with pytest.raises(ValueError, match="p_accent_content"):
        SynthSpec(p_accent_content=1.5)
    with pytest.raises(ValueError, match="500 Hz"):
        SynthSpec(speaker_f0_max_hz=450.0, accent_f0_semitones=6.0)
