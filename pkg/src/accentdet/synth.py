"""Synthetic prosodic corpus generator.

Stands in for licensed read-speech data at desk scale. Each token is
rendered as a harmonic tone (stacked sine harmonics with 1/k rolloff)
whose fundamental, level, and duration encode the accent label; tokens
are separated by short silences and the whole utterance sits on a low
noise floor so voicing and HNR behave like clean speech rather than like
a mathematical oscillator.

Accents are realized as flat per-token shifts (F0 up by a fixed semitone
excursion, level up by a fixed dB boost, duration stretched), while
speaker base pitch and per-utterance baselines vary widely. Absolute
feature values are therefore ambiguous across utterances: detecting an
accent requires comparing a token against its context, which is the
regime the sequence models are built for.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .corpus import Corpus, Token, Utterance, default_stopwords
from .featurizer import Waveform, write_wav

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class SynthSpec:
    n_utterances: int = 60
    tokens_min: int = 5
    tokens_max: int = 14
    sample_rate_hz: int = 16000
    n_speakers: int = 4
    p_content_word: float = 0.7
    p_accent_content: float = 0.8
    p_accent_function: float = 0.1
    accent_f0_semitones: float = 4.0
    accent_energy_db: float = 3.0
    accent_lengthening: float = 1.2
    speaker_f0_min_hz: float = 96.0
    speaker_f0_max_hz: float = 250.0
    utterance_f0_jitter_semitones: float = 1.0
    token_f0_jitter_semitones: float = 0.75
    utterance_gain_db: float = 3.0
    token_gain_db: float = 1.0
    token_dur_min_s: float = 0.14
    token_dur_max_s: float = 0.30
    gap_s: float = 0.030
    lead_s: float = 0.050
    base_amplitude: float = 0.08
    n_harmonics: int = 5
    noise_db: float = -35.0
    content_vocab: int = 200
    function_vocab: int = 40

    def __post_init__(self):
        checks = [
            (self.n_utterances >= 1, "n_utterances >= 1"),
            (1 <= self.tokens_min <= self.tokens_max, "token count range"),
            (self.sample_rate_hz >= 8000, "sample rate >= 8000"),
            (self.n_speakers >= 1, "n_speakers >= 1"),
            (0.0 <= self.p_content_word <= 1.0, "p_content_word in [0,1]"),
            (0.0 <= self.p_accent_content <= 1.0, "p_accent_content in [0,1]"),
            (0.0 <= self.p_accent_function <= 1.0, "p_accent_function in [0,1]"),
            (self.accent_lengthening > 0, "lengthening > 0"),
            (0 < self.token_dur_min_s <= self.token_dur_max_s, "duration range"),
            (0 < self.speaker_f0_min_hz <= self.speaker_f0_max_hz, "speaker f0 range"),
            (self.speaker_f0_max_hz * 2 ** (
                (self.utterance_f0_jitter_semitones + self.token_f0_jitter_semitones
                 + max(self.accent_f0_semitones, 0.0)) / 12.0) < 500.0,
             "f0 range must stay below the 500 Hz tracker ceiling"),
            (1 <= self.function_vocab <= 150, "function_vocab in [1,150]"),
            (self.content_vocab >= 1, "content_vocab >= 1"),
            (0 < self.base_amplitude <= 0.3, "base_amplitude in (0, 0.3]"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"invalid synthesis spec: {what}")


def _semitones(x: float) -> float:
    return 2.0 ** (x / 12.0)


def _db(x: float) -> float:
    return 10.0 ** (x / 20.0)


def _make_lexicons(spec: SynthSpec, rng: np.random.Generator) -> Tuple[List[str], List[str]]:
    stop = sorted(w for w in default_stopwords().words if w.isalpha())
    function_words = stop[:: max(1, len(stop) // spec.function_vocab)][: spec.function_vocab]
    content: List[str] = []
    seen = set(function_words) | default_stopwords().words
    while len(content) < spec.content_vocab:
        n_syll = 2 + int(rng.random() < 0.35)
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(n_syll)
        )
        if word not in seen:
            seen.add(word)
            content.append(word)
    return content, function_words


def _exact_count_labels(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Accent exactly round(p*n) of n slots, chosen uniformly."""
    labels = np.zeros(n, dtype=np.int64)
    k = int(round(p * n))
    if k > 0:
        labels[rng.choice(n, size=min(k, n), replace=False)] = 1
    return labels


def _render_token(f0: float, dur_s: float, amp: float, spec: SynthSpec,
                  rng: np.random.Generator) -> np.ndarray:
    sr = spec.sample_rate_hz
    n = max(int(round(dur_s * sr)), 1)
    t = np.arange(n) / sr
    x = np.zeros(n)
    for k in range(1, spec.n_harmonics + 1):
        x += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
    x /= np.max(np.abs(x)) + 1e-12
    fade = min(int(0.005 * sr), n // 2)
    if fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        x[:fade] *= ramp
        x[-fade:] *= ramp[::-1]
    return amp * x


def synth_corpus(spec: SynthSpec, seed: int, out_dir) -> Corpus:
    """Generate a labeled corpus and its WAV files under out_dir/wav/.

    Deterministic in (spec, seed): running twice produces byte-identical
    corpora and audio.
    """
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    sr = spec.sample_rate_hz

    content_lex, function_lex = _make_lexicons(spec, rng)
    speaker_f0 = np.exp(
        rng.uniform(np.log(spec.speaker_f0_min_hz), np.log(spec.speaker_f0_max_hz),
                    size=spec.n_speakers)
    )

    # draw the word layout for the whole corpus first, then assign accents
    # with exact counts per class so the corpus balance matches the policy
    layout = []  # per utterance: (speaker_idx, [(word, is_content), ...])
    for u in range(spec.n_utterances):
        spk = u % spec.n_speakers
        n_tok = int(rng.integers(spec.tokens_min, spec.tokens_max + 1))
        words = []
        for _ in range(n_tok):
            if rng.random() < spec.p_content_word:
                words.append((content_lex[rng.integers(len(content_lex))], True))
            else:
                words.append((function_lex[rng.integers(len(function_lex))], False))
        layout.append((spk, words))

    flat_content = [(ui, ti) for ui, (_, words) in enumerate(layout)
                    for ti, (_, is_c) in enumerate(words) if is_c]
    flat_function = [(ui, ti) for ui, (_, words) in enumerate(layout)
                     for ti, (_, is_c) in enumerate(words) if not is_c]
    labels = {}
    for slots, p in ((flat_content, spec.p_accent_content),
                     (flat_function, spec.p_accent_function)):
        if slots:
            mask = _exact_count_labels(len(slots), p, rng)
            for slot, lab in zip(slots, mask):
                labels[slot] = int(lab)

    utterances = []
    for ui, (spk, words) in enumerate(layout):
        utt_id = f"u{ui:04d}"
        utt_f0_shift = _semitones(rng.uniform(-1, 1) * spec.utterance_f0_jitter_semitones)
        utt_gain = _db(rng.uniform(-1, 1) * spec.utterance_gain_db)
        pieces = [np.zeros(int(spec.lead_s * sr))]
        clock = spec.lead_s
        tokens = []
        for ti, (word, _) in enumerate(words):
            lab = labels[(ui, ti)]
            f0 = speaker_f0[spk] * utt_f0_shift
            f0 *= _semitones(rng.uniform(-1, 1) * spec.token_f0_jitter_semitones)
            amp = spec.base_amplitude * utt_gain * _db(rng.uniform(-1, 1) * spec.token_gain_db)
            dur = rng.uniform(spec.token_dur_min_s, spec.token_dur_max_s)
            if lab:
                f0 *= _semitones(spec.accent_f0_semitones)
                amp *= _db(spec.accent_energy_db)
                dur *= spec.accent_lengthening
            piece = _render_token(f0, dur, amp, spec, rng)
            tokens.append(Token(word, clock, clock + piece.size / sr, lab))
            pieces.append(piece)
            pieces.append(np.zeros(int(spec.gap_s * sr)))
            clock += piece.size / sr + spec.gap_s
        pieces.append(np.zeros(int(spec.lead_s * sr)))
        signal = np.concatenate(pieces)
        signal = signal + _db(spec.noise_db) * rng.standard_normal(signal.size)
        audio_rel = f"wav/{utt_id}.wav"
        write_wav(wav_dir / f"{utt_id}.wav", Waveform(np.clip(signal, -1, 1), sr))
        utterances.append(Utterance(utt_id, f"spk{spk:02d}", tuple(tokens), audio_rel))

    return Corpus(tuple(utterances), sr, root=out_dir)
