"""Acoustic-prosodic feature extraction.

Six features per 10 ms frame, in fixed column order:

    0 f0_smooth     smoothed fundamental frequency, Hz (0 = unvoiced)
    1 rms_energy    root mean square amplitude of the frame
    2 loudness      Stevens-law proxy, rms ** 0.3 against full scale
    3 zcr           zero-crossing rate in [0, 1]
    4 voicing_prob  normalized-autocorrelation peak in [0, 1]
    5 hnr_db        harmonics-to-noise ratio, clamped to +-60 dB

All features share one frame grid so they align frame-for-frame: the grid
is laid out for the largest analysis window (40 ms, used by the pitch and
voicing features) and the shorter 25 ms windows (energy features) are
centered inside it. F0 uses normalized autocorrelation with parabolic lag
interpolation; the fixed voicing threshold gates f0 to 0. Every feature
is computed on raw (untapered) samples: the closed-form RMS/ZCR values
hold exactly, and the per-lag energy normalization of the pitch detector
keeps periodic signals at peak 1 without a taper.
"""

from __future__ import annotations

import hashlib
import json
import struct
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

FEATURIZER_VERSION = 1

FEATURE_NAMES = ("f0_smooth", "rms_energy", "loudness", "zcr", "voicing_prob", "hnr_db")
FEATURE_GROUPS = {
    "pitch": (0,),
    "intensity": (1, 2),
    "voicing": (3, 4, 5),
}
HOP_S = 0.010


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # float, amplitudes in [-1, 1]
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a nonempty 1-D signal")
        if self.sample_rate_hz < 8000:
            raise ValueError(f"sample rate {self.sample_rate_hz} below 8 kHz minimum")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


class FrameFeatures(NamedTuple):
    f0_smooth: float
    rms_energy: float
    loudness: float
    zcr: float
    voicing_prob: float
    hnr_db: float


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-utterance [n, 6] feature array on the 10 ms grid."""

    data: np.ndarray
    hop_s: float = HOP_S

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", data)
        if data.ndim != 2 or data.shape[1] != len(FEATURE_NAMES) or data.shape[0] < 1:
            raise ValueError(f"feature matrix must be [n>=1, 6], got {data.shape}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def frame(self, i: int) -> FrameFeatures:
        return FrameFeatures(*(float(v) for v in self.data[i]))

    def to_channels(self) -> np.ndarray:
        """[6, n] layout for the CNN."""
        return np.ascontiguousarray(self.data.T)

    def validate(self) -> None:
        d = self.data
        if not np.all(np.isfinite(d)):
            raise ValueError("non-finite feature values")
        checks = [
            (d[:, 0] >= 0, "f0_smooth < 0"),
            (d[:, 1] >= 0, "rms_energy < 0"),
            (d[:, 2] >= 0, "loudness < 0"),
            ((d[:, 3] >= 0) & (d[:, 3] <= 1), "zcr outside [0,1]"),
            ((d[:, 4] >= 0) & (d[:, 4] <= 1), "voicing_prob outside [0,1]"),
            ((d[:, 5] >= -60.0 - 1e-6) & (d[:, 5] <= 60.0 + 1e-6), "hnr outside clamp"),
        ]
        for ok, msg in checks:
            if not np.all(ok):
                raise ValueError(f"feature invariant violated: {msg}")


@dataclass(frozen=True)
class FeaturizerConfig:
    pitch_window_s: float = 0.040  # >= 2 periods at fmin
    energy_window_s: float = 0.025
    hop_s: float = HOP_S
    fmin_hz: float = 50.0
    fmax_hz: float = 500.0
    voicing_threshold: float = 0.45
    loudness_exponent: float = 0.3
    hnr_clamp_db: float = 60.0
    median_width: int = 5

    def cache_key(self) -> str:
        blob = json.dumps(
            {"version": FEATURIZER_VERSION, **self.__dict__}, sort_keys=True
        ).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def frame_signal(
    w: Waveform,
    window_s: float,
    hop_s: float = HOP_S,
    grid_window_s: Optional[float] = None,
) -> np.ndarray:
    """Slice a waveform into [n, window] frames on a common hop grid.

    The frame count is governed by grid_window_s (default: window_s): the
    grid places one frame per hop while a full grid window fits, and any
    shorter analysis window is centered inside the grid window. Calling
    with different window sizes but one grid therefore yields aligned
    frames with identical counts.
    """
    if hop_s <= 0 or window_s <= 0:
        raise ValueError("window and hop must be positive")
    if window_s < hop_s:
        raise ValueError(f"window {window_s}s shorter than hop {hop_s}s")
    sr = w.sample_rate_hz
    grid = grid_window_s if grid_window_s is not None else window_s
    if window_s > grid + 1e-12:
        raise ValueError("analysis window larger than the grid window")
    G = int(round(grid * sr))
    W = int(round(window_s * sr))
    H = int(round(hop_s * sr))
    N = w.samples.size
    if N < G:
        raise ValueError(
            f"waveform of {N} samples shorter than one {G}-sample window"
        )
    n = (N - G) // H + 1
    offset = (G - W) // 2
    starts = offset + H * np.arange(n)
    idx = starts[:, None] + np.arange(W)[None, :]
    return w.samples[idx]


def rms_energy(window: np.ndarray) -> float:
    """Root of the mean squared amplitude."""
    window = np.asarray(window, dtype=np.float64)
    return float(np.sqrt(np.mean(window * window)))


def loudness(window: np.ndarray, exponent: float = 0.3) -> float:
    """Perceptual-law intensity proxy: (rms / full scale) ** exponent."""
    return float(rms_energy(window) ** exponent)


def zcr(window: np.ndarray) -> float:
    """Fraction of adjacent-sample sign changes (zeros count as positive)."""
    window = np.asarray(window)
    if window.size < 2:
        return 0.0
    s = window >= 0
    return float(np.count_nonzero(s[1:] != s[:-1]) / (window.size - 1))


def _nccf_batch(frames: np.ndarray, sr: int, fmin: float, fmax: float):
    """Normalized autocorrelation peak per frame.

    Returns (peak_r, lag) arrays; lag is the parabolic-interpolated peak
    position in samples (0 where the frame has no energy).
    """
    n_frames, G = frames.shape
    tau_min = max(2, int(np.floor(sr / fmax)))
    tau_max = int(np.ceil(sr / fmin))
    if tau_max + 1 >= G:
        raise ValueError(
            f"window of {G} samples too short for fmin={fmin} Hz (needs > {tau_max + 1})"
        )
    # no taper: each lag is normalized by both segment energies, so a
    # taper would break the peak-of-1 property on periodic signals that
    # the voicing/HNR ranges rely on
    xw = frames
    nfft = 1 << int(np.ceil(np.log2(2 * G)))
    spec = np.fft.rfft(xw, nfft, axis=1)
    rxx = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, : tau_max + 2]

    sq = xw * xw
    csum = np.cumsum(sq, axis=1)
    total = csum[:, -1]
    taus = np.arange(tau_min - 1, tau_max + 2)
    e_front = csum[:, G - taus - 1]  # sum of first G-tau squares
    e_back = total[:, None] - csum[:, taus - 1]  # sum of last G-tau squares
    denom = np.sqrt(e_front * e_back) + 1e-12
    r = rxx[:, taus] / denom  # columns correspond to taus

    inner = r[:, 1:-1]  # taus tau_min..tau_max
    # octave preference: a sampled periodic signal often scores a hair
    # higher at 2x the true period (the double lag can land nearer an
    # integer), so among local maxima within 0.01 of the global peak we
    # keep the smallest lag instead of the literal argmax
    rmax = inner.max(axis=1, keepdims=True)
    local = (inner >= r[:, :-2]) & (inner >= r[:, 2:])
    cand = local & (inner >= rmax - 0.01)
    has = cand.any(axis=1)
    best = np.where(has, cand.argmax(axis=1), inner.argmax(axis=1))
    rows = np.arange(n_frames)
    r0 = inner[rows, best]
    rm = r[rows, best]  # tau-1 neighbor
    rp = r[rows, best + 2]  # tau+1 neighbor
    denom2 = rm - 2.0 * r0 + rp
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(np.abs(denom2) > 1e-12, 0.5 * (rm - rp) / denom2, 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    peak = r0 - 0.25 * (rm - rp) * delta
    lag = tau_min + best + delta
    silent = total < 1e-12
    peak = np.where(silent, 0.0, peak)
    lag = np.where(silent, 0.0, lag)
    return np.clip(peak, 0.0, 1.0), lag


def f0_autocorr(
    window: np.ndarray, sr: int, fmin: float = 50.0, fmax: float = 500.0,
    voicing_threshold: float = 0.45,
) -> tuple:
    """(f0_hz, voicing_prob) for one analysis window.

    f0 is 0 when the voicing probability falls below the threshold.
    """
    window = np.asarray(window, dtype=np.float64)
    peak, lag = _nccf_batch(window[None, :], sr, fmin, fmax)
    voicing = float(peak[0])
    f0 = sr / float(lag[0]) if (voicing >= voicing_threshold and lag[0] > 0) else 0.0
    return f0, voicing


def hnr(window: np.ndarray, sr: int, fmin: float = 50.0, fmax: float = 500.0,
        clamp_db: float = 60.0) -> float:
    """Harmonics-to-noise ratio in dB from the autocorrelation peak."""
    window = np.asarray(window, dtype=np.float64)
    peak, _ = _nccf_batch(window[None, :], sr, fmin, fmax)
    return float(_hnr_from_r(peak, clamp_db)[0])


def _hnr_from_r(r: np.ndarray, clamp_db: float) -> np.ndarray:
    rc = np.clip(r, 1e-6, 1.0 - 1e-6)
    return np.clip(10.0 * np.log10(rc / (1.0 - rc)), -clamp_db, clamp_db)


def smooth_f0(track: np.ndarray, width: int = 5) -> np.ndarray:
    """Median-filter the voiced part of an f0 track.

    Unvoiced frames (f0 = 0) are excluded from each median window and
    stay 0 in the output.
    """
    track = np.asarray(track, dtype=np.float64)
    out = np.zeros_like(track)
    half = width // 2
    voiced = track > 0
    for i in np.nonzero(voiced)[0]:
        lo = max(0, i - half)
        window = track[lo : i + half + 1]
        vals = window[window > 0]
        out[i] = np.median(vals)
    return out


def extract_features(w: Waveform, config: FeaturizerConfig = FeaturizerConfig()) -> FeatureMatrix:
    """Waveform -> [n, 6] FeatureMatrix on the 10 ms grid."""
    sr = w.sample_rate_hz
    long_frames = frame_signal(w, config.pitch_window_s, config.hop_s, config.pitch_window_s)
    short_frames = frame_signal(w, config.energy_window_s, config.hop_s, config.pitch_window_s)

    sq = short_frames * short_frames
    rms = np.sqrt(sq.mean(axis=1))
    loud = rms**config.loudness_exponent
    s = short_frames >= 0
    z = np.count_nonzero(s[:, 1:] != s[:, :-1], axis=1) / (short_frames.shape[1] - 1)

    peak, lag = _nccf_batch(long_frames, sr, config.fmin_hz, config.fmax_hz)
    voiced = (peak >= config.voicing_threshold) & (lag > 0)
    with np.errstate(divide="ignore"):
        f0_raw = np.where(voiced, sr / np.where(lag > 0, lag, 1.0), 0.0)
    f0 = smooth_f0(f0_raw, config.median_width)
    hnr_db = _hnr_from_r(peak, config.hnr_clamp_db)

    data = np.stack([f0, rms, loud, z, peak, hnr_db], axis=1)
    fm = FeatureMatrix(data.astype(np.float32), hop_s=config.hop_s)
    fm.validate()
    return fm


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != (len(FEATURE_NAMES),) or self.std.shape != self.mean.shape:
            raise ValueError("stats must be per-feature vectors of length 6")
        if np.any(self.std <= 0):
            raise ValueError("std must be positive (zero-variance features get 1)")


def fit_norm(matrices: Sequence[FeatureMatrix]) -> NormStats:
    """Per-feature z-score statistics over the given (training) frames only."""
    if not matrices:
        raise ValueError("cannot fit normalization on an empty split")
    allframes = np.concatenate([fm.data for fm in matrices], axis=0).astype(np.float64)
    mean = allframes.mean(axis=0)
    std = allframes.std(axis=0)
    std[std < 1e-8] = 1.0
    return NormStats(mean, std)


def apply_norm(fm: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    data = (fm.data.astype(np.float64) - stats.mean) / stats.std
    return FeatureMatrix(data.astype(np.float32), hop_s=fm.hop_s)


def ablate(fm: FeatureMatrix, mode) -> FeatureMatrix:
    """Feature ablation transforms.

    mode "duration_only" replaces every value with 1 so only the frame
    count per token survives; a set of group names out of
    {pitch, intensity, voicing} zeroes those columns. Dropping all three
    groups must be requested as duration_only explicitly.
    """
    if mode == "duration_only":
        return FeatureMatrix(np.ones_like(fm.data), hop_s=fm.hop_s)
    groups = frozenset(mode)
    unknown = groups - set(FEATURE_GROUPS)
    if unknown:
        raise ValueError(f"unknown feature groups: {sorted(unknown)}")
    if groups == set(FEATURE_GROUPS):
        raise ValueError(
            "dropping all three groups removes every feature; request duration_only explicitly"
        )
    data = fm.data.copy()
    for g in groups:
        data[:, FEATURE_GROUPS[g]] = 0.0
    return FeatureMatrix(data, hop_s=fm.hop_s)


def read_wav(path) -> Waveform:
    """16-bit PCM mono WAV -> Waveform with samples in [-1, 1]."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        sr = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples, sr)


def write_wav(path, w: Waveform) -> None:
    data = np.clip(np.round(np.asarray(w.samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate_hz)
        fh.writeframes(data.tobytes())


class FeatureCache:
    """On-disk per-utterance feature store.

    One binary file per utterance under a directory keyed by featurizer
    version + parameters: magic 'AFC1', u32 frame count, u32 feature dim,
    then row-major little-endian float32 data.
    """

    MAGIC = b"AFC1"

    def __init__(self, root, config: FeaturizerConfig):
        self.dir = Path(root) / config.cache_key()
        self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, utt_id: str) -> Path:
        return self.dir / f"{utt_id}.feat"

    def get(self, utt_id: str) -> Optional[FeatureMatrix]:
        p = self.path(utt_id)
        if not p.exists():
            return None
        with open(p, "rb") as fh:
            if fh.read(4) != self.MAGIC:
                raise ValueError(f"{p}: bad feature-cache magic")
            n, dim = struct.unpack("<II", fh.read(8))
            data = np.frombuffer(fh.read(4 * n * dim), dtype="<f4").reshape(n, dim)
        return FeatureMatrix(np.array(data))

    def put(self, utt_id: str, fm: FeatureMatrix) -> None:
        p = self.path(utt_id)
        with open(p, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<II", fm.n, fm.data.shape[1]))
            fh.write(np.ascontiguousarray(fm.data, dtype="<f4").tobytes())
