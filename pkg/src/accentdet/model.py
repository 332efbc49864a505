"""Pitch-accent sequence labelers: speech-only, text-only, and combined.

The speech encoder runs stride-2 1-D convolutions over the acoustic
frames, splits the downsampled frames at word boundaries using the token
timestamps, and collapses each token's frames into one vector (sum by
default, max as a search option). Token vectors, text embeddings, or
their concatenation then feed a bidirectional LSTM and a per-token linear
head. Context regimes: the full-utterance model labels the whole sequence
at once; the three-token/one-token variants slide a window over the
utterance and keep only the central token's prediction.

Batching pads to the longest utterance; padded frames are re-zeroed after
every conv layer so a token's encoding is bit-identical whether the
utterance is batched alone or with longer neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Utterance, Vocabulary
from .featurizer import FeatureMatrix
from .nn import ops
from .nn.init import lstm_bias, uniform_fan_in, zeros
from .nn.lstm import bilstm
from .nn.tensor import Tensor

INPUT_MODES = ("speech", "text", "speech_text")
CONTEXTS = ("full_utterance", "three_token", "one_token")
POOLINGS = ("sum", "max")


@dataclass(frozen=True)
class ModelConfig:
    input_mode: str = "speech"
    context: str = "full_utterance"
    use_lstm: bool = True
    cnn_layers: int = 3
    cnn_kernel_width: int = 11
    cnn_channels: Tuple[int, ...] = (128, 256, 256)
    cnn_stride: int = 2
    lstm_layers: int = 2
    lstm_hidden: int = 128
    dropout: float = 0.5
    weight_decay: float = 1e-5
    pooling: str = "sum"
    text_embed_dim: int = 300
    vocab_size: int = 3000
    lr: float = 0.001
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if self.context not in CONTEXTS:
            raise ValueError(f"context must be one of {CONTEXTS}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if len(self.cnn_channels) != self.cnn_layers:
            raise ValueError(
                f"cnn_channels has {len(self.cnn_channels)} entries for {self.cnn_layers} layers"
            )
        if self.context == "one_token" and self.use_lstm:
            raise ValueError("one_token context is CNN-only (use_lstm must be False)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def downsample_factor(self) -> int:
        return self.cnn_stride**self.cnn_layers

    @property
    def uses_speech(self) -> bool:
        return self.input_mode in ("speech", "speech_text")

    @property
    def uses_text(self) -> bool:
        return self.input_mode in ("text", "speech_text")

    def scaled(self, width: float) -> "ModelConfig":
        """Shrink channel/hidden/embedding sizes for desk-scale runs."""
        return replace(
            self,
            cnn_channels=tuple(max(4, int(c * width)) for c in self.cnn_channels),
            lstm_hidden=max(4, int(self.lstm_hidden * width)),
            text_embed_dim=max(4, int(self.text_embed_dim * width)),
        )


@dataclass(frozen=True)
class TokenSpanMap:
    """Per-token frame intervals in CNN-output index space.

    orig_cuts are the token boundary positions in the original 10 ms
    frame index space (length m+1); spans are the downsampled [i, j)
    intervals after boundary division and the one-frame repair rule.
    """

    spans: Tuple[Tuple[int, int], ...]
    orig_cuts: Tuple[int, ...]
    n_out: int
    repairs: int = 0

    def __post_init__(self):
        prev = None
        for i, j in self.spans:
            if j <= i:
                raise ValueError(f"empty span [{i}, {j})")
            if prev is not None and i < prev:
                raise ValueError("spans overlap")
            prev = j
        if self.spans and self.spans[-1][1] > self.n_out:
            raise ValueError("span exceeds frame count")


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def downsampled_length(n: int, cfg: ModelConfig) -> int:
    """Frame count after the conv stack (same padding keeps ceil(L/s))."""
    for _ in range(cfg.cnn_layers):
        n = _ceil_div(n, cfg.cnn_stride)
    return n


def spans_from_cuts(cuts: Sequence[int], n_frames: int, cfg: ModelConfig) -> TokenSpanMap:
    """Divide downsampled frames at the given original-frame boundaries."""
    factor = cfg.downsample_factor
    n_out = downsampled_length(n_frames, cfg)
    m = len(cuts) - 1
    if n_out < m:
        raise ValueError(
            f"{n_out} downsampled frames cannot cover {m} tokens; utterance too short"
        )
    d = [min(_ceil_div(c, factor), n_out) for c in cuts]
    d[-1] = n_out  # trailing frames belong to the last token
    repairs = 0
    # left-to-right one-frame steals from the larger neighbor; repeated
    # passes let frames cascade toward runs of empty spans
    for _ in range(m + 2):
        changed = False
        for k in range(m):
            if d[k + 1] > d[k]:
                continue
            if k > 0:
                left = d[k] - d[k - 1]
                can_left = left > 1
            else:
                left = d[0]  # unassigned frames before the first token
                can_left = d[0] > 0
            right = d[k + 2] - d[k + 1] if k + 1 < m else 0
            can_right = right > 1
            if can_left and (left >= right or not can_right):
                d[k] -= 1
            elif can_right:
                d[k + 1] += 1
            else:
                continue
            repairs += 1
            changed = True
        if not changed:
            break
    spans = tuple((d[k], d[k + 1]) for k in range(m))
    for i, j in spans:
        if j <= i:
            raise ValueError("span repair failed; utterance too short for token count")
    return TokenSpanMap(spans, tuple(int(c) for c in cuts), n_out, repairs)


def map_spans(u: Utterance, fm: FeatureMatrix, cfg: ModelConfig) -> TokenSpanMap:
    """Token timestamps -> frame intervals in CNN-output index space.

    Boundaries sit at token starts (round(t/hop)); gap frames between
    words go with the preceding token and trailing frames with the last.
    """
    n = fm.n
    cuts = [min(int(round(t.start_s / fm.hop_s)), n) for t in u.tokens]
    for a, b in zip(cuts, cuts[1:]):
        if b < a:
            raise ValueError(f"utterance {u.id!r}: token boundaries not monotonic")
    cuts.append(n)
    return spans_from_cuts(cuts, n, cfg)


@dataclass(frozen=True)
class Prediction:
    """Per-token model output for one utterance."""

    logits: np.ndarray  # [m, 2]
    probs: np.ndarray  # [m, 2], rows sum to 1
    labels: np.ndarray  # argmax per token

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "Prediction":
        probs = ops.softmax_probs(logits)
        return cls(np.asarray(logits), probs, probs.argmax(axis=1))

    @property
    def accent_probability(self) -> np.ndarray:
        return self.probs[:, 1]


@dataclass
class UtteranceBatchItem:
    """Everything the network needs for one utterance."""

    utt_id: str
    channels: Optional[np.ndarray]  # [6, L] float32, None in text mode
    span_map: Optional[TokenSpanMap]
    token_ids: Optional[np.ndarray]  # [m] int64, None in speech mode
    labels: np.ndarray  # [m]

    @property
    def n_tokens(self) -> int:
        return len(self.labels)


def prepare_utterance(
    u: Utterance,
    fm: Optional[FeatureMatrix],
    vocab: Optional[Vocabulary],
    cfg: ModelConfig,
) -> UtteranceBatchItem:
    channels = None
    span_map = None
    token_ids = None
    if cfg.uses_speech:
        if fm is None:
            raise ValueError(f"utterance {u.id!r}: speech mode requires features")
        span_map = map_spans(u, fm, cfg)
        channels = fm.to_channels().astype(np.float32)
    if cfg.uses_text:
        if vocab is None:
            raise ValueError("text mode requires a vocabulary")
        token_ids = np.array([vocab.lookup(t.text) for t in u.tokens], dtype=np.int64)
    return UtteranceBatchItem(u.id, channels, span_map, token_ids, np.array(u.labels))


class PitchAccentModel:
    """Parameter container plus forward passes for all input modes.

    n_embeddings sizes the text table to the vocabulary actually built
    (UNK included); it defaults to cfg.vocab_size + 1, the size cap.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32,
                 n_embeddings: Optional[int] = None):
        self.cfg = cfg
        self.dtype = dtype
        self.rng = np.random.Generator(np.random.Philox(key=seed))
        self.params: Dict[str, Tensor] = {}
        p = self.params
        token_dim = 0
        if cfg.uses_speech:
            c_in = 6
            for i, c_out in enumerate(cfg.cnn_channels):
                fan_in = c_in * cfg.cnn_kernel_width
                p[f"conv{i}.w"] = uniform_fan_in(
                    self.rng, (c_out, c_in, cfg.cnn_kernel_width), fan_in, dtype, f"conv{i}.w"
                )
                p[f"conv{i}.b"] = zeros((c_out,), dtype, f"conv{i}.b")
                c_in = c_out
            token_dim += cfg.cnn_channels[-1]
        if cfg.uses_text:
            rows = n_embeddings if n_embeddings is not None else cfg.vocab_size + 1
            p["text_embed"] = uniform_fan_in(
                self.rng, (rows, cfg.text_embed_dim), cfg.text_embed_dim,
                dtype, "text_embed",
            )
            token_dim += cfg.text_embed_dim
        head_in = token_dim
        if cfg.use_lstm:
            in_dim = token_dim
            for layer in range(cfg.lstm_layers):
                for direction in ("fwd", "bwd"):
                    p[f"lstm{layer}.{direction}.Wx"] = uniform_fan_in(
                        self.rng, (in_dim, 4 * cfg.lstm_hidden), in_dim, dtype,
                        f"lstm{layer}.{direction}.Wx",
                    )
                    p[f"lstm{layer}.{direction}.Wh"] = uniform_fan_in(
                        self.rng, (cfg.lstm_hidden, 4 * cfg.lstm_hidden), cfg.lstm_hidden,
                        dtype, f"lstm{layer}.{direction}.Wh",
                    )
                    p[f"lstm{layer}.{direction}.b"] = lstm_bias(
                        cfg.lstm_hidden, dtype, f"lstm{layer}.{direction}.b"
                    )
                in_dim = 2 * cfg.lstm_hidden
            head_in = 2 * cfg.lstm_hidden
        p["out.w"] = uniform_fan_in(self.rng, (head_in, 2), head_in, dtype, "out.w")
        p["out.b"] = zeros((2,), dtype, "out.b")

    def parameters(self) -> Dict[str, Tensor]:
        return self.params

    def param_count(self) -> int:
        return sum(int(np.prod(t.data.shape)) for t in self.params.values())

    def load_params(self, params: Dict[str, Tensor]) -> None:
        if set(params) != set(self.params):
            missing = set(self.params) ^ set(params)
            raise ValueError(f"checkpoint parameter names mismatch: {sorted(missing)}")
        for name, t in params.items():
            if t.data.shape != self.params[name].data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {t.data.shape} vs {self.params[name].data.shape}"
                )
            self.params[name].data = t.data.astype(self.dtype)

    def load_text_embeddings(self, path, vocab: Vocabulary) -> int:
        """Seed the embedding table from a '<word> <f1> ... <fE>' text file."""
        if "text_embed" not in self.params:
            raise ValueError("model has no text embedding table")
        table = self.params["text_embed"].data
        dim = table.shape[1]
        loaded = 0
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip("\n").split(" ")
                if len(parts) != dim + 1:
                    continue
                idx = vocab.id_of.get(parts[0].lower())
                if idx is not None and idx < table.shape[0]:
                    table[idx] = np.array(parts[1:], dtype=self.dtype)
                    loaded += 1
        return loaded

    # ---------------- forward passes ----------------

    def _conv_stack(self, items: Sequence[UtteranceBatchItem], training: bool) -> List[Tensor]:
        """Batched conv encoder + per-utterance span pooling."""
        cfg = self.cfg
        lens = [it.channels.shape[1] for it in items]
        L = max(lens)
        B = len(items)
        x = np.zeros((B, 6, L), dtype=self.dtype)
        for i, it in enumerate(items):
            x[i, :, : lens[i]] = it.channels
        h = Tensor(x)
        cur_lens = lens
        for layer in range(cfg.cnn_layers):
            h = ops.conv1d(
                h,
                self.params[f"conv{layer}.w"],
                self.params[f"conv{layer}.b"],
                stride=cfg.cnn_stride,
                padding=cfg.cnn_kernel_width // 2,
            )
            h = ops.relu(h)
            h = ops.dropout(h, cfg.dropout, training, self.rng)
            cur_lens = [_ceil_div(n, cfg.cnn_stride) for n in cur_lens]
            # re-zero padded columns so batching cannot leak into real frames
            if len(set(cur_lens)) > 1:
                mask = np.zeros((B, 1, h.data.shape[2]), dtype=self.dtype)
                for i, n in enumerate(cur_lens):
                    mask[i, :, :n] = 1.0
                h = ops.mul(h, Tensor(mask))
        pooled = []
        for i, it in enumerate(items):
            pooled.append(ops.pool_spans(h, i, it.span_map.spans, mode=cfg.pooling))
        return pooled

    def _token_reprs(self, items: Sequence[UtteranceBatchItem], training: bool):
        """Per-utterance [m_b, D] token representations for the batch."""
        cfg = self.cfg
        speech = self._conv_stack(items, training) if cfg.uses_speech else None
        reprs: List[Tensor] = []
        for i, it in enumerate(items):
            parts = []
            if speech is not None:
                parts.append(speech[i])
            if cfg.uses_text:
                parts.append(ops.embedding(self.params["text_embed"], it.token_ids))
            reprs.append(parts[0] if len(parts) == 1 else ops.concat(parts, axis=1))
        return reprs

    def forward(self, items: Sequence[UtteranceBatchItem], training: bool = False):
        """Full-sequence logits for a batch.

        Returns (logits Tensor [B, M, 2], token mask [B, M], labels [B, M]).
        """
        cfg = self.cfg
        reprs = self._token_reprs(items, training)
        batch, lengths, mask = ops.pad_stack(reprs)
        if cfg.use_lstm:
            layers = [
                {
                    f"{d}_{k}": self.params[f"lstm{layer}.{d}.{k}"]
                    for d in ("fwd", "bwd")
                    for k in ("Wx", "Wh", "b")
                }
                for layer in range(cfg.lstm_layers)
            ]
            hidden = bilstm(batch, mask, layers)
        else:
            hidden = batch
        hidden = ops.dropout(hidden, cfg.dropout, training, self.rng)
        logits = ops.linear(hidden, self.params["out.w"], self.params["out.b"])
        labels = np.zeros(mask.shape, dtype=np.int64)
        for i, it in enumerate(items):
            labels[i, : it.n_tokens] = it.labels
        return logits, mask, labels

    def forward_center(self, windows: Sequence[UtteranceBatchItem], centers: Sequence[int],
                       training: bool = False) -> Tensor:
        """Logits [N, 2] for the central token of each window."""
        full, _, _ = self.forward(windows, training)
        return ops.select_tokens(full, centers)

    def predict(self, items: Sequence[UtteranceBatchItem], batch_size: int = 64) -> List[Prediction]:
        """Inference-mode per-utterance predictions, any context regime."""
        if self.cfg.context == "full_utterance":
            out = []
            for lo in range(0, len(items), batch_size):
                chunk = items[lo : lo + batch_size]
                logits, _, _ = self.forward(chunk, training=False)
                for i, it in enumerate(chunk):
                    out.append(Prediction.from_logits(logits.data[i, : it.n_tokens]))
            return out
        windows, centers, owners = make_windows(items, self.cfg)
        per_item = [np.zeros((it.n_tokens, 2)) for it in items]
        for lo in range(0, len(windows), batch_size):
            sel = self.forward_center(windows[lo : lo + batch_size], centers[lo : lo + batch_size])
            for row, (i, k) in enumerate(owners[lo : lo + batch_size]):
                per_item[i][k] = sel.data[row]
        return [Prediction.from_logits(arr) for arr in per_item]


def window_item(it: UtteranceBatchItem, k: int, cfg: ModelConfig) -> Tuple[UtteranceBatchItem, int]:
    """Window of up to three tokens around k (edges keep what exists)."""
    half = 1 if cfg.context == "three_token" else 0
    lo = max(0, k - half)
    hi = min(it.n_tokens - 1, k + half)
    channels = None
    span_map = None
    if cfg.uses_speech:
        cuts = it.span_map.orig_cuts
        a, b = cuts[lo], cuts[hi + 1]
        rel = [c - a for c in cuts[lo : hi + 2]]
        channels = it.channels[:, a:b]
        span_map = spans_from_cuts(rel, b - a, cfg)
    ids = it.token_ids[lo : hi + 1] if it.token_ids is not None else None
    return (
        UtteranceBatchItem(f"{it.utt_id}#w{k}", channels, span_map, ids,
                           it.labels[lo : hi + 1]),
        k - lo,
    )


def make_windows(items: Sequence[UtteranceBatchItem], cfg: ModelConfig):
    """All (window, center) pairs for a batch, plus (item, token) owners."""
    if cfg.context == "full_utterance":
        raise ValueError("windows require a three_token or one_token context")
    windows: List[UtteranceBatchItem] = []
    centers: List[int] = []
    owners: List[Tuple[int, int]] = []
    for i, it in enumerate(items):
        for k in range(it.n_tokens):
            w, center = window_item(it, k, cfg)
            windows.append(w)
            centers.append(center)
            owners.append((i, k))
    return windows, centers, owners
