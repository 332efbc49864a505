"""Corpus representation, JSONL I/O, text preprocessing, vocabularies.

A corpus is a list of utterances; an utterance is a sequence of word
tokens with boundary timestamps and binary accent labels, optionally
pointing at a mono 16-bit WAV file. The on-disk format is one JSON object
per line:

    {"id": ..., "speaker": ..., "audio": ...,
     "tokens": [{"text": ..., "start_s": ..., "end_s": ..., "label": 0|1}, ...]}

Timestamps are canonicalized to microsecond precision on save, so
save(load(f)) is byte-identical for files this package wrote.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

_TIME_EPS = 1e-9


class CorpusError(ValueError):
    """Malformed corpus file or violated corpus invariant."""


@dataclass(frozen=True)
class StopwordList:
    """Fixed set of lowercase function words, shipped with the package."""

    words: frozenset

    def __post_init__(self):
        object.__setattr__(self, "words", frozenset(self.words))
        if not self.words:
            raise ValueError("stopword list must be nonempty")

    @classmethod
    def load(cls, path) -> "StopwordList":
        lines = Path(path).read_text(encoding="utf-8").split()
        return cls(frozenset(w.lower() for w in lines))


_DEFAULT_STOPWORDS: Optional[StopwordList] = None


def default_stopwords() -> StopwordList:
    global _DEFAULT_STOPWORDS
    if _DEFAULT_STOPWORDS is None:
        text = resources.files("accentdet").joinpath("data/stopwords.txt").read_text("utf-8")
        _DEFAULT_STOPWORDS = StopwordList(frozenset(text.split()))
    return _DEFAULT_STOPWORDS


@dataclass(frozen=True)
class Token:
    text: str
    start_s: float
    end_s: float
    label: int

    def __post_init__(self):
        if not self.text:
            raise ValueError("token text must be nonempty")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not (self.end_s > self.start_s >= 0):
            raise ValueError(
                f"token {self.text!r}: need 0 <= start < end, got [{self.start_s}, {self.end_s})"
            )

    @property
    def is_content(self) -> bool:
        """Non-stopword status against the shipped default list."""
        return self.text.lower() not in default_stopwords().words

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class Utterance:
    id: str
    speaker: str
    tokens: Tuple[Token, ...]
    audio_ref: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise CorpusError(f"utterance {self.id!r}: no tokens")
        prev_end = -_TIME_EPS
        for tok in self.tokens:
            if tok.start_s < prev_end - _TIME_EPS:
                raise CorpusError(
                    f"utterance {self.id!r}: token {tok.text!r} at {tok.start_s}s "
                    f"overlaps previous token ending at {prev_end}s"
                )
            prev_end = tok.end_s

    @property
    def labels(self) -> List[int]:
        return [t.label for t in self.tokens]

    @property
    def texts(self) -> List[str]:
        return [t.text for t in self.tokens]


@dataclass(frozen=True)
class Corpus:
    utterances: Tuple[Utterance, ...]
    sample_rate_hz: int = 16000
    root: Optional[Path] = None  # directory audio refs resolve against

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if self.sample_rate_hz <= 0:
            raise CorpusError("sample rate must be positive")
        seen = set()
        for u in self.utterances:
            if u.id in seen:
                raise CorpusError(f"duplicate utterance id {u.id!r}")
            seen.add(u.id)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def by_id(self, utt_id: str) -> Utterance:
        for u in self.utterances:
            if u.id == utt_id:
                return u
        raise KeyError(utt_id)

    def audio_path(self, u: Utterance) -> Path:
        if u.audio_ref is None:
            raise CorpusError(f"utterance {u.id!r} has no audio reference")
        p = Path(u.audio_ref)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def n_tokens(self) -> int:
        return sum(len(u.tokens) for u in self.utterances)

    def speakers(self) -> List[str]:
        out: List[str] = []
        for u in self.utterances:
            if u.speaker not in out:
                out.append(u.speaker)
        return out

    def subset(self, ids: Sequence[str]) -> "Corpus":
        wanted = set(ids)
        picked = tuple(u for u in self.utterances if u.id in wanted)
        missing = wanted - {u.id for u in picked}
        if missing:
            raise KeyError(f"unknown utterance ids: {sorted(missing)}")
        return Corpus(picked, self.sample_rate_hz, self.root)


_UTT_KEYS = {"id", "speaker", "tokens", "audio"}
_TOKEN_KEYS = {"text", "start_s", "end_s", "label"}


def load_corpus(path, format: str = "jsonl", sample_rate_hz: int = 16000) -> Corpus:
    """Parse a JSONL corpus; errors carry the line number or utterance id."""
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    path = Path(path)
    utterances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {e}") from e
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            unknown = set(obj) - _UTT_KEYS
            if unknown:
                raise CorpusError(f"{path}:{lineno}: unknown keys {sorted(unknown)}")
            for key in ("id", "speaker", "tokens"):
                if key not in obj:
                    raise CorpusError(f"{path}:{lineno}: missing key {key!r}")
            tokens = []
            for tnum, tok in enumerate(obj["tokens"]):
                unknown = set(tok) - _TOKEN_KEYS
                if unknown:
                    raise CorpusError(
                        f"{path}:{lineno}: token {tnum}: unknown keys {sorted(unknown)}"
                    )
                missing = _TOKEN_KEYS - set(tok)
                if missing:
                    raise CorpusError(
                        f"{path}:{lineno}: token {tnum}: missing keys {sorted(missing)}"
                    )
                try:
                    tokens.append(
                        Token(tok["text"], float(tok["start_s"]), float(tok["end_s"]), tok["label"])
                    )
                except ValueError as e:
                    raise CorpusError(f"utterance {obj['id']!r}: {e}") from e
            try:
                utterances.append(
                    Utterance(obj["id"], obj["speaker"], tuple(tokens), obj.get("audio"))
                )
            except CorpusError:
                raise
            except ValueError as e:
                raise CorpusError(f"utterance {obj['id']!r}: {e}") from e
    return Corpus(tuple(utterances), sample_rate_hz, root=path.parent)


def save_corpus(corpus: Corpus, path) -> None:
    """Write the canonical JSONL form (stable key order, 6-decimal times)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for u in corpus.utterances:
            obj = {"id": u.id, "speaker": u.speaker}
            if u.audio_ref is not None:
                obj["audio"] = u.audio_ref
            obj["tokens"] = [
                {
                    "text": t.text,
                    "start_s": round(t.start_s, 6),
                    "end_s": round(t.end_s, 6),
                    "label": t.label,
                }
                for t in u.tokens
            ]
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


# contraction suffixes whose apostrophe-and-after part gets stripped
_CLITIC_SUFFIXES = ("'ll", "'re", "'ve", "n't", "'s", "'d", "'m")


def strip_clitic(text: str) -> str:
    """Remove a trailing clitic: we'll -> we; hyphenated words untouched."""
    normalized = text.replace("’", "'").lower()
    for suffix in _CLITIC_SUFFIXES:
        if normalized.endswith(suffix):
            cut = max(text.rfind("'"), text.rfind("’"))
            if cut > 0:
                return text[:cut]
    return text


def preprocess_text(u: Utterance) -> Utterance:
    """Contraction removal on token texts; timestamps and labels unchanged."""
    new_tokens = tuple(
        replace(t, text=strip_clitic(t.text)) if strip_clitic(t.text) != t.text else t
        for t in u.tokens
    )
    return replace(u, tokens=new_tokens)


def preprocess_corpus(c: Corpus) -> Corpus:
    return replace(c, utterances=tuple(preprocess_text(u) for u in c.utterances))


@dataclass(frozen=True)
class Vocabulary:
    """Most-frequent-first token-text index; id 0 is UNK.

    Truncating to a smaller max size keeps a prefix of the same ranking,
    so vocab(k1)'s types are a subset of vocab(k2)'s for k1 < k2.
    """

    id_of: Dict[str, int]
    unk_id: int = 0

    @property
    def size(self) -> int:
        return len(self.id_of) + 1

    def lookup(self, text: str) -> int:
        return self.id_of.get(text.lower(), self.unk_id)

    def truncated(self, max_size: int) -> "Vocabulary":
        if max_size < 1:
            raise ValueError("vocabulary size must be >= 1")
        kept = {w: i for w, i in self.id_of.items() if i <= max_size}
        return Vocabulary(kept, self.unk_id)


def build_vocab(c: Corpus, max_size: int) -> Vocabulary:
    """Rank lowercased token texts by frequency (ties lexicographic)."""
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    if not c.utterances:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts = Counter(t.text.lower() for u in c.utterances for t in u.tokens)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    id_of = {w: i + 1 for i, (w, _) in enumerate(ranked[:max_size])}
    return Vocabulary(id_of)


def content_word_mask(u: Utterance, sw: Optional[StopwordList] = None) -> List[int]:
    """1 for non-stopwords (content words), 0 for stopwords."""
    sw = sw or default_stopwords()
    return [0 if t.text.lower() in sw.words else 1 for t in u.tokens]
