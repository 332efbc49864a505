"""Reference predictors bounding the task, and the accuracy metric.

majority: the more frequent training label everywhere (ties favor accent,
matching the corpus skew). content_word: accent exactly the non-stopwords
(delegates to the corpus mask, single source of truth). duration_only is
not a separate architecture: it is the speech model trained under the
all-ones feature ablation, wired up in the experiments module.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np

from .corpus import Corpus, StopwordList, Utterance, content_word_mask


def majority_predict(train: Corpus) -> int:
    """Constant label: the more frequent one in training (tie -> 1)."""
    ones = sum(t.label for u in train for t in u.tokens)
    total = train.n_tokens()
    if total == 0:
        raise ValueError("empty training corpus")
    return 1 if ones * 2 >= total else 0


def content_word_predict(u: Utterance, sw: Optional[StopwordList] = None) -> List[int]:
    return content_word_mask(u, sw)


def accuracy(pred: Sequence[int], gold: Sequence[int], mask: Optional[Sequence[bool]] = None) -> float:
    """Fraction of exact matches, optionally restricted to an index mask."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    agree = pred == gold
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != gold.shape:
            raise ValueError("mask length mismatch")
        if not mask.any():
            raise ValueError("mask selects no tokens")
        agree = agree[mask]
    return float(agree.mean())


def per_class_f1(pred: Sequence[int], gold: Sequence[int]) -> Dict[int, float]:
    """F1 for each class; 0.0 where the class never occurs."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    out = {}
    for cls in (0, 1):
        tp = int(np.sum((pred == cls) & (gold == cls)))
        fp = int(np.sum((pred == cls) & (gold != cls)))
        fn = int(np.sum((pred != cls) & (gold == cls)))
        denom = 2 * tp + fp + fn
        out[cls] = 2 * tp / denom if denom else 0.0
    return out


def deviation_mask(u: Utterance, sw: Optional[StopwordList] = None) -> List[bool]:
    """Tokens where the gold label differs from the content-word mask.

    These are the accented function words and unaccented content words:
    the subset where text alone argues the wrong way.
    """
    mask = content_word_mask(u, sw)
    return [bool(t.label != m) for t, m in zip(u.tokens, mask)]
