"""Experiment orchestration: folds, training runs, suites, aggregation.

Every random draw flows from two named seeds (data seed, model seed)
through a counter-based Philox generator keyed by a hash of the seed plus
purpose tags, so any (fold, seed) run is exactly reproducible in
isolation and runs are independent jobs safe to execute in parallel.

Protocol per run: normalization statistics are fitted on the training
split only, the model trains for a fixed number of epochs, the reported
epoch is the dev-accuracy argmax (earliest on ties), and test accuracy is
read from the parameter snapshot of exactly that epoch.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import featurizer as fz
from .baselines import accuracy
from .corpus import Corpus, CorpusError, Utterance, Vocabulary, build_vocab, preprocess_corpus
from .model import (
    ModelConfig,
    PitchAccentModel,
    UtteranceBatchItem,
    make_windows,
    prepare_utterance,
)
from .nn import Adam, NonFiniteError
from .nn import ops


# ---------------- seeds ----------------

def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary tags."""
    blob = repr(parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def split_rng(*parts) -> np.random.Generator:
    """Independent counter-based generator for one purpose."""
    return np.random.Generator(np.random.Philox(key=derive_seed(*parts)))


# ---------------- cross-validation folds ----------------

@dataclass(frozen=True)
class Split:
    test: Tuple[str, ...]
    dev: Tuple[str, ...]
    train: Tuple[str, ...]

    def check_disjoint(self) -> None:
        test, dev, train = set(self.test), set(self.dev), set(self.train)
        if test & (dev | train) or dev & train:
            raise AssertionError("train/dev/test splits overlap")


@dataclass(frozen=True)
class FoldPlan:
    splits: Tuple[Split, ...]
    shuffle_seed: int


def make_folds(c: Corpus, seed: int, n_folds: int = 10) -> FoldPlan:
    """Shuffle once; fold i tests on shuffled slice [i*k, (i+1)*k).

    k = floor(N / n_folds); dev is a fresh seeded draw of k utterances
    from the non-test pool, the rest train. Utterances beyond n_folds*k
    are never tested on and stay in every fold's train/dev pool.
    """
    ids = [u.id for u in c.utterances]
    N = len(ids)
    if N < 2 * n_folds:
        raise CorpusError(f"corpus of {N} utterances too small for {n_folds} folds")
    k = N // n_folds
    shuffled = list(ids)
    split_rng("fold-shuffle", seed).shuffle(shuffled)
    splits = []
    for i in range(n_folds):
        test = shuffled[i * k : (i + 1) * k]
        pool = [x for x in shuffled if x not in set(test)]
        dev_rng = split_rng("fold-dev", seed, i)
        dev_idx = dev_rng.choice(len(pool), size=k, replace=False)
        dev_set = {pool[j] for j in dev_idx}
        dev = [x for x in pool if x in dev_set]
        train = [x for x in pool if x not in dev_set]
        split = Split(tuple(test), tuple(dev), tuple(train))
        split.check_disjoint()
        splits.append(split)
    return FoldPlan(tuple(splits), seed)


def speaker_splits(c: Corpus, seed: int, dev_fraction: float = 0.1) -> Dict[str, Split]:
    """Leave-one-speaker-out: test = speaker, dev = seeded 10% of the rest."""
    out = {}
    for speaker in c.speakers():
        test = [u.id for u in c if u.speaker == speaker]
        if not test:
            raise CorpusError(f"speaker {speaker!r} has no utterances")
        pool = [u.id for u in c if u.speaker != speaker]
        if not pool:
            raise CorpusError("need at least two speakers")
        n_dev = max(1, int(round(dev_fraction * len(pool))))
        rng = split_rng("speaker-dev", seed, speaker)
        dev_idx = rng.choice(len(pool), size=n_dev, replace=False)
        dev_set = {pool[j] for j in dev_idx}
        dev = [x for x in pool if x in dev_set]
        train = [x for x in pool if x not in dev_set]
        split = Split(tuple(test), tuple(dev), tuple(train))
        split.check_disjoint()
        out[speaker] = split
    return out


# ---------------- feature store ----------------

class FeatureStore:
    """Raw per-utterance feature matrices, extracted once per corpus."""

    def __init__(self, corpus: Corpus, config: fz.FeaturizerConfig = fz.FeaturizerConfig(),
                 cache_dir=None, threads: int = 1):
        self.corpus = corpus
        self.config = config
        self._cache = fz.FeatureCache(cache_dir, config) if cache_dir else None
        self._matrices: Dict[str, fz.FeatureMatrix] = {}
        self._threads = threads

    def _extract_one(self, u: Utterance) -> Tuple[str, fz.FeatureMatrix]:
        if self._cache is not None:
            hit = self._cache.get(u.id)
            if hit is not None:
                return u.id, hit
        w = fz.read_wav(self.corpus.audio_path(u))
        fm = fz.extract_features(w, self.config)
        if self._cache is not None:
            self._cache.put(u.id, fm)
        return u.id, fm

    def load_all(self) -> "FeatureStore":
        todo = [u for u in self.corpus if u.id not in self._matrices]
        if self._threads > 1:
            with ThreadPoolExecutor(max_workers=self._threads) as pool:
                for utt_id, fm in pool.map(self._extract_one, todo):
                    self._matrices[utt_id] = fm
        else:
            for u in todo:
                utt_id, fm = self._extract_one(u)
                self._matrices[utt_id] = fm
        return self

    def get(self, utt_id: str) -> fz.FeatureMatrix:
        if utt_id not in self._matrices:
            self._matrices[utt_id] = self._extract_one(self.corpus.by_id(utt_id))[1]
        return self._matrices[utt_id]


# ---------------- single training run ----------------

@dataclass
class RunRecord:
    fold: int
    seed: int
    dev_curve: List[float]
    selected_epoch: int  # argmax of dev_curve, earliest on ties
    dev_acc: float
    test_acc: float
    status: str = "ok"  # "ok" | "nonfinite"
    diagnostics: str = ""
    span_repairs: int = 0
    # trained model (at the selected epoch) plus the exact preprocessing
    # state it was trained with; populated only when the caller asks for
    # it, never serialized
    model: Optional[PitchAccentModel] = field(default=None, repr=False, compare=False)
    norm_stats: Optional[fz.NormStats] = field(default=None, repr=False, compare=False)
    vocab: Optional[Vocabulary] = field(default=None, repr=False, compare=False)

    def check_epoch_selection(self) -> None:
        if self.status != "ok":
            return
        best = int(np.argmax(self.dev_curve))
        if best != self.selected_epoch or self.dev_curve[best] != self.dev_acc:
            raise AssertionError("selected epoch does not maximize dev accuracy")


@dataclass
class RunReport:
    runs: List[RunRecord] = field(default_factory=list)

    def ok_runs(self) -> List[RunRecord]:
        return [r for r in self.runs if r.status == "ok"]

    def flagged(self) -> List[RunRecord]:
        return [r for r in self.runs if r.status != "ok"]

    def mean_dev(self) -> float:
        return float(np.mean([r.dev_acc for r in self.ok_runs()]))

    def mean_test(self) -> float:
        return float(np.mean([r.test_acc for r in self.ok_runs()]))

    def std_test(self) -> float:
        return float(np.std([r.test_acc for r in self.ok_runs()]))


class TrainingDiverged(RuntimeError):
    pass


def _prepare_items(
    corpus: Corpus,
    ids: Sequence[str],
    cfg: ModelConfig,
    store: Optional[FeatureStore],
    stats: Optional[fz.NormStats],
    vocab: Optional[Vocabulary],
    ablation=None,
) -> List[UtteranceBatchItem]:
    items = []
    for utt_id in ids:
        u = corpus.by_id(utt_id)
        fm = None
        if cfg.uses_speech:
            fm = store.get(utt_id)
            fm = fz.apply_norm(fm, stats)
            if ablation is not None:
                fm = fz.ablate(fm, ablation)
        items.append(prepare_utterance(u, fm, vocab, cfg))
    return items


def _evaluate(model: PitchAccentModel, items: Sequence[UtteranceBatchItem],
              batch_size: int) -> float:
    preds = model.predict(items, batch_size=batch_size)
    pred_flat = np.concatenate([p.labels for p in preds])
    gold_flat = np.concatenate([it.labels for it in items])
    return accuracy(pred_flat, gold_flat)


def train_eval_run(
    corpus: Corpus,
    split: Split,
    cfg: ModelConfig,
    *,
    fold: int,
    model_seed: int,
    data_seed: int,
    store: Optional[FeatureStore] = None,
    ablation=None,
    vocab_size: Optional[int] = None,
    epochs: int = 25,
    batch_size: int = 64,
    on_epoch: Optional[Callable[[int, float], None]] = None,
    keep_model: bool = False,
) -> RunRecord:
    """One (fold, seed) training run under the epoch-selection protocol."""
    split.check_disjoint()
    assert not (set(split.test) & (set(split.train) | set(split.dev))), "test leakage"

    stats = None
    if cfg.uses_speech:
        if store is None:
            raise ValueError("speech mode requires a FeatureStore")
        stats = fz.fit_norm([store.get(i) for i in split.train])

    vocab = None
    text_corpus = corpus
    if cfg.uses_text:
        text_corpus = preprocess_corpus(corpus)
        vocab = build_vocab(
            text_corpus.subset(split.train), vocab_size or cfg.vocab_size
        )

    prep = lambda ids: _prepare_items(text_corpus, ids, cfg, store, stats, vocab, ablation)
    train_items = prep(split.train)
    dev_items = prep(split.dev)
    test_items = prep(split.test)
    repairs = sum(
        it.span_map.repairs for it in train_items + dev_items + test_items
        if it.span_map is not None
    )

    model = PitchAccentModel(
        cfg,
        seed=derive_seed("init", model_seed, fold),
        n_embeddings=vocab.size if vocab is not None else None,
    )
    shuffle_rng = split_rng("shuffle", data_seed, model_seed, fold)
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    windowed = cfg.context != "full_utterance"
    if windowed:
        train_windows, train_centers, _ = make_windows(train_items, cfg)

    dev_curve: List[float] = []
    best_acc = -1.0
    best_epoch = -1
    best_params: Dict[str, np.ndarray] = {}
    try:
        for epoch in range(epochs):
            if windowed:
                order = np.arange(len(train_windows))
                shuffle_rng.shuffle(order)
                for lo in range(0, len(order), batch_size):
                    sel = order[lo : lo + batch_size]
                    opt.zero_grad()
                    logits = model.forward_center(
                        [train_windows[i] for i in sel],
                        [train_centers[i] for i in sel],
                        training=True,
                    )
                    labels = np.array(
                        [train_windows[i].labels[train_centers[i]] for i in sel]
                    )
                    loss = ops.softmax_xent(logits, labels)
                    _step(loss, opt, cfg, fold, model_seed, epoch)
            else:
                order = np.arange(len(train_items))
                shuffle_rng.shuffle(order)
                for lo in range(0, len(order), batch_size):
                    batch = [train_items[i] for i in order[lo : lo + batch_size]]
                    opt.zero_grad()
                    logits, mask, labels = model.forward(batch, training=True)
                    flat = ops.reshape(logits, (-1, 2))
                    loss = ops.softmax_xent(flat, labels.ravel(), mask.ravel())
                    _step(loss, opt, cfg, fold, model_seed, epoch)
            dev_acc = _evaluate(model, dev_items, batch_size)
            dev_curve.append(dev_acc)
            if on_epoch is not None:
                on_epoch(epoch, dev_acc)
            if dev_acc > best_acc:
                best_acc = dev_acc
                best_epoch = epoch
                best_params = {k: t.data.copy() for k, t in model.parameters().items()}
    except TrainingDiverged as e:
        return RunRecord(fold, model_seed, dev_curve, -1, float("nan"), float("nan"),
                         status="nonfinite", diagnostics=str(e), span_repairs=repairs)

    for name, data in best_params.items():
        model.parameters()[name].data = data
    test_acc = _evaluate(model, test_items, batch_size)
    record = RunRecord(fold, model_seed, dev_curve, best_epoch, best_acc, test_acc,
                       span_repairs=repairs, model=model if keep_model else None,
                       norm_stats=stats if keep_model else None,
                       vocab=vocab if keep_model else None)
    record.check_epoch_selection()
    return record


def _step(loss, opt: Adam, cfg: ModelConfig, fold: int, seed: int, epoch: int) -> None:
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss at fold={fold} seed={seed} epoch={epoch}"
        )
    try:
        loss.backward()
    except NonFiniteError as e:
        raise TrainingDiverged(f"fold={fold} seed={seed} epoch={epoch}: {e}") from e
    opt.clip_global_norm(cfg.grad_clip)
    opt.step()


# ---------------- cross-validation ----------------

def run_crossval(
    corpus: Corpus,
    cfg: ModelConfig,
    folds: FoldPlan,
    seeds: Sequence[int],
    *,
    data_seed: int = 0,
    store: Optional[FeatureStore] = None,
    ablation=None,
    vocab_size: Optional[int] = None,
    epochs: int = 25,
    batch_size: int = 64,
    threads: int = 1,
    fold_subset: Optional[Sequence[int]] = None,
) -> RunReport:
    """folds x seeds training runs; non-finite runs are flagged, not averaged."""
    fold_ids = list(fold_subset) if fold_subset is not None else list(range(len(folds.splits)))
    jobs = [(f, s) for f in fold_ids for s in seeds]

    def run_one(job):
        f, s = job
        return train_eval_run(
            corpus, folds.splits[f], cfg,
            fold=f, model_seed=s, data_seed=data_seed, store=store,
            ablation=ablation, vocab_size=vocab_size,
            epochs=epochs, batch_size=batch_size,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run_one, jobs))
    else:
        records = [run_one(j) for j in jobs]
    records.sort(key=lambda r: (r.fold, r.seed))
    return RunReport(records)


def speaker_independent(
    corpus: Corpus,
    cfg: ModelConfig,
    *,
    data_seed: int = 0,
    seeds: Sequence[int] = (0,),
    store: Optional[FeatureStore] = None,
    epochs: int = 25,
    batch_size: int = 64,
    threads: int = 1,
) -> Dict[str, RunReport]:
    """Hold out each speaker in turn; returns a report per speaker."""
    splits = speaker_splits(corpus, data_seed)
    out: Dict[str, RunReport] = {}
    for idx, (speaker, split) in enumerate(sorted(splits.items())):
        report = RunReport(
            [
                train_eval_run(
                    corpus, split, cfg, fold=idx, model_seed=s, data_seed=data_seed,
                    store=store, epochs=epochs, batch_size=batch_size,
                )
                for s in seeds
            ]
        )
        out[speaker] = report
    return out


# ---------------- suites ----------------

DEFAULT_ABLATION_CELLS = tuple(
    (drop, context, use_lstm)
    for drop in (frozenset(), frozenset({"pitch"}), frozenset({"intensity"}),
                 frozenset({"voicing"}), frozenset({"pitch", "intensity"}),
                 frozenset({"pitch", "voicing"}), frozenset({"intensity", "voicing"}))
    for context, use_lstm in (("full_utterance", True),)
)


def ablation_suite(
    corpus: Corpus,
    cfg: ModelConfig,
    folds: FoldPlan,
    seeds: Sequence[int],
    *,
    cells: Sequence[Tuple[frozenset, str, bool]] = DEFAULT_ABLATION_CELLS,
    **kw,
) -> List[Tuple[dict, RunReport]]:
    """Grid of {dropped feature groups} x {context} x {architecture}."""
    if not cfg.uses_speech:
        raise ValueError("ablation suite requires a speech or speech_text config")
    results = []
    for drop, context, use_lstm in cells:
        cell_cfg = replace(cfg, context=context, use_lstm=use_lstm)
        ablation = set(drop) if drop else None
        report = run_crossval(corpus, cell_cfg, folds, seeds, ablation=ablation, **kw)
        results.append(
            (
                {
                    "dropped": ",".join(sorted(drop)) if drop else "none",
                    "context": context,
                    "architecture": "cnn_lstm" if use_lstm else "cnn_only",
                },
                report,
            )
        )
    return results


def vocab_shrink_suite(
    corpus: Corpus,
    cfg: ModelConfig,
    folds: FoldPlan,
    seeds: Sequence[int],
    sizes: Sequence[int] = (3000, 1000, 500, 100, 50, 10, 5),
    **kw,
) -> List[Tuple[int, RunReport]]:
    """Text-only cross-validated runs with shrinking vocabularies."""
    if not cfg.uses_text:
        raise ValueError("vocabulary shrink requires a text or speech_text config")
    results = []
    for size in sizes:
        if size < 1:
            raise ValueError("vocabulary size must be >= 1")
        shrunk = replace(cfg, vocab_size=size)
        results.append((size, run_crossval(corpus, shrunk, folds, seeds, **kw)))
    return results


@dataclass(frozen=True)
class HparamSpace:
    cnn_layers: Tuple[int, ...] = (2, 3, 4)
    lstm_layers: Tuple[int, ...] = (2, 3)
    dropout: Tuple[float, ...] = (0.0, 0.2, 0.5, 0.7)
    weight_decay: Tuple[float, ...] = (0.0, 1e-5, 1e-4)
    filter_width: Tuple[int, ...] = (9, 11, 13, 15, 17, 19, 21, 23)
    pooling: Tuple[str, ...] = ("sum", "max")

    def size(self) -> int:
        return (
            len(self.cnn_layers) * len(self.lstm_layers) * len(self.dropout)
            * len(self.weight_decay) * len(self.filter_width) * len(self.pooling)
        )

    def sample(self, budget: int, rng: np.random.Generator) -> List[dict]:
        """Uniform distinct draws (without repeats) from the grid."""
        if budget > self.size():
            raise ValueError(f"budget {budget} exceeds the {self.size()}-point grid")
        seen = set()
        combos = []
        while len(combos) < budget:
            pick = (
                self.cnn_layers[rng.integers(len(self.cnn_layers))],
                self.lstm_layers[rng.integers(len(self.lstm_layers))],
                self.dropout[rng.integers(len(self.dropout))],
                self.weight_decay[rng.integers(len(self.weight_decay))],
                self.filter_width[rng.integers(len(self.filter_width))],
                self.pooling[rng.integers(len(self.pooling))],
            )
            if pick in seen:
                continue
            seen.add(pick)
            combos.append(
                dict(
                    cnn_layers=pick[0], lstm_layers=pick[1], dropout=pick[2],
                    weight_decay=pick[3], filter_width=pick[4], pooling=pick[5],
                )
            )
        return combos


def apply_hparams(cfg: ModelConfig, hp: dict) -> ModelConfig:
    """Grid point -> full config; CNN widths follow first/rest channel rule."""
    first = cfg.cnn_channels[0]
    rest = cfg.cnn_channels[-1]
    channels = (first,) + (rest,) * (hp["cnn_layers"] - 1)
    return replace(
        cfg,
        cnn_layers=hp["cnn_layers"],
        cnn_channels=channels,
        lstm_layers=hp["lstm_layers"],
        dropout=hp["dropout"],
        weight_decay=hp["weight_decay"],
        cnn_kernel_width=hp["filter_width"],
        pooling=hp["pooling"],
    )


def hparam_search(
    corpus: Corpus,
    cfg: ModelConfig,
    folds: FoldPlan,
    *,
    space: HparamSpace = HparamSpace(),
    budget: int = 96,
    search_seed: int = 0,
    folds_per_config: int = 3,
    seeds_per_config: int = 1,
    **kw,
) -> Tuple[ModelConfig, List[Tuple[dict, float]], dict]:
    """Random search; each config scored by mean dev accuracy.

    Returns (best config, per-config results, summary stats with the
    sample mean/variance/stderr across configs).
    """
    rng = split_rng("hparam", search_seed)
    combos = space.sample(budget, rng)
    results = []
    for hp in combos:
        run_cfg = apply_hparams(cfg, hp)
        report = run_crossval(
            corpus, run_cfg, folds, seeds=list(range(seeds_per_config)),
            fold_subset=list(range(min(folds_per_config, len(folds.splits)))),
            **kw,
        )
        results.append((hp, report.mean_dev()))
    scores = np.array([s for _, s in results], dtype=np.float64)
    stats = {
        "mean": float(scores.mean()),
        "variance": float(scores.var(ddof=1)) if scores.size > 1 else 0.0,
        "stderr": float(scores.std(ddof=1) / np.sqrt(scores.size)) if scores.size > 1 else 0.0,
        "n_configs": int(scores.size),
    }
    best_hp = results[int(np.argmax(scores))][0]
    return apply_hparams(cfg, best_hp), results, stats


def cnn_sweep(
    corpus: Corpus,
    cfg: ModelConfig,
    folds: FoldPlan,
    seeds: Sequence[int],
    *,
    widths: Sequence[int] = (9, 11, 13, 15, 17, 19, 21, 23),
    depths: Sequence[int] = (1, 2, 3, 4, 5),
    **kw,
) -> List[dict]:
    """Accuracy vs filter width (depth fixed 3) and vs depth (width 11)."""
    if not cfg.uses_speech:
        raise ValueError("cnn sweep requires a speech config")
    rows = []
    for width in widths:
        run_cfg = replace(cfg, cnn_kernel_width=width)
        report = run_crossval(corpus, run_cfg, folds, seeds, **kw)
        rows.append(_sweep_row("filter_width", width, report))
    first, rest = cfg.cnn_channels[0], cfg.cnn_channels[-1]
    for depth in depths:
        run_cfg = replace(
            cfg, cnn_layers=depth, cnn_channels=(first,) + (rest,) * (depth - 1)
        )
        report = run_crossval(corpus, run_cfg, folds, seeds, **kw)
        rows.append(_sweep_row("cnn_layers", depth, report))
    return rows


def _sweep_row(kind: str, value, report: RunReport) -> dict:
    return {
        "param": kind,
        "value": value,
        "mean_dev_acc": report.mean_dev(),
        "mean_test_acc": report.mean_test(),
        "span_repairs": int(sum(r.span_repairs for r in report.runs)),
        "flagged_runs": len(report.flagged()),
    }
