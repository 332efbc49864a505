"""Command-line entry point for every pipeline stage.

Config-file-first with flag overrides (flags win); every command that
writes reports archives the fully-resolved config next to them, and
rerunning from that archived config reproduces the reports bit-for-bit.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import featurizer as fz
from . import reports
from .baselines import accuracy, content_word_predict, majority_predict, per_class_f1
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .corpus import Corpus, Vocabulary, load_corpus, preprocess_corpus, save_corpus
from .experiments import (
    FeatureStore,
    HparamSpace,
    ablation_suite,
    cnn_sweep,
    hparam_search,
    make_folds,
    run_crossval,
    speaker_independent,
    train_eval_run,
    vocab_shrink_suite,
)
from .model import ModelConfig, PitchAccentModel, prepare_utterance
from .nn import load_checkpoint, save_checkpoint
from .synth import synth_corpus


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="accentdet",
        description="Word-level pitch accent detection: data, training, evaluation suites.",
    )
    parser.add_argument("--version", action="version", version=f"accentdet {__version__}")
    parser.add_argument("--config", type=Path, help="TOML experiment config")
    parser.add_argument("--seed", type=int, help="override experiment.data_seed")
    parser.add_argument("--out", type=Path, help="output/report directory")
    parser.add_argument("--threads", type=int, help="parallel training runs")

    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_corpus=True):
        p = sub.add_parser(name, help=help_text)
        if needs_corpus:
            p.add_argument("--corpus", type=Path, help="corpus JSONL (overrides config)")
        return p

    add("synth", "generate a synthetic corpus with audio", needs_corpus=False)

    add("featurize", "extract acoustic features into the cache")

    p = add("train", "train one model on one fold and save a checkpoint")
    _add_model_flags(p)
    p.add_argument("--fold", type=int, help="fold index to train on")

    p = add("crossval", "tenfold cross-validation over multiple seeds")
    _add_model_flags(p)
    p.add_argument("--vocab-size", type=int, help="text vocabulary cap")

    p = add("speaker-indep", "leave-one-speaker-out evaluation")
    _add_model_flags(p)

    p = add("ablate", "feature-group ablation grid")
    _add_model_flags(p)

    p = add("vocab-shrink", "text-only accuracy vs vocabulary size")
    _add_model_flags(p)

    p = add("hparam", "random hyperparameter search")
    _add_model_flags(p)
    p.add_argument("--budget", type=int, help="number of configurations")

    p = add("cnn-sweep", "accuracy vs CNN filter width and depth")
    _add_model_flags(p)

    p = add("baseline", "majority / content-word / duration-only baselines")
    p.add_argument(
        "--kind",
        required=True,
        choices=("majority", "content-word", "duration-only"),
    )

    p = add("eval", "evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", type=Path, required=True)

    return parser


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input-mode", choices=("speech", "text", "speech_text"))
    p.add_argument("--context", choices=("full_utterance", "three_token", "one_token"))
    p.add_argument("--cnn-only", action="store_true", help="disable the LSTM")
    p.add_argument("--ablation", help='"duration_only" or comma-joined feature groups')
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--n-seeds", type=int, help="use model seeds 0..n-1")


def _resolved_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    exp = cfg.experiment
    model = cfg.model
    if args.seed is not None:
        exp = replace(exp, data_seed=args.seed)
    if args.threads is not None:
        exp = replace(exp, threads=args.threads)
    if getattr(args, "corpus", None):
        cfg = replace(cfg, corpus_path=str(args.corpus))
    if getattr(args, "epochs", None) is not None:
        exp = replace(exp, epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        exp = replace(exp, batch_size=args.batch_size)
    if getattr(args, "n_seeds", None) is not None:
        exp = replace(exp, model_seeds=tuple(range(args.n_seeds)))
    if getattr(args, "fold", None) is not None:
        exp = replace(exp, fold=args.fold)
    if getattr(args, "ablation", None) is not None:
        exp = replace(exp, ablation=args.ablation)
    if getattr(args, "budget", None) is not None:
        exp = replace(exp, hparam_budget=args.budget)
    if getattr(args, "input_mode", None):
        model = replace(model, input_mode=args.input_mode)
    if getattr(args, "context", None):
        use_lstm = model.use_lstm and args.context != "one_token"
        model = replace(model, context=args.context, use_lstm=use_lstm)
    if getattr(args, "cnn_only", False):
        model = replace(model, use_lstm=False)
    if getattr(args, "vocab_size", None) is not None:
        model = replace(model, vocab_size=args.vocab_size)
    return replace(cfg, experiment=exp, model=model)


def _out_dir(args, default: str) -> Path:
    out = args.out if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_corpus(cfg: ExperimentConfig) -> Corpus:
    return load_corpus(cfg.corpus_path, sample_rate_hz=cfg.sample_rate_hz)


def _store(cfg: ExperimentConfig, corpus: Corpus, out: Path) -> Optional[FeatureStore]:
    if not cfg.model.uses_speech:
        return None
    cache = out / "feature_cache" if cfg.experiment.feature_cache else None
    store = FeatureStore(corpus, cfg.featurizer, cache_dir=cache,
                         threads=cfg.experiment.threads)
    store.load_all()
    return store


def _archive(cfg: ExperimentConfig, out: Path) -> None:
    save_config(cfg, out / "config.toml")


# ---------------- commands ----------------

def cmd_synth(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args, "synth_out")
    seed = cfg.experiment.data_seed
    corpus = synth_corpus(cfg.synth, seed=seed, out_dir=out)
    save_corpus(corpus, out / "corpus.jsonl")
    _archive(replace(cfg, corpus_path=str(out / "corpus.jsonl")), out)
    n_acc = sum(t.label for u in corpus for t in u.tokens)
    print(
        f"synth: {len(corpus)} utterances, {corpus.n_tokens()} tokens "
        f"({n_acc} accented), seed {seed} -> {out}"
    )
    return 0


def cmd_featurize(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args, "features_out")
    corpus = _load_corpus(cfg)
    cache = out / "feature_cache"
    store = FeatureStore(corpus, cfg.featurizer, cache_dir=cache,
                         threads=cfg.experiment.threads)
    store.load_all()
    frames = sum(store.get(u.id).n for u in corpus)
    _archive(cfg, out)
    print(f"featurize: {len(corpus)} utterances, {frames} frames cached under {cache}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args, "train_out")
    corpus = _load_corpus(cfg)
    store = _store(cfg, corpus, out)
    exp = cfg.experiment
    plan = make_folds(corpus, exp.data_seed, exp.n_folds)
    record = train_eval_run(
        corpus, plan.splits[exp.fold], cfg.model,
        fold=exp.fold, model_seed=exp.model_seeds[0], data_seed=exp.data_seed,
        store=store, ablation=exp.ablation_value(),
        epochs=exp.epochs, batch_size=exp.batch_size, keep_model=True,
    )
    if record.status != "ok":
        print(f"train: run diverged: {record.diagnostics}", file=sys.stderr)
        return 1
    meta = {
        "model_cfg": _cfg_to_json(cfg.model),
        "n_embeddings": record.vocab.size if record.vocab else None,
        "vocab": record.vocab.id_of if record.vocab else None,
        "norm_mean": record.norm_stats.mean.tolist() if record.norm_stats else None,
        "norm_std": record.norm_stats.std.tolist() if record.norm_stats else None,
        "featurizer": asdict(cfg.featurizer),
        "ablation": exp.ablation,
    }
    save_checkpoint(out / "model.ckpt", record.model.parameters(), meta)
    reports.write_csv(
        out / "train.csv",
        ("epoch", "dev_acc"),
        list(enumerate(record.dev_curve)),
    )
    reports.write_summary_json(
        out / "summary.json",
        {
            "fold": record.fold,
            "seed": record.seed,
            "selected_epoch": record.selected_epoch,
            "dev_acc": record.dev_acc,
            "test_acc": record.test_acc,
            "span_repairs": record.span_repairs,
        },
    )
    _archive(cfg, out)
    print(
        f"train: fold {record.fold} dev {record.dev_acc:.4f} @ epoch "
        f"{record.selected_epoch}, test {record.test_acc:.4f} -> {out}"
    )
    return 0


def cmd_crossval(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args, "crossval_out")
    corpus = _load_corpus(cfg)
    store = _store(cfg, corpus, out)
    exp = cfg.experiment
    plan = make_folds(corpus, exp.data_seed, exp.n_folds)
    report = run_crossval(
        corpus, cfg.model, plan, seeds=exp.model_seeds, data_seed=exp.data_seed,
        store=store, ablation=exp.ablation_value(), epochs=exp.epochs,
        batch_size=exp.batch_size, threads=exp.threads,
    )
    reports.write_crossval_csv(out / "crossval.csv", report)
    reports.write_epochs_csv(out / "epochs.csv", report)
    reports.write_summary_json(out / "summary.json", reports.report_summary(report))
    _archive(cfg, out)
    if report.flagged():
        print(f"crossval: {len(report.flagged())} run(s) diverged", file=sys.stderr)
    print(
        f"crossval: {len(report.ok_runs())} runs, mean dev {report.mean_dev():.4f}, "
        f"mean test {report.mean_test():.4f} -> {out}"
    )
    return 0


def cmd_speaker_indep(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args, "speaker_out")
    corpus = _load_corpus(cfg)
    store = _store(cfg, corpus, out)
    exp = cfg.experiment
    results = speaker_independent(
        corpus, cfg.model, data_seed=exp.data_seed, seeds=exp.model_seeds,
        store=store, epochs=exp.epochs, batch_size=exp.batch_size,
        threads=exp.threads,
    )
    reports.write_speaker_csv(out / "speaker.csv", results)
    reports.write_summary_json(
        out / "summary.json",
        {spk: reports.report_summary(rep) for spk, rep in sorted(results.items())},
    )
    _archive(cfg, out)
    for spk in sorted(results):
        print(f"speaker-indep: {spk} test {results[spk].mean_test():.4f}")
    print(f"speaker-indep: reports -> {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args, "ablation_out")
    corpus = _load_corpus(cfg)
    store = _store(cfg, corpus, out)
    exp = cfg.experiment
    plan = make_folds(corpus, exp.data_seed, exp.n_folds)
    drops = (
        frozenset(), frozenset({"pitch"}), frozenset({"intensity"}),
        frozenset({"voicing"}), frozenset({"pitch", "intensity"}),
        frozenset({"pitch", "voicing"}), frozenset({"intensity", "voicing"}),
    )
    cells = [
        (drop, context, arch == "cnn_lstm")
        for drop in drops
        for context in exp.ablation_contexts
        for arch in exp.ablation_architectures
    ]
    results = ablation_suite(
        corpus, cfg.model, plan, exp.model_seeds, cells=cells,
        data_seed=exp.data_seed, store=store, epochs=exp.epochs,
        batch_size=exp.batch_size, threads=exp.threads,
    )
    reports.write_ablation_csv(out / "ablation.csv", results)
    reports.write_summary_json(
        out / "summary.json",
        [
            {**cell, **reports.report_summary(rep)}
            for cell, rep in results
        ],
    )
    _archive(cfg, out)
    print(f"ablate: {len(results)} cells -> {out}")
    return 0


def cmd_vocab_shrink(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args, "vocab_out")
    corpus = _load_corpus(cfg)
    store = _store(cfg, corpus, out)
    exp = cfg.experiment
    plan = make_folds(corpus, exp.data_seed, exp.n_folds)
    results = vocab_shrink_suite(
        corpus, cfg.model, plan, exp.model_seeds, sizes=exp.vocab_sizes,
        data_seed=exp.data_seed, store=store, epochs=exp.epochs,
        batch_size=exp.batch_size, threads=exp.threads,
    )
    reports.write_vocab_csv(out / "vocab.csv", results)
    reports.write_summary_json(
        out / "summary.json",
        [{"vocab_size": size, **reports.report_summary(rep)} for size, rep in results],
    )
    _archive(cfg, out)
    print(f"vocab-shrink: {len(results)} sizes -> {out}")
    return 0


def cmd_hparam(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args, "hparam_out")
    corpus = _load_corpus(cfg)
    store = _store(cfg, corpus, out)
    exp = cfg.experiment
    plan = make_folds(corpus, exp.data_seed, exp.n_folds)
    best, results, stats = hparam_search(
        corpus, cfg.model, plan, space=HparamSpace(), budget=exp.hparam_budget,
        search_seed=exp.data_seed, folds_per_config=exp.hparam_folds,
        seeds_per_config=exp.hparam_seeds, data_seed=exp.data_seed, store=store,
        epochs=exp.epochs, batch_size=exp.batch_size, threads=exp.threads,
    )
    reports.write_hparam_csv(out / "hparam.csv", results)
    reports.write_summary_json(out / "summary.json", stats)
    save_config(replace(cfg, model=best), out / "best_config.toml")
    _archive(cfg, out)
    print(
        f"hparam: {stats['n_configs']} configs, mean dev {stats['mean']:.4f} "
        f"(variance {stats['variance']:.4f}) -> {out}"
    )
    return 0


def cmd_cnn_sweep(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args, "sweep_out")
    corpus = _load_corpus(cfg)
    store = _store(cfg, corpus, out)
    exp = cfg.experiment
    plan = make_folds(corpus, exp.data_seed, exp.n_folds)
    rows = cnn_sweep(
        corpus, cfg.model, plan, exp.model_seeds, widths=exp.sweep_widths,
        depths=exp.sweep_depths, data_seed=exp.data_seed, store=store,
        epochs=exp.epochs, batch_size=exp.batch_size, threads=exp.threads,
    )
    reports.write_sweep_csv(out / "cnn_sweep.csv", rows)
    reports.write_summary_json(out / "summary.json", rows)
    _archive(cfg, out)
    print(f"cnn-sweep: {len(rows)} rows -> {out}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _resolved_config(args)
    corpus = _load_corpus(cfg)
    gold = [t.label for u in corpus for t in u.tokens]
    if args.kind == "majority":
        label = majority_predict(corpus)
        pred = [label] * len(gold)
    elif args.kind == "content-word":
        pred = [p for u in corpus for p in content_word_predict(u)]
    else:  # duration-only: the speech model under the all-ones ablation
        out = _out_dir(args, "baseline_out")
        cfg = replace(
            cfg,
            model=replace(cfg.model, input_mode="speech"),
            experiment=replace(cfg.experiment, ablation="duration_only"),
        )
        store = _store(cfg, corpus, out)
        exp = cfg.experiment
        plan = make_folds(corpus, exp.data_seed, exp.n_folds)
        report = run_crossval(
            corpus, cfg.model, plan, seeds=exp.model_seeds, data_seed=exp.data_seed,
            store=store, ablation="duration_only", epochs=exp.epochs,
            batch_size=exp.batch_size, threads=exp.threads,
        )
        reports.write_crossval_csv(out / "crossval.csv", report)
        _archive(cfg, out)
        print(f"baseline duration-only: mean test accuracy {report.mean_test():.4f}")
        return 0
    acc = accuracy(pred, gold)
    f1 = per_class_f1(pred, gold)
    print(f"baseline {args.kind}: accuracy {acc:.4f} "
          f"(F1 accent {f1[1]:.4f}, F1 none {f1[0]:.4f})")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolved_config(args)
    params, meta = load_checkpoint(args.checkpoint)
    model_cfg = _cfg_from_json(meta["model_cfg"])
    model = PitchAccentModel(model_cfg, seed=0, n_embeddings=meta.get("n_embeddings"))
    model.load_params(params)
    corpus = _load_corpus(cfg)
    vocab = Vocabulary(dict(meta["vocab"])) if meta.get("vocab") else None
    if model_cfg.uses_text:
        corpus = preprocess_corpus(corpus)
    stats = None
    if meta.get("norm_mean") is not None:
        stats = fz.NormStats(np.array(meta["norm_mean"]), np.array(meta["norm_std"]))
    fz_cfg = fz.FeaturizerConfig(**meta["featurizer"]) if meta.get("featurizer") else cfg.featurizer
    ablation = None
    if meta.get("ablation"):
        ablation = (
            "duration_only" if meta["ablation"] == "duration_only"
            else {g.strip() for g in meta["ablation"].split(",")}
        )
    items = []
    for u in corpus:
        fm = None
        if model_cfg.uses_speech:
            w = fz.read_wav(corpus.audio_path(u))
            fm = fz.extract_features(w, fz_cfg)
            if stats is not None:
                fm = fz.apply_norm(fm, stats)
            if ablation is not None:
                fm = fz.ablate(fm, ablation)
        items.append(prepare_utterance(u, fm, vocab, model_cfg))
    preds = model.predict(items)
    pred_flat = np.concatenate([p.labels for p in preds])
    gold_flat = np.concatenate([it.labels for it in items])
    acc = accuracy(pred_flat, gold_flat)
    f1 = per_class_f1(pred_flat, gold_flat)
    print(f"eval: accuracy {acc:.4f} (F1 accent {f1[1]:.4f}, F1 none {f1[0]:.4f}) "
          f"on {len(corpus)} utterances")
    if args.out:
        out = _out_dir(args, "eval_out")
        reports.write_summary_json(
            out / "eval.json",
            {"accuracy": acc, "f1_accent": f1[1], "f1_none": f1[0],
             "n_utterances": len(corpus), "n_tokens": int(gold_flat.size)},
        )
    return 0


def _cfg_to_json(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["cnn_channels"] = list(d["cnn_channels"])
    return d


def _cfg_from_json(d: dict) -> ModelConfig:
    allowed = {f.name for f in fields(ModelConfig)}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"checkpoint model config has unknown keys {sorted(unknown)}")
    d = dict(d)
    d["cnn_channels"] = tuple(d["cnn_channels"])
    return ModelConfig(**d)


_COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "speaker-indep": cmd_speaker_indep,
    "ablate": cmd_ablate,
    "vocab-shrink": cmd_vocab_shrink,
    "hparam": cmd_hparam,
    "cnn-sweep": cmd_cnn_sweep,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as e:
        print(f"accentdet {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
