"""Report files: fixed-header CSVs plus one JSON summary per run directory.

Floats are written with repr so reruns of the same config produce
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from .experiments import RunReport


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_crossval_csv(path, report: RunReport) -> None:
    """One row per (fold, seed) run at its selected epoch."""
    rows = [
        (r.fold, r.seed, r.selected_epoch, r.dev_acc, r.test_acc)
        for r in report.runs
        if r.status == "ok"
    ]
    write_csv(path, ("fold", "seed", "epoch", "dev_acc", "test_acc"), rows)


def write_epochs_csv(path, report: RunReport) -> None:
    """Full per-epoch dev-accuracy log (for epoch-selection audits)."""
    rows = [
        (r.fold, r.seed, epoch, acc)
        for r in report.runs
        for epoch, acc in enumerate(r.dev_curve)
    ]
    write_csv(path, ("fold", "seed", "epoch", "dev_acc"), rows)


def write_ablation_csv(path, results: Sequence[Tuple[dict, RunReport]]) -> None:
    rows = [
        (
            cell["dropped"],
            cell["context"],
            cell["architecture"],
            rep.mean_dev(),
            rep.mean_test(),
            len(rep.ok_runs()),
        )
        for cell, rep in results
    ]
    write_csv(
        path,
        ("dropped", "context", "architecture", "mean_dev_acc", "mean_test_acc", "n_runs"),
        rows,
    )


def write_vocab_csv(path, results: Sequence[Tuple[int, RunReport]]) -> None:
    rows = [(size, rep.mean_dev(), rep.mean_test()) for size, rep in results]
    write_csv(path, ("vocab_size", "mean_dev_acc", "mean_test_acc"), rows)


def write_hparam_csv(path, results: Sequence[Tuple[dict, float]]) -> None:
    rows = [
        (
            hp["cnn_layers"], hp["lstm_layers"], hp["dropout"], hp["weight_decay"],
            hp["filter_width"], hp["pooling"], score,
        )
        for hp, score in results
    ]
    write_csv(
        path,
        ("cnn_layers", "lstm_layers", "dropout", "weight_decay", "filter_width",
         "pooling", "mean_dev_acc"),
        rows,
    )


def write_speaker_csv(path, results: Dict[str, RunReport]) -> None:
    rows = [
        (speaker, r.seed, r.selected_epoch, r.dev_acc, r.test_acc)
        for speaker in sorted(results)
        for r in results[speaker].runs
        if r.status == "ok"
    ]
    write_csv(path, ("speaker", "seed", "epoch", "dev_acc", "test_acc"), rows)


def write_sweep_csv(path, rows: List[dict]) -> None:
    write_csv(
        path,
        ("param", "value", "mean_dev_acc", "mean_test_acc", "span_repairs", "flagged_runs"),
        [
            (r["param"], r["value"], r["mean_dev_acc"], r["mean_test_acc"],
             r["span_repairs"], r["flagged_runs"])
            for r in rows
        ],
    )


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def report_summary(report: RunReport) -> dict:
    return {
        "n_runs": len(report.runs),
        "n_flagged": len(report.flagged()),
        "mean_dev_acc": report.mean_dev() if report.ok_runs() else None,
        "mean_test_acc": report.mean_test() if report.ok_runs() else None,
        "std_test_acc": report.std_test() if report.ok_runs() else None,
        "flagged": [
            {"fold": r.fold, "seed": r.seed, "diagnostics": r.diagnostics}
            for r in report.flagged()
        ],
    }
