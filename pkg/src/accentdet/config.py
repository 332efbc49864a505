"""Declarative experiment configuration: TOML in, TOML archived out.

A run directory always receives the fully-resolved config that produced
it (config.toml); loading that file back reconstructs an identical
ExperimentConfig, so any archived run can be reproduced bit-for-bit.
Unknown sections or keys are rejected outright.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .featurizer import FeaturizerConfig
from .model import ModelConfig
from .synth import SynthSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSettings:
    data_seed: int = 0
    model_seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs: int = 25
    batch_size: int = 64
    n_folds: int = 10
    threads: int = 1
    fold: int = 0  # which fold the single-run `train` command uses
    ablation: str = ""  # "", "duration_only", or comma-joined group names
    vocab_sizes: Tuple[int, ...] = (3000, 1000, 500, 100, 50, 10, 5)
    ablation_contexts: Tuple[str, ...] = ("full_utterance",)
    ablation_architectures: Tuple[str, ...] = ("cnn_lstm",)
    hparam_budget: int = 96
    hparam_folds: int = 3
    hparam_seeds: int = 1
    sweep_widths: Tuple[int, ...] = (9, 11, 13, 15, 17, 19, 21, 23)
    sweep_depths: Tuple[int, ...] = (1, 2, 3, 4, 5)
    feature_cache: bool = True

    def ablation_value(self):
        """CLI/TOML ablation string -> featurizer.ablate mode (or None)."""
        if not self.ablation:
            return None
        if self.ablation == "duration_only":
            return "duration_only"
        return {g.strip() for g in self.ablation.split(",") if g.strip()}


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_path: str = "corpus.jsonl"
    sample_rate_hz: int = 16000
    embeddings_path: str = ""  # optional pretrained text embeddings
    synth: SynthSpec = field(default_factory=SynthSpec)
    featurizer: FeaturizerConfig = field(default_factory=FeaturizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)


_SECTIONS = {
    "corpus": None,  # handled specially: path/sample_rate_hz/embeddings
    "synth": SynthSpec,
    "featurizer": FeaturizerConfig,
    "model": ModelConfig,
    "experiment": ExperimentSettings,
}
_CORPUS_KEYS = {"path", "sample_rate_hz", "embeddings"}

_TUPLE_FIELDS = {
    "cnn_channels", "model_seeds", "vocab_sizes", "sweep_widths", "sweep_depths",
    "ablation_contexts", "ablation_architectures",
}


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, list):
                raise ConfigError(f"[{section}] {key}: expected an array")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}]: {e}") from e


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {e}") from e
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    kwargs = {}
    if "corpus" in data:
        sect = data["corpus"]
        bad = set(sect) - _CORPUS_KEYS
        if bad:
            raise ConfigError(f"[corpus]: unknown keys {sorted(bad)}")
        if "path" in sect:
            kwargs["corpus_path"] = sect["path"]
        if "sample_rate_hz" in sect:
            kwargs["sample_rate_hz"] = sect["sample_rate_hz"]
        if "embeddings" in sect:
            kwargs["embeddings_path"] = sect["embeddings"]
    for section, cls in _SECTIONS.items():
        if cls is None or section not in data:
            continue
        kwargs[section] = _build_section(cls, data[section], section)
    return ExperimentConfig(**kwargs)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def config_to_toml(cfg: ExperimentConfig) -> str:
    lines = []
    lines.append("[corpus]")
    lines.append(f"path = {_toml_value(cfg.corpus_path)}")
    lines.append(f"sample_rate_hz = {_toml_value(cfg.sample_rate_hz)}")
    if cfg.embeddings_path:
        lines.append(f"embeddings = {_toml_value(cfg.embeddings_path)}")
    for section in ("synth", "featurizer", "model", "experiment"):
        lines.append("")
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{f.name} = {_toml_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(config_to_toml(cfg), encoding="utf-8")
