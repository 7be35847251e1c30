"""Run configuration files: a flat JSON document validated before any work starts.

Relative paths resolve against the directory of the config file. Keys not in
``SCHEMA`` are rejected so typos fail loudly instead of silently using a default.

Example::

    {
      "interactions": "baby/interactions.tsv",
      "features": {"textual": "baby/text.fmat", "visual": "baby/image.fmat"},
      "preset": "baby",
      "output_dir": "runs/baby",
      "epochs": 500
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .training import PRESETS, TrainConfig


class ConfigError(ValueError):
    pass


# key -> (accepted types, description)
SCHEMA = {
    "interactions": ((str,), "user<TAB>item TSV with raw ids"),
    "features": ((dict,), "modality id -> FMAT path, rows in dense item order or per feature_item_ids"),
    "feature_item_ids": ((dict,), "optional modality id -> text file with one raw item id per FMAT row"),
    "min_degree": ((int,), "k-core threshold (default 5)"),
    "split_ratios": ((list,), "train/valid/test fractions (default [0.8, 0.1, 0.1])"),
    "split_seed": ((int,), "seed of the per-user split (default 0)"),
    "output_dir": ((str,), "where prepared data, checkpoints and reports go (default 'runs')"),
    "preset": ((str,), "hyperparameter preset: baby, sports or electronics"),
    "uncertainty_sources": ((list,), "subset of pretrained, random and the modality ids"),
    "uncertainty_clusters": ((list,), "cluster counts (default [10, 20])"),
    "pretrained_checkpoint": ((str,), "MF-BPR checkpoint used by the 'pretrained' source"),
    "dim": ((int,), "embedding size d"),
    "layers": ((int,), "propagation depth L"),
    "gamma": ((int, float), "schedule exponent, > 0"),
    "beta_scale": ((int, float), "largest teleport ratio (default 0.9)"),
    "knn_k": ((dict,), "modality id -> neighbors per item"),
    "lr": ((int, float), "learning rate"),
    "weight_decay": ((int, float), "decoupled weight decay"),
    "adam_betas": ((list,), "first and second moment decay"),
    "eps": ((int, float), "Adam epsilon"),
    "batch_size": ((int,), "triples per step"),
    "epochs": ((int,), "training epochs"),
    "seed": ((int,), "seed for init and sampling"),
    "modality_init": ((bool,), "whitening init (false: random)"),
    "fsc": ((bool,), "stepwise forward weights (false: uniform)"),
    "bsc": ((bool,), "similarity-constrained item updates"),
    "init_std": ((int, float), "std of random init"),
    "whiten_strategy": ((str,), "concat-then-whiten or whiten-then-concat"),
    "whiten_scale": ((str,), "unit-norm or unit-variance"),
    "eval_every": ((int,), "validation interval in epochs"),
}

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


@dataclass
class RunConfig:
    interactions: Path | None = None
    features: dict = field(default_factory=dict)
    feature_item_ids: dict = field(default_factory=dict)
    min_degree: int = 5
    split_ratios: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0
    output_dir: Path = Path("runs")
    uncertainty_sources: list = field(default_factory=lambda: ["pretrained", "textual", "visual", "random"])
    uncertainty_clusters: list = field(default_factory=lambda: [10, 20])
    pretrained_checkpoint: Path | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def with_overrides(self, output_dir: str | Path | None = None, seed: int | None = None) -> "RunConfig":
        out = self
        if output_dir is not None:
            out = replace(out, output_dir=Path(output_dir))
        if seed is not None:
            out = replace(out, train=replace(out.train, seed=seed))
        return out


def _check_types(doc: dict) -> None:
    unknown = sorted(set(doc) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; accepted keys: {sorted(SCHEMA)}")
    for key, value in doc.items():
        types, _ = SCHEMA[key]
        # bool is an int subclass; keep the two apart
        if isinstance(value, bool) and bool not in types:
            raise ConfigError(f"{key}: expected {'/'.join(t.__name__ for t in types)}, got bool")
        if not isinstance(value, types):
            raise ConfigError(f"{key}: expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")


def parse_config(doc: dict, base_dir: str | Path = ".") -> RunConfig:
    """Validate a decoded JSON document and build a :class:`RunConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _check_types(doc)
    base = Path(base_dir)

    def path(p):
        return None if p is None else base / p

    hyper = {}
    if "preset" in doc:
        name = doc["preset"].lower()
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {doc['preset']!r}; choose from {sorted(PRESETS)}")
        hyper.update(PRESETS[name])
    hyper.update({k: v for k, v in doc.items() if k in _TRAIN_KEYS})
    if "adam_betas" in hyper:
        if len(hyper["adam_betas"]) != 2:
            raise ConfigError("adam_betas: expected two numbers")
        hyper["adam_betas"] = tuple(hyper["adam_betas"])
    train = TrainConfig(**hyper)
    _check_train(train)

    ratios = tuple(doc.get("split_ratios", (0.8, 0.1, 0.1)))
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ConfigError(f"split_ratios must be three non-negative fractions summing to 1, got {list(ratios)}")
    for key in ("features", "feature_item_ids"):
        for m, p in doc.get(key, {}).items():
            if not isinstance(p, str):
                raise ConfigError(f"{key}.{m}: expected a path string")
    clusters = doc.get("uncertainty_clusters", [10, 20])
    if any(not isinstance(c, int) or isinstance(c, bool) or c < 2 for c in clusters):
        raise ConfigError("uncertainty_clusters: expected integers >= 2")
    if doc.get("min_degree", 5) < 1:
        raise ConfigError("min_degree must be >= 1")

    return RunConfig(
        interactions=path(doc.get("interactions")),
        features={m: base / p for m, p in doc.get("features", {}).items()},
        feature_item_ids={m: base / p for m, p in doc.get("feature_item_ids", {}).items()},
        min_degree=doc.get("min_degree", 5),
        split_ratios=ratios,
        split_seed=doc.get("split_seed", 0),
        output_dir=base / doc.get("output_dir", "runs"),
        uncertainty_sources=list(doc.get("uncertainty_sources", RunConfig().uncertainty_sources)),
        uncertainty_clusters=list(clusters),
        pretrained_checkpoint=path(doc.get("pretrained_checkpoint")),
        train=train,
    )


def _check_train(cfg: TrainConfig) -> None:
    if cfg.dim < 1 or cfg.layers < 0:
        raise ConfigError("dim must be >= 1 and layers >= 0")
    if cfg.gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {cfg.gamma}")
    if not 0 <= cfg.beta_scale < 1:
        raise ConfigError(f"beta_scale must lie in [0, 1), got {cfg.beta_scale}")
    if cfg.lr <= 0 or cfg.weight_decay < 0 or cfg.batch_size < 1 or cfg.epochs < 0 or cfg.eval_every < 1:
        raise ConfigError("lr > 0, weight_decay >= 0, batch_size >= 1, epochs >= 0 and eval_every >= 1 required")
    if any(not isinstance(k, int) or isinstance(k, bool) or k < 1 for k in cfg.knn_k.values()):
        raise ConfigError("knn_k values must be positive integers")
    if cfg.whiten_strategy not in ("concat-then-whiten", "whiten-then-concat"):
        raise ConfigError(f"unknown whiten_strategy {cfg.whiten_strategy!r}")
    if cfg.whiten_scale not in ("unit-norm", "unit-variance"):
        raise ConfigError(f"unknown whiten_scale {cfg.whiten_scale!r}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent)
