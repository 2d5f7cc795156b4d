"""Run configuration: built-in defaults, JSON file, command-line overrides.

Precedence is flags > config file > defaults, applied key by key.
Relative paths in a config file resolve against the file's directory.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .cohort import AgeBand, default_bands
from .errors import ConfigError
from .evaluate import ExperimentConfig
from .forest import ForestParams

DEFAULTS = {
    "paths": {"atlas": None, "phenotypes": None, "morphometry": None, "out": "out"},
    "bands": ["6to11", "11to18", "6to18"],
    "feature_kinds": ["MF", "MCF"],
    "alpha": 0.05,
    "selection_scope": "train_only",
    "standardization_scope": "train_only",
    "pooled_t": False,
    "forest": {"n_trees": 100, "max_features": "sqrt", "max_depth": None,
               "min_samples_split": 2, "min_samples_leaf": 1, "bootstrap": True},
    "split": {"train_fraction": 0.8, "stratify": True},
    "seed": None,
    "jobs": 1,
    "repeats": 1,
    "top_k": 100,
    "edge_criterion": "pvalue",
    "strict_join": True,
}

PATH_KEYS = ("atlas", "phenotypes", "morphometry", "out")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if "config" in doc and "inputs" in doc:  # a run manifest
        return doc["config"]
    paths = doc.get("paths", {})
    for key in PATH_KEYS:
        if paths.get(key) is not None:
            p = Path(paths[key])
            if not p.is_absolute():
                paths[key] = str(path.parent / p)
    return doc


def set_path(cfg: dict, dotted: str, value):
    node = cfg
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def resolve(file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """Merge defaults, a parsed config file and ``{dotted.key: value}`` flags."""
    cfg = _merge(DEFAULTS, file_cfg or {})
    for dotted, value in (overrides or {}).items():
        if value is not None:
            set_path(cfg, dotted, value)
    return cfg


def parse_bands(cfg) -> list[AgeBand]:
    known = {b.label: b for b in default_bands()}
    bands = []
    for b in cfg["bands"]:
        if isinstance(b, str):
            if b not in known:
                raise ConfigError(f"unknown band {b!r}; define it as an object")
            bands.append(known[b])
        else:
            try:
                bands.append(AgeBand(b["label"], float(b["lower"]), float(b["upper"]),
                                     bool(b.get("upper_inclusive", False))))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad band definition {b!r}: {exc}") from None
    return bands


def forest_params(cfg) -> ForestParams:
    f = cfg["forest"]
    return ForestParams(n_trees=int(f["n_trees"]), max_features=f["max_features"],
                        max_depth=f["max_depth"], min_samples_split=int(f["min_samples_split"]),
                        min_samples_leaf=int(f["min_samples_leaf"]), bootstrap=bool(f["bootstrap"]))


def experiment_config(cfg, seed=None) -> ExperimentConfig:
    return ExperimentConfig(
        seed=cfg["seed"] if seed is None else seed,
        alpha=float(cfg["alpha"]),
        selection_scope=cfg["selection_scope"],
        standardization_scope=cfg["standardization_scope"],
        pooled_t=bool(cfg["pooled_t"]),
        train_fraction=float(cfg["split"]["train_fraction"]),
        stratify_split=bool(cfg["split"]["stratify"]),
        forest=forest_params(cfg),
        top_k=int(cfg["top_k"]),
        edge_criterion=cfg["edge_criterion"],
    )


def require_paths(cfg, *keys):
    for key in keys:
        val = cfg["paths"].get(key)
        if val is None:
            raise ConfigError(f"paths.{key} is not set")
        if not Path(val).exists():
            raise ConfigError(f"paths.{key} does not exist: {val}")


def require_seed(cfg):
    if cfg["seed"] is None:
        raise ConfigError("seed is not set (use --seed or the config 'seed' field)")
    return int(cfg["seed"])
