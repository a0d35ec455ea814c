"""Benchmark configuration: one JSON or TOML document.

Example (JSON)::

    {
      "task": "pca",
      "seed": 7,
      "seeds": [0, 1, 2],
      "datasets": [{"synthetic": "cov", "d": 16, "n": 1024},
                   {"path": "data/wine.csv", "label_column": "label"}],
      "sweep": {"m_frac": [0.01, 0.1, 1.0]},
      "pca": {}
    }

Every random choice is derived from the top-level ``seed`` together with
the task name, dataset index, sketch size and per-cell seed.
"""

from __future__ import annotations

import json
import os

from ..errors import ConfigError, IoError

try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as _toml

TASKS = ("pca", "ridge", "kmeans", "ae", "freq", "member")

__all__ = ["TASKS", "load_config", "parse_config", "validate_config"]


def parse_config(text: str, fmt: str | None = None) -> dict:
    """Parse a config document; ``fmt`` is ``json``, ``toml`` or ``None`` (guess)."""
    if fmt in (None, "json"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            if fmt == "json":
                raise ConfigError(f"malformed JSON config: {exc.msg} at {exc.pos}") from None
            doc = None
        if doc is not None:
            if not isinstance(doc, dict):
                raise ConfigError("config must be an object")
            return doc
    try:
        return _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror}") from None
    ext = os.path.splitext(str(path))[1].lower()
    fmt = {".json": "json", ".toml": "toml"}.get(ext)
    return parse_config(text, fmt)


def validate_config(cfg: dict) -> dict:
    """Check the fields shared by every task; returns ``cfg`` unchanged."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be an object")
    task = cfg.get("task")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    seeds = cfg.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a non-empty list of non-negative integers")
    sweep = cfg.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict) or not sweep:
            raise ConfigError("sweep must be an object with at least one list")
        for key, values in sweep.items():
            if key not in ("m", "m_frac", "N"):
                raise ConfigError(f"unknown sweep axis {key!r}")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep list {key!r} is empty")
    datasets = cfg.get("datasets")
    if datasets is not None and (not isinstance(datasets, list) or not datasets):
        raise ConfigError("datasets must be a non-empty list")
    section = cfg.get(task, {})
    if not isinstance(section, dict):
        raise ConfigError(f"section {task!r} must be an object")
    return cfg
