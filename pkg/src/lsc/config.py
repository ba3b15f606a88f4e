"""Run configuration files: sectioned key-value text (INI) or JSON.

Sections ``[run]``, ``[task]`` and an optional ``[pretrain]`` mirror the fields
of ``RunConfig``, ``TaskSpec`` and ``PretrainConfig``. INI values are parsed as
JSON when possible (numbers, booleans, lists) and kept as strings otherwise::

    [run]
    cell = "rnn"
    depth = 2
    seeds = [0, 1, 2, 3]

    [task]
    kind = "synthetic_rowsum"
    T = 20

    [pretrain]
    target = 0.5
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import os

from .errors import ConfigError
from .pretrain import PretrainConfig
from .tasks import TaskSpec
from .training import RunConfig

__all__ = ["load_config", "config_from_dict", "config_to_dict", "root_seed"]

_SECTIONS = {"run": RunConfig, "task": TaskSpec, "pretrain": PretrainConfig}


def _value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _read(path) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: bad JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return data
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep "T" distinct from "t"
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {s: {k: _value(v) for k, v in parser[s].items()} for s in parser.sections()}


def _build(cls, values: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)} - {"task", "pretrain"}
    unknown = set(values) - names - ({"task", "pretrain"} if cls is RunConfig else set())
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    kw = dict(values)
    for key in ("kappa_clip", "target"):
        if isinstance(kw.get(key), list):
            kw[key] = tuple(kw[key])
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    task = _build(TaskSpec, data.get("task", {}), "task")
    pre = _build(PretrainConfig, data["pretrain"], "pretrain") if data.get("pretrain") is not None else None
    run = dict(data.get("run", {}))
    for key in ("task", "pretrain"):
        if key in run:
            raise ConfigError(f"[run] '{key}' belongs in its own section")
    run["task"], run["pretrain"] = task, pre
    return _build(RunConfig, run, "run")


def config_to_dict(cfg: RunConfig) -> dict:
    run = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.name not in ("task", "pretrain")}
    out = {"run": run, "task": dataclasses.asdict(cfg.task)}
    if cfg.pretrain is not None:
        out["pretrain"] = dataclasses.asdict(cfg.pretrain)
    return out


def root_seed(default: int) -> int:
    """``LSC_SEED`` from the environment overrides the configured root seed."""
    raw = os.environ.get("LSC_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"LSC_SEED must be an integer, got {raw!r}") from None


def load_config(path) -> RunConfig:
    cfg = config_from_dict(_read(path))
    cfg.root_seed = root_seed(cfg.root_seed)
    return cfg
