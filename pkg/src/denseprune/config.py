"""Experiment configuration files.

A config is one YAML (or JSON) mapping with these sections; every key is
optional unless marked::

    seed: 0
    data:
      path: ../data/iris.csv      # required unless ``synthetic`` is given;
                                  # relative to the config file
      synthetic: {kind: piecewise, n: 5000, noise_sd: 0.05}
      task: classification        # or regression
      target: -1                  # column name or index
      delimiter: ","
      header: true
      split: {fractions: [0.6, 0.2, 0.2], stratified: true}
                                  # or {counts: [8000, 2000, 2000]} (file order)
      normalize: zscore           # zscore | minmax | none
    model:
      hidden_layers: 2
      sizing_mode: paper          # paper | exact
      hidden_widths: null         # e.g. [300, 100] skips sizing
      hidden_activation: relu
      output_activation: null     # softmax / identity by task
    train:    (TrainConfig keys) epochs, batch_size, optimizer, lr, beta1, beta2,
              adam_eps, early_stopping_patience, restore_best, loss
    refine:
      epsilon: 0.1                # required for ``run``
      retrain_fraction: 0.15
      retrain_epochs: null
      compensation_mode: weighted # weighted | literal
      degenerate_floor: null
    sweep:
      epsilons: [0.05, 0.1, 0.2]
      min_reduction: 0.0          # used by epsilon selection
      max_preserved: 100.0
    output:
      dir: null                   # falls back to $DENSEPRUNE_OUT, then ./runs
      model_format: binary        # binary | text

The experiment seed also seeds the data split and synthetic data.
"""

from __future__ import annotations

import copy
import os
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from denseprune.data import Dataset, load_csv, normalize, split, split_ordered, synth_regression
from denseprune.nn import TrainConfig
from denseprune.refine import RefineConfig

OUT_ENV = "DENSEPRUNE_OUT"

SECTIONS = {
    "data": {"path", "synthetic", "task", "target", "delimiter", "header", "split", "normalize"},
    "model": {"hidden_layers", "sizing_mode", "hidden_widths", "hidden_activation", "output_activation"},
    "train": {f.name for f in fields(TrainConfig)} - {"seed"},
    "refine": {"epsilon", "retrain_fraction", "retrain_epochs", "compensation_mode", "degenerate_floor"},
    "sweep": {"epsilons", "min_reduction", "max_preserved"},
    "output": {"dir", "model_format"},
}
TOP_LEVEL = set(SECTIONS) | {"seed"}


class _Loader(yaml.SafeLoader):
    """YAML 1.1 reads ``1e-3`` as a string; accept exponent floats without a dot."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)(?:[eE][-+]?[0-9]+)?$|^[-+]?\.(?:inf|Inf|INF)$|^\.(?:nan|NaN|NAN)$"),
    list("-+0123456789."),
)


def parse_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict  # resolved mapping; this is what a manifest stores
    refine: RefineConfig
    epsilons: tuple
    min_reduction: float
    max_preserved: float
    out_dir: Optional[str]
    model_format: str

    @property
    def seed(self) -> int:
        return self.refine.seed

    @property
    def train(self) -> TrainConfig:
        return self.refine.train

    def with_seed(self, seed: int) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = int(seed)
        return from_mapping(raw)

    def output_dir(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUT_ENV) or "runs")


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a mapping")
    unknown = set(sec) - SECTIONS[name]
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown key")
    return sec


def _positive_number(value, field_name: str, allow_zero: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field_name, f"must be a number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(field_name, f"must be {'>= 0' if allow_zero else '> 0'}, got {value!r}")
    return float(value)


def _build(cls, kwargs: dict, section: str):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        for key in kwargs:
            if msg.startswith(key):
                raise ConfigError(f"{section}.{key}", msg) from exc
        raise ConfigError(section, msg) from exc


def from_mapping(raw: dict, base_dir=None) -> ExperimentConfig:
    """Validate a parsed config. Relative data paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    unknown = set(raw) - TOP_LEVEL
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    raw = copy.deepcopy(raw)
    seed = raw.setdefault("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {seed!r}")

    data = _section(raw, "data")
    if "path" not in data and "synthetic" not in data:
        raise ConfigError("data.path", "required (or give data.synthetic)")
    if "path" in data and base_dir is not None:
        data["path"] = str((Path(base_dir) / data["path"]).resolve())
    if data.get("task", "classification") not in ("classification", "regression"):
        raise ConfigError("data.task", f"unknown task {data['task']!r}")
    if data.get("normalize", "zscore") not in ("zscore", "minmax", "none"):
        raise ConfigError("data.normalize", f"unknown method {data['normalize']!r}")
    raw["data"] = data

    model = _section(raw, "model")
    train_kw = dict(_section(raw, "train"))
    ref = _section(raw, "refine")
    sw = _section(raw, "sweep")
    out = _section(raw, "output")

    if "lr" in train_kw:
        _positive_number(train_kw["lr"], "train.lr", allow_zero=True)
    tcfg = _build(TrainConfig, train_kw, "train")

    epsilon = ref.get("epsilon")
    epsilons = sw.get("epsilons")
    if epsilon is not None:
        epsilon = _positive_number(epsilon, "refine.epsilon")
    if epsilons is not None:
        if not isinstance(epsilons, list) or not epsilons:
            raise ConfigError("sweep.epsilons", "must be a non-empty list")
        epsilons = tuple(_positive_number(e, f"sweep.epsilons[{i}]") for i, e in enumerate(epsilons))
    if epsilon is None:
        if epsilons is None:
            raise ConfigError("refine.epsilon", "required (or give sweep.epsilons)")
        epsilon = epsilons[0]

    rkw = {k: v for k, v in ref.items() if k != "epsilon"}
    rkw.update(model)
    rcfg = _build(RefineConfig, dict(rkw, epsilon=epsilon, train=tcfg, seed=seed), "refine")

    fmt = out.get("model_format", "binary")
    if fmt not in ("binary", "text"):
        raise ConfigError("output.model_format", f"must be 'binary' or 'text', got {fmt!r}")
    return ExperimentConfig(
        raw=raw,
        refine=rcfg,
        epsilons=epsilons or (epsilon,),
        min_reduction=_positive_number(sw.get("min_reduction", 0.0), "sweep.min_reduction", allow_zero=True),
        max_preserved=_positive_number(sw.get("max_preserved", 100.0), "sweep.max_preserved"),
        out_dir=out.get("dir"),
        model_format=fmt,
    )


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML/JSON config. ``overrides`` maps dotted keys to values."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = parse_yaml(fh.read())
    except FileNotFoundError as exc:
        raise ConfigError("config", f"file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
    raw = raw if raw is not None else {}
    for key, value in (overrides or {}).items():
        set_dotted(raw, key, value)
    return from_mapping(raw, base_dir=path.parent)


def set_dotted(raw: dict, key: str, value) -> None:
    parts = key.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(key, "cannot override inside a non-mapping")
    node[parts[-1]] = value


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    """Load (or synthesise), split and normalize the data a config describes."""
    d = cfg.raw["data"]
    seed = cfg.seed
    try:
        if "synthetic" in d:
            syn = dict(d["synthetic"])
            ds = synth_regression(syn.pop("kind", "piecewise"), int(syn.pop("n", 1000)),
                                  float(syn.pop("noise_sd", 0.0)), seed=seed)
            if syn:
                raise ConfigError(f"data.synthetic.{sorted(syn)[0]}", "unknown key")
        else:
            ds = load_csv(d["path"], d.get("target", -1), d.get("task", "classification"),
                          d.get("delimiter", ","), d.get("header", True))
        sp = d.get("split") or {}
        if "counts" in sp:
            ds = split_ordered(ds, sp["counts"])
        else:
            ds = split(ds, tuple(sp.get("fractions", (0.6, 0.2, 0.2))),
                       stratified=bool(sp.get("stratified", True)), seed=seed)
        ds, _ = normalize(ds, d.get("normalize", "zscore"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("data", str(exc)) from exc
    return ds


def with_epsilon(cfg: ExperimentConfig, epsilon: float) -> RefineConfig:
    return replace(cfg.refine, epsilon=float(epsilon))
