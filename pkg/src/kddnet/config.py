"""Run configuration: one YAML file per experiment, CLI flags override keys."""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dataset import SplitSpec
from .nn import HyperParams
from .ssa import SearchSpace, SsaConfig, hyperparameter_space

TASKS = ("binary", "five_class")
THREADS_ENV = "KDDNET_THREADS"

DEFAULTS: dict[str, Any] = {
    "data": {"train": None, "test": None, "taxonomy": None, "subsample": 1.0},
    "task": "binary",
    "seed": 0,
    "split": {"train": 0.7, "val": 0.15, "test": 0.15},
    "hyperparams": HyperParams().to_dict(),
    "training": {"precision": "float32", "class_weighting": True,
                 "patience": 5, "lr_patience": 3},
    "ssa": {"population": 20, "iterations": 30, "gliding_constant": 1.9,
            "predator_prob": 0.1, "n_acorn": 3, "scaling_factor": 18.0, "levy_beta": 1.5,
            "budget_epochs": 3, "time_budget_s": None, "workers": 1},
    "search_space": hyperparameter_space().to_dict(),
    "output": "run",
    "threads": None,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def _path(self, value) -> Path | None:
        if value in (None, ""):
            return None
        p = Path(os.path.expanduser(str(value)))
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def train_path(self) -> Path | None:
        return self._path(self.raw["data"]["train"])

    @property
    def test_path(self) -> Path | None:
        return self._path(self.raw["data"]["test"])

    @property
    def taxonomy_path(self) -> Path | None:
        return self._path(self.raw["data"]["taxonomy"])

    @property
    def subsample(self) -> float:
        return float(self.raw["data"]["subsample"])

    @property
    def task(self) -> str:
        return self.raw["task"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def split(self) -> SplitSpec:
        s = self.raw["split"]
        return SplitSpec(float(s["train"]), float(s["val"]), float(s["test"]), seed=self.seed)

    @property
    def tune_marker(self) -> bool:
        return self.raw["hyperparams"] == "tune"

    @property
    def hyperparams(self) -> HyperParams:
        return HyperParams.from_dict(DEFAULTS["hyperparams"] if self.tune_marker
                                     else self.raw["hyperparams"])

    @property
    def training(self) -> dict:
        return self.raw["training"]

    @property
    def ssa(self) -> SsaConfig:
        s = self.raw["ssa"]
        return SsaConfig(population=int(s["population"]), iterations=int(s["iterations"]),
                         gliding_constant=float(s["gliding_constant"]),
                         predator_prob=float(s["predator_prob"]), n_acorn=int(s["n_acorn"]),
                         scaling_factor=float(s["scaling_factor"]),
                         levy_beta=float(s["levy_beta"]), seed=self.seed)

    @property
    def search_space(self) -> SearchSpace:
        return SearchSpace.from_dict(self.raw["search_space"])

    @property
    def output(self) -> Path:
        return self._path(self.raw["output"])

    @property
    def threads(self) -> int | None:
        t = self.raw.get("threads")
        if t is None and os.environ.get(THREADS_ENV):
            t = os.environ[THREADS_ENV]
        return int(t) if t is not None else None

    def snapshot(self) -> dict:
        """Config as recorded in the manifest; location-only keys are left out."""
        snap = copy.deepcopy(self.raw)
        snap.pop("output", None)
        snap.pop("threads", None)
        return snap

    def validate(self, need_data: bool = True) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        try:
            self.split
            self.hyperparams
            self.ssa
            self.search_space
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 < self.subsample <= 1:
            raise ConfigError("data.subsample must lie in (0, 1]")
        if self.training.get("precision") not in ("float32", "float64"):
            raise ConfigError("training.precision must be float32 or float64")
        if need_data:
            if self.train_path is None:
                raise ConfigError("data.train is required")
            for label, p in (("data.train", self.train_path), ("data.test", self.test_path),
                             ("data.taxonomy", self.taxonomy_path)):
                if p is not None and not p.is_file():
                    raise ConfigError(f"{label}: file not found: {p}")


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.resolve().parent
    merged = _merge(DEFAULTS, raw)
    if merged["hyperparams"] != "tune" and isinstance(raw.get("hyperparams"), dict):
        merged["hyperparams"] = _merge(DEFAULTS["hyperparams"], raw["hyperparams"])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = merged
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return RunConfig(merged, base)
