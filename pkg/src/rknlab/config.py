"""Experiment configuration: YAML files, dotted overrides, validation.

A config is a nested mapping with sections model / noise / dataset / init /
rkn / training. Every leaf can be overridden on the command line with
``--override section.key=value``; values are parsed as YAML scalars.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import ConfigError
from .rkn import RknModel
from .statespace import (BimodalNoiseSpec, DatasetConfig, LinearStateSpaceModel,
                         make_constant_velocity_model, noise_from_heterogeneity)
from .training import TrainingConfig

DEFAULT_CONFIG = {
    "model": {"dt": 1.0, "sigma_v_sq": 1.0e-4},
    "noise": {"nu_db": 40.0, "p": 0.6, "sigma1_ratio": 1.5625},
    "dataset": {"train": 1000, "val": 100, "test": 1000, "T": 150,
                "master_seed": 21},
    "init": {"mean": [0.0, 1.0], "cov": [[1.0, 0.0], [0.0, 0.01]]},
    "rkn": {"fc_in": [32], "gru": [64], "fc_out": [32], "seed": 0,
            "features": {"squared": True}},
    "training": {"learning_rate": 1.0e-3, "epochs": 100, "batch_size": 32,
                 "l2_lambda": 1.0e-4, "seed": 0, "patience": 10,
                 "grad_clip": 10.0},
}


def _merge(base: dict, extra: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if key not in out:
            raise ConfigError(f"{path}{key}", "unknown configuration key")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key}", "expected a mapping")
            out[key] = _merge(out[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def apply_override(config: dict, assignment: str) -> dict:
    """Apply one 'section.key=value' override; value parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like section.key=value")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        raise ConfigError(dotted, f"unparseable override value {raw!r}")
    node = config
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(dotted, "unknown configuration section")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(dotted, "unknown configuration key")
    node[keys[-1]] = value
    return config


def load_config(path: str = None, overrides=()) -> "ExperimentConfig":
    """Defaults, optionally merged with a YAML file, then CLI overrides."""
    raw = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"invalid YAML: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a mapping")
        raw = _merge(raw, loaded)
    for assignment in overrides:
        raw = apply_override(raw, assignment)
    return ExperimentConfig.validate(raw)


def _require_number(raw, field, low=None, high=None, strict_low=False):
    value = raw
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(field, f"expected a number, got {value!r}")
    value = float(value)
    if low is not None and (value <= low if strict_low else value < low):
        raise ConfigError(field, f"value {value} below allowed range")
    if high is not None and value > high:
        raise ConfigError(field, f"value {value} above allowed range")
    return value


def _require_count(raw, field, minimum=0):
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigError(field, f"expected an integer, got {raw!r}")
    if raw < minimum:
        raise ConfigError(field, f"value {raw} below minimum {minimum}")
    return raw


@dataclass
class ExperimentConfig:
    """Validated experiment description; builders for every pipeline stage."""

    raw: dict

    @classmethod
    def validate(cls, raw: dict) -> "ExperimentConfig":
        _require_number(raw["model"]["dt"], "model.dt", low=0, strict_low=True)
        _require_number(raw["model"]["sigma_v_sq"], "model.sigma_v_sq", low=0)
        p = _require_number(raw["noise"]["p"], "noise.p")
        if not 0.0 < p < 1.0:
            raise ConfigError("noise.p", f"probability {p} outside (0, 1)")
        _require_number(raw["noise"]["nu_db"], "noise.nu_db")
        _require_number(raw["noise"]["sigma1_ratio"], "noise.sigma1_ratio",
                        low=0, strict_low=True)
        for key in ("train", "val", "test"):
            _require_count(raw["dataset"][key], f"dataset.{key}")
        _require_count(raw["dataset"]["T"], "dataset.T", minimum=1)
        _require_count(raw["dataset"]["master_seed"], "dataset.master_seed")
        mean = np.asarray(raw["init"]["mean"], dtype=float)
        cov = np.asarray(raw["init"]["cov"], dtype=float)
        if mean.shape != (2,):
            raise ConfigError("init.mean", "expected a 2-vector")
        if cov.shape != (2, 2):
            raise ConfigError("init.cov", "expected a 2x2 matrix")
        tr = raw["training"]
        _require_number(tr["learning_rate"], "training.learning_rate",
                        low=0, strict_low=True)
        _require_count(tr["epochs"], "training.epochs", minimum=1)
        _require_count(tr["batch_size"], "training.batch_size", minimum=1)
        _require_number(tr["l2_lambda"], "training.l2_lambda", low=0)
        _require_count(tr["seed"], "training.seed")
        _require_count(tr["patience"], "training.patience")
        if tr["grad_clip"] is not None:
            _require_number(tr["grad_clip"], "training.grad_clip",
                            low=0, strict_low=True)
        # Noise feasibility check with real values.
        cfg = cls(raw=raw)
        cfg.noise()
        return cfg

    def model(self) -> LinearStateSpaceModel:
        return make_constant_velocity_model(self.raw["model"]["dt"],
                                            self.raw["model"]["sigma_v_sq"])

    def noise(self, nu_db: float = None) -> BimodalNoiseSpec:
        section = self.raw["noise"]
        try:
            return noise_from_heterogeneity(
                section["nu_db"] if nu_db is None else nu_db,
                self.raw["model"]["sigma_v_sq"], section["p"],
                section["sigma1_ratio"])
        except Exception as exc:
            raise ConfigError("noise", str(exc))

    def init_mean(self) -> np.ndarray:
        return np.asarray(self.raw["init"]["mean"], dtype=float)

    def init_cov(self) -> np.ndarray:
        return np.asarray(self.raw["init"]["cov"], dtype=float)

    def dataset_config(self, nu_db: float = None) -> DatasetConfig:
        section = self.raw["dataset"]
        return DatasetConfig(
            model=self.model(), noise=self.noise(nu_db),
            init_mean=self.init_mean(), init_cov=self.init_cov(),
            T=section["T"], n_train=section["train"], n_val=section["val"],
            n_test=section["test"], master_seed=section["master_seed"])

    def rkn_model(self) -> RknModel:
        section = self.raw["rkn"]
        return RknModel.create(
            m=2, n=1, squared_features=bool(section["features"]["squared"]),
            seed=int(section["seed"]), fc_in=tuple(section["fc_in"]),
            gru=tuple(section["gru"]), fc_out=tuple(section["fc_out"]))

    def training_config(self) -> TrainingConfig:
        section = self.raw["training"]
        return TrainingConfig(
            learning_rate=float(section["learning_rate"]),
            epochs=int(section["epochs"]),
            batch_size=int(section["batch_size"]),
            l2_lambda=float(section["l2_lambda"]), seed=int(section["seed"]),
            patience=int(section["patience"]),
            grad_clip=None if section["grad_clip"] is None
            else float(section["grad_clip"]))

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)
