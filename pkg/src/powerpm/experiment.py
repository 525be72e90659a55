"""Experiment configuration: schema, defaults, validation, and overrides.

One YAML file describes an experiment; ``--set key.path=value`` flags win
over file values. Unknown keys are rejected with the offending key path.
Defaults follow the published hyperparameter table where it gives a value
(mask ratio 0.4, shift 96, 12 clusters, patch 48/stride 24, per-scale
learning rates); everything else is a desk-scale choice.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from powerpm.downstream.tasks import TaskSpec
from powerpm.errors import ConfigError, TaskError


@dataclass(frozen=True)
class Field:
    default: Any
    kind: tuple[type, ...]
    nullable: bool = False
    choices: tuple | None = None

    def coerce(self, value, path: str):
        if value is None:
            if self.nullable:
                return None
            raise ConfigError(f"{path} must not be null", key_path=path)
        if bool in self.kind:
            if not isinstance(value, bool):
                raise ConfigError(f"{path} must be a boolean", key_path=path)
            return value
        if isinstance(value, bool) and bool not in self.kind:
            raise ConfigError(f"{path} must not be a boolean", key_path=path)
        if float in self.kind and isinstance(value, int):
            value = float(value)
        if not isinstance(value, self.kind):
            names = "/".join(k.__name__ for k in self.kind)
            raise ConfigError(
                f"{path} must be of type {names}, got {type(value).__name__}",
                key_path=path,
            )
        if self.choices is not None and value not in self.choices:
            raise ConfigError(
                f"{path} must be one of {list(self.choices)}, got {value!r}",
                key_path=path,
            )
        return value


SCHEMA: dict[str, Any] = {
    "seed": Field(0, (int,)),
    "output_dir": Field("runs/experiment", (str,)),
    "dataset": {
        "kind": Field("synth", (str,), choices=("synth", "synth_dir", "iso")),
        "path": Field(None, (str,), nullable=True),
        "iso_schema": Field(None, (str,), nullable=True,
                            choices=("CAISO", "NYISO", "ISONE", "PJM")),
        "synth": {
            "n_cities": Field(1, (int,)),
            "districts_per_city": Field(4, (int,)),
            "users_per_district": Field(8, (int,)),
            "num_points": Field(8640, (int,)),
            "frequency_seconds": Field(900, (int,)),
            "noise_std": Field(0.05, (float,)),
            "regional_factor_std": Field(0.0, (float,)),
            "regional_factor_hours": Field(6.0, (float,)),
            "anomaly_fraction": Field(0.0, (float,)),
        },
    },
    "windows": {
        "window_len": Field(672, (int,)),
        "stride": Field(96, (int,)),
        "max_fill_fraction": Field(0.1, (float,)),
        "ratios": Field([0.6, 0.2, 0.2], (list,)),
    },
    "exogenous": {
        "enabled": Field(True, (bool,)),
        "weather_vocabulary": Field(["sunny", "cloudy", "rainy", "storm"], (list,)),
        "temp_lo": Field(-20, (int,)),
        "temp_hi": Field(45, (int,)),
    },
    "clustering": {
        "num_clusters": Field(12, (int,)),
        "restarts": Field(10, (int,)),
        "band": Field(None, (int,), nullable=True),
    },
    "model": {
        "scale": Field("tiny", (str,), choices=("tiny", "small", "medium", "full", "custom")),
        "rgcn_layers": Field(2, (int,)),
        "custom": {
            "model_dim": Field(64, (int,)),
            "num_layers": Field(2, (int,)),
            "ffn_dim": Field(128, (int,)),
            "num_heads": Field(4, (int,)),
        },
    },
    "patch": {
        "patch_len": Field(48, (int,)),
        "stride": Field(24, (int,)),
    },
    "pretrain": {
        "steps": Field(200, (int,)),
        "accumulation": Field(4, (int,)),
        "mask_ratio": Field(0.4, (float,)),
        "contrastive_weight": Field(1.0, (float,)),
        "learning_rate": Field(None, (float,), nullable=True),
        "plateau_factor": Field(0.5, (float,)),
        "plateau_patience": Field(5, (int,)),
        "groups_per_batch": Field(2, (int,)),
        "contrastive_groups": Field(2, (int,)),
        "stop_grad_background": Field(False, (bool,)),
        "checkpoint_every": Field(None, (int,), nullable=True),
    },
    "contrastive": {
        "shift_points": Field(96, (int,)),
        "temperature": Field(0.2, (float,)),
        "batch_size": Field(16, (int,)),
    },
    "finetune": {
        "epochs": Field(5, (int,)),
        "learning_rate": Field(1e-3, (float,)),
        "batch_groups": Field(4, (int,)),
        "target_level": Field("district", (str,),
                              choices=("city", "district", "user")),
        "anomaly_threshold": Field(0.5, (float,)),
    },
    "tasks": Field(
        [{"family": "forecast", "horizon": 4, "regime": "full_ft", "data_fraction": 1.0}],
        (list,),
    ),
    "ablation": {
        "variants": Field(["full", "-H", "-M", "-C", "-E"], (list,)),
    },
}

_TASK_KEYS = {
    "family", "horizon", "mask_ratio", "n_classes", "metrics", "regime", "data_fraction",
}
_VARIANTS = ("full", "-H", "-M", "-C", "-E")


def default_config() -> dict:
    def walk(node):
        if isinstance(node, Field):
            return copy.deepcopy(node.default)
        return {k: walk(v) for k, v in node.items()}

    return walk(SCHEMA)


def _validate_tree(tree: dict, schema: dict, path: str) -> dict:
    if not isinstance(tree, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping", key_path=path)
    out = {}
    for key in tree:
        if key not in schema:
            full = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key {full!r}", key_path=full)
    for key, spec in schema.items():
        full = f"{path}.{key}" if path else key
        if isinstance(spec, Field):
            value = tree.get(key, copy.deepcopy(spec.default))
            out[key] = spec.coerce(value, full)
        else:
            out[key] = _validate_tree(tree.get(key, {}), spec, full)
    return out


def _validate_semantics(config: dict) -> None:
    ratios = config["windows"]["ratios"]
    if len(ratios) != 3 or abs(sum(float(r) for r in ratios) - 1.0) > 1e-9:
        raise ConfigError("windows.ratios must be 3 values summing to 1",
                          key_path="windows.ratios")
    if config["dataset"]["kind"] == "iso" and not config["dataset"]["iso_schema"]:
        raise ConfigError("dataset.iso_schema required for kind=iso",
                          key_path="dataset.iso_schema")
    if config["dataset"]["kind"] in ("iso", "synth_dir") and not config["dataset"]["path"]:
        raise ConfigError("dataset.path required for this dataset kind",
                          key_path="dataset.path")
    if config["exogenous"]["temp_hi"] <= config["exogenous"]["temp_lo"]:
        raise ConfigError("exogenous.temp_hi must exceed temp_lo",
                          key_path="exogenous.temp_hi")
    for i, entry in enumerate(config["tasks"]):
        path = f"tasks[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{path} must be a mapping", key_path=path)
        unknown = set(entry) - _TASK_KEYS
        if unknown:
            raise ConfigError(f"{path} has unknown keys {sorted(unknown)}", key_path=path)
        try:
            build_task_spec(entry)
        except TaskError as exc:
            raise ConfigError(f"{path}: {exc}", key_path=path) from None
    for v in config["ablation"]["variants"]:
        if v not in _VARIANTS:
            raise ConfigError(
                f"ablation.variants entries must be in {_VARIANTS}",
                key_path="ablation.variants",
            )


def build_task_spec(entry: dict) -> TaskSpec:
    kwargs = dict(entry)
    if "metrics" in kwargs:
        kwargs["metrics"] = tuple(kwargs["metrics"])
    if "data_fraction" in kwargs:
        kwargs["data_fraction"] = float(kwargs["data_fraction"])
    if "mask_ratio" in kwargs and kwargs["mask_ratio"] is not None:
        kwargs["mask_ratio"] = float(kwargs["mask_ratio"])
    return TaskSpec(**kwargs)


def validate_config(tree: dict) -> dict:
    config = _validate_tree(tree or {}, SCHEMA, "")
    _validate_semantics(config)
    return config


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    out = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value",
                              key_path=item)
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"override value {raw!r} is not valid YAML",
                              key_path=key) from None
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key {key!r}", key_path=key)
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}", key_path=key)
        node[parts[-1]] = value
    return out


def load_experiment(path: str | Path | None, overrides: list[str] | None = None) -> dict:
    """Read, merge, and validate an experiment config."""
    tree = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping", key_path="")
        tree = loaded
    config = validate_config(tree)
    if overrides:
        config = validate_config(apply_overrides(config, overrides))
    return config


def dump_config(config: dict) -> str:
    return yaml.safe_dump(config, sort_keys=True)


def derive_seed(root: int, label: str) -> int:
    """Stable per-component seed derived from the root seed and a label."""
    digest = hashlib.sha256(f"{root}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63 - 1)
