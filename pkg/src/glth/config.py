"""Experiment configuration: a JSON file with a fixed schema.

Unknown keys are rejected. Errors name the offending field path, e.g.
``dataset.path``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass

from . import nn
from .pruning import PruneSchedule

__all__ = ["ConfigError", "ExperimentConfig", "merge_config", "DEFAULTS", "PRESETS", "parse_config", "load_config"]


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


DEFAULTS = {
    "network": {"type": "mlp", "input_shape": [1, 1, 32], "hidden": [32], "classes": 10,
                "filters": [16, 8, 4], "padding": "valid", "pool": False},
    "dictionary": {"kind": "canonical", "seed": 0, "mode": "per_layer", "layer": 1, "u_kind": "identity"},
    "schedule": {"tau": 0.8, "rounds": 15, "grouped": False, "min_active": 1, "rewind": True},
    "training": {"learning_rate": 0.05, "batch_size": 64, "epochs_per_round": 15, "momentum": 0.9},
    "dataset": {"kind": "synthetic", "classes": 10, "per_class": 200, "input_shape": [1, 1, 32],
                "noise_dims": 8, "seed": 0, "separation": 4.0, "path": None},
    "output_dir": "runs",
    "seeds": [0],
}

PRESETS = {
    "synthetic": {},
    "cifar-mlp": {
        "network": {"type": "mlp", "input_shape": [32, 32, 3], "hidden": [300, 100], "classes": 10},
        "dictionary": {"kind": "bottleneck", "layer": 1, "u_kind": "dct"},
        "schedule": {"tau": 0.8, "rounds": 20, "grouped": True},
        "training": {"learning_rate": 0.01, "batch_size": 128, "epochs_per_round": 10},
        "dataset": {"kind": "cifar10"},
    },
    "cifar-cnn": {
        "network": {"type": "cnn", "input_shape": [32, 32, 3], "classes": 10},
        "dictionary": {"kind": "random", "mode": "per_layer"},
        "schedule": {"tau": 0.8, "rounds": 20},
        "training": {"learning_rate": 0.01, "batch_size": 128, "epochs_per_round": 10},
        "dataset": {"kind": "cifar10"},
    },
}


def merge_config(base, override, path=""):
    out = copy.deepcopy(base)
    if not isinstance(override, dict):
        raise ConfigError(path or "<root>", "expected an object")
    for key, value in override.items():
        field = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(field, "unknown key")
        if isinstance(base[key], dict):
            out[key] = merge_config(base[key], value, field)
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    network: nn.NetworkSpec
    schedule: PruneSchedule
    training: dict
    output_dir: str
    seeds: list

    @property
    def dictionary(self):
        return self.raw["dictionary"]

    @property
    def dataset(self):
        return self.raw["dataset"]

    def config_hash(self):
        body = {k: v for k, v in self.raw.items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:12]

    def train_config(self, seed):
        return nn.TrainConfig(seed=seed, **self.training)


def _build_network(net):
    try:
        if net["type"] == "mlp":
            return nn.mlp(net["input_shape"], tuple(net["hidden"]), net["classes"])
        if net["type"] == "cnn":
            return nn.small_cnn(tuple(net["input_shape"]), tuple(net["filters"]), net["classes"],
                                net["padding"], net["pool"])
    except (ValueError, TypeError) as exc:
        raise ConfigError("network", str(exc)) from None
    raise ConfigError("network.type", f"must be 'mlp' or 'cnn', got {net['type']!r}")


def parse_config(obj):
    raw = merge_config(DEFAULTS, obj)
    network = _build_network(raw["network"])

    dic = raw["dictionary"]
    if dic["kind"] not in ("canonical", "random", "bottleneck"):
        raise ConfigError("dictionary.kind", f"unknown kind {dic['kind']!r}")
    if dic["mode"] not in ("per_layer", "global"):
        raise ConfigError("dictionary.mode", "must be 'per_layer' or 'global'")
    if dic["kind"] == "bottleneck":
        layer = dic["layer"]
        if not isinstance(layer, int) or not 0 <= layer < len(network.layers) \
                or not isinstance(network.layers[layer], nn.Dense):
            raise ConfigError("dictionary.layer", f"layer {layer!r} is not a Dense layer of the network")
        if dic["u_kind"] not in ("identity", "dct", "random"):
            raise ConfigError("dictionary.u_kind", f"unknown u_kind {dic['u_kind']!r}")

    try:
        schedule = PruneSchedule(**raw["schedule"])
    except (ValueError, TypeError) as exc:
        raise ConfigError("schedule", str(exc)) from None
    if schedule.grouped and dic["kind"] != "bottleneck":
        raise ConfigError("schedule.grouped", "grouped pruning needs a bottleneck dictionary")
    try:
        nn.TrainConfig(**raw["training"])
    except (ValueError, TypeError) as exc:
        raise ConfigError("training", str(exc)) from None

    ds = raw["dataset"]
    if ds["kind"] == "cifar10":
        if ds["path"] is None and not os.environ.get("GLT_DATA_DIR"):
            raise ConfigError("dataset", "cifar10 needs dataset.path or GLT_DATA_DIR")
        if tuple(network.input_shape) != (32, 32, 3):
            raise ConfigError("network.input_shape", "cifar10 needs input_shape [32, 32, 3]")
    elif ds["kind"] == "synthetic":
        if tuple(ds["input_shape"]) != tuple(network.input_shape):
            raise ConfigError("dataset.input_shape", "must equal network.input_shape")
        if ds["classes"] != network.class_count:
            raise ConfigError("dataset.classes", "must equal network.classes")
    else:
        raise ConfigError("dataset.kind", f"must be 'synthetic' or 'cifar10', got {ds['kind']!r}")

    seeds = raw["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "must be a non-empty list of integers")
    return ExperimentConfig(raw, network, schedule, raw["training"], raw["output_dir"], seeds)


def load_config(path):
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"{path}: {exc}") from None
    return parse_config(obj)
