"""Run configuration: JSON document, schema validation and flag overrides."""
import json
from dataclasses import fields

import jsonschema

from .exceptions import ConfigError
from .model import TrainConfig
from .redundancy import RedundancyConfig

SCHEMA_VERSION = 1

_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name != "redundancy"]
_RED_KEYS = [f.name for f in fields(RedundancyConfig)]

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "data"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "interactions": {"type": "string"},
                "visual": {"type": "string"},
                "textual": {"type": "string"},
                "five_core": _BOOL,
                "split_ratios": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
                "split_seed": _INT,
            },
        },
        "output_dir": {"type": "string"},
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": _INT, "layers": _INT, "lr": _NUM, "gamma_reg": _NUM, "batch_size": _INT,
                "max_epochs": _INT, "seed": _INT, "early_stop_patience": _INT, "knn_k": _INT,
                "modality_graph_alpha": _NUM, "edge_dropout": _NUM, "eval_k": _INT,
                "beta1": _NUM, "beta2": _NUM, "eps": _NUM,
            },
        },
        "redundancy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rank_k": _INT,
                "strength_lambda": _NUM,
                "refresh_interval_tau": _INT,
                "rank_mode": {"enum": ["fixed", "dynamic_ratio"]},
                "energy_threshold": _NUM,
                "center_before_project": _BOOL,
                "enabled": _BOOL,
            },
        },
        "eval_ks": {"type": "array", "items": _INT, "minItems": 1},
        "diagnostics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": _BOOL,
                "ks": {"type": "array", "items": _INT},
                "n_directions": _INT,
                "seed": _INT,
            },
        },
    },
}


def default_config():
    return {
        "schema_version": SCHEMA_VERSION,
        "data": {"dir": ".", "five_core": False, "split_ratios": [0.8, 0.1, 0.1], "split_seed": 0},
        "output_dir": "run",
        "train": {},
        "redundancy": {},
        "eval_ks": [10, 20],
        "diagnostics": {"enabled": False, "ks": [5, 10, 20], "n_directions": 128, "seed": 0},
    }


def validate(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc
    return doc


def merge(base, override):
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    validate(doc)
    return merge(default_config(), doc)


def resolve(doc):
    """Fully resolved run config: validated, with every default filled in."""
    doc = merge(default_config(), doc)
    validate(doc)
    tc = train_config(doc)
    doc["train"] = {k: v for k, v in tc.to_dict().items() if k != "redundancy"}
    doc["redundancy"] = tc.to_dict()["redundancy"]
    return doc


def train_config(doc):
    red = RedundancyConfig(**doc.get("redundancy", {}))
    return TrainConfig(redundancy=red, **doc.get("train", {}))


TRAIN_KEYS = _TRAIN_KEYS
REDUNDANCY_KEYS = _RED_KEYS
