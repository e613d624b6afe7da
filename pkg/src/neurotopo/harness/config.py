"""JSON run configuration: schema, defaults and a validating loader.

A minimal config names the model, the data, the rule and the step budget::

    {
      "model": {"input_dim": 1, "output_dim": 1, "hidden": 1000},
      "data": {"kind": "teacher", "hidden_star": 50},
      "rule": {"rule": "gd", "eta": 0.0025},
      "steps": 2000,
      "output_dir": "runs/gd2d_small"
    }

Everything else has a default; see ``DEFAULTS``. Relative paths are resolved
against the directory holding the config file.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from ..errors import ConfigError

_POS = {"type": "number", "exclusiveMinimum": 0}
_CADENCE = {"type": ["integer", "null"], "minimum": 1}

SCHEMA = {
    "type": "object",
    "required": ["model", "data", "rule", "steps", "output_dir"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "model": {
            "type": "object",
            "required": ["input_dim", "output_dim", "hidden"],
            "additionalProperties": False,
            "properties": {
                "input_dim": {"type": "integer", "minimum": 1},
                "output_dim": {"type": "integer", "minimum": 1},
                "hidden": {"type": "integer", "minimum": 1},
                "loss": {"enum": ["mse", "cross_entropy"]},
            },
        },
        "data": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"const": "teacher"},
                        "hidden_star": {"type": "integer", "minimum": 1},
                        "n": {"type": "integer", "minimum": 2},
                        "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
                {
                    "type": "object",
                    "required": ["kind", "images", "labels"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"const": "mnist"},
                        "images": {"type": "string"},
                        "labels": {"type": "string"},
                        "test_images": {"type": "string"},
                        "test_labels": {"type": "string"},
                        "limit": {"type": "integer", "minimum": 1},
                        "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    },
                },
            ]
        },
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["gaussian", "manifold"]},
                "std": _POS,
                "manifold": {"type": "object", "required": ["kind"]},
                "embed": {"enum": ["direct", "pad", "frame", "neurons"]},
                "output_scale": {"type": "number", "minimum": 0},
                "scale": _POS,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "rule": {
            "type": "object",
            "required": ["eta"],
            "additionalProperties": False,
            "properties": {
                "rule": {"enum": ["gd", "momentum", "adam"]},
                "eta": _POS,
                "mu": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "epsilon": _POS,
                "adam_ordering": {"enum": ["lagged", "standard"]},
            },
        },
        "steps": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "measure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "log_every": _CADENCE,
                "eval_every": _CADENCE,
                "betti_every": _CADENCE,
                "sharpness_every": _CADENCE,
                "snapshot_every": _CADENCE,
                "pairs_every": _CADENCE,
                "eval_samples": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scale_mode": {"enum": ["adaptive", "fixed"]},
                "scale": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "max_dim": {"enum": [1, 2, 3]},
                "subsample_cap": {"type": ["integer", "null"], "minimum": 2},
                "collapse": {"type": "boolean"},
            },
        },
        "sharpness": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": _POS,
                "max_iters": {"type": "integer", "minimum": 1},
                "batch": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "stop": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "loss_delta_tol": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "window": {"type": "integer", "minimum": 1},
            },
        },
        "merge_tol": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "pipelined": {"type": "boolean"},
        "output_dir": {"type": "string"},
        "notes": {"type": "string"},
    },
}

DEFAULTS = {
    "seed": 0,
    "model": {"loss": "mse"},
    "data": {"hidden_star": 50, "n": 5000, "train_fraction": 0.7},
    "init": {"kind": "gaussian", "std": 1.0, "embed": "direct", "output_scale": 0.1, "scale": 1.0},
    "rule": {"rule": "gd"},
    "batch_size": 128,
    "measure": {
        "log_every": 10,
        "eval_every": None,
        "betti_every": 100,
        "sharpness_every": 100,
        "snapshot_every": None,
        "pairs_every": 1,
        "eval_samples": None,
    },
    "topology": {"scale_mode": "adaptive", "scale": None, "max_dim": 3, "subsample_cap": None, "collapse": True},
    "sharpness": {"tol": 1e-3, "max_iters": 100, "batch": 1024},
    "stop": {"loss_delta_tol": None, "window": 100},
    "merge_tol": None,
    "pipelined": False,
    "notes": "",
}


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True)
class RunConfig:
    """A validated configuration with defaults filled in."""

    raw: dict
    base_dir: Path

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def eta(self) -> float:
        return float(self.raw["rule"]["eta"])

    @property
    def output_dir(self) -> Path:
        p = Path(self.raw["output_dir"])
        return p if p.is_absolute() else self.base_dir / p

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def with_overrides(self, **changes) -> "RunConfig":
        return RunConfig(_merge(self.raw, changes), self.base_dir)


def validate_config(cfg: dict, base_dir=".", check_files: bool = True) -> RunConfig:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    full = _merge(DEFAULTS, cfg)
    if full["data"]["kind"] == "mnist":
        for key in ("hidden_star", "n"):
            full["data"].pop(key, None)
    else:
        full["data"].setdefault("seed", full["seed"])
    out = RunConfig(full, Path(base_dir))
    model, init = full["model"], full["init"]
    if init["kind"] == "manifold" and "manifold" not in init:
        raise ConfigError("init.kind 'manifold' needs an init.manifold spec")
    if full["topology"]["scale_mode"] == "fixed" and full["topology"]["scale"] is None:
        raise ConfigError("topology.scale_mode 'fixed' needs topology.scale")
    if full["data"]["kind"] == "mnist" and model["loss"] != "cross_entropy":
        raise ConfigError("MNIST data needs model.loss 'cross_entropy'")
    if check_files and full["data"]["kind"] == "mnist":
        for key in ("images", "labels", "test_images", "test_labels"):
            if key in full["data"] and not out.path(full["data"][key]).is_file():
                raise ConfigError(f"data.{key}: file not found: {out.path(full['data'][key])}")
    return out


def load_config(path, check_files: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return validate_config(cfg, path.parent, check_files)
