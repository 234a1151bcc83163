"""Versioned experiment configuration; unknown keys are rejected."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import jsonschema

from nestsim.errors import ConfigError

SCHEMA_VERSION = 1
EXAMPLES = ("barrier", "asian", "gmwb", "toy")
METHODS = ("sn", "sr", "nsr", "regression")

_PLAN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "strategy": {"enum": ["equidistant_blocks", "quantile_blocks", "ratio_ladder", "equal_weight_all"]},
        "s": {"type": "integer", "minimum": 1},
        "anchor": {"enum": ["midpoint", "right_endpoint", "left_endpoint", "max_start"]},
        "ratio": {"type": "number", "exclusiveMinimum": 1},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "example"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "example": {"enum": list(EXAMPLES)},
        "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1, "uniqueItems": True},
        "n": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "plan": _PLAN,
        "regression": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "points": {"type": "integer", "minimum": 1},
                "rule": {"enum": ["right", "left", "midpoint"]},
                "basis": {"enum": ["barrier", "poly"]},
                "degree": {"type": "integer", "minimum": 0, "maximum": 8},
                "rank_policy": {"enum": ["raise", "min_norm"]},
            },
        },
        "nsr": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bins": {"type": "integer", "minimum": 1},
                "partition": {"enum": ["quantile", "equidistant"]},
                "outside": {"enum": ["clamp", "drop"]},
            },
        },
        "risk": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["expected_excess", "large_loss_prob", "present_value", "var", "cte", "mean"]},
                "c": {"oneOf": [{"type": "number"}, {"const": "derive"}]},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"budget": {"type": "integer", "minimum": 2}, "seed": {"type": "integer", "minimum": 0}},
        },
        "timing": {"type": "boolean"},
        "output_dir": {"type": "string"},
    },
}

# desk-scale defaults per example
DEFAULTS = {
    "barrier": {
        "methods": ["sn", "sr", "regression"], "n": 760, "m": 1316, "trials": 50,
        "plan": {"strategy": "equidistant_blocks", "s": 10, "anchor": "right_endpoint"},
        "regression": {"points": 10, "rule": "right", "basis": "barrier", "rank_policy": "min_norm"},
        "risk": {"kind": "expected_excess", "c": 0.3608},
    },
    "asian": {
        "methods": ["sn", "sr", "regression"], "n": 1000, "m": 1000, "trials": 50,
        "plan": {"strategy": "equidistant_blocks", "s": 10, "anchor": "midpoint"},
        "regression": {"points": 10, "rule": "right", "basis": "poly", "degree": 5},
        "risk": {"kind": "expected_excess", "c": 114.8151},
    },
    "gmwb": {
        "methods": ["sn", "sr"], "n": 1000, "m": 1000, "trials": 50,
        "plan": {"strategy": "ratio_ladder", "ratio": 1.1, "anchor": "max_start"},
        "regression": {"points": 50, "rule": "right", "basis": "poly", "degree": 5},
        "risk": {"kind": "var", "alpha": 0.7},
    },
    "toy": {"methods": ["sn", "sr"], "n": 100, "m": 1000, "trials": 2000, "risk": {"kind": "mean"}},
}


@dataclass(frozen=True)
class ExperimentConfig:
    example: str
    methods: tuple
    n: int
    m: int
    trials: int
    seed: int = 12345
    plan: dict = field(default_factory=dict)
    regression: dict = field(default_factory=dict)
    nsr: dict = field(default_factory=dict)
    risk: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    timing: bool = True
    output_dir: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    @property
    def threshold(self) -> Union[float, str, None]:
        return self.risk.get("c")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        if d["output_dir"] is None:
            del d["output_dir"]
        return d


def _merge(defaults: dict, given: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in defaults.items()}
    for k, v in given.items():
        if isinstance(v, dict) and k in out:
            # switching plan strategy or regression basis drops the default's other settings
            same_kind = all(v.get(key, out[k].get(key)) == out[k].get(key) for key in ("strategy", "basis"))
            out[k] = {**out[k], **v} if same_kind else dict(v)
        else:
            out[k] = v
    return out


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    merged = _merge(DEFAULTS[raw["example"]], raw)
    merged["methods"] = tuple(merged["methods"])
    cfg = ExperimentConfig(**merged)
    _check_compatibility(cfg)
    return cfg


def _check_compatibility(cfg: ExperimentConfig):
    if cfg.example == "toy" and set(cfg.methods) - {"sn", "sr"}:
        raise ConfigError("the toy study supports only the sn and sr methods")
    if cfg.example == "barrier" and {"sr", "nsr"} & set(cfg.methods):
        if cfg.plan.get("strategy") not in ("equidistant_blocks", "quantile_blocks") \
                or cfg.plan.get("anchor") != "right_endpoint":
            raise ConfigError("barrier recycling needs block plans with right_endpoint anchors, "
                              "since a target may not lie above its reference")
    if cfg.plan.get("strategy") in ("equidistant_blocks", "quantile_blocks", "equal_weight_all") \
            and "s" not in cfg.plan:
        raise ConfigError("block plans need a block count s")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(raw)
