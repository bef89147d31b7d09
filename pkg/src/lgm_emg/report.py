"""JSON serialization at fixed precision and the comparison-report schema."""

from __future__ import annotations

import enum
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

SIG_DIGITS = 12


def to_jsonable(obj):
    """Recursively convert to JSON types, rounding floats to 12 significant digits."""
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(format(x, f".{SIG_DIGITS}g"))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def dumps(obj):
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
    return path


_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}

_MODEL_METRICS = {
    "type": "object",
    "required": ["kld", "ad", "loglik"],
    "properties": {"kld": {"type": "number", "minimum": 0}, "ad": {"type": "number", "minimum": 0, "maximum": 2}, "loglik": _NUM},
}

_LRT = {
    "type": "object",
    "required": ["statistic", "df", "p_value", "reject_null_at_05"],
    "properties": {
        "statistic": _NUM,
        "df": {"type": "integer", "minimum": 1},
        "p_value": {"type": "number", "minimum": 0, "maximum": 1},
        "reject_null_at_05": {"type": "boolean"},
        "null_family": {"enum": ["SG", "SL"]},
        "alt_family": {"const": "LGM"},
        "zero_mean": {"type": "boolean"},
    },
}

_FAMILY_MAP = lambda inner: {  # noqa: E731
    "type": "object",
    "propertyNames": {"enum": ["LGM", "SG", "SL", "SM"]},
    "additionalProperties": inner,
}

_AVERAGE = {
    "type": "object",
    "required": ["kld", "ad", "n_trials"],
    "properties": {"kld": _NUM, "ad": _NUM, "n_trials": {"type": "integer", "minimum": 1}},
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "LGM model comparison report",
    "type": "object",
    "required": ["schema_version", "bins", "zero_mean", "families", "trials", "averages", "lrt_summary", "notes"],
    "properties": {
        "schema_version": {"const": 1},
        "bins": {"type": "integer", "minimum": 1},
        "zero_mean": {"type": "boolean"},
        "families": {"type": "array", "items": {"enum": ["LGM", "SG", "SL", "SM"]}, "minItems": 1},
        "notes": {"type": "object", "additionalProperties": {"type": "string"}},
        "trials": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["input", "metadata", "segment", "n", "models", "lrt"],
                "properties": {
                    "input": {"type": "string"},
                    "metadata": {"type": "object"},
                    "segment": {
                        "type": "object",
                        "required": ["start_index", "end_index", "method"],
                        "properties": {
                            "start_index": {"type": "integer", "minimum": 0},
                            "end_index": {"type": "integer", "minimum": 1},
                            "start_s": _NUM,
                            "end_s": _NUM,
                            "method": {"enum": ["detector", "manual"]},
                        },
                    },
                    "n": {"type": "integer", "minimum": 1},
                    "models": _FAMILY_MAP(_MODEL_METRICS),
                    "lrt": {"type": "object", "additionalProperties": _LRT},
                },
            },
        },
        "averages": {
            "type": "object",
            "required": ["overall", "by_condition"],
            "properties": {
                "overall": _FAMILY_MAP(_AVERAGE),
                "by_condition": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["muscle", "activity", "weight_kg", "models"],
                        "properties": {"weight_kg": _NUM, "models": _FAMILY_MAP(_AVERAGE)},
                    },
                },
            },
        },
        "lrt_summary": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["median_p", "reject_fraction", "n"],
                "properties": {"median_p": _NUM_OR_NULL, "reject_fraction": _NUM_OR_NULL, "n": {"type": "integer"}},
            },
        },
    },
}


def validate_report(report):
    jsonschema.validate(to_jsonable(report), REPORT_SCHEMA)
