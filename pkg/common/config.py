"""Model configuration: JSON loading, schema check, defaults and semantic validation."""
import copy
import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from jsonschema import Draft202012Validator

from common import constants
from common.errors import (
    ConfigError, GeneratorError, ParseError, SchemaError, ValidationError,
)
from common.expression import Expression
from common.markov_core import validate_generator

logger = logging.getLogger(__name__)

_NUMBER = {"type": "number"}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_EXPRESSION = {"type": "string", "minLength": 1}


def _section(properties, required=()):
    return {
        "type": "object",
        "properties": properties,
        "required": list(required),
        "additionalProperties": False,
    }


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    **_section({
        "states": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "Q": {"type": "array", "items": {"type": "array", "items": _NUMBER}, "minItems": 2},
        "velocity": {"type": "array", "items": _EXPRESSION, "minItems": 2},
        "phi": _EXPRESSION,
        "grid": _section({
            "u_min": _NUMBER,
            "u_max": _NUMBER,
            "n_points": {"type": "integer", "minimum": 16},
            "boundary_mode": {"enum": list(constants.BOUNDARY_MODES)},
            "pad": {"type": "number", "minimum": 0},
        }),
        "time": _section({
            "t_end": _POSITIVE,
            "n_steps": {"type": "integer", "minimum": 8},
        }),
        "layer": _section({
            "n_tau": {"type": "integer", "minimum": 16},
            "tau_max_factor": _POSITIVE,
        }),
        "expansion": _section({
            "order": {"type": "integer", "minimum": 0},
        }),
        "sweep": _section({
            "epsilons": {"type": "array", "items": _POSITIVE, "minItems": 1},
        }),
        "mc": _section({
            "n_paths": {"type": "integer", "minimum": 100},
            "seed": {"type": "integer", "minimum": 0, "maximum": constants.MAX_SEED},
        }),
        "oracle": _section({
            "dt_factor": _POSITIVE,
            "cfl": _POSITIVE,
            "richardson": {"type": "boolean"},
        }),
        "validation": _section({
            "t_eval": _POSITIVE,
            "gronwall_L": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "solvability_tol": _POSITIVE,
        }),
    }, required=("states", "Q", "velocity", "phi")),
}

DEFAULTS = {
    "grid": {
        "u_min": 0.0,
        "u_max": 2.0 * math.pi,
        "n_points": constants.DEFAULT_N_POINTS,
        "boundary_mode": constants.DEFAULT_BOUNDARY_MODE,
        "pad": None,
    },
    "time": {"t_end": constants.DEFAULT_T_END, "n_steps": constants.DEFAULT_N_STEPS},
    "layer": {"n_tau": constants.DEFAULT_N_TAU, "tau_max_factor": constants.DEFAULT_TAU_MAX_FACTOR},
    "expansion": {"order": constants.DEFAULT_ORDER},
    "sweep": {"epsilons": list(constants.DEFAULT_EPSILONS)},
    "mc": {"n_paths": constants.DEFAULT_N_PATHS, "seed": constants.DEFAULT_SEED},
    "oracle": {
        "dt_factor": constants.DEFAULT_DT_FACTOR,
        "cfl": constants.DEFAULT_CFL,
        "richardson": True,
    },
    "validation": {
        "t_eval": constants.DEFAULT_T_EVAL,
        "gronwall_L": None,
        "solvability_tol": constants.SOLVABILITY_TOL,
    },
}


@dataclass(frozen=True)
class GridConfig:
    u_min: float
    u_max: float
    n_points: int
    boundary_mode: str
    pad: float


@dataclass(frozen=True)
class TimeConfig:
    t_end: float
    n_steps: int


@dataclass(frozen=True)
class LayerConfig:
    n_tau: int
    tau_max_factor: float


@dataclass(frozen=True)
class OracleConfig:
    dt_factor: float
    cfl: float
    richardson: bool


@dataclass(frozen=True)
class ValidationConfig:
    t_eval: float
    gronwall_L: Optional[float]
    solvability_tol: float


@dataclass(frozen=True)
class ModelConfig:
    states: List[str]
    Q: List[List[float]]
    velocity: List[str]
    phi: str
    grid: GridConfig
    time: TimeConfig
    layer: LayerConfig
    order: int
    epsilons: List[float]
    n_paths: int
    seed: int
    oracle: OracleConfig
    validation: ValidationConfig
    document: dict = field(repr=False, compare=False, default_factory=dict)

    def as_dict(self) -> dict:
        """The fully defaulted JSON document this config was built from."""
        return copy.deepcopy(self.document)


def _merge_defaults(document: dict) -> dict:
    merged = copy.deepcopy(document)
    for name, defaults in DEFAULTS.items():
        section = dict(defaults)
        section.update(merged.get(name, {}))
        merged[name] = section
    return merged


def _check_schema(document):
    errors = sorted(Draft202012Validator(CONFIG_SCHEMA).iter_errors(document), key=lambda e: list(e.path))
    if errors:
        first = errors[0]
        where = ".".join(str(part) for part in first.path) or "<root>"
        raise SchemaError(f"{where}: {first.message}")


def _check_semantics(document):
    n = len(document["states"])
    if len(document["velocity"]) != n:
        raise SchemaError(f"velocity: {len(document['velocity'])} expressions for {n} states")
    if len(document["Q"]) != n:
        raise SchemaError(f"Q: {len(document['Q'])} rows for {n} states")
    for i, row in enumerate(document["Q"]):
        if len(row) != n:
            raise ValidationError(f"Q[{i}]", f"row has {len(row)} entries, expected {n}")

    try:
        validate_generator(document["Q"])
    except GeneratorError as e:
        name = "Q" if e.row is None else f"Q[{e.row}]"
        raise ValidationError(name, str(e)) from e

    for i, source in enumerate(document["velocity"]):
        _check_expression(f"velocity[{i}]", source)
    _check_expression("phi", document["phi"])

    grid = document["grid"]
    if not grid["u_max"] > grid["u_min"]:
        raise ValidationError("grid.u_max", "must exceed grid.u_min")
    if document["validation"]["t_eval"] > document["time"]["t_end"]:
        raise ValidationError("validation.t_eval", "must not exceed time.t_end")


def default_pad(document: dict) -> float:
    """Margin the fastest state covers by t_end: t_end * max |v| on the core interval, plus 5%."""
    grid = document["grid"]
    core = np.linspace(grid["u_min"], grid["u_max"], grid["n_points"])
    with np.errstate(all="ignore"):
        speeds = [np.broadcast_to(Expression(source)(core), core.shape) for source in document["velocity"]]
    speed = float(np.abs(speeds).max())
    if not math.isfinite(speed):
        raise ValidationError("grid.pad", "velocity is not finite on the core interval, set the pad explicitly")
    return constants.DEFAULT_PAD_MARGIN * document["time"]["t_end"] * speed


def _check_expression(name, source):
    try:
        Expression(source)
    except ConfigError as e:
        raise ValidationError(name, str(e)) from e


def parse_config(document: dict) -> ModelConfig:
    """Validate an already decoded JSON document and apply defaults."""
    if not isinstance(document, dict):
        raise SchemaError("<root>: config must be a JSON object")
    _check_schema(document)
    merged = _merge_defaults(document)
    _check_semantics(merged)
    if merged["grid"]["pad"] is None:
        merged["grid"]["pad"] = default_pad(merged)

    config = ModelConfig(
        states=list(merged["states"]),
        Q=[list(map(float, row)) for row in merged["Q"]],
        velocity=list(merged["velocity"]),
        phi=merged["phi"],
        grid=GridConfig(**merged["grid"]),
        time=TimeConfig(**merged["time"]),
        layer=LayerConfig(**merged["layer"]),
        order=merged["expansion"]["order"],
        epsilons=list(merged["sweep"]["epsilons"]),
        n_paths=merged["mc"]["n_paths"],
        seed=merged["mc"]["seed"],
        oracle=OracleConfig(**merged["oracle"]),
        validation=ValidationConfig(**merged["validation"]),
        document=merged,
    )
    logger.debug(f"Parsed config with {len(config.states)} states, order {config.order}")
    return config


def load_config(path) -> ModelConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except OSError as e:
        raise ParseError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON in {path}: {e}") from e
    config = parse_config(document)
    logger.info(f"Loaded config {path}")
    return config
