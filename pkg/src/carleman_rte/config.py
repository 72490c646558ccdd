"""Run configuration: YAML text, validated against a JSON schema, loaded into dataclasses."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1
EXPERIMENTS = ("partition", "forward", "carleman", "stability", "reconstruct")
RECIPES = ("constant", "gaussian", "checkerboard", "box", "sine2", "cosine")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 2, "maxItems": 3}

_recipe = {
    "type": "object",
    "required": ["recipe"],
    "additionalProperties": False,
    "properties": {
        "recipe": {"enum": list(RECIPES)},
        "value": _num,
        "background": _num,
        "amplitude": _num,
        "center": _vec,
        "width": _pos,
        "lower": _vec,
        "upper": _vec,
        "tiles": {"type": "integer", "minimum": 1},
        "low": _num,
        "high": _num,
        "frequency": _pos,
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "experiment"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dim": {"enum": [2, 3]},
                "lower": _vec,
                "upper": _vec,
                "v0": _pos,
                "v1": _pos,
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "kappa_samples": {"type": "integer", "minimum": 1},
            },
        },
        "discretization": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cells": {"type": "integer", "minimum": 2},
                "T": {"oneOf": [_pos, {"type": "null"}]},
                "T_factor": _pos,
                "dt": {"oneOf": [_pos, {"type": "null"}]},
                "cfl": _pos,
                "n_radial": {"type": "integer", "minimum": 1},
                "n_angular": {"type": "integer", "minimum": 1},
            },
        },
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M": _pos,
                "sigma": _recipe,
                "kernel": _nonneg,
                "a": _recipe,
                "g": _num,
                "f": _recipe,
                "R_amplitude": _num,
                "R_frequency": _num,
            },
        },
        "carleman": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "s_min": _nonneg,
                "s_max": _pos,
                "s_count": {"type": "integer", "minimum": 1},
            },
        },
        "stability": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["twin", "source"]},
                "ensemble": {"type": "integer", "minimum": 0},
                "epsilons": {"type": "array", "items": _pos},
                "a0_levels": {"type": "array", "items": _pos, "minItems": 1},
                "width": _pos,
                "min_records": {"type": "integer", "minimum": 1},
            },
        },
        "reconstruct": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "truth": _recipe,
                "init": _recipe,
                "iterations": {"type": "integer", "minimum": 0},
                "noise_levels": {"type": "array", "items": _nonneg},
                "penalty": _nonneg,
                "velocity_dependent": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"trace_stride": {"type": "integer", "minimum": 1}},
        },
    },
}


@dataclass
class FieldRecipe:
    """A named synthetic spatial field."""

    recipe: str = "constant"
    value: float = 0.0
    background: float = 0.0
    amplitude: float = 1.0
    center: list | None = None
    width: float = 0.1
    lower: list | None = None
    upper: list | None = None
    tiles: int = 4
    low: float = 0.0
    high: float = 1.0
    frequency: float = 1.0

    def evaluate(self, x, box_lower, box_upper):
        """``x`` has shape ``(*grid, dim)``; returns an array of shape ``grid``."""
        dim = x.shape[-1]
        lo = np.asarray(box_lower, float)
        hi = np.asarray(box_upper, float)
        xi = (x - lo) / (hi - lo)  # unit-box coordinates
        if self.recipe == "constant":
            return np.full(x.shape[:-1], float(self.value))
        if self.recipe == "gaussian":
            c = np.full(dim, 0.5) if self.center is None else np.asarray(self.center, float)
            r2 = np.sum((xi - c) ** 2, axis=-1)
            return self.background + self.amplitude * np.exp(-r2 / (2 * self.width**2))
        if self.recipe == "box":
            blo = np.asarray(self.lower if self.lower is not None else [0.25] * dim, float)
            bhi = np.asarray(self.upper if self.upper is not None else [0.75] * dim, float)
            inside = np.all((xi > blo) & (xi < bhi), axis=-1)
            return self.background + self.amplitude * inside
        if self.recipe == "checkerboard":
            idx = np.floor(np.clip(xi, 0, 1 - 1e-12) * self.tiles).astype(int)
            return np.where(np.sum(idx, axis=-1) % 2 == 0, self.low, self.high)
        if self.recipe == "sine2":
            return self.background + self.amplitude * np.prod(np.sin(np.pi * self.frequency * xi) ** 2, axis=-1)
        if self.recipe == "cosine":
            return self.background * (1 + self.amplitude * np.prod(np.cos(np.pi * self.frequency * xi), axis=-1))
        raise ValueError(self.recipe)


@dataclass
class GeometryConfig:
    dim: int = 2
    lower: list | None = None
    upper: list | None = None
    v0: float = 1.0
    v1: float = 2.0
    counts: list = field(default_factory=lambda: [4])
    kappa_samples: int = 10_000


@dataclass
class DiscretizationConfig:
    cells: int = 32
    T: float | None = None
    T_factor: float = 2.0
    dt: float | None = None
    cfl: float = 0.9
    n_radial: int = 1
    n_angular: int = 2


@dataclass
class CoefficientConfig:
    M: float = 4.0
    sigma: FieldRecipe = field(default_factory=lambda: FieldRecipe("cosine", background=2.0, amplitude=0.3))
    kernel: float = 0.05  # constant k(x, v, v')
    a: FieldRecipe = field(default_factory=lambda: FieldRecipe("sine2", amplitude=1.0))
    g: float = 0.0  # constant inflow
    f: FieldRecipe = field(default_factory=lambda: FieldRecipe("sine2", amplitude=1.0))
    R_amplitude: float = 0.5  # R(t) = 1 + R_amplitude sin(R_frequency t)
    R_frequency: float = 2.0


@dataclass
class CarlemanConfig:
    s_min: float = 1.0
    s_max: float = 40.0
    s_count: int = 40

    def s_values(self):
        return np.linspace(self.s_min, self.s_max, self.s_count)


@dataclass
class StabilityConfig:
    mode: str = "twin"
    ensemble: int = 10
    epsilons: list = field(default_factory=lambda: [0.05])
    a0_levels: list = field(default_factory=lambda: [0.2])
    width: float = 0.08
    min_records: int = 10


@dataclass
class ReconstructConfig:
    truth: FieldRecipe = field(
        default_factory=lambda: FieldRecipe("box", background=0.5, amplitude=0.5, lower=[0.3, 0.4], upper=[0.6, 0.7])
    )
    init: FieldRecipe = field(default_factory=lambda: FieldRecipe("constant", value=0.5))
    iterations: int = 200
    noise_levels: list = field(default_factory=lambda: [0.0])
    penalty: float = 0.0
    velocity_dependent: bool = False


@dataclass
class OutputConfig:
    trace_stride: int = 10


@dataclass
class RunConfig:
    experiment: str
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    coefficients: CoefficientConfig = field(default_factory=CoefficientConfig)
    carleman: CarlemanConfig = field(default_factory=CarlemanConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def box(self):
        d = self.geometry.dim
        lo = self.geometry.lower if self.geometry.lower is not None else [0.0] * d
        hi = self.geometry.upper if self.geometry.upper is not None else [1.0] * d
        return lo, hi

    def to_dict(self):
        return asdict(self)


def _path(err):
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(data):
    """Schema check plus the cross-field rules a schema cannot express."""
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(_path(e), e.message)
    geo = data.get("geometry", {})
    dim = geo.get("dim", 2)
    if geo.get("v1", 2.0) <= geo.get("v0", 1.0):
        raise ConfigError("geometry/v1", "must exceed geometry/v0")
    if len(geo.get("counts", [4])) != dim - 1:
        raise ConfigError("geometry/counts", f"need {dim - 1} angular count(s) for dim={dim}")
    for key in ("lower", "upper"):
        if key in geo and len(geo[key]) != dim:
            raise ConfigError(f"geometry/{key}", f"need {dim} entries")
    if "lower" in geo and "upper" in geo and not all(u > l for l, u in zip(geo["lower"], geo["upper"])):
        raise ConfigError("geometry/upper", "must exceed geometry/lower componentwise")


def _recipe(d):
    return FieldRecipe(**d)


def from_dict(data) -> RunConfig:
    validate(data)
    data = copy.deepcopy(data)
    coeffs = data.get("coefficients", {})
    for key in ("sigma", "a", "f"):
        if key in coeffs:
            coeffs[key] = _recipe(coeffs[key])
    rec = data.get("reconstruct", {})
    for key in ("truth", "init"):
        if key in rec:
            rec[key] = _recipe(rec[key])
    return RunConfig(
        experiment=data["experiment"],
        schema_version=data["schema_version"],
        seed=data.get("seed", 0),
        geometry=GeometryConfig(**data.get("geometry", {})),
        discretization=DiscretizationConfig(**data.get("discretization", {})),
        coefficients=CoefficientConfig(**coeffs),
        carleman=CarlemanConfig(**data.get("carleman", {})),
        stability=StabilityConfig(**data.get("stability", {})),
        reconstruct=ReconstructConfig(**rec),
        output=OutputConfig(**data.get("output", {})),
    )


def load_config(path) -> RunConfig:
    """Load a YAML config, or the resolved config stored in a run manifest."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from exc
    if isinstance(data, dict) and "resolved_config" in data:
        data = data["resolved_config"]
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return from_dict(_strip_none(data))


def _strip_none(d):
    """Resolved configs store unset optionals as null; treat them as absent."""
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d
