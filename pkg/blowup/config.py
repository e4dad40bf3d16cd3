import copy
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from blowup.dual_transform import ParameterError, ProblemParams
from blowup.problem_model import (ModelDataError, Nonlinearity, Potential, RadialProfile, read_samples_csv)

logger = logging.getLogger("RunConfig")
logger.setLevel(logging.DEBUG)
if not logger.handlers:
    handler = logging.FileHandler("run_config.log", mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    logger.addHandler(handler)

SCHEMA_VERSION = 1
TASKS = ("verify_transform", "check_hypotheses", "solve_radial", "sweep_family", "sandwich", "ball_solve",
         "full_pipeline")

TOP_KEYS = {"schema_version", "task", "params", "nonlinearity", "potential", "numerics", "output_dir"}
PARAM_KEYS = {"p", "gamma", "N"}
NONLINEARITY_KEYS = {"kind", "coefficient", "exponent", "delta", "samples", "csv"}
POTENTIAL_KEYS = {"kind", "radial", "amplitude", "mode", "samples", "csv", "angular_count"}
PROFILE_KEYS = {"family", "value", "power", "samples", "csv"}

NUMERIC_DEFAULTS: Dict[str, Any] = {
    "tol": 1e-8,
    "transform_tol": 1e-10,
    "r_max": 100.0,
    "n_cells": 4096,
    "alpha": 2.0,
    "alphas": [1.0, 2.0, 4.0, 8.0],
    "epsilon": 0.5,
    "mesh_h": 0.1,
    "ball_radii": [5.0, 10.0, 20.0],
    "max_iter": 500,
    "refine_threshold": True,
    "crosscheck": True,
    "hbar_r_max": 1e6,
    "probe_points": [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
    "overflow_guard": 1e12,
    "transform_grid": [1e-6, 1e8, 57],
}
POSITIVE_NUMERICS = ("tol", "transform_tol", "r_max", "alpha", "epsilon", "mesh_h", "hbar_r_max", "overflow_guard")
INTEGER_NUMERICS = ("n_cells", "max_iter")
BOOLEAN_NUMERICS = ("refine_threshold", "crosscheck")


class ConfigValidationError(ValueError):
    def __init__(self, errors: List[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = list(errors)


@dataclass
class NumericsConfig:
    tol: float = 1e-8
    transform_tol: float = 1e-10
    r_max: float = 100.0
    n_cells: int = 4096
    alpha: float = 2.0
    alphas: List[float] = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    epsilon: float = 0.5
    mesh_h: float = 0.1
    ball_radii: List[float] = field(default_factory=lambda: [5.0, 10.0, 20.0])
    max_iter: int = 500
    refine_threshold: bool = True
    crosscheck: bool = True
    hbar_r_max: float = 1e6
    probe_points: List[List[float]] = field(default_factory=lambda: [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    overflow_guard: float = 1e12
    transform_grid: List[float] = field(default_factory=lambda: [1e-6, 1e8, 57])


@dataclass
class RunConfig:
    task: str
    params: ProblemParams
    nonlinearity: Nonlinearity
    potential: Potential
    numerics: NumericsConfig
    output_dir: str
    raw: Dict[str, Any]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _reject_constant(token):
    raise ValueError(f"non-standard JSON constant {token}")


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigValidationError([f"{path}: file not found"])
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f, parse_constant=_reject_constant)
    except ValueError as e:
        raise ConfigValidationError([f"{path}: not valid JSON ({e})"])
    return validate_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def validate_config(raw: Any, base_dir: str = ".") -> RunConfig:
    """Validate a parsed configuration and build the run objects; every problem is collected."""
    errors: List[str] = []
    if not isinstance(raw, dict):
        raise ConfigValidationError(["<root>: configuration must be a JSON object"])
    raw = copy.deepcopy(raw)
    reject_unknown_keys(raw, TOP_KEYS, "", errors)
    if raw.get("schema_version") != SCHEMA_VERSION:
        errors.append(f"schema_version: expected {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    task = raw.get("task")
    if task not in TASKS:
        errors.append(f"task: must be one of {', '.join(TASKS)}")
    for section in ("params", "nonlinearity", "potential"):
        if not isinstance(raw.get(section), dict):
            errors.append(f"{section}: required object missing")
            raw[section] = {}
    numerics = insert_missing_defaults(raw.get("numerics"), errors)
    raw["numerics"] = numerics
    raw.setdefault("output_dir", "dualblow-out")
    if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
        errors.append("output_dir: must be a non-empty string")

    params = build_params(raw["params"], errors)
    g = build_nonlinearity(raw["nonlinearity"], base_dir, errors)
    a = build_potential(raw["potential"], params.N if params else None, base_dir, errors)
    checked = check_numerics(numerics, errors)
    if task == "ball_solve" and params is not None and params.N != 2:
        errors.append(f"params.N: ball_solve runs the lattice solver, which needs N = 2, got {params.N}")

    if errors:
        for message in errors:
            logger.warning(f"Config error: {message}")
        raise ConfigValidationError(errors)
    logger.info(f"Validated configuration for task '{task}'")
    return RunConfig(task, params, g, a, checked, raw["output_dir"], raw)


def reject_unknown_keys(section: Dict[str, Any], allowed, path: str, errors: List[str]):
    for key in section:
        if key not in allowed:
            errors.append(f"{path}{key}: unknown key")


def insert_missing_defaults(numerics: Any, errors: List[str]) -> Dict[str, Any]:
    if numerics is None:
        numerics = {}
    if not isinstance(numerics, dict):
        errors.append("numerics: must be an object")
        numerics = {}
    reject_unknown_keys(numerics, NUMERIC_DEFAULTS.keys(), "numerics.", errors)
    for key, default in NUMERIC_DEFAULTS.items():
        if key not in numerics:
            numerics[key] = copy.deepcopy(default)
    return numerics


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def check_numerics(numerics: Dict[str, Any], errors: List[str]) -> NumericsConfig:
    for key in POSITIVE_NUMERICS:
        if not (_is_number(numerics.get(key)) and numerics[key] > 0):
            errors.append(f"numerics.{key}: must be a positive number")
    for key in INTEGER_NUMERICS:
        value = numerics.get(key)
        if not (isinstance(value, int) and not isinstance(value, bool) and value >= 4):
            errors.append(f"numerics.{key}: must be an integer ≥ 4")
    for key in BOOLEAN_NUMERICS:
        if not isinstance(numerics.get(key), bool):
            errors.append(f"numerics.{key}: must be true or false")
    for key in ("alphas", "ball_radii"):
        values = numerics.get(key)
        if not (isinstance(values, list) and all(_is_number(v) and v > 0 for v in values)):
            errors.append(f"numerics.{key}: must be a list of positive numbers")
    points = numerics.get("probe_points")
    if not (isinstance(points, list) and all(isinstance(pt, list) and len(pt) == 2 and all(map(_is_number, pt))
                                             for pt in points)):
        errors.append("numerics.probe_points: must be a list of [x, y] pairs")
    grid = numerics.get("transform_grid")
    if not (isinstance(grid, list) and len(grid) == 3 and all(map(_is_number, grid))
            and 0 < grid[0] < grid[1] and int(grid[2]) >= 2):
        errors.append("numerics.transform_grid: must be [t_min, t_max, count] with 0 < t_min < t_max")
    try:
        return NumericsConfig(**numerics)
    except TypeError:
        return NumericsConfig()


def build_params(section: Dict[str, Any], errors: List[str]) -> Optional[ProblemParams]:
    reject_unknown_keys(section, PARAM_KEYS, "params.", errors)
    missing = [k for k in ("p", "gamma", "N") if k not in section]
    for key in missing:
        errors.append(f"params.{key}: required")
    if missing:
        return None
    try:
        return ProblemParams(section["p"], section["gamma"], section["N"])
    except (ParameterError, TypeError) as e:
        errors.append(f"params.{getattr(e, 'field', None) or 'p'}: {e}")
        return None


def _samples_from(section: Dict[str, Any], columns: int, base_dir: str, path: str, errors: List[str]):
    if "csv" in section:
        try:
            return tuple(map(tuple, read_samples_csv(os.path.join(base_dir, section["csv"]), columns).tolist()))
        except (OSError, ModelDataError, ValueError) as e:
            errors.append(f"{path}.csv: {e}")
            return None
    samples = section.get("samples")
    if samples is None:
        return None
    if not (isinstance(samples, list) and all(isinstance(row, list) and len(row) == columns for row in samples)):
        errors.append(f"{path}.samples: must be a list of {columns}-element rows")
        return None
    return tuple(map(tuple, samples))


def build_nonlinearity(section: Dict[str, Any], base_dir: str, errors: List[str]) -> Optional[Nonlinearity]:
    reject_unknown_keys(section, NONLINEARITY_KEYS, "nonlinearity.", errors)
    kind = section.get("kind")
    try:
        if kind == "tabulated":
            samples = _samples_from(section, 2, base_dir, "nonlinearity", errors)
            return Nonlinearity("tabulated", delta=section.get("delta"), samples=samples)
        return Nonlinearity(kind, coefficient=section.get("coefficient", 1.0), exponent=section.get("exponent", 1.0),
                            delta=section.get("delta"))
    except (ModelDataError, TypeError) as e:
        errors.append(f"nonlinearity.{getattr(e, 'field', None) or 'kind'}: {e}")
        return None


def build_profile(section: Any, base_dir: str, path: str, errors: List[str]) -> Optional[RadialProfile]:
    if not isinstance(section, dict):
        errors.append(f"{path}: must be an object")
        return None
    reject_unknown_keys(section, PROFILE_KEYS, f"{path}.", errors)
    try:
        samples = _samples_from(section, 2, base_dir, path, errors)
        return RadialProfile(section.get("family", "constant"), section.get("value", 1.0), section.get("power", 0.0),
                             samples)
    except (ModelDataError, TypeError) as e:
        errors.append(f"{path}.{getattr(e, 'field', None) or 'family'}: {e}")
        return None


def build_potential(section: Dict[str, Any], N: Optional[int], base_dir: str, errors: List[str]) -> Optional[Potential]:
    reject_unknown_keys(section, POTENTIAL_KEYS, "potential.", errors)
    kind = section.get("kind")
    radial = build_profile(section.get("radial", {"family": "constant", "value": 1.0}), base_dir,
                           "potential.radial", errors)
    amplitude = None
    if "amplitude" in section:
        amplitude = build_profile(section["amplitude"], base_dir, "potential.amplitude", errors)
    if N is None or radial is None:
        return None
    try:
        samples = _samples_from(section, 3, base_dir, "potential", errors) if kind == "general_sampled" else None
        return Potential(kind, N, radial, amplitude, int(section.get("mode", 1)), samples,
                         int(section.get("angular_count", 256)))
    except (ModelDataError, TypeError, ValueError) as e:
        errors.append(f"potential.{getattr(e, 'field', None) or 'kind'}: {e}")
        return None


def numerics_dict(numerics: NumericsConfig) -> dict:
    return asdict(numerics)
