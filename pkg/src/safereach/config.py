"""Run configuration: JSON schema, presets, and conversion into library objects.

Matrices are row-major nested lists.  Sets are given either as an ellipsoid
``{"center": [...], "shape": [[...]]}`` or as a box ``{"lower": [...],
"upper": [...]}``, which is replaced by its largest inscribed ellipsoid.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import List, Optional

import jsonschema
import numpy as np

from .controller import ControllerConfig, Variant
from .ellipsoid import Ellipsoid, HyperRectangle, mvie_box
from .errors import ConfigError
from .kernel import KernelOptions, Partition, make_uniform_partition
from .reach import DirectionSet, InputBounds, LtiSystem

_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_VECTOR = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_SET = {
    "oneOf": [
        {"type": "object", "required": ["center", "shape"], "additionalProperties": False,
         "properties": {"center": _VECTOR, "shape": _MATRIX}},
        {"type": "object", "required": ["lower", "upper"], "additionalProperties": False,
         "properties": {"lower": _VECTOR, "upper": _VECTOR}},
    ]
}
_DISTURBANCE = {
    "type": "object", "required": ["type"], "additionalProperties": False,
    "properties": {
        "type": {"enum": ["none", "uniform", "worst", "adversarial", "fixed"]},
        "seed": {"type": "integer", "minimum": 0},
        "period": {"type": "integer", "minimum": 1},
        "samples": _MATRIX,
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "safereach run configuration",
    "type": "object",
    "required": ["system", "constraint", "inputs", "disturbances", "horizon", "partition",
                 "directions"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "system": {
            "type": "object", "required": ["A", "B", "G"], "additionalProperties": False,
            "properties": {"A": _MATRIX, "B": _MATRIX, "G": _MATRIX, "w": _VECTOR},
        },
        "constraint": _SET,
        "inputs": _SET,
        "disturbances": _SET,
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "partition": {"type": "integer", "minimum": 1},
        "directions": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "list": _MATRIX,
            },
        },
        "kernel": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "stop_on_invariance": {"type": "boolean"},
                "propagate_direction": {"type": "boolean"},
                "substeps": {"type": "integer", "minimum": 1},
                "disturbance_floor": {"type": "number", "exclusiveMinimum": 0},
                "disturbance_weight": {"enum": ["tangent", "volume"]},
                "control_alignment": {"enum": ["tangent", "volume"]},
                "concentric_fusion": {"type": "boolean"},
            },
        },
        "controller": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "sigma_policy": {"enum": ["freeze", "track"]},
                "variant": {"enum": ["finite", "infinite"]},
                "blending": {"type": "boolean"},
                "fallback": {"type": "boolean"},
                "boundary_band": {"type": "number", "minimum": 0},
            },
        },
        "simulation": {
            "type": "object", "required": ["x0", "duration"], "additionalProperties": False,
            "properties": {
                "x0": _MATRIX,
                "duration": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "perf": {
                    "type": "object", "required": ["type"], "additionalProperties": False,
                    "properties": {
                        "type": {"enum": ["constant", "lqr", "fixed"]},
                        "u": _VECTOR, "samples": _MATRIX,
                        "Q": _MATRIX, "R": _MATRIX, "x_ss": _VECTOR, "u_ss": _VECTOR,
                    },
                },
                "disturbance_policies": {"type": "array", "minItems": 1, "items": _DISTURBANCE},
            },
        },
        "output_dir": {"type": "string"},
    },
}

# keys that determine the offline artifacts; the config hash covers only these
ANALYSIS_KEYS = ("system", "constraint", "inputs", "disturbances", "horizon", "partition",
                 "directions", "kernel")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """sha256 of the analysis-relevant part of a configuration."""
    part = {k: cfg[k] for k in ANALYSIS_KEYS if k in cfg}
    return hashlib.sha256(canonical_json(part).encode()).hexdigest()


def _set_from(spec: dict, what: str) -> Ellipsoid:
    try:
        if "center" in spec:
            return Ellipsoid(np.array(spec["center"], float), np.array(spec["shape"], float),
                             degenerate=not np.all(np.linalg.eigvalsh(
                                 np.array(spec["shape"], float)) > 0))
        rect = HyperRectangle(np.array(spec["lower"], float), np.array(spec["upper"], float))
        return mvie_box(rect)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


@dataclass
class RunConfig:
    """Validated configuration turned into library objects."""

    raw: dict
    system: LtiSystem
    K: Ellipsoid
    bounds: InputBounds
    tau: float
    partition: Partition
    directions: DirectionSet
    options: KernelOptions
    controller: ControllerConfig

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def simulation(self) -> Optional[dict]:
        return self.raw.get("simulation")


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from exc


def build(cfg: dict, jobs: int = 1) -> RunConfig:
    """Validate ``cfg`` and cross-check every dimension before any computation."""
    validate(cfg)
    try:
        s = cfg["system"]
        sys = LtiSystem(np.array(s["A"], float), np.array(s["B"], float),
                        np.array(s["G"], float),
                        None if "w" not in s else np.array(s["w"], float))
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from exc
    n = sys.n
    K = _set_from(cfg["constraint"], "constraint")
    U = _set_from(cfg["inputs"], "inputs")
    V = _set_from(cfg["disturbances"], "disturbances")
    if K.dim != n:
        raise ConfigError(f"constraint has dimension {K.dim}, system has {n} states")
    if K.degenerate:
        raise ConfigError("constraint set must be positive definite")
    try:
        bounds = InputBounds(U, V)
        bounds.check(sys)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    d = cfg["directions"]
    if "list" in d:
        lst = np.array(d["list"], float)
        if lst.shape[1] != n:
            raise ConfigError(f"directions have length {lst.shape[1]}, expected {n}")
        try:
            dirs = DirectionSet(lst, d.get("seed"))
        except ValueError as exc:
            raise ConfigError(f"directions: {exc}") from exc
    else:
        dirs = DirectionSet.random(n, d.get("count", 1), d.get("seed", 0))

    opts = KernelOptions(**cfg.get("kernel", {}), jobs=jobs)
    c = cfg.get("controller", {})
    ctrl = ControllerConfig(
        alpha=c.get("alpha", 0.9),
        sigma_rate_perf=0.0 if c.get("sigma_policy", "track") == "freeze" else 1.0,
        blending=c.get("blending", True), fallback=c.get("fallback", False),
        variant=Variant(c.get("variant", "finite")),
        boundary_band=c.get("boundary_band", 1e-3))

    sim = cfg.get("simulation")
    if sim is not None:
        for x0 in sim["x0"]:
            if len(x0) != n:
                raise ConfigError(f"initial state of length {len(x0)}, expected {n}")
        perf = sim.get("perf", {"type": "constant"})
        m = sys.B.shape[1]
        for key, shape in (("u", (m,)), ("u_ss", (m,)), ("x_ss", (n,)), ("Q", (n, n)),
                           ("R", (m, m))):
            if key in perf and np.shape(perf[key]) != shape:
                raise ConfigError(f"perf/{key} has shape {np.shape(perf[key])}, expected {shape}")
        if perf["type"] == "lqr" and not {"Q", "R"} <= perf.keys():
            raise ConfigError("perf/lqr needs Q and R")
    return RunConfig(cfg, sys, K, bounds, float(cfg["horizon"]),
                     make_uniform_partition(float(cfg["horizon"]), int(cfg["partition"])),
                     dirs, opts, ctrl)


def apply_overrides(cfg: dict, seed=None, directions=None, partition=None, alpha=None,
                    sigma_policy=None, variant=None) -> dict:
    """Return a copy of ``cfg`` with command-line overrides applied."""
    out = copy.deepcopy(cfg)
    if seed is not None:
        out.setdefault("directions", {})["seed"] = seed
        for pol in out.get("simulation", {}).get("disturbance_policies", []):
            if pol["type"] in ("uniform", "adversarial"):
                pol["seed"] = seed
    if directions is not None:
        out.setdefault("directions", {}).pop("list", None)
        out["directions"]["count"] = directions
    if partition is not None:
        out["partition"] = partition
    ctrl = out.setdefault("controller", {})
    if alpha is not None:
        ctrl["alpha"] = alpha
    if sigma_policy is not None:
        ctrl["sigma_policy"] = sigma_policy
    if variant is not None:
        ctrl["variant"] = variant
    return out


def _ellipsoid_json(E: Ellipsoid) -> dict:
    return {"center": E.center.tolist(), "shape": E.shape.tolist()}


def preset(name: str) -> dict:
    """Complete configuration for a bundled problem (``planar`` or ``quadrotor``)."""
    from .models import planar_example, quadrotor_model

    if name == "planar":
        p = planar_example()
        return {
            "name": "planar",
            "system": {"A": p.system.A.tolist(), "B": p.system.B.tolist(),
                       "G": p.system.G.tolist()},
            "constraint": _ellipsoid_json(p.K),
            "inputs": {"lower": [-1.0], "upper": [1.0]},
            "disturbances": {"lower": [-0.1], "upper": [0.1]},
            "horizon": p.tau,
            "partition": p.partitions,
            "directions": {"list": [[1.0, 1.0]]},
            "kernel": {"stop_on_invariance": True},
            "controller": {"alpha": 0.9, "sigma_policy": "track", "variant": "infinite",
                           "blending": False, "fallback": False},
            "simulation": {"x0": [p.x0.tolist()], "duration": 25.0, "dt": 1e-3,
                           "perf": {"type": "constant", "u": [-1.0]},
                           "disturbance_policies": [{"type": "uniform", "seed": 0}]},
        }
    if name == "quadrotor":
        p = quadrotor_model()
        opts = asdict(p.options)
        opts.pop("jobs")
        return {
            "name": "quadrotor",
            "system": p.system.to_dict(),
            "constraint": _ellipsoid_json(p.K),
            "inputs": {"lower": [0.5, -0.5, -0.5, -0.5], "upper": [5.4, 0.5, 0.5, 0.5]},
            "disturbances": {"lower": [0.0], "upper": [0.1]},
            "horizon": p.tau,
            "partition": p.partitions,
            "directions": {"count": 15, "seed": 0},
            "kernel": opts,
            "controller": {"alpha": 0.9, "sigma_policy": "track", "variant": "finite",
                           "blending": True, "fallback": True},
            "simulation": {"x0": [p.x0.tolist()], "duration": 2.0, "dt": 1e-3,
                           "perf": {"type": "lqr", "Q": p.Q.tolist(), "R": p.R.tolist(),
                                    "x_ss": p.x_ss.tolist(), "u_ss": p.u_ss.tolist()},
                           "disturbance_policies": [{"type": "uniform", "seed": 0}]},
        }
    raise ConfigError(f"unknown preset {name!r}; choose 'planar' or 'quadrotor'")


PRESETS: List[str] = ["planar", "quadrotor"]
