"""JSON configuration: schema, defaults and conversion to library objects."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .geometry import Geometry
from .rw_solver import Bump, EvolutionConfig, InitialData, TrapezoidRegion
from .verifier import VerifierGrid

__all__ = ["ConfigError", "DEFAULTS", "SCHEMA", "load_config", "merge_defaults"]


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 0}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

_bump = {
    "type": "object",
    "additionalProperties": False,
    "required": ["center", "width"],
    "properties": {
        "center": _num,
        "width": _pos,
        "amplitude": _num,
        "shape": {"enum": ["bump", "gaussian"]},
    },
}


def _obj(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required)}


SCHEMA = _obj(
    {
        "mass": _pos,
        "alpha": {"anyOf": [_pos, {"type": "null"}]},
        "seed": _int,
        "threads": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "verifier": _obj(
            {
                "alpha_min": _pos,
                "alpha_max": _pos,
                "per_decade": {"type": "integer", "minimum": 1},
                "n_base": {"type": "integer", "minimum": 16},
                "n_x": {"type": "integer", "minimum": 16},
                "n_cluster": _int,
                "rstar_min": _num,
                "R_split": _pos,
                "R_max": _pos,
                "verify_refinement": {"type": "boolean"},
            }
        ),
        "constants": _obj(
            {
                "which": {"type": "array", "items": {"enum": ["prop2", "prop3"]}, "minItems": 1},
                "ell_max": {"type": "integer"},
                "rstar_range": _pair,
                "n_r": {"type": "integer", "minimum": 3},
                "aux_sign": {"enum": [1, -1, 1.0, -1.0]},
                "n_validate": _int,
            }
        ),
        "solver": _obj(
            {
                "ell": _int,
                "h": _pos,
                "t_final": _pos,
                "window": _pair,
                "courant": _pos,
                "potential": {"enum": ["regge_wheeler", "zero"]},
                "refinements": {"type": "integer", "minimum": 1},
                "data": _obj(
                    {
                        "psi": {"type": "array", "items": _bump},
                        "psi_t": {"type": "array", "items": _bump},
                        "advect": _num,
                    }
                ),
                "region": _obj({"t1": _num, "t2": _num, "r1": _num, "r2": _num}, ["t1", "t2", "r1", "r2"]),
            }
        ),
        "ensemble": _obj(
            {
                "n_runs": {"type": "integer", "minimum": 1},
                "ell_max": _int,
                "h": _pos,
                "t_final": _pos,
                "t_shift": _num,
                "window": _pair,
            }
        ),
    }
)

DEFAULTS = {
    "mass": 1.0,
    "alpha": None,
    "seed": 0,
    "threads": 1,
    "output_dir": "out",
    "verifier": {
        "alpha_min": 10.0,
        "alpha_max": 1.0e5,
        "per_decade": 8,
        "n_base": 20000,
        "n_x": 4001,
        "n_cluster": 200,
        "rstar_min": -60.0,
        "R_split": 10.0,
        "R_max": 1.0e4,
        "verify_refinement": True,
    },
    "constants": {
        "which": ["prop2", "prop3"],
        "ell_max": 64,
        "rstar_range": [-40.0, 400.0],
        "n_r": 2001,
        "aux_sign": 1.0,
        "n_validate": 100000,
    },
    "solver": {
        "ell": 2,
        "h": 0.1,
        "t_final": 10.0,
        "window": [-25.0, 35.0],
        "courant": 0.5,
        "potential": "regge_wheeler",
        "refinements": 3,
        "data": {
            "psi": [{"center": 2.0, "width": 4.0, "amplitude": 1.0}],
            "psi_t": [{"center": -3.0, "width": 3.0, "amplitude": 0.5}],
            "advect": 0.0,
        },
        "region": {"t1": 0.0, "t2": 10.0, "r1": -10.0, "r2": 20.0},
    },
    "ensemble": {
        "n_runs": 20,
        "ell_max": 8,
        "h": 0.1,
        "t_final": 40.0,
        "t_shift": 7.5,
        "window": [-60.0, 80.0],
    },
}


def merge_defaults(user: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for key, val in user.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "region":
            out[key].update(val)
        else:
            out[key] = val
    return out


def load_config(path: str | Path | None) -> dict:
    """Read, validate and complete a configuration file (None = defaults)."""
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(user, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message} at {list(exc.absolute_path)}") from exc
    cfg = merge_defaults(user)
    v = cfg["verifier"]
    if v["alpha_max"] < v["alpha_min"]:
        raise ConfigError("verifier.alpha_max must be >= alpha_min")
    c = cfg["constants"]
    if c["ell_max"] < 0:
        raise ConfigError("constants.ell_max must be >= 0 (empty l range)")
    if c["rstar_range"][1] <= c["rstar_range"][0]:
        raise ConfigError("constants.rstar_range must be increasing")
    return cfg


def geometry_of(cfg) -> Geometry:
    return Geometry(cfg["mass"])


def verifier_grid_of(cfg) -> VerifierGrid:
    v = cfg["verifier"]
    return VerifierGrid(
        n_base=v["n_base"],
        n_x=v["n_x"],
        n_cluster=v["n_cluster"],
        rstar_min=v["rstar_min"],
        R_split=v["R_split"],
        R_max=v["R_max"],
    )


def _bumps(items):
    return tuple(Bump(**b) for b in items)


def evolution_config_of(cfg, h=None) -> EvolutionConfig:
    s = cfg["solver"]
    d = s["data"]
    return EvolutionConfig(
        ell=s["ell"],
        data=InitialData(psi=_bumps(d.get("psi", [])), psi_t=_bumps(d.get("psi_t", [])), advect=d.get("advect", 0.0)),
        h=s["h"] if h is None else h,
        t_final=s["t_final"],
        window=tuple(s["window"]),
        courant=s["courant"],
        M=cfg["mass"],
        potential=s["potential"],
    )


def region_of(cfg) -> TrapezoidRegion:
    return TrapezoidRegion(**cfg["solver"]["region"])
