"""Run configuration: JSON schema, presets, overrides and object construction."""

import copy
import json
from importlib import resources

import jsonschema

from .errors import ConfigurationError
from .grid import PeriodicGrid
from .harness import INITIAL_KINDS, InitialCondition
from .integrators import (
    BOOTSTRAP_POLICIES,
    EXTRAPOLATIONS,
    SchemeConfig,
    canonical_scheme,
)
from .models import build_model

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_NUM_LIST = {"type": "array", "items": _NUM}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


MODEL_PARAMS = {
    "allen_cahn": _obj({"epsilon": _POS, "lam": _POS, "s": _NONNEG}, ["epsilon", "lam"]),
    "cahn_hilliard": _obj({"epsilon": _POS, "lam": _POS, "s": _NONNEG}, ["epsilon", "lam"]),
    "allen_cahn_split": _obj({"epsilon": _POS, "lam": _POS, "s": _NONNEG}, ["epsilon", "lam"]),
    "mbe": _obj({"epsilon2": _POS, "s": _NONNEG}, ["epsilon2"]),
    # M is accepted and recorded but has no role in the model equations.
    "pfc": _obj({"a0": _NUM, "b0": _NUM, "lam": _POS, "s": _NONNEG, "M": _NUM}, ["a0", "b0", "lam"]),
    "diblock": _obj(
        {"epsilon": _POS, "lam": _POS, "sigma": _NONNEG, "phi_hat0": _NUM, "s": _NONNEG},
        ["epsilon", "lam", "sigma"],
    ),
}

SCHEMA = _obj(
    {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "model": _obj(
            {"name": {"enum": sorted(MODEL_PARAMS)}, "params": {"type": "object"}}, ["name", "params"]
        ),
        "grid": _obj(
            {"Lx": _POS, "Ly": _POS, "Nx": {"type": "integer", "minimum": 4},
             "Ny": {"type": "integer", "minimum": 4}},
            ["Lx", "Ly", "Nx", "Ny"],
        ),
        "scheme": _obj(
            {
                "name": {"type": "string"},
                "dt": _POS,
                "alpha": _NONNEG,
                "C0": _NUM,
                "eta": {"type": "number", "minimum": 0, "maximum": 1},
                "bootstrap": {"enum": list(BOOTSTRAP_POLICIES)},
                "extrapolation": {"enum": list(EXTRAPOLATIONS)},
            },
            ["name", "dt"],
        ),
        "initial": _obj(
            {"kind": {"enum": list(INITIAL_KINDS)}, "params": {"type": "object"},
             "seed": {"type": ["integer", "null"]}},
            ["kind"],
        ),
        "output": _obj(
            {
                "dir": {"type": ["string", "null"]},
                "snapshot_times": _NUM_LIST,
                "decimation": {"type": "integer", "minimum": 1},
                "snapshot_csv": {"type": "boolean"},
            }
        ),
        "experiment": _obj(
            {
                "T_final": _NONNEG,
                "dt_list": _NUM_LIST,
                "alpha_list": _NUM_LIST,
                "stability_dt_list": _NUM_LIST,
                "schemes": {"type": "array", "items": {"type": "string"}},
                "ref_dt": {"type": ["number", "null"]},
                "ref_alpha": _NONNEG,
                "ref_scheme": {"type": ["string", "null"]},
                "order_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                "ratio_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
            },
            ["T_final"],
        ),
    },
    ["model", "grid", "scheme", "initial", "experiment"],
)

DEFAULTS = {
    "output": {"dir": None, "snapshot_times": [], "decimation": 1, "snapshot_csv": False},
    "scheme": {"alpha": 0.0, "C0": 1.0, "eta": 0.99, "bootstrap": "bdf1", "extrapolation": "midpoint"},
    "initial": {"params": {}, "seed": None},
    "experiment": {"ref_dt": None, "ref_alpha": 1e-5, "ref_scheme": None,
                   "order_range": [1.8, 2.2], "ratio_range": [1.8, 2.2]},
}


def _with_defaults(cfg):
    out = copy.deepcopy(cfg)
    for block, vals in DEFAULTS.items():
        out.setdefault(block, {})
        for k, v in vals.items():
            out[block].setdefault(k, copy.deepcopy(v))
    return out


def validate(cfg):
    """Validate a raw config dict and return it with defaults filled in."""
    try:
        jsonschema.validate(cfg, SCHEMA)
        cfg = _with_defaults(cfg)
        jsonschema.validate(cfg, SCHEMA)
        jsonschema.validate(cfg["model"]["params"], MODEL_PARAMS[cfg["model"]["name"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid config at {where}: {exc.message}") from None
    canonical_scheme(cfg["scheme"]["name"])
    for name in cfg["experiment"].get("schemes", []):
        canonical_scheme(name)
    for t in cfg["output"]["snapshot_times"]:
        if t < 0 or t > cfg["experiment"]["T_final"] + 1e-12:
            raise ConfigurationError(f"snapshot time {t} outside [0, T_final]")
    return cfg


def preset_names():
    folder = resources.files("csav") / "presets"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def load_preset(name):
    path = resources.files("csav") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {preset_names()}")
    return json.loads(path.read_text())


def load_file(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, overrides):
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key.path=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {item!r} descends into a non-object")
        node[keys[-1]] = _parse_value(raw)
    return cfg


def build_grid(cfg):
    g = cfg["grid"]
    return PeriodicGrid(g["Lx"], g["Ly"], g["Nx"], g["Ny"])


def build_initial_condition(cfg):
    i = cfg["initial"]
    return InitialCondition(i["kind"], dict(i["params"]), i["seed"])


def build_model_from(cfg, grid, init=None):
    params = dict(cfg["model"]["params"])
    params.pop("M", None)
    if cfg["model"]["name"] == "diblock" and "phi_hat0" not in params:
        field = (init or build_initial_condition(cfg)).build(grid)
        params["phi_hat0"] = float(field.mean())
    return build_model(cfg["model"]["name"], grid, **params)


def build_scheme(cfg, scheme=None, dt=None, alpha=None):
    s = cfg["scheme"]
    return SchemeConfig(
        scheme or s["name"],
        s["dt"] if dt is None else dt,
        s["alpha"] if alpha is None else alpha,
        C0=s["C0"], eta=s["eta"], bootstrap=s["bootstrap"], extrapolation=s["extrapolation"],
    )


def build_all(cfg):
    """``(grid, model, scheme_config, initial_condition)`` from a validated config."""
    grid = build_grid(cfg)
    init = build_initial_condition(cfg)
    model = build_model_from(cfg, grid, init)
    return grid, model, build_scheme(cfg), init
