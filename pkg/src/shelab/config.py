"""YAML run configuration: strict validation, defaults, and a stable digest.

A config has the blocks ``grid``, ``model``, ``initial``, ``rho``, ``scheme``
and ``experiment`` plus top-level ``seed``, ``replicas`` and ``output_dir``.
Validation collects every problem before reporting, with dotted key paths.
"""

from dataclasses import dataclass, field
import copy
import hashlib
import json
import math

import yaml

from ._validation import DomainError

__all__ = ["ConfigError", "RunConfig", "parse_config", "config_from_mapping", "EXPERIMENTS",
           "canonical_digest"]

EXPERIMENTS = ("simulate", "moments", "compare", "smallball", "holder", "converge-initial",
               "converge-noise", "weak-trace", "kernels-check")


class ConfigError(DomainError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


# A field spec is (type, default); REQUIRED marks a key without default.
REQUIRED = object()
_num = (int, float)


def _opt(kind):
    return (kind, type(None))


_MEASURE = {"atoms": (list, []), "density": (_opt(dict), None)}
_ATOM = {"x": ((int, float, list), REQUIRED), "mass": (_num, 1.0)}
_DENSITY = {"kind": (str, "constant"), "c": (_num, 1.0), "lo": (_opt((int, float, list)), None),
            "hi": (_opt((int, float, list)), None), "path": (_opt(str), None)}

_BLOCKS = {
    "grid": {"d": (int, 1), "L": (_num, REQUIRED), "N": (int, REQUIRED)},
    "model": {"variant": (str, REQUIRED), "beta": (_opt(_num), None), "ell": (_opt(_num), None),
              "table_path": (_opt(str), None)},
    "initial": _MEASURE,
    "rho": {"kind": (str, "linear"), "lam": (_num, 1.0), "a": (_num, 0.0), "cap": (_opt(_num), None)},
    "scheme": {"name": (str, "exp_euler"), "dt": (_num, 1e-3), "T": (_num, 1.0),
               "eps": (_opt(_num), None), "blowup_guard": (_num, 1e12), "n_batches": (int, 32)},
}

_WINDOW = _opt(list)
_PARAMS = {
    "simulate": {"snapshot_times": (_opt(list), None), "x": (_num, 0.0)},
    "moments": {"mode": (str, "bound"), "p_list": (list, [2, 4]), "times": (list, [0.25, 0.5, 1.0]),
                "x": (_num, 0.0), "average_nodes": (bool, False), "t": (_num, 1.0),
                "refine": (bool, True), "refine_replicas": (int, 2000), "tolerance": (_num, 0.10)},
    "compare": {"upper": (dict, REQUIRED), "dt_ladder": (list, [4e-3, 2e-3, 1e-3]),
                "tol_num": (_num, 1e-12), "final_max": (_num, 1e-3), "strong_window": (_WINDOW, None),
                "positive_fraction": (_num, 0.99), "count_times": (list, [0.2, 0.4, 0.6, 0.8, 1.0])},
    "smallball": {"window": (list, [[0.5, 1.0], [-1.0, 1.0]]), "eps_list": (_opt(list), None),
                  "positive_fraction": (_num, 0.99), "min_r2": (_num, 0.9),
                  "tail_probability": (_num, 0.5)},
    "holder": {"direction": (str, "space"), "t_eval": (_opt(_num), None), "lags": (list, [4, 8, 16, 32]),
               "exponent_range": (_WINDOW, None), "min_r2": (_num, 0.95)},
    "converge-initial": {"eps_ladder": (list, [1.0, 0.3, 0.1, 0.03]), "t": (_opt(_num), None),
                         "x": (_num, 0.0)},
    "converge-noise": {"eps_cells": (list, [8, 4, 2]), "t": (_opt(_num), None)},
    "weak-trace": {"t_ladder": (list, [0.2, 0.1, 0.05, 0.02]), "tolerance": (_num, 0.1),
                   "phi_center": (_num, 0.0), "phi_width": (_num, 1.0)},
    "kernels-check": {},
}

_TOP = {"seed": (int, 0), "replicas": (int, 1000), "output_dir": (str, "results")}


def _type_ok(value, kind):
    # bool is an int subclass; never accept it for numbers
    kinds = kind if isinstance(kind, tuple) else (kind,)
    if isinstance(value, bool) and bool not in kinds:
        return False
    return isinstance(value, kinds)


def _type_name(kind):
    kinds = kind if isinstance(kind, tuple) else (kind,)
    return " or ".join(sorted({k.__name__ if k is not type(None) else "null" for k in kinds}))


def _numeric(kind):
    kinds = kind if isinstance(kind, tuple) else (kind,)
    return float in kinds and list not in kinds


def _check_block(data, schema, path, errors):
    where = lambda key: f"{path}.{key}" if path else key
    out = {}
    if not isinstance(data, dict):
        errors.append(f"{path}: expected a mapping, got {type(data).__name__}")
        return out
    for key in data:
        if key not in schema:
            errors.append(f"{where(key)}: unknown key")
    for key, (kind, default) in schema.items():
        if key not in data:
            if default is REQUIRED:
                errors.append(f"{where(key)}: required key missing")
            else:
                out[key] = copy.deepcopy(default)
            continue
        val = data[key]
        if _numeric(kind) and isinstance(val, str):
            # YAML 1.1 reads 1e-3 (no dot) as a string
            try:
                val = float(val)
            except ValueError:
                pass
        if not _type_ok(val, kind):
            errors.append(f"{where(key)}: expected {_type_name(kind)}, got {type(val).__name__}")
            continue
        if _numeric(kind) and val is not None:
            val = float(val)
            if not math.isfinite(val) and key != "blowup_guard":
                errors.append(f"{where(key)}: must be finite")
                continue
        out[key] = val
    return out


def _check_measure(data, path, errors):
    m = _check_block(data, _MEASURE, path, errors)
    atoms = []
    for i, a in enumerate(m.get("atoms", []) or []):
        atoms.append(_check_block(a, _ATOM, f"{path}.atoms[{i}]", errors))
    m["atoms"] = atoms
    if m.get("density") is not None:
        m["density"] = _check_block(m["density"], _DENSITY, f"{path}.density", errors)
        kind = m["density"].get("kind")
        if kind not in ("constant", "box", "table"):
            errors.append(f"{path}.density.kind: unknown kind {kind!r}")
        if kind == "box" and (m["density"].get("lo") is None or m["density"].get("hi") is None):
            errors.append(f"{path}.density: box density needs lo and hi")
        if kind == "table" and m["density"].get("path") is None:
            errors.append(f"{path}.density: table density needs path")
    if not atoms and m.get("density") is None:
        errors.append(f"{path}: measure has neither atoms nor density")
    return m


def _cross_checks(cfg, errors):
    g, model, sch = cfg.get("grid"), cfg.get("model"), cfg.get("scheme")
    if g:
        N, d = g.get("N"), g.get("d")
        if isinstance(N, int) and (N < 8 or N & (N - 1)):
            errors.append("grid.N: must be a power of two >= 8")
        if d not in (1, 2):
            errors.append("grid.d: must be 1 or 2")
        if isinstance(g.get("L"), float) and g["L"] <= 0:
            errors.append("grid.L: must be > 0")
    if model:
        v = model.get("variant")
        if v not in ("white", "riesz", "gaussian", "tabulated"):
            errors.append(f"model.variant: unknown variant {v!r}")
        if v == "white" and g and g.get("d") != 1:
            errors.append("model.variant: white noise requires grid.d = 1")
        if v == "riesz":
            b = model.get("beta")
            d = g.get("d", 1) if g else 1
            if b is None:
                errors.append("model.beta: required for the riesz variant")
            elif not 0 < b < min(2, d):
                errors.append(f"model.beta: must lie in (0, {min(2, d)})")
        if v == "tabulated" and model.get("table_path") is None:
            errors.append("model.table_path: required for the tabulated variant")
    if sch:
        if sch.get("name") not in ("exp_euler", "jump"):
            errors.append(f"scheme.name: unknown scheme {sch.get('name')!r}")
        for k in ("dt", "T"):
            if isinstance(sch.get(k), float) and sch[k] <= 0:
                errors.append(f"scheme.{k}: must be > 0")
        if sch.get("name") == "jump":
            if sch.get("eps") is None:
                errors.append("scheme.eps: required for the jump scheme")
            elif isinstance(sch.get("dt"), float) and sch["dt"] > sch["eps"]:
                errors.append("scheme.dt: the jump scheme needs dt <= eps")
    rho = cfg.get("rho")
    if rho and rho.get("kind") not in ("linear", "affine", "clipped", "sine"):
        errors.append(f"rho.kind: unknown kind {rho.get('kind')!r}")
    if rho and rho.get("kind") != "affine" and rho.get("a", 0.0) != 0.0:
        errors.append("rho.a: only the affine kind has an intercept")
    if cfg.get("replicas", 1) < 1:
        errors.append("replicas: must be >= 1")
    if cfg.get("seed", 0) < 0:
        errors.append("seed: must be >= 0")


@dataclass
class RunConfig:
    """Validated configuration with every default filled in."""

    experiment: str
    params: dict
    seed: int = 0
    replicas: int = 1000
    output_dir: str = "results"
    grid: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    rho: dict = field(default_factory=dict)
    scheme: dict = field(default_factory=dict)

    def semantic(self):
        """The mapping the digest is taken over (no output location)."""
        return {"experiment": {"name": self.experiment, "params": self.params}, "seed": self.seed,
                "replicas": self.replicas, "grid": self.grid, "model": self.model,
                "initial": self.initial, "rho": self.rho, "scheme": self.scheme}

    @property
    def digest(self):
        return canonical_digest(self.semantic())

    def with_overrides(self, seed=None, replicas=None, output_dir=None):
        out = copy.deepcopy(self)
        if seed is not None:
            if seed < 0:
                raise ConfigError(["seed: must be >= 0"])
            out.seed = int(seed)
        if replicas is not None:
            if replicas < 1:
                raise ConfigError(["replicas: must be >= 1"])
            out.replicas = int(replicas)
        if output_dir is not None:
            out.output_dir = str(output_dir)
        return out


def canonical_digest(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()


def config_from_mapping(data):
    """Validate a parsed mapping; raises :class:`ConfigError` listing every problem."""
    errors = []
    if not isinstance(data, dict):
        raise ConfigError([f"top level: expected a mapping, got {type(data).__name__}"])
    known = set(_BLOCKS) | set(_TOP) | {"experiment"}
    for key in data:
        if key not in known:
            errors.append(f"{key}: unknown key")
    exp = data.get("experiment")
    name, params = None, {}
    if exp is None:
        errors.append("experiment: required block missing")
    elif not isinstance(exp, dict):
        errors.append("experiment: expected a mapping")
    else:
        for key in exp:
            if key not in ("name", "params"):
                errors.append(f"experiment.{key}: unknown key")
        name = exp.get("name")
        if name not in EXPERIMENTS:
            errors.append(f"experiment.name: expected one of {', '.join(EXPERIMENTS)}, got {name!r}")
            name = None
        else:
            params = _check_block(exp.get("params") or {}, _PARAMS[name], "experiment.params", errors)
            if name == "compare" and isinstance(params.get("upper"), dict):
                params["upper"] = _check_measure(params["upper"], "experiment.params.upper", errors)
            if name == "holder" and params.get("direction") not in ("space", "time"):
                errors.append("experiment.params.direction: must be 'space' or 'time'")
            if name == "moments" and params.get("mode") not in ("bound", "oracle"):
                errors.append("experiment.params.mode: must be 'bound' or 'oracle'")
    cfg = _check_block({k: data[k] for k in _TOP if k in data}, _TOP, "", errors)
    needs_blocks = name not in (None, "kernels-check")
    for block, schema in _BLOCKS.items():
        if block in data:
            if block == "initial":
                cfg[block] = _check_measure(data[block], block, errors)
            else:
                cfg[block] = _check_block(data[block], schema, block, errors)
        elif needs_blocks and block in ("grid", "model"):
            errors.append(f"{block}: required block missing")
        elif needs_blocks and block == "initial":
            cfg[block] = {"atoms": [], "density": {"kind": "constant", "c": 1.0, "lo": None,
                                                   "hi": None, "path": None}}
        elif needs_blocks:
            cfg[block] = _check_block({}, schema, block, errors)
    _cross_checks(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return RunConfig(name, params, cfg["seed"], cfg["replicas"], cfg["output_dir"],
                     cfg.get("grid", {}), cfg.get("model", {}), cfg.get("initial", {}),
                     cfg.get("rho", {}), cfg.get("scheme", {}))


def parse_config(path):
    """Read and validate a YAML config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from exc
    return config_from_mapping(data if data is not None else {})
