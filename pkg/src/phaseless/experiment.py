"""Experiment configuration and the simulate / reconstruct / evaluate pipeline.

Seeds
-----
A single integer ``seed`` drives all randomness.  Independent streams are
derived as ``derive_seed(seed, stream)`` with stream 0 for Poisson noise and
stream 1 for background perturbations; repeat ``r`` of a table cell uses
``seed + r`` as its base seed.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__
from .forward import ForwardSolverConfig
from .geometry import build_ewald_geometry, build_minimal_geometry, build_spatial_grid, fourier_setup
from .inversion import (DEFAULT_DELTA_REL, CGOptions, default_cutoffs, default_iterations,
                        phaseless_iterative_inv, relative_l2_error, relative_linf_error)
from .measurement import PhaselessDataset, apply_poisson, exact_dataset, noise_level_estimate
from .newtoncg import NewtonCgConfig, newton_cg_refine
from .potentials import (BackgroundSet, GridFunction, Perturbation, corner_rectangles,
                         make_type_a, make_type_b, nonsmooth_potential, peaks_potential,
                         perturb_background, rectangle_bump, wendland_bump)

METHODS = ("born", "iterative", "iterative+newtoncg")
NOISE_STREAM = 0
PERTURBATION_STREAM = 1


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

_profile = {
    "type": "object",
    "additionalProperties": False,
    "required": ["shape"],
    "properties": {
        "shape": {"enum": ["rectangle", "wendland"]},
        "lo": _vec2, "hi": _vec2, "center": _vec2,
        "h_support": {"type": "number", "exclusiveMinimum": 0},
        "k_order": {"enum": [0, 1]},
        "amplitude": _num,
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["E"],
    "properties": {
        "E": {"type": "number", "exclusiveMinimum": 0},
        "c": {"type": "number", "exclusiveMinimum": 0},
        "geometry": {"enum": ["ewald", "minimal"]},
        "M1": {"type": "integer", "minimum": 1},
        "M2": {"type": "integer", "minimum": 1},
        "potential": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["peaks", "nonsmooth", "file"]},
                "norm_inf": {"type": "number", "exclusiveMinimum": 0},
                "amplitude": _num,
                "path": {"type": "string"},
            },
        },
        "backgrounds": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["corner_rectangles", "typeA", "typeB"]},
                "amplitude": _num,
                "side": {"type": "number", "exclusiveMinimum": 0},
                "inset": {"type": "number", "minimum": 0},
                "corners": {"type": "array", "items": _vec2, "minItems": 2},
                "profile": _profile,
                "shifts": {"type": "array", "items": _vec2, "minItems": 2},
            },
        },
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "amplitude_scale": _num, "support_scale": {"type": "number", "exclusiveMinimum": 0},
                "translation": _vec2,
                "gaussian_noise_sd": {"type": "number", "minimum": 0},
                "gaussian_blur_sd": {"type": "number", "minimum": 0},
            },
        },
        "Np": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "delta": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "delta_rel": {"type": "number", "exclusiveMinimum": 0},
        "J": {"type": ["integer", "null"], "minimum": 1},
        "cutoffs": {"type": ["array", "null"], "items": {"type": "number", "exclusiveMinimum": 0}},
        "pair_rule": {"enum": ["stable", "background"]},
        "method": {"enum": list(METHODS)},
        "forward": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pad_factor": _num, "ls_tol": _num,
                "ls_max_iter": {"type": "integer"}, "restart": {"type": "integer"},
            },
        },
        "cg": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": {"type": "number", "exclusiveMinimum": 0},
                           "max_iter": {"type": "integer", "minimum": 1}},
        },
        "newtoncg": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau_dp": _num, "max_outer": {"type": "integer"}, "max_inner": {"type": "integer"},
                "inner_tol": _num, "h1_weight": _num, "weighting": {"enum": ["none", "exposure"]},
                "max_backtrack": {"type": "integer", "minimum": 0},
            },
        },
        "table": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "energies": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "Np": {"type": "array", "items": {"type": ["number", "null"]}},
                "methods": {"type": "array", "items": {"enum": list(METHODS)}},
                "repeats": {"type": "integer", "minimum": 1},
            },
        },
        "crosssection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"axis": {"enum": ["x1", "x2"]}, "offset": _num},
        },
    },
}

DEFAULTS = {
    "c": 5.0,
    "geometry": "ewald",
    "M1": 32,
    "M2": 256,
    "potential": {"kind": "peaks", "norm_inf": 37.0},
    "backgrounds": {"kind": "corner_rectangles", "amplitude": 20.0, "side": 0.3, "inset": 0.04},
    "perturbation": None,
    "Np": None,
    "seed": 0,
    "delta": None,
    "delta_rel": DEFAULT_DELTA_REL,
    "J": None,
    "cutoffs": None,
    "pair_rule": "stable",
    "method": "iterative",
    "forward": {},
    "cg": {},
    "newtoncg": {},
    "table": {"energies": [100.0], "Np": [1e9], "methods": ["born", "iterative"], "repeats": 1},
    "crosssection": {"axis": "x1", "offset": 0.0},
}


def _line_of(text: str, key) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def validate(raw: dict, text: str | None = None) -> dict:
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.path))
    if errors:
        msgs = []
        for e in errors:
            key = e.path[-1] if e.path else None
            if key is None and e.validator == "additionalProperties":
                extra = [k for k in e.instance if k not in SCHEMA["properties"]]
                key = extra[0] if extra else None
            line = _line_of(text, key) if text and isinstance(key, str) else None
            where = f"line {line}: " if line else ""
            path = "/".join(str(p) for p in e.path) or "<root>"
            msgs.append(f"{where}{path}: {e.message}")
        raise ConfigError("invalid configuration\n  " + "\n  ".join(msgs))
    cfg = copy.deepcopy(DEFAULTS)
    for k, val in raw.items():
        base = cfg.get(k)
        # sections are merged key by key unless they switch to another kind
        if isinstance(val, dict) and isinstance(base, dict) \
                and val.get("kind", base.get("kind")) == base.get("kind"):
            cfg[k] = {**base, **val}
        else:
            cfg[k] = val
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"line {err.lineno}: {err.msg}") from err
    if not isinstance(raw, dict):
        raise ConfigError("line 1: configuration must be a JSON object")
    return validate(raw, text)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def derive_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


@dataclass(eq=False)
class Problem:
    cfg: dict
    grid: object
    geometry: object
    fourier: object
    truth: GridFunction
    backgrounds: BackgroundSet
    simulation_backgrounds: BackgroundSet

    @property
    def forward_config(self) -> ForwardSolverConfig:
        return ForwardSolverConfig(**self.cfg["forward"])


def _profile(grid, spec) -> GridFunction:
    amp = spec.get("amplitude", 1.0)
    if spec["shape"] == "rectangle":
        if "lo" not in spec or "hi" not in spec:
            raise ConfigError("rectangle profile needs lo and hi")
        return rectangle_bump(grid, spec["lo"], spec["hi"], amp)
    return wendland_bump(grid, spec.get("center", (0.0, 0.0)), spec.get("h_support", 0.2),
                         spec.get("k_order", 1), amp)


def build_backgrounds(grid, spec) -> BackgroundSet:
    kind = spec["kind"]
    if kind == "corner_rectangles":
        kw = {k: spec[k] for k in ("side", "inset") if k in spec}
        if "corners" in spec:
            kw["corners"] = tuple(tuple(c) for c in spec["corners"])
        return corner_rectangles(grid, spec.get("amplitude", 20.0), **kw)
    if "profile" not in spec:
        raise ConfigError(f"{kind} backgrounds need a profile")
    profile = _profile(grid, spec["profile"])
    if kind == "typeA":
        return make_type_a(profile)
    if "shifts" not in spec:
        raise ConfigError("typeB backgrounds need shifts")
    return make_type_b(profile, spec["shifts"])


def build_potential(grid, spec, E) -> GridFunction:
    kind = spec["kind"]
    if kind == "peaks":
        return peaks_potential(grid, norm_inf=spec.get("norm_inf", 37.0))
    if kind == "nonsmooth":
        return nonsmooth_potential(grid, spec.get("amplitude", 1.0))
    if "path" not in spec:
        raise ConfigError("file potential needs a path")
    v = GridFunction.read_csv(spec["path"])
    if v.grid.N != grid.N:
        raise ConfigError(f"potential file has N={v.grid.N}, config implies N={grid.N}")
    return v


def build_problem(cfg: dict, E: float | None = None) -> Problem:
    E = float(cfg["E"] if E is None else E)
    try:
        grid = build_spatial_grid(E, cfg["c"])
        if cfg["geometry"] == "ewald":
            geom = build_ewald_geometry(E, cfg["M1"], cfg["M2"])
        else:
            geom = build_minimal_geometry(E)
        fourier = fourier_setup(grid, geom)
        truth = build_potential(grid, cfg["potential"], E)
        bg = build_backgrounds(grid, cfg["backgrounds"])
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from err
    sim_bg = bg
    if cfg.get("perturbation"):
        p = cfg["perturbation"]
        seed = derive_seed(cfg["seed"], PERTURBATION_STREAM)
        spec = Perturbation(p.get("amplitude_scale", 1.0), p.get("support_scale", 1.0),
                            tuple(p.get("translation", (0.0, 0.0))),
                            p.get("gaussian_noise_sd", 0.0), p.get("gaussian_blur_sd", 0.0))
        members = [perturb_background(w, Perturbation(**{**spec.__dict__, "seed": seed + i}))
                   for i, w in enumerate(bg.members)]
        sim_bg = BackgroundSet("custom", members)
    return Problem(cfg, grid, geom, fourier, truth, bg, sim_bg)


def simulate(problem: Problem, Np=None, seed: int | None = None):
    """Exact dataset and, if ``Np`` is set, its noisy version."""
    cfg = problem.cfg
    seed = cfg["seed"] if seed is None else seed
    exact = exact_dataset(problem.truth, problem.simulation_backgrounds, problem.geometry,
                          problem.forward_config)
    noisy = None
    if Np is not None:
        noisy = apply_poisson(exact, Np, seed=derive_seed(seed, NOISE_STREAM))
        noisy.seed = seed
    return exact, noisy


def cutoffs_for(cfg: dict, E: float, Np, method: str) -> np.ndarray:
    if cfg.get("cutoffs"):
        cut = np.asarray(cfg["cutoffs"], dtype=float)
    else:
        J = cfg["J"] or default_iterations(Np)
        cut = default_cutoffs(E, J)
    return cut[:1] if method == "born" else cut


def reconstruct(problem: Problem, data: PhaselessDataset, method: str | None = None,
                with_truth: bool = True):
    """Run the selected pipeline; returns ``(v_star, diagnostics dict)``."""
    cfg = problem.cfg
    method = method or cfg["method"]
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    E = problem.geometry.E
    truth = problem.truth if with_truth else None
    cut = cutoffs_for(cfg, E, data.Np, method)
    v_star, diag = phaseless_iterative_inv(
        data, problem.backgrounds, problem.grid, problem.fourier, cut, delta=cfg["delta"],
        fwd=problem.forward_config, cg=CGOptions(**cfg["cg"]), truth=truth,
        pair_rule=cfg["pair_rule"], delta_rel=cfg["delta_rel"])
    out = {"method": method, **diag.to_json()}
    if method == "iterative+newtoncg":
        ncfg = NewtonCgConfig(**cfg["newtoncg"])
        noise = 0.0
        if data.exposures is not None:
            noise = noise_level_estimate(data, weighted=ncfg.weighting == "exposure")
        res = newton_cg_refine(v_star, data, problem.backgrounds, noise, ncfg,
                               problem.forward_config, truth)
        v_star = res.v
        out["newtoncg"] = {"log": res.log, "stopped_by": res.stopped_by, "noise_level": noise}
    return v_star, out


def evaluate(v_star: GridFunction, truth: GridFunction, diagnostics: dict | None = None) -> dict:
    metrics = {"relative_linf": relative_linf_error(v_star, truth),
               "relative_l2": relative_l2_error(v_star, truth)}
    if diagnostics:
        metrics["per_iteration_linf"] = diagnostics.get("errors", [])
    return metrics


def run_table(cfg: dict, progress=None) -> list[dict]:
    """Error table over energies x particle counts x methods, averaged over repeats."""
    tab = cfg["table"]
    rows = []
    for E in tab["energies"]:
        problem = build_problem(cfg, E)
        exact = None
        for Np in tab["Np"]:
            for method in tab["methods"]:
                errs, seeds = [], []
                for r in range(tab["repeats"]):
                    seed = cfg["seed"] + r
                    if exact is None:
                        exact, _ = simulate(problem)
                    data = exact if Np is None else apply_poisson(
                        exact, Np, seed=derive_seed(seed, NOISE_STREAM))
                    v_star, _ = reconstruct(problem, data, method)
                    errs.append(relative_linf_error(v_star, problem.truth))
                    seeds.append(seed)
                    if progress:
                        progress(E, Np, method, seed, errs[-1])
                rows.append({"E": E, "Np": Np, "method": method,
                             "mean_linf_percent": 100 * float(np.mean(errs)),
                             "errors_percent": [100 * e for e in errs], "seeds": seeds})
    return rows


def cross_section(truth: GridFunction | None, v_star: GridFunction | None, axis: str = "x1",
                  offset: float = 0.0) -> np.ndarray:
    """Samples along the grid line closest to ``x2 = offset`` (axis ``x1``) or
    ``x1 = offset`` (axis ``x2``).  Columns: coordinate, truth, Re v*, Im v*."""
    ref = truth if truth is not None else v_star
    if ref is None:
        raise ValueError("need a truth or a reconstruction")
    grid = ref.grid
    j = int(np.argmin(np.abs(grid.coords - offset)))
    nan = np.full(grid.N, math.nan)

    def line(f):
        if f is None:
            return nan
        return f.values[:, j] if axis == "x1" else f.values[j, :]

    t = line(truth).real if truth is not None else nan
    r = line(v_star)
    re, im = (r.real, r.imag) if v_star is not None else (nan, nan)
    return np.column_stack([grid.coords, t, re, im])


def provenance(cfg: dict) -> dict:
    import scipy

    from . import kernels

    return {"config_sha256": config_hash(cfg), "phaseless": __version__,
            "numpy": np.__version__, "scipy": scipy.__version__, "kernels": kernels.BACKEND}
