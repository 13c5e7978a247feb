"""Strict JSON experiment configs.

Keys may be given flat (``"dt": 1e-3``) or in sections (``"scheme": {"dt": 1e-3}``).
Preset parameters may sit at the top level or under ``"params"``. Unknown keys
are rejected by name and validation errors carry the offending field path.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from .integrate import SCHEMES, time_grid
from .presets import PRESETS

EXPERIMENTS = (
    "simulate-linear",
    "simulate-nonlinear",
    "heating",
    "ehrenfest",
    "regularity",
    "verify-identities",
    "oracle-compare",
    "resolvent-convergence",
)

SUBCOMMANDS = {
    "simulate": ("simulate-linear", "simulate-nonlinear"),
    "heating": ("heating",),
    "ehrenfest": ("ehrenfest",),
    "regularity": ("regularity",),
    "verify": ("verify-identities",),
    "oracle-compare": ("oracle-compare",),
    "resolvent": ("resolvent-convergence",),
}

# Frozen Ehrenfest band constant c in 3*stderr + c*(dt + h^2); see the test suite.
EHRENFEST_C = 5.0


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "simulate-linear"
    preset: str | None = "position-measurement-e2"
    params: dict = field(default_factory=dict)
    coefficients: dict | None = None
    grid: dict = field(default_factory=dict)
    oracle_grid: bool = False
    dt: float = 1e-3
    scheme: str = "euler_maruyama"
    renormalize: bool = True
    abort_boundary_mass: float = 1e-6
    n_traj: int = 100
    seed: int = 0
    T: float = 1.0
    sample_every: int | None = None
    observables: list = field(default_factory=list)
    initial: dict | None = None
    potential: str = "harmonic"
    V0: float = 1.0
    well_alpha: float = 0.5
    n_values: list = field(default_factory=lambda: [1, 4, 16, 64, 256])
    tolerance: float | None = None
    ehrenfest_c: float = EHRENFEST_C
    oracle_dt: float | None = None
    chunk_size: int = 64

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    def to_dict(self) -> dict:
        return asdict(self)


# per-experiment defaults applied before user values
EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate-linear": {"observables": ["norm", "x", "x^2"]},
    "simulate-nonlinear": {"observables": ["x", "x^2", "p^2"]},
    "heating": {"preset": "paul-trap-e4", "scheme": "crank_nicolson", "T": 2.0, "n_traj": 2000, "tolerance": 0.05},
    "ehrenfest": {"T": 0.5, "dt": 1e-4, "n_traj": 1000, "observables": ["x", "x^2", "p^2"]},
    "regularity": {"n_traj": 200},
    "verify-identities": {"preset": "qbm-e1", "oracle_grid": True},
    "oracle-compare": {
        "oracle_grid": True, "dt": 1e-4, "T": 0.5, "n_traj": 10000,
        "abort_boundary_mass": 1e-2, "tolerance": 0.05,
    },
    "resolvent-convergence": {"grid": {"half_width": 8.0, "points_per_axis": 64}, "dt": 1e-4, "T": 0.5},
}

_GRID_KEYS = {"dimension": "dimension", "d": "dimension", "half_width": "half_width", "L": "half_width",
              "points_per_axis": "points_per_axis", "N": "points_per_axis", "boundary": "boundary"}
_SCHEME_KEYS = {"dt": "dt", "type": "scheme", "scheme": "scheme", "renormalize": "renormalize",
                "abort_boundary_mass": "abort_boundary_mass"}
_ENSEMBLE_KEYS = {"n_traj": "n_traj", "master_seed": "seed", "seed": "seed", "chunk_size": "chunk_size"}
_TOP = {f for f in ExperimentConfig.__dataclass_fields__} | {"kind"}
_INITIAL_KEYS = {"center", "width", "momentum"}
_COEFF_KEYS = {"alpha", "V", "A", "sigma", "eta", "d", "params", "label"}


def _num(path, v, kind=float, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(path, f"expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(path, "must be finite")
    if positive and v <= 0:
        raise ConfigError(path, f"must be positive, got {v}")
    if nonneg and v < 0:
        raise ConfigError(path, f"must be non-negative, got {v}")
    return v


def _section(path: str, v: Any, keys: dict, out: dict):
    if not isinstance(v, dict):
        raise ConfigError(path, "expected an object")
    for k, val in v.items():
        if k not in keys:
            raise ConfigError(f"{path}.{k}", f"unknown key {k!r}")
        out[keys[k]] = val


def build_config(raw: dict, experiment: str | None = None) -> ExperimentConfig:
    """Validate a decoded JSON object and apply defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    if "config" in raw and "manifest_version" in raw:  # a run manifest
        raw = raw["config"]
    raw = dict(raw)
    default = SUBCOMMANDS[experiment][0] if experiment in SUBCOMMANDS else experiment
    exp = raw.pop("experiment", None) or raw.pop("kind", None) or default or "simulate-linear"
    raw.pop("kind", None)
    if exp in SUBCOMMANDS:
        exp = SUBCOMMANDS[exp][0]
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {exp!r}; expected one of {', '.join(EXPERIMENTS)}")
    if experiment is not None and exp not in SUBCOMMANDS.get(experiment, (experiment,)):
        raise ConfigError("experiment", f"{exp!r} does not match subcommand {experiment!r}")

    vals: dict[str, Any] = {}
    grid: dict[str, Any] = {}
    defaults = dict(EXPERIMENT_DEFAULTS.get(exp, {}))
    grid.update(defaults.pop("grid", {}))
    vals.update(defaults)

    preset_name = raw.get("preset", vals.get("preset", ExperimentConfig.preset))
    if "coefficients" in raw and "preset" not in raw:
        preset_name = None
    if preset_name is not None and preset_name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset_name!r}; known: {', '.join(PRESETS)}")
    pnames = set(PRESETS[preset_name].defaults) if preset_name else set()
    params: dict[str, Any] = {}

    for k, v in raw.items():
        if k == "grid":
            _section("grid", v, _GRID_KEYS, grid)
        elif k in _GRID_KEYS:
            grid[_GRID_KEYS[k]] = v
        elif k == "scheme" and isinstance(v, dict):
            _section("scheme", v, _SCHEME_KEYS, vals)
        elif k == "ensemble":
            _section("ensemble", v, _ENSEMBLE_KEYS, vals)
        elif k in ("master_seed",):
            vals["seed"] = v
        elif k == "params":
            if not isinstance(v, dict):
                raise ConfigError("params", "expected an object")
            for pk, pv in v.items():
                if pk not in pnames:
                    raise ConfigError(f"params.{pk}", f"unknown parameter {pk!r} for preset {preset_name!r}")
                params[pk] = _num(f"params.{pk}", pv)
        elif k in pnames and (k not in _TOP or exp != "heating"):
            # heating reads V0/well_alpha as its own switches; elsewhere they are preset parameters
            params[k] = _num(k, v)
        elif k in _TOP and k not in ("grid", "params"):
            vals[k] = v
        else:
            raise ConfigError(k, f"unknown key {k!r}")
    vals["preset"] = preset_name
    vals["params"] = params
    vals["experiment"] = exp
    vals["grid"] = _check_grid(grid)
    cfg = ExperimentConfig(**vals)
    return _validate(cfg)


def _check_grid(grid: dict) -> dict:
    out = {}
    for k, v in grid.items():
        if k == "boundary":
            if v not in ("dirichlet", "periodic"):
                raise ConfigError("grid.boundary", f"must be 'dirichlet' or 'periodic', got {v!r}")
            out[k] = v
        elif k in ("dimension", "points_per_axis"):
            out[k] = _num(f"grid.{k}", v, int, positive=True)
        else:
            out[k] = _num(f"grid.{k}", v, positive=True)
    if out.get("dimension", 1) not in (1, 2):
        raise ConfigError("grid.dimension", f"must be 1 or 2, got {out['dimension']}")
    n = out.get("points_per_axis", 8)
    if n < 8 or n % 2:
        raise ConfigError("grid.points_per_axis", f"must be even and >= 8, got {n}")
    return out


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    dt = _num("scheme.dt", cfg.dt, positive=True)
    T = _num("T", cfg.T, positive=True)
    if cfg.scheme not in SCHEMES:
        raise ConfigError("scheme.type", f"unknown scheme {cfg.scheme!r}; expected one of {', '.join(SCHEMES)}")
    if not isinstance(cfg.renormalize, bool):
        raise ConfigError("scheme.renormalize", "expected true or false")
    n_traj = _num("ensemble.n_traj", cfg.n_traj, int)
    if n_traj < 1:
        raise ConfigError("ensemble.n_traj", f"must be >= 1, got {n_traj}")
    seed = _num("ensemble.seed", cfg.seed, int, nonneg=True)
    if seed >= 2**64:
        raise ConfigError("ensemble.seed", "must fit in 64 unsigned bits")
    n_steps = round(T / dt)
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-12 * max(1.0, T):
        raise ConfigError("scheme.dt", f"dt={dt} does not divide T={T}")
    se = cfg.sample_every
    if se is None:
        se = max(1, n_steps // 20) if n_steps % 20 == 0 or n_steps < 20 else 1
        if n_steps % se:
            se = 1
    se = _num("sample_every", se, int, positive=True)
    try:
        time_grid(T, dt, se)
    except ValueError as exc:
        raise ConfigError("sample_every", str(exc)) from None
    if not isinstance(cfg.observables, list) or not all(isinstance(o, str) for o in cfg.observables):
        raise ConfigError("observables", "expected a list of strings")
    if cfg.initial is not None:
        if not isinstance(cfg.initial, dict):
            raise ConfigError("initial", "expected an object")
        for k in cfg.initial:
            if k not in _INITIAL_KEYS:
                raise ConfigError(f"initial.{k}", f"unknown key {k!r}")
    if cfg.coefficients is not None:
        if not isinstance(cfg.coefficients, dict):
            raise ConfigError("coefficients", "expected an object")
        for k in cfg.coefficients:
            if k not in _COEFF_KEYS:
                raise ConfigError(f"coefficients.{k}", f"unknown key {k!r}")
        if "alpha" not in cfg.coefficients:
            raise ConfigError("coefficients.alpha", "required")
    if cfg.preset is None and cfg.coefficients is None:
        raise ConfigError("preset", "either a preset or inline coefficients are required")
    if cfg.potential not in ("harmonic", "gaussian-well"):
        raise ConfigError("potential", f"unknown potential {cfg.potential!r}")
    nv = cfg.n_values
    if not isinstance(nv, list) or not nv or not all(isinstance(v, (int, float)) and v > 0 for v in nv):
        raise ConfigError("n_values", "expected a non-empty list of positive numbers")
    if cfg.tolerance is not None:
        _num("tolerance", cfg.tolerance, positive=True)
    if cfg.oracle_dt is not None:
        _num("oracle_dt", cfg.oracle_dt, positive=True)
    chunk = _num("ensemble.chunk_size", cfg.chunk_size, int, positive=True)
    return replace(
        cfg, dt=dt, T=T, n_traj=n_traj, seed=seed, sample_every=se, chunk_size=chunk,
        abort_boundary_mass=_num("scheme.abort_boundary_mass", cfg.abort_boundary_mass, positive=True),
        V0=_num("V0", cfg.V0), well_alpha=_num("well_alpha", cfg.well_alpha, positive=True),
        ehrenfest_c=_num("ehrenfest_c", cfg.ehrenfest_c, nonneg=True),
        oracle_grid=bool(cfg.oracle_grid),
    )


def parse_config(path: str | Path, experiment: str | None = None) -> ExperimentConfig:
    """Read and validate a JSON config file (or a run manifest)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError("", f"config file {str(p)!r} not found")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed JSON in {p}: {exc}") from None
    return build_config(raw, experiment)
