"""Named model presets.

=========================  ==========================================================
name                       model
=========================  ==========================================================
qbm-e1                     particle in a harmonic well coupled to an oscillator bath:
                           ``A = c x``, ``sigma = b``, ``eta = a x``
position-measurement-e2    continuous position measurement: ``eta = eta x``
laser-e3                   soft-core atom in a pulsed linearly polarized field,
                           ``eta = -i eta x``
paul-trap-e4               fluctuating harmonic trap, ``eta = -i eta x``
gaussian-well-e5           moving Gaussian well with ``sigma = b``, ``eta = a x``
=========================  ==========================================================

All presets are one-dimensional with ``alpha = 1/(2M)`` (``1/2`` for laser-e3).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import sympy

from .fields import X_SYMS, T_SYM, ExprField, gaussian_well, laser_field
from .grid import GridSpec, WaveFunction, make_gaussian
from .model import CoefficientSet

x, t = X_SYMS[0], T_SYM


@dataclass(frozen=True)
class Preset:
    name: str
    defaults: Mapping[str, float]
    build: Callable[[dict], CoefficientSet]
    initial: Callable[[dict], dict]
    grid: Mapping[str, float] = field(default_factory=lambda: {"half_width": 10.0, "points_per_axis": 256})
    oracle_grid: Mapping[str, float] = field(default_factory=lambda: {"half_width": 4.0, "points_per_axis": 16})

    def params(self, overrides: Mapping[str, float] | None = None) -> dict:
        p = dict(self.defaults)
        for k, v in (overrides or {}).items():
            if k not in p:
                raise ValueError(f"preset {self.name!r} has no parameter {k!r} (known: {', '.join(p)})")
            p[k] = v
        return p

    def coefficients(self, **overrides) -> CoefficientSet:
        return self.build(self.params(overrides))

    def make_grid(self, oracle: bool = False, **overrides) -> GridSpec:
        g = dict(self.oracle_grid if oracle else self.grid)
        g.update(overrides)
        return GridSpec(dimension=1, **g)

    def initial_state(self, grid: GridSpec, **overrides) -> WaveFunction:
        return make_gaussian(grid, **self.initial(self.params(overrides)))


def _ground_width(M: float, omega: float) -> float:
    """Position spread of the harmonic ground state ``|psi|^2``."""
    return float(np.sqrt(1.0 / (2.0 * M * abs(omega))))


def _harmonic(M, omega):
    return sympy.Rational(1, 2) * M * omega**2 * x**2


def qbm(p):
    return CoefficientSet.create(
        1.0 / (2 * p["M"]),
        V=ExprField(_harmonic(p["M"], p["omega"]), "V"),
        A=[ExprField(p["c"] * x, "A0")],
        sigma=[[ExprField(p["b"], "sigma00")]],
        eta=[ExprField(p["a"] * x, "eta0")],
        label="qbm-e1",
    )


def position_measurement(p):
    return CoefficientSet.create(
        1.0 / (2 * p["M"]),
        V=ExprField(_harmonic(p["M"], p["omega"]), "V"),
        eta=[ExprField(p["eta"] * x, "eta0")],
        label="position-measurement-e2",
    )


def laser(p):
    V = -1 / sympy.sqrt(x**2 + p["eps"] ** 2) + x * laser_field(t, p["F0"], p["beta"], p["delta"], p["tau"], p["pulse_T"])
    return CoefficientSet.create(
        0.5,
        V=ExprField(V, "V"),
        eta=[ExprField(-sympy.I * p["eta"] * x, "eta0")],
        label="laser-e3",
    )


def paul_trap(p, potential: str = "harmonic", V0: float = 1.0, well_alpha: float = 0.5):
    """Fluctuating trap; ``potential="gaussian-well"`` swaps in a bounded well."""
    if potential == "harmonic":
        V = _harmonic(p["M"], p["omega"])
    elif potential == "gaussian-well":
        V = gaussian_well(x, V0, well_alpha, 0)
    else:
        raise ValueError(f"unknown potential {potential!r}")
    return CoefficientSet.create(
        1.0 / (2 * p["M"]),
        V=ExprField(V, "V"),
        eta=[ExprField(-sympy.I * p["eta"] * x, "eta0")],
        label="paul-trap-e4",
    )


def moving_well(p):
    r = p["r_amp"] * sympy.sin(p["r_freq"] * t)
    return CoefficientSet.create(
        1.0 / (2 * p["M"]),
        V=ExprField(gaussian_well(x, p["V0"], p["well_alpha"], r), "V"),
        sigma=[[ExprField(p["b"], "sigma00")]],
        eta=[ExprField(p["a"] * x, "eta0")],
        label="gaussian-well-e5",
    )


def _harmonic_initial(p):
    return {"center": 0.0, "width": _ground_width(p["M"], p["omega"]), "momentum": 0.0}


PRESETS: dict[str, Preset] = {
    "qbm-e1": Preset(
        "qbm-e1",
        {"M": 1.0, "omega": 1.0, "a": 0.5, "b": 0.3, "c": 0.2},
        qbm,
        _harmonic_initial,
        oracle_grid={"half_width": 8.0, "points_per_axis": 64},
    ),
    "position-measurement-e2": Preset(
        "position-measurement-e2",
        {"M": 1.0, "omega": 1.0, "eta": 0.5},
        position_measurement,
        _harmonic_initial,
    ),
    "laser-e3": Preset(
        "laser-e3",
        {"eta": 0.1, "eps": 1.0, "F0": 0.05, "beta": 1.0, "delta": 0.0, "tau": 1.0, "pulse_T": 10.0},
        laser,
        lambda p: {"center": 0.0, "width": 1.0, "momentum": 0.0},
        grid={"half_width": 20.0, "points_per_axis": 512},
        oracle_grid={"half_width": 6.0, "points_per_axis": 16},
    ),
    "paul-trap-e4": Preset(
        "paul-trap-e4",
        {"M": 1.0, "omega": 1.0, "eta": 0.5},
        paul_trap,
        _harmonic_initial,
    ),
    "gaussian-well-e5": Preset(
        "gaussian-well-e5",
        {"M": 1.0, "V0": 1.0, "well_alpha": 0.5, "a": 0.3, "b": 0.2, "r_amp": 0.0, "r_freq": 1.0},
        moving_well,
        lambda p: {"center": 0.0, "width": _ground_width(p["M"], np.sqrt(2 * p["V0"] * p["well_alpha"] / p["M"])), "momentum": 0.0},
        oracle_grid={"half_width": 5.0, "points_per_axis": 16},
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; known presets: {', '.join(PRESETS)}") from None
