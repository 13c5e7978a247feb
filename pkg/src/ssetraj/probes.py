"""Numeric probes of the model hypotheses on a finite grid.

These are evidence, not proofs: every check inspects finitely many grid points
or sample states.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import GridSpec, WaveFunction, gaussian_values
from .model import CoefficientSet, System


def check_phase_condition(coeffs: CoefficientSet, grid: GridSpec, t: float = 0.0) -> float:
    """Max over grid and ``(j, h, k)`` of ``|sum_l s_lk d_j conj(s_lh) - conj(s_lk) d_j s_lh|``.

    Zero means the phase-compatibility condition on ``sigma`` holds.
    """
    d = grid.d
    worst = 0.0
    for j in range(d):
        for h in range(d):
            for k in range(d):
                acc = np.zeros(grid.shape, dtype=complex)
                for row in coeffs.sigma:
                    sk, sh = row[k].sample(grid, t), row[h]
                    dsh = sh.d(grid, t, j)
                    acc += sk * np.conj(dsh) - np.conj(sk) * dsh
                worst = max(worst, float(np.max(np.abs(acc))))
    return worst


def gaussian_battery(
    grid: GridSpec,
    n: int = 10,
    seed: int = 0,
    widths: tuple[float, float] = (0.5, 1.5),
    max_momentum: float = 2.0,
    corners: bool = False,
) -> list[WaveFunction]:
    """Normalized Gaussian test states with centers ``|c| <= L/3``.

    Centers are pulled in when ``|c| + 4w`` would reach the box edge. With
    ``corners`` the set starts with the extreme (narrowest, fastest, most
    displaced) packets so that maxima over the set are stable under growth.
    """
    rng = np.random.default_rng(seed)
    d, L = grid.d, grid.L
    w_lo, w_hi = widths
    w_hi = min(w_hi, 0.9 * L / 4)
    w_lo = min(w_lo, w_hi)
    params = []
    if corners:
        for sc in (-1.0, 1.0):
            for sp_ in (-1.0, 1.0):
                params.append((np.full(d, sc * L / 3), w_lo, np.full(d, sp_ * max_momentum)))
    while len(params) < n:
        c = rng.uniform(-1, 1, size=d)
        c = c / max(1.0, np.linalg.norm(c)) * L / 3
        params.append((c, rng.uniform(w_lo, w_hi), rng.uniform(-max_momentum, max_momentum, size=d)))
    out = []
    for c, w, p in params[:n]:
        room = 0.95 * (L - 4 * w)
        nc = np.linalg.norm(c)
        if nc > room:
            c = c * room / nc
        v = gaussian_values(grid, c, w, p)
        out.append(WaveFunction(grid, v / np.sqrt(grid.norm2(v))))
    return out


def alpha_ratios(system: System, t: float, samples: Sequence) -> np.ndarray:
    """``(2 Re<C^2 x, G x> + sum_l |C L_l x|^2) / (|x|^2 + |C x|^2)`` per sample."""
    g = system.grid
    X = np.stack([s.amplitudes if isinstance(s, WaveFunction) else np.asarray(s) for s in samples])
    CX = system.apply_C(X)
    num = 2.0 * g.inner(CX, system.apply_C(system.apply_G(t, X))).real
    for l in range(system.m):
        num = num + g.norm2(system.apply_C(system.apply_L(t, X, l)))
    return num / (g.norm2(X) + g.norm2(CX))


def estimate_alpha(system: System, t: float, samples: Sequence) -> float:
    """Largest regularity ratio over ``samples``; an empirical lower bound for alpha(t).

    The quotient uses ``<C^2 x, Gx> = <Cx, CGx>`` (C is symmetric) so only
    one extra application of C is needed.
    """
    if len(samples) == 0:
        raise ValueError("estimate_alpha needs at least one sample state")
    return float(np.max(alpha_ratios(system, t, samples)))


# -- growth bounds ---------------------------------------------------------------


@dataclass
class GrowthBound:
    name: str
    group: str
    weight: str
    constant: float
    bounded: bool


@dataclass
class GrowthReport:
    t: float
    bounds: list[GrowthBound] = field(default_factory=list)
    sigma_x_independent: bool = False

    def get(self, name: str) -> GrowthBound:
        for b in self.bounds:
            if b.name == name:
                return b
        raise KeyError(name)

    def _ok(self, group: str) -> bool:
        return all(b.bounded for b in self.bounds if b.group == group)

    @property
    def hamiltonian_ok(self) -> bool:
        return self._ok("hamiltonian")

    @property
    def noise_ok(self) -> bool:
        return self._ok("noise")

    @property
    def bounded_noise_ok(self) -> bool:
        return self.noise_ok and self._ok("noise-bounded")

    @property
    def constant_sigma_ok(self) -> bool:
        return self.noise_ok and self.sigma_x_independent

    def summary(self) -> str:
        lines = [f"{b.group:13s} {b.name:24s} K={b.constant:.6g} ({b.weight})" for b in self.bounds]
        branch = "bounded-noise" if self.bounded_noise_ok else ("constant-sigma" if self.constant_sigma_ok else "none")
        lines.append(f"hamiltonian bounds {'hold' if self.hamiltonian_ok else 'fail'}; noise branch satisfied: {branch}")
        return "\n".join(lines)


def _growth_constant(grid: GridSpec, values: np.ndarray, weight: np.ndarray) -> tuple[float, bool]:
    ratio = np.abs(values) / weight
    r = np.sqrt(grid.r2)
    L = grid.L
    sup = float(np.max(ratio))
    if sup == 0.0:
        return 0.0, True
    inner = float(np.max(ratio[r <= L / 4], initial=0.0))
    mid = float(np.max(ratio[(r >= 0.45 * L) & (r <= 0.5 * L)], initial=0.0))
    outer = float(np.max(ratio[r >= 0.9 * L], initial=0.0))
    # a ratio still growing like |x|^p, p >= 1/2, near the edge is read as unbounded
    growing = outer > 10 * inner or (mid > 0 and outer / mid >= np.sqrt(2.0)) or (mid == 0 and outer > 0)
    return (np.inf, False) if growing and outer > 1e-12 * max(1.0, sup) else (sup, True)


def check_growth(coeffs: CoefficientSet, grid: GridSpec, t: float = 0.0) -> GrowthReport:
    """Smallest constants for the coefficient growth bounds, with unbounded flags."""
    d = grid.d
    r = np.sqrt(grid.r2)
    weights = {"1": np.ones(grid.shape), "1+|x|": 1 + r, "1+|x|^2": 1 + grid.r2}
    rep = GrowthReport(t)

    def add(name, group, wname, values):
        k, ok = _growth_constant(grid, values, weights[wname])
        rep.bounds.append(GrowthBound(name, group, wname, k, ok))

    D = lambda f, *ax: f.d(grid, t, *ax)
    add("V", "hamiltonian", "1+|x|^2", D(coeffs.V))
    add("lap V", "hamiltonian", "1+|x|^2", sum(D(coeffs.V, j, j) for j in range(d)))
    for j, A in enumerate(coeffs.A):
        add(f"d{j} lap A{j}", "hamiltonian", "1+|x|^2", sum(D(A, j, k, k) for k in range(d)))
        add(f"d{j} V", "hamiltonian", "1+|x|", D(coeffs.V, j))
        add(f"A{j}", "hamiltonian", "1+|x|", D(A))
        for jp in range(d):
            add(f"d{jp} d{j} A{j}", "hamiltonian", "1+|x|", D(A, jp, j))
            add(f"d{jp} A{j}", "hamiltonian", "1", D(A, jp))
    sig_indep = True
    for l, (row, eta) in enumerate(zip(coeffs.sigma, coeffs.eta)):
        for k, s in enumerate(row):
            add(f"sigma{l}{k}", "noise", "1", D(s))
        for orders in _orders_up_to(d, 3):
            tag = "".join(f"d{a}" for a in orders)
            add(f"{tag} eta{l}", "noise", "1", D(eta, *orders))
        add(f"eta{l}", "noise-bounded", "1", D(eta))
        for k, s in enumerate(row):
            scale = 1.0 + float(np.max(np.abs(D(s))))
            for orders in _orders_up_to(d, 3):
                vals = D(s, *orders)
                add(f"{''.join(f'd{a}' for a in orders)} sigma{l}{k}", "noise-bounded", "1", vals)
                if len(orders) == 1 and np.max(np.abs(vals)) > 1e-12 * scale:
                    sig_indep = False
    rep.sigma_x_independent = sig_indep
    return rep


def _orders_up_to(d: int, n: int) -> list[tuple[int, ...]]:
    """Non-decreasing axis sequences of length 1..n (one per distinct partial)."""
    out: list[tuple[int, ...]] = []
    frontier: list[tuple[int, ...]] = [()]
    for _ in range(n):
        frontier = [p + (a,) for p in frontier for a in range(p[-1] if p else 0, d)]
        out.extend(frontier)
    return out
