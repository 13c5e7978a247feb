"""Closed-form commutators and Lindblad-generator expansions.

Each function evaluates an expanded differential operator on a state, with
coefficient derivatives taken from the fields (exact for expression fields).
The ``direct_*`` companions build the same operator by composing the discrete
H, L, L*, C and Laplacian, so the pair differs by O(h^2) on smooth states.

Conventions: ``S_jk = sum_l conj(sigma_lj) sigma_lk``, ``P_j = [d_j, L]`` and
``Lind(X) = 1/2 sum_l (L*[X, L] + [L*, X] L)`` (the dissipative part of the
Lindblad generator).
"""
from __future__ import annotations

import warnings

import numpy as np

from .grid import GridSpec, WaveFunction
from .model import System


def _setup(model, f):
    if isinstance(f, WaveFunction):
        grid, arr = f.grid, f.amplitudes
    else:
        arr = np.asarray(f)
        grid = model.grid if isinstance(model, System) else None
        if grid is None:
            raise ValueError("pass a WaveFunction or a System so the grid is known")
    system = model if isinstance(model, System) else System(model, grid)
    if grid.boundary_mass(arr, min(2.0, grid.L / 4)).max() > 1e-8 * max(grid.norm2(arr).max(), 1e-300):
        warnings.warn("state has mass near the boundary; closed-form identities are unreliable there", stacklevel=3)
    return system, grid, arr


def _wrap(f, arr):
    return WaveFunction(f.grid, arr) if isinstance(f, WaveFunction) else arr


def _dd(grid: GridSpec, f, j, k):
    return grid.second(f, j) if j == k else grid.deriv(grid.deriv(f, j), k)


class _Deriv:
    """Shorthand ``D(field, *axes)`` for sampled coefficient derivatives at ``t``."""

    def __init__(self, grid, t):
        self.grid, self.t = grid, t

    def __call__(self, field, *axes):
        return field.d(self.grid, self.t, *axes)


def commutator_HC(model, t: float, f):
    """``[H, C] f`` from the expanded second-order operator."""
    system, g, x = _setup(model, f)
    c, D, d = system.coeffs, _Deriv(g, t), g.d
    X = g.coords
    A = c.A
    out = np.zeros_like(x, dtype=complex)
    for j in range(d):
        first = 2 * D(c.V, j) - 4 * c.alpha * X[j]
        first = first + 2j * sum(D(A[j], k, k) for k in range(d))
        first = first + 2j * sum(D(A[k], j, k) for k in range(d))
        out = out + first * g.deriv(x, j)
        for k in range(d):
            out = out + 4j * D(A[j], k) * _dd(g, x, k, j)
    zeroth = sum(D(c.V, j, j) for j in range(d)) - 2 * c.alpha * d
    zeroth = zeroth + 1j * sum(D(A[j], j, k, k) for j in range(d) for k in range(d))
    zeroth = zeroth + 4j * sum(X[j] * D(A[j]) for j in range(d))
    return _wrap(f, out + zeroth * x)


def direct_commutator_HC(model, t: float, f):
    system, g, x = _setup(model, f)
    return _wrap(f, system.apply_H(t, system.apply_C(x)) - system.apply_C(system.apply_H(t, x)))


def commutator_CL(model, channel: int, t: float, f):
    """``[C, L_channel] f`` from the expanded operator."""
    system, g, x = _setup(model, f)
    c, D, d = system.coeffs, _Deriv(g, t), g.d
    sig, eta = c.sigma[channel], c.eta[channel]
    out = np.zeros_like(x, dtype=complex)
    for k in range(d):
        for j in range(d):
            out = out - 2 * D(sig[k], j) * _dd(g, x, j, k)
        lap_sig = sum(D(sig[k], j, j) for j in range(d))
        out = out - (lap_sig + 2 * D(eta, k)) * g.deriv(x, k)
        out = out - 2 * g.coords[k] * D(sig[k]) * x
    out = out - sum(D(eta, j, j) for j in range(d)) * x
    return _wrap(f, out)


def direct_commutator_CL(model, channel: int, t: float, f):
    system, g, x = _setup(model, f)
    Lx = system.apply_L(t, x, channel)
    return _wrap(f, system.apply_C(Lx) - system.apply_L(t, system.apply_C(x), channel))


def lstar_l(model, channel: int, t: float, f):
    """``L* L f`` written as a second-order operator."""
    system, g, x = _setup(model, f)
    c, D, d = system.coeffs, _Deriv(g, t), g.d
    sig, eta = c.sigma[channel], c.eta[channel]
    sv = [D(s) for s in sig]
    sb = [np.conj(s) for s in sv]
    ev = D(eta)
    out = np.zeros_like(x, dtype=complex)
    for j in range(d):
        for k in range(d):
            out = out - sb[j] * sv[k] * _dd(g, x, j, k)
    for k in range(d):
        coef = sum(np.conj(D(sig[j], j)) * sv[k] + sb[j] * D(sig[k], j) for j in range(d))
        coef = coef + sb[k] * ev - np.conj(ev) * sv[k]
        out = out - coef * g.deriv(x, k)
    zeroth = np.abs(ev) ** 2 - sum(np.conj(D(sig[j], j)) * ev + sb[j] * D(eta, j) for j in range(d))
    return _wrap(f, out + zeroth * x)


def direct_lstar_l(model, channel: int, t: float, f):
    system, g, x = _setup(model, f)
    return _wrap(f, system.apply_Lstar(t, system.apply_L(t, x, channel), channel))


def _S(system, D):
    """``S[j][k] = sum_l conj(sigma_lj) sigma_lk`` with its first derivatives."""
    c, d = system.coeffs, system.grid.d
    S = [[0.0 for _ in range(d)] for _ in range(d)]
    dS = [[[0.0 for _ in range(d)] for _ in range(d)] for _ in range(d)]  # dS[a][j][k] = d_a S_jk
    for row in c.sigma:
        v = [D(s) for s in row]
        for j in range(d):
            for k in range(d):
                S[j][k] = S[j][k] + np.conj(v[j]) * v[k]
                for a in range(d):
                    dS[a][j][k] = dS[a][j][k] + np.conj(D(row[j], a)) * v[k] + np.conj(v[j]) * D(row[k], a)
    return S, dS


def lindblad_x(model, axis: int, t: float, f):
    """Dissipative generator applied to the coordinate ``x_axis``, acting on ``f``."""
    system, g, x = _setup(model, f)
    c, D, d = system.coeffs, _Deriv(g, t), g.d
    S, dS = _S(system, D)
    j = axis
    out = np.zeros_like(x, dtype=complex)
    for k in range(d):
        out = out + (S[k][j] - S[j][k]) * g.deriv(x, k)
    zeroth = sum(dS[k][k][j] for k in range(d))
    for row, eta in zip(c.sigma, c.eta):
        zeroth = zeroth - (np.conj(D(eta)) * D(row[j]) + D(eta) * np.conj(D(row[j])))
    return _wrap(f, 0.5 * (out + zeroth * x))


def lindblad_r2(model, t: float, f):
    """Dissipative generator applied to ``|x|^2``, acting on ``f``."""
    system, g, x = _setup(model, f)
    c, D, d = system.coeffs, _Deriv(g, t), g.d
    S, dS = _S(system, D)
    X = g.coords
    out = np.zeros_like(x, dtype=complex)
    zeroth = 0.0
    for j in range(d):
        for k in range(d):
            out = out + X[j] * (S[k][j] - S[j][k]) * g.deriv(x, k)
            zeroth = zeroth + X[j] * dS[k][k][j]
        zeroth = zeroth + S[j][j]
        for row, eta in zip(c.sigma, c.eta):
            zeroth = zeroth - 2 * np.real(np.conj(D(eta)) * D(row[j])) * X[j]
    return _wrap(f, out + zeroth * x)


def lindblad_laplacian(model, t: float, f):
    """Dissipative generator applied to the Laplacian, acting on ``f``.

    Exact only when the phase condition holds (checked by
    :func:`ssetraj.probes.check_phase_condition`); the third-order terms it
    cancels are not included.
    """
    system, g, x = _setup(model, f)
    c, D, d = system.coeffs, _Deriv(g, t), g.d
    cj = np.conj
    out = np.zeros_like(x, dtype=complex)
    for sig, eta in zip(c.sigma, c.eta):
        ev = D(eta)
        for j in range(d):
            for k in range(d):
                nu = np.real(D(sig[k], j) * cj(ev) - D(sig[k]) * cj(D(eta, j)))
                dnu = np.real(D(sig[k], j, j) * cj(ev) - D(sig[k]) * cj(D(eta, j, j)))
                zeta, dzeta = 0.0, 0.0
                for h in range(d):
                    zeta = zeta + 0.5 * (
                        -cj(D(sig[h])) * D(sig[k], h, j)
                        - cj(D(sig[h], h)) * D(sig[k], j)
                        + cj(D(sig[h], j)) * D(sig[k], h)
                        + cj(D(sig[h], j, h)) * D(sig[k])
                    )
                    dzeta = dzeta + 0.5 * (
                        -cj(D(sig[h])) * D(sig[k], h, j, j)
                        - cj(D(sig[h], h)) * D(sig[k], j, j)
                        + cj(D(sig[h], j, j)) * D(sig[k], h)
                        + cj(D(sig[h], j, j, h)) * D(sig[k])
                    )
                out = out + 2 * (nu + zeta) * _dd(g, x, j, k) + (dnu + dzeta) * g.deriv(x, k)
            xi = 2j * np.imag(cj(ev) * D(eta, j))
            dxi = 2j * np.imag(cj(ev) * D(eta, j, j))
            for h in range(d):
                xi = xi + (
                    cj(D(sig[h], j, h)) * ev
                    + cj(D(sig[h], j)) * D(eta, h)
                    - cj(D(sig[h], h)) * D(eta, j)
                    - cj(D(sig[h])) * D(eta, j, h)
                )
                dxi = dxi + (
                    cj(D(sig[h], j, j, h)) * ev
                    + cj(D(sig[h], j, j)) * D(eta, h)
                    - cj(D(sig[h], h)) * D(eta, j, j)
                    - cj(D(sig[h])) * D(eta, j, j, h)
                )
            out = out + xi * g.deriv(x, j) + 0.5 * dxi * x
            # -P_j* P_j with P_j = d_j sigma_k d_k + d_j eta
            for h in range(d):
                for k in range(d):
                    out = out + cj(D(sig[h], j)) * D(sig[k], j) * _dd(g, x, h, k)
                    out = out + (
                        cj(D(sig[h], h, j)) * D(sig[k], j) + cj(D(sig[h], j)) * D(sig[k], h, j)
                    ) * g.deriv(x, k)
                out = out + cj(D(sig[h], j)) * D(eta, j) * g.deriv(x, h)
                out = out + (cj(D(sig[h], h, j)) * D(eta, j) + cj(D(sig[h], j)) * D(eta, h, j)) * x
            for k in range(d):
                out = out - cj(D(eta, j)) * D(sig[k], j) * g.deriv(x, k)
            out = out - np.abs(D(eta, j)) ** 2 * x
    return _wrap(f, out)


def direct_lindblad(model, t: float, f, X):
    """``1/2 sum_l (2 L* X L - L* L X - X L* L) f`` for an array map ``X``."""
    system, g, x = _setup(model, f)
    out = np.zeros_like(x, dtype=complex)
    for l in range(system.m):
        L = lambda v: system.apply_L(t, v, l)
        Ls = lambda v: system.apply_Lstar(t, v, l)
        out = out + 2 * Ls(X(L(x))) - Ls(L(X(x))) - X(Ls(L(x)))
    return _wrap(f, 0.5 * out)


def c_norm_terms(grid: GridSpec, f) -> dict:
    """Terms of the expansion of ``|Cf|^2`` and the two weighted bounds."""
    x = f.amplitudes if isinstance(f, WaveFunction) else np.asarray(f)
    g = grid
    r2 = g.r2
    Cf = -g.lap(x) + r2 * x
    grads = [g.deriv(x, j) for j in range(g.d)]
    rhs = g.norm2(g.lap(x)) + g.norm2(r2 * x) - 2 * g.d * g.norm2(x)
    rhs = rhs + 2 * sum(g.inner(dj, r2 * dj).real for dj in grads)
    r = np.sqrt(r2)
    return {
        "C_norm2": float(g.norm2(Cf)),
        "expansion": float(rhs),
        "grad_weighted": float(sum(g.norm2((1 + r) * dj) for dj in grads)),
        "r2_weighted": float(g.norm2((1 + r2) * x)),
    }


__all__ = [
    "commutator_HC",
    "direct_commutator_HC",
    "commutator_CL",
    "direct_commutator_CL",
    "lstar_l",
    "direct_lstar_l",
    "lindblad_x",
    "lindblad_r2",
    "lindblad_laplacian",
    "direct_lindblad",
    "c_norm_terms",
]

