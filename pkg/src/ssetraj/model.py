"""Hamiltonian, noise operators, drift G and the reference operator C.

The model is ``H = -alpha Lap + i sum_j (A_j d_j + d_j A_j) + V`` and
``L_l = sum_j sigma_lj d_j + eta_l``. Each ``L_l*`` is the exact discrete adjoint
``-sum_j d_j(conj(sigma_lj) .) + conj(eta_l)``, and ``G = -iH - 1/2 sum L*L``.
All kernels act on batch arrays ``(..., *grid.shape)``.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fields import Field, as_field
from .grid import GridSpec, WaveFunction


@dataclass(frozen=True)
class CoefficientSet:
    """Model functions ``alpha, V, A^j, sigma_lj, eta_l``.

    ``A`` has one field per axis, ``sigma`` is ``m`` rows of ``d`` fields and
    ``eta`` has ``m`` fields. Use :meth:`create` to coerce plain values.
    """

    alpha: float
    V: Field
    A: tuple[Field, ...]
    sigma: tuple[tuple[Field, ...], ...]
    eta: tuple[Field, ...]
    label: str = "custom"

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if len(self.sigma) != len(self.eta):
            raise ValueError("sigma and eta must have one entry per channel")
        for row in self.sigma:
            if len(row) != self.d:
                raise ValueError("each sigma row needs one field per axis")

    @classmethod
    def create(cls, alpha, V=0, A=None, sigma=None, eta=None, d: int = 1, label: str = "custom"):
        A = tuple(as_field(a, f"A{j}") for j, a in enumerate(A if A is not None else [0] * d))
        eta = list(eta or [])
        if sigma is None:
            sigma = [[0] * d for _ in eta]
        sigma = tuple(tuple(as_field(s, f"sigma{l}{j}") for j, s in enumerate(row)) for l, row in enumerate(sigma))
        eta = tuple(as_field(e, f"eta{l}") for l, e in enumerate(eta))
        return cls(float(alpha), as_field(V, "V"), A, sigma, eta, label)

    @property
    def d(self) -> int:
        return len(self.A)

    @property
    def m(self) -> int:
        return len(self.eta)

    def fields(self) -> list[Field]:
        return [self.V, *self.A, *(s for row in self.sigma for s in row), *self.eta]

    @property
    def autonomous(self) -> bool:
        return all(f.autonomous for f in self.fields())


@dataclass(frozen=True)
class Sampled:
    """Coefficient arrays at one time."""

    V: np.ndarray
    A: tuple[np.ndarray | None, ...]
    sigma: tuple[tuple[np.ndarray | None, ...], ...]
    eta: tuple[np.ndarray, ...]
    g_diag: np.ndarray  # -iV - 1/2 sum |eta_l|^2 over channels without sigma
    derivative_channels: tuple[int, ...]  # channels with a sigma term


class OperatorHandle:
    """Matrix-free linear map ``(t, f) -> f'`` with its exact adjoint.

    ``apply`` and ``adjoint_apply`` accept a :class:`WaveFunction` or a batch
    array ``(..., *grid.shape)`` and return the same kind.
    """

    def __init__(self, grid: GridSpec, apply: Callable, adjoint_apply: Callable, label: str):
        self.grid = grid
        self._apply = apply
        self._adjoint = adjoint_apply
        self.label = label

    @staticmethod
    def _wrap(fn, t, f):
        if isinstance(f, WaveFunction):
            return WaveFunction(f.grid, fn(t, f.amplitudes))
        return fn(t, f)

    def apply(self, t: float, f):
        return self._wrap(self._apply, t, f)

    def adjoint_apply(self, t: float, f):
        return self._wrap(self._adjoint, t, f)

    __call__ = apply

    @property
    def adjoint(self) -> "OperatorHandle":
        return OperatorHandle(self.grid, self._adjoint, self._apply, self.label + "*")

    def __repr__(self):
        return f"OperatorHandle({self.label})"


def identity_handle(grid: GridSpec) -> OperatorHandle:
    same = lambda t, f: np.array(f, dtype=complex)
    return OperatorHandle(grid, same, same, "I")


class System:
    """Coefficients bound to a grid, with memoized sampling keyed by time.

    The cache is guarded by a lock, so one instance can serve several worker
    threads. Autonomous models sample once.
    """

    def __init__(self, coeffs: CoefficientSet, grid: GridSpec, cache_size: int = 16):
        if coeffs.d != grid.d:
            raise ValueError(f"coefficients are {coeffs.d}-dimensional but grid is {grid.d}-dimensional")
        self.coeffs = coeffs
        self.grid = grid
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()
        self.autonomous = coeffs.autonomous
        self.has_A = any(not a.is_zero for a in coeffs.A)
        self.H = OperatorHandle(grid, self.apply_H, self.apply_H, "H")
        self.G = OperatorHandle(grid, self.apply_G, self.apply_Gstar, "G")
        self.C = OperatorHandle(grid, lambda t, f: self.apply_C(f), lambda t, f: self.apply_C(f), "C")
        self.L = tuple(
            OperatorHandle(grid, self._bind(self.apply_L, l), self._bind(self.apply_Lstar, l), f"L{l}")
            for l in range(coeffs.m)
        )

    @staticmethod
    def _bind(fn, l):
        return lambda t, f: fn(t, f, l)

    @property
    def m(self) -> int:
        return self.coeffs.m

    def time_key(self, t: float) -> float:
        return 0.0 if self.autonomous else float(t)

    def at(self, t: float) -> Sampled:
        key = self.time_key(t)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        s = self._sample(key)
        with self._lock:
            self._cache[key] = s
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return s

    def _sample(self, t: float) -> Sampled:
        g, c = self.grid, self.coeffs
        V = c.V.sample(g, t)
        if np.iscomplexobj(V):
            raise ValueError(f"V must be real-valued (max |Im V| = {np.max(np.abs(V.imag)):.3g})")
        A = []
        for j, a in enumerate(c.A):
            if a.is_zero:
                A.append(None)
                continue
            s = a.sample(g, t)
            if np.iscomplexobj(s):
                raise ValueError(f"A{j} must be real-valued")
            A.append(s)
        sigma = tuple(tuple(None if s.is_zero else s.sample(g, t) for s in row) for row in c.sigma)
        eta = tuple(e.sample(g, t) for e in c.eta)
        g_diag = -1j * V
        deriv_channels = []
        for l, row in enumerate(sigma):
            if any(x is not None for x in row):
                deriv_channels.append(l)
            else:
                g_diag = g_diag - 0.5 * np.abs(eta[l]) ** 2
        return Sampled(V, tuple(A), sigma, eta, g_diag, tuple(deriv_channels))

    # -- matrix-free kernels ---------------------------------------------------

    def apply_H(self, t: float, f: np.ndarray) -> np.ndarray:
        g, s = self.grid, self.at(t)
        out = s.V * f
        if self.coeffs.alpha:
            out = out - self.coeffs.alpha * g.lap(f)
        for j, a in enumerate(s.A):
            if a is not None:
                out = out + 1j * (a * g.deriv(f, j) + g.deriv(a * f, j))
        return out

    def apply_L(self, t: float, f: np.ndarray, l: int) -> np.ndarray:
        if not 0 <= l < self.m:
            raise ValueError(f"channel must be in [0, {self.m}), got {l}")
        g, s = self.grid, self.at(t)
        out = s.eta[l] * f
        for j, sig in enumerate(s.sigma[l]):
            if sig is not None:
                out = out + sig * g.deriv(f, j)
        return out

    def apply_Lstar(self, t: float, f: np.ndarray, l: int) -> np.ndarray:
        if not 0 <= l < self.m:
            raise ValueError(f"channel must be in [0, {self.m}), got {l}")
        g, s = self.grid, self.at(t)
        out = np.conj(s.eta[l]) * f
        for j, sig in enumerate(s.sigma[l]):
            if sig is not None:
                out = out - g.deriv(np.conj(sig) * f, j)
        return out

    def apply_LstarL(self, t: float, f: np.ndarray) -> np.ndarray:
        out = np.zeros_like(f, dtype=complex)
        for l in range(self.m):
            out = out + self.apply_Lstar(t, self.apply_L(t, f, l), l)
        return out

    def _apply_G(self, t: float, f: np.ndarray, sign: float) -> np.ndarray:
        # G = -iH - 1/2 sum L*L; sign=-1 gives G* (flips the Hamiltonian part)
        g, s = self.grid, self.at(t)
        out = (s.g_diag if sign > 0 else np.conj(s.g_diag)) * f
        if self.coeffs.alpha:
            out += (sign * 1j * self.coeffs.alpha) * g.lap(f)
        for j, a in enumerate(s.A):
            if a is not None:
                out += sign * (a * g.deriv(f, j) + g.deriv(a * f, j))
        for l in s.derivative_channels:
            out -= 0.5 * self.apply_Lstar(t, self.apply_L(t, f, l), l)
        return out

    def apply_G(self, t: float, f: np.ndarray) -> np.ndarray:
        return self._apply_G(t, f, 1.0)

    def apply_Gstar(self, t: float, f: np.ndarray) -> np.ndarray:
        return self._apply_G(t, f, -1.0)

    def apply_C(self, f: np.ndarray) -> np.ndarray:
        return -self.grid.lap(f) + self.grid.r2 * f

    # -- sparse assembly ---------------------------------------------------------

    def sparse_H(self, t: float) -> sp.csr_matrix:
        g, s = self.grid, self.at(t)
        out = sp.diags(s.V.ravel().astype(complex)) - self.coeffs.alpha * g.lap_matrix
        for j, a in enumerate(s.A):
            if a is not None:
                Da, D = sp.diags(a.ravel()), g.deriv_matrix(j)
                out = out + 1j * (Da @ D + D @ Da)
        return out.tocsr()

    def sparse_L(self, t: float, l: int) -> sp.csr_matrix:
        g, s = self.grid, self.at(t)
        out = sp.diags(s.eta[l].ravel().astype(complex))
        for j, sig in enumerate(s.sigma[l]):
            if sig is not None:
                out = out + sp.diags(sig.ravel()) @ g.deriv_matrix(j)
        return out.tocsr()

    def sparse_G(self, t: float) -> sp.csr_matrix:
        out = -1j * self.sparse_H(t)
        for l in range(self.m):
            Lm = self.sparse_L(t, l)
            out = out - 0.5 * (Lm.conj().T @ Lm)
        return out.tocsr()

    def sparse_C(self) -> sp.csr_matrix:
        return (-self.grid.lap_matrix + sp.diags(self.grid.r2.ravel())).tocsr()

    def spectral_radius_H(self, t: float = 0.0) -> float:
        """Cheap upper bound on ``|H|`` (Gershgorin on the stencil)."""
        g, s = self.grid, self.at(t)
        bound = 4.0 * g.d * self.coeffs.alpha / g.h**2 + float(np.max(np.abs(s.V)))
        for a in s.A:
            if a is not None:
                bound += 2.0 * float(np.max(np.abs(a))) / g.h
        return bound


def build_system(coeffs: CoefficientSet, grid: GridSpec) -> System:
    return System(coeffs, grid)


def build_H(coeffs: CoefficientSet, grid: GridSpec) -> OperatorHandle:
    return System(coeffs, grid).H


def build_L(coeffs: CoefficientSet, grid: GridSpec, channel: int) -> OperatorHandle:
    """Noise operator for ``channel`` (0-based)."""
    if not 0 <= channel < coeffs.m:
        raise ValueError(f"channel must be in [0, {coeffs.m}), got {channel}")
    return System(coeffs, grid).L[channel]


def build_G(coeffs: CoefficientSet, grid: GridSpec) -> OperatorHandle:
    return System(coeffs, grid).G


def build_C(grid: GridSpec) -> OperatorHandle:
    def apply(t, f):
        return -grid.lap(f) + grid.r2 * f

    return OperatorHandle(grid, apply, apply, "C")


def dissipation_residual(system: System, t: float, f) -> float:
    """``|2 Re<f, Gf> + sum_l |L_l f|^2|`` for one state."""
    f = f.amplitudes if isinstance(f, WaveFunction) else np.asarray(f)
    g = system.grid
    val = 2.0 * g.inner(f, system.apply_G(t, f)).real
    for l in range(system.m):
        val += g.norm2(system.apply_L(t, f, l))
    return float(abs(val))


def operator_scale(system: System, t: float = 0.0) -> float:
    """Rough operator-norm scale used to size round-off tolerances."""
    g, s = system.grid, system.at(t)
    scale = system.spectral_radius_H(t)
    for l in range(system.m):
        lb = float(np.max(np.abs(s.eta[l])))
        for sig in s.sigma[l]:
            if sig is not None:
                lb += float(np.max(np.abs(sig))) / g.h
        scale += lb**2
    return max(scale, 1.0)

