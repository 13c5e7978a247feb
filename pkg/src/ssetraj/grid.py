"""Uniform tensor grids, wavefunctions and second-order stencils.

Every array-level routine accepts a trailing grid block of shape ``grid.shape``
preceded by any number of batch axes, so the same kernels serve single states
and trajectory batches of shape ``(B, *grid.shape)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

MAX_POINTS = 2**26
BOUNDARIES = ("dirichlet", "periodic")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on ``[-L, L)^d`` with ``N`` points per axis.

    Parameters
    ----------
    dimension : int
        Spatial dimension ``d`` (1 or 2).
    half_width : float
        Box half width ``L``.
    points_per_axis : int
        ``N``; must be even and at least 8.
    boundary : str
        ``"dirichlet"`` (zero ghost values) or ``"periodic"``.
    """

    dimension: int = 1
    half_width: float = 10.0
    points_per_axis: int = 256
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if not (np.isfinite(self.half_width) and self.half_width > 0):
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        n = self.points_per_axis
        if int(n) != n or n < 8 or n % 2:
            raise ValueError(f"points_per_axis must be an even integer >= 8, got {n}")
        if n**self.dimension > MAX_POINTS:
            raise ValueError(f"grid has {n ** self.dimension} points, limit is {MAX_POINTS}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def d(self) -> int:
        return self.dimension

    @property
    def L(self) -> float:
        return float(self.half_width)

    @property
    def N(self) -> int:
        return int(self.points_per_axis)

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N**self.d

    @property
    def weight(self) -> float:
        """Quadrature weight ``h**d``."""
        return self.h**self.d

    @cached_property
    def axis_points(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``grid.shape`` (row-major, axis 0 slowest)."""
        out = np.meshgrid(*([self.axis_points] * self.d), indexing="ij")
        for a in out:
            a.setflags(write=False)
        return tuple(out)

    @cached_property
    def r2(self) -> np.ndarray:
        r2 = sum(c**2 for c in self.coords)
        r2.setflags(write=False)
        return r2

    # -- array kernels -------------------------------------------------------

    def _ax(self, axis: int) -> int:
        if not 0 <= axis < self.d:
            raise ValueError(f"axis must be in [0, {self.d}), got {axis}")
        return axis - self.d

    def _slices(self, a: int, ndim: int):
        def sl(s):
            idx = [slice(None)] * ndim
            idx[a] = s
            return tuple(idx)

        return sl

    def deriv(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Central difference ``(f[i+1] - f[i-1]) / 2h`` along ``axis``."""
        a = self._ax(axis)
        if self.boundary == "periodic":
            return (np.roll(f, -1, axis=a) - np.roll(f, 1, axis=a)) * (0.5 / self.h)
        sl = self._slices(a, f.ndim)
        out = np.empty_like(f)
        np.subtract(f[sl(slice(2, None))], f[sl(slice(None, -2))], out=out[sl(slice(1, -1))])
        out[sl(0)] = f[sl(1)]
        np.negative(f[sl(slice(-2, -1))], out=out[sl(slice(-1, None))])
        out *= 0.5 / self.h
        return out

    def second(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Three-point second difference along ``axis``."""
        a = self._ax(axis)
        if self.boundary == "periodic":
            out = np.roll(f, -1, axis=a) + np.roll(f, 1, axis=a)
        else:
            sl = self._slices(a, f.ndim)
            out = np.empty_like(f)
            np.add(f[sl(slice(2, None))], f[sl(slice(None, -2))], out=out[sl(slice(1, -1))])
            out[sl(0)] = f[sl(1)]
            out[sl(-1)] = f[sl(-2)]
        out -= 2.0 * f
        out *= 1.0 / self.h**2
        return out

    def lap(self, f: np.ndarray) -> np.ndarray:
        out = self.second(f, 0)
        for j in range(1, self.d):
            out = out + self.second(f, j)
        return out

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Batched ``h^d sum conj(f) g`` over the trailing grid axes."""
        axes = tuple(range(-self.d, 0))
        return self.weight * np.sum(np.conj(f) * g, axis=axes)

    def norm2(self, f: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.d, 0))
        return self.weight * np.sum(f.real**2 + f.imag**2, axis=axes)

    def shell_mask(self, margin: float) -> np.ndarray:
        """Points with some coordinate of magnitude above ``L - margin``."""
        mask = np.zeros(self.shape, dtype=bool)
        for c in self.coords:
            mask |= np.abs(c) > self.L - margin
        return mask

    def boundary_mass(self, f: np.ndarray, margin: float) -> np.ndarray:
        mask = self.shell_mask(margin)
        p = np.abs(f) ** 2
        return self.weight * np.sum(p[..., mask], axis=-1)

    # -- sparse matrices (used by implicit solves and dense oracles) ----------

    @cached_property
    def _d1(self) -> sp.csr_matrix:
        n = self.N
        m = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="lil")
        if self.boundary == "periodic":
            m[0, n - 1] = -1.0
            m[n - 1, 0] = 1.0
        return (m / (2.0 * self.h)).tocsr()

    @cached_property
    def _d2(self) -> sp.csr_matrix:
        n = self.N
        m = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil")
        if self.boundary == "periodic":
            m[0, n - 1] = 1.0
            m[n - 1, 0] = 1.0
        return (m / self.h**2).tocsr()

    def _embed(self, m1: sp.spmatrix, axis: int) -> sp.csr_matrix:
        if self.d == 1:
            return m1.tocsr()
        eye = sp.identity(self.N, format="csr")
        parts = [m1 if a == axis else eye for a in range(self.d)]
        out = parts[0]
        for p in parts[1:]:
            out = sp.kron(out, p, format="csr")
        return out

    def deriv_matrix(self, axis: int) -> sp.csr_matrix:
        self._ax(axis)
        return self._embed(self._d1, axis)

    @cached_property
    def lap_matrix(self) -> sp.csr_matrix:
        return sum(self._embed(self._d2, a) for a in range(self.d)).tocsr()


def _as_grid_array(grid: GridSpec, values) -> np.ndarray:
    arr = np.asarray(values, dtype=complex)
    if arr.size != grid.size:
        raise ValueError(f"expected {grid.size} amplitudes, got {arr.size}")
    return arr.reshape(grid.shape)


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Complex amplitudes on a grid; immutable once built."""

    grid: GridSpec
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(_as_grid_array(self.grid, self.amplitudes))
        if not np.all(np.isfinite(arr)):
            raise ValueError("wavefunction amplitudes must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "amplitudes", arr)

    @property
    def norm2(self) -> float:
        return float(self.grid.norm2(self.amplitudes))

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.norm2))

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.grid, self.amplitudes / self.norm)

    def with_values(self, values) -> "WaveFunction":
        return WaveFunction(self.grid, values)

    def __add__(self, other: "WaveFunction") -> "WaveFunction":
        _same_grid(self, other)
        return WaveFunction(self.grid, self.amplitudes + other.amplitudes)

    def __sub__(self, other: "WaveFunction") -> "WaveFunction":
        _same_grid(self, other)
        return WaveFunction(self.grid, self.amplitudes - other.amplitudes)

    def __mul__(self, c: complex) -> "WaveFunction":
        return WaveFunction(self.grid, complex(c) * self.amplitudes)

    __rmul__ = __mul__


def _same_grid(f: WaveFunction, g: WaveFunction) -> None:
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")


def inner_product(f: WaveFunction, g: WaveFunction) -> complex:
    """``<f, g>``; antilinear in ``f``, linear in ``g``."""
    _same_grid(f, g)
    return complex(f.grid.inner(f.amplitudes, g.amplitudes))


def apply_laplacian(f: WaveFunction) -> WaveFunction:
    return WaveFunction(f.grid, f.grid.lap(f.amplitudes))


def apply_derivative(f: WaveFunction, axis: int) -> WaveFunction:
    """Central difference along ``axis`` (0-based, ``0 <= axis < d``)."""
    return WaveFunction(f.grid, f.grid.deriv(f.amplitudes, axis))


def apply_multiplier(f: WaveFunction, phi) -> WaveFunction:
    phi = np.broadcast_to(np.asarray(phi), f.grid.shape)
    if not np.all(np.isfinite(phi)):
        raise ValueError("multiplier has non-finite samples")
    return WaveFunction(f.grid, phi * f.amplitudes)


def gaussian_values(grid: GridSpec, center, width: float, momentum) -> np.ndarray:
    """Unnormalized ``exp(-|x-c|^2 / 4w^2 + i p.x)`` sampled on the grid."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    p = np.broadcast_to(np.asarray(momentum, dtype=float), (grid.d,))
    expo = np.zeros(grid.shape, dtype=complex)
    for x, cj, pj in zip(grid.coords, c, p):
        expo += -((x - cj) ** 2) / (4.0 * width**2) + 1j * pj * x
    return np.exp(expo)


def make_gaussian(grid: GridSpec, center=0.0, width: float = 1.0, momentum=0.0) -> WaveFunction:
    """Normalized Gaussian wavepacket well inside the box."""
    if not width > 0:
        raise ValueError(f"width must be positive, got {width}")
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.d,))
    reach = float(np.linalg.norm(c)) + 4.0 * width
    if reach >= grid.L:
        raise ValueError(
            f"gaussian support too close to boundary: |c| + 4w = {reach:.4g} >= L = {grid.L:.4g}"
        )
    v = gaussian_values(grid, c, width, momentum)
    return WaveFunction(grid, v / np.sqrt(grid.norm2(v)))


def boundary_mass(f: WaveFunction, margin: float) -> float:
    """Probability mass within ``margin`` of the box edge."""
    if not 0 < margin < f.grid.L:
        raise ValueError(f"margin must be in (0, L), got {margin}")
    return float(f.grid.boundary_mass(f.amplitudes, margin))


def random_state(grid: GridSpec, rng: np.random.Generator, smooth: bool = False) -> WaveFunction:
    """Random complex state; ``smooth`` gives a sum of a few random Gaussians."""
    if not smooth:
        v = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    else:
        v = np.zeros(grid.shape, dtype=complex)
        for _ in range(3):
            w = rng.uniform(0.5, 1.0) * grid.L / 10
            c = rng.uniform(-grid.L / 3, grid.L / 3, size=grid.d)
            p = rng.uniform(-2, 2, size=grid.d)
            v += (rng.standard_normal() + 1j * rng.standard_normal()) * gaussian_values(grid, c, w, p)
    return WaveFunction(grid, v / np.sqrt(grid.norm2(v)))


def stack(states: Sequence[WaveFunction]) -> np.ndarray:
    """Stack states into a batch array of shape ``(B, *grid.shape)``."""
    return np.stack([s.amplitudes for s in states])
