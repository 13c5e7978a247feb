"""Observables, ensemble statistics and the executable structural checks.

Observers are callables ``obs(t, X) -> (B,)`` evaluated on trajectory batches
at sample times; :func:`ssetraj.integrate.run_ensemble` stores their values
per trajectory so that every statistic below is a deterministic reduction in
trajectory order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .fields import Field, as_field
from .grid import GridSpec, WaveFunction
from .model import System

FACTOR_KINDS = ("derivative_times_multiplier", "multiplier_times_derivative", "multiplier")


@dataclass(frozen=True)
class Factor:
    """One factor ``d_k M_a``, ``M_b d_k`` or ``M_c`` of an observable."""

    kind: str
    field: Field
    axis: int = 0

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise ValueError(f"factor kind must be one of {FACTOR_KINDS}, got {self.kind!r}")

    def apply(self, grid: GridSpec, X: np.ndarray, t: float = 0.0) -> np.ndarray:
        v = self.field.sample(grid, t)
        if np.iscomplexobj(v):
            raise ValueError("observable factor fields must be real")
        if self.kind == "multiplier":
            return v * X
        if self.kind == "multiplier_times_derivative":
            return v * grid.deriv(X, self.axis)
        return grid.deriv(v * X, self.axis)


@dataclass(frozen=True)
class ObservableSpec:
    """Observable ``A = B1* B2`` with expectation ``<B1 psi, B2 psi>``."""

    factor1: Factor
    factor2: Factor
    label: str = "A"

    @property
    def symmetric(self) -> bool:
        return self.factor1 == self.factor2 or (
            self.factor1.kind == "multiplier" and self.factor2.kind == "multiplier"
        )

    @classmethod
    def multiplier(cls, c, label: str = "M_c") -> "ObservableSpec":
        return cls(Factor("multiplier", as_field(1.0)), Factor("multiplier", as_field(c)), label)

    @classmethod
    def identity(cls) -> "ObservableSpec":
        return cls.multiplier(1.0, "I")

    @classmethod
    def position(cls, axis: int = 0) -> "ObservableSpec":
        return cls.multiplier(("x", "y")[axis], f"x{axis}" if axis else "x")

    @classmethod
    def position_squared(cls, axis: int = 0) -> "ObservableSpec":
        f = Factor("multiplier", as_field(("x", "y")[axis]))
        return cls(f, f, f"x{axis}^2" if axis else "x^2")

    @classmethod
    def momentum_squared(cls, axis: int = 0) -> "ObservableSpec":
        """``P^2 = (-i d)* (-i d) = d* d``."""
        f = Factor("multiplier_times_derivative", as_field(1.0), axis)
        return cls(f, f, f"p{axis}^2" if axis else "p^2")

    def apply_pair(self, grid: GridSpec, X: np.ndarray, t: float = 0.0):
        return self.factor1.apply(grid, X, t), self.factor2.apply(grid, X, t)

    def check_growth(self, grid: GridSpec) -> list[tuple[str, float, bool]]:
        """Growth constants of the factor fields against the admissible classes."""
        from .probes import _growth_constant

        r = np.sqrt(grid.r2)
        w = {"1": np.ones(grid.shape), "1+|x|": 1 + r, "1+|x|^2": 1 + grid.r2}
        out = []
        for i, fac in enumerate((self.factor1, self.factor2), 1):
            f = fac.field
            if fac.kind == "derivative_times_multiplier":
                bounds = [("a", (), "1"), ("da", (0,), "1+|x|"), ("dda", (0, 0), "1+|x|^2")]
            elif fac.kind == "multiplier_times_derivative":
                bounds = [("b", (), "1"), ("db", (0,), "1+|x|")]
            else:
                bounds = [("c", (), "1+|x|"), ("dc", (0,), "1+|x|^2")]
            for name, axes, wn in bounds:
                for ax in range(grid.d) if axes else [None]:
                    axs = tuple(ax for _ in axes)
                    k, ok = _growth_constant(grid, f.d(grid, 0.0, *axs), w[wn])
                    out.append((f"B{i}.{name}", k, ok))
        return out


def expectation(A: ObservableSpec, psi, t: float = 0.0):
    """``<B1 psi, B2 psi>`` (complex; real for symmetric A up to round-off)."""
    grid = psi.grid
    b1, b2 = A.apply_pair(grid, psi.amplitudes, t)
    return complex(grid.inner(b1, b2))


# -- observers -------------------------------------------------------------------


def norm_observer(grid: GridSpec):
    return lambda t, X: grid.norm2(X)


def expectation_observer(A: ObservableSpec, grid: GridSpec):
    def obs(t, X):
        b1, b2 = A.apply_pair(grid, X, t)
        return grid.inner(b1, b2)

    return obs


def generator_observer(A: ObservableSpec, system: System):
    """Drift of ``<X, A X>``: ``<B1 X, B2 G X> + <B1 G X, B2 X> + sum <B1 L X, B2 L X>``."""
    g = system.grid

    def obs(t, X):
        GX = system.apply_G(t, X)
        b1x, b2x = A.apply_pair(g, X, t)
        b1g, b2g = A.apply_pair(g, GX, t)
        out = g.inner(b1x, b2g) + g.inner(b1g, b2x)
        for l in range(system.m):
            b1l, b2l = A.apply_pair(g, system.apply_L(t, X, l), t)
            out = out + g.inner(b1l, b2l)
        return out

    return obs


def energy_observer(system: System, imag_tol: float = 1e-10):
    """``<X, H X>``; the imaginary part must vanish (H is discretely symmetric)."""
    g = system.grid

    def obs(t, X):
        e = g.inner(X, system.apply_H(t, X))
        scale = np.maximum(np.abs(e), g.norm2(X))
        if np.any(np.abs(e.imag) > imag_tol * scale):
            raise AssertionError(f"<X, H X> has imaginary part {np.max(np.abs(e.imag)):.3g}")
        return e.real

    return obs


def c_norm_observer(system: System):
    return lambda t, X: system.grid.norm2(system.apply_C(X))


# -- statistics --------------------------------------------------------------------


@dataclass
class EnsembleSummary:
    """Per-time Monte Carlo statistics of named observables."""

    times: np.ndarray
    mean: dict[str, np.ndarray]
    variance: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    count: int
    weight_sum: float | None = None


def weighted_stats(values: np.ndarray, weights: np.ndarray | None = None):
    """Mean, variance and standard error along axis 0.

    With weights the mean is the ratio estimator ``sum w v / sum w`` and the
    standard error its delta-method estimate.
    """
    v = np.asarray(values)
    n = v.shape[0]
    if weights is None:
        mean = np.mean(v, axis=0)
        dev = v - mean
        var = np.mean(dev.real**2 + dev.imag**2, axis=0) * (n / max(n - 1, 1))
        return mean, var, np.sqrt(var / n)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    p = w / np.sum(w)
    wcol = p.reshape((-1,) + (1,) * (v.ndim - 1))
    mean = np.sum(wcol * v, axis=0)
    dev = v - mean
    var = np.sum(wcol * (dev.real**2 + dev.imag**2), axis=0)
    se = np.sqrt(np.sum(wcol**2 * (dev.real**2 + dev.imag**2), axis=0) * n / max(n - 1, 1))
    return mean, var, se


def summarize(record, names: Sequence[str] | None = None, weights: np.ndarray | None = None) -> EnsembleSummary:
    names = list(names or record.values)
    out = EnsembleSummary(record.times, {}, {}, {}, record.n_traj, None if weights is None else float(np.sum(weights)))
    for k in names:
        out.mean[k], out.variance[k], out.stderr[k] = weighted_stats(record.values[k], weights)
    return out


# -- Ehrenfest residual ----------------------------------------------------------------


@dataclass
class EhrenfestResult:
    times: np.ndarray
    residual: np.ndarray  # complex mean residual per sample time
    stderr: np.ndarray
    mean_value: np.ndarray


def ehrenfest_residual(values: np.ndarray, drifts: np.ndarray, times: np.ndarray) -> EhrenfestResult:
    """Residual of the mean-value evolution law.

    ``values[i, k] = <X_i, A X_i>`` and ``drifts[i, k]`` the generator integrand
    at ``times[k]``. Per trajectory the residual is
    ``values - values[:, :1] - trapezoid(drifts)``; the result is its ensemble
    mean with standard error.
    """
    v = np.asarray(values, dtype=complex)
    integ = cumulative_trapezoid(np.asarray(drifts, dtype=complex), times, axis=1, initial=0.0)
    per = (v - v[:, :1]) - integ
    mean, _, se = weighted_stats(per)
    return EhrenfestResult(np.asarray(times), mean, se, np.mean(v, axis=0))


# -- heating ------------------------------------------------------------------------------


@dataclass
class LineFit:
    slope: float
    intercept: float
    slope_stderr: float  # Monte Carlo, from per-trajectory slopes
    fit_stderr: float  # ordinary least squares, from residual variance


def fit_line(times: np.ndarray, per_traj: np.ndarray) -> LineFit:
    """OLS line through the ensemble mean of ``per_traj`` (shape ``(n, n_times)``)."""
    t = np.asarray(times, dtype=float)
    if t.size < 3:
        raise ValueError("a line fit needs at least three sample times")
    y = np.asarray(per_traj, dtype=float)
    tc = t - t.mean()
    sxx = float(tc @ tc)
    slopes = (y - y.mean(axis=1, keepdims=True)) @ tc / sxx
    mean = y.mean(axis=0)
    slope = float(tc @ (mean - mean.mean()) / sxx)
    intercept = float(mean.mean() - slope * t.mean())
    resid = mean - (intercept + slope * t)
    fit_se = float(np.sqrt(resid @ resid / (t.size - 2) / sxx))
    mc_se = float(np.std(slopes, ddof=1) / np.sqrt(len(slopes))) if len(slopes) > 1 else 0.0
    return LineFit(slope, intercept, mc_se, fit_se)


@dataclass
class HeatingResult:
    slope: float
    stderr: float
    fit_stderr: float
    reference: float
    intercept: float
    times: np.ndarray
    mean_H: np.ndarray
    stderr_H: np.ndarray
    mean_norm2: np.ndarray
    stderr_norm2: np.ndarray
    record: object = field(repr=False, default=None)

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.reference) / abs(self.reference) if self.reference else abs(self.slope)


def heating_experiment(
    M: float,
    omega: float,
    eta: float,
    T: float,
    dt: float,
    n_traj: int,
    seed: int,
    grid: GridSpec | None = None,
    sample_every: int | None = None,
    scheme: str = "crank_nicolson",
    potential: str = "harmonic",
    V0: float = 1.0,
    well_alpha: float = 0.5,
    threads: int = 1,
    refine: int = 1,
) -> HeatingResult:
    """Linear-ensemble energy growth in a trap with position-noise ``-i eta x``.

    Fits a line to ``mean <X_t, H X_t>`` and compares its slope with
    ``eta^2 / (2M)``.
    """
    from .integrate import SchemeConfig, run_ensemble
    from .noise import NoiseSource
    from .presets import get_preset, paul_trap

    preset = get_preset("paul-trap-e4")
    params = preset.params({"M": M, "omega": omega, "eta": eta})
    coeffs = paul_trap(params, potential=potential, V0=V0, well_alpha=well_alpha)
    grid = grid or preset.make_grid()
    system = System(coeffs, grid)
    width = float(np.sqrt(1.0 / (2.0 * M * abs(omega)))) if potential == "harmonic" else float(
        np.sqrt(1.0 / (2.0 * np.sqrt(2.0 * M * V0 * well_alpha)))
    )
    from .grid import make_gaussian

    xi = make_gaussian(grid, 0.0, width, 0.0)
    n_steps = round(T / dt)
    sample_every = sample_every or max(1, n_steps // 20)
    cfg = SchemeConfig(dt, scheme)
    rec = run_ensemble(
        system, xi, T, cfg, NoiseSource(seed, 1), n_traj,
        observers={"H": energy_observer(system), "norm2": norm_observer(grid)},
        sample_every=sample_every, threads=threads, refine=refine,
    )
    fit = fit_line(rec.times, rec.values["H"])
    mH, _, sH = weighted_stats(rec.values["H"])
    mN, _, sN = weighted_stats(rec.values["norm2"])
    return HeatingResult(
        fit.slope, fit.slope_stderr, fit.fit_stderr, eta**2 / (2.0 * M), fit.intercept,
        rec.times, mH, sH, mN, sN, rec,
    )


# -- regularity -------------------------------------------------------------------------


@dataclass
class RegularityResult:
    times: np.ndarray
    mean_CX2: np.ndarray
    stderr_CX2: np.ndarray
    bound: np.ndarray
    alpha: float
    violations: np.ndarray

    @property
    def ok(self) -> bool:
        return not bool(np.any(self.violations))


def regularity_monitor(c_norms: np.ndarray, norms: np.ndarray, times: np.ndarray, alpha: float) -> RegularityResult:
    """Compare ``mean |C X_t|^2`` with ``exp(t a)(mean |C xi|^2 + t a mean |xi|^2)``.

    ``c_norms`` and ``norms`` are per-trajectory ``|C X_t|^2`` and ``|X_t|^2``.
    Negative ``alpha`` estimates are clamped to zero, the smallest admissible
    rate. Violations are excesses beyond three standard errors (plus a
    relative round-off allowance of ``1e-12``).
    """
    a = max(float(alpha), 0.0)
    t = np.asarray(times, dtype=float)
    m, _, se = weighted_stats(np.asarray(c_norms, dtype=float))
    n0 = float(np.mean(np.asarray(norms)[:, 0]))
    bound = np.exp(t * a) * (m[0] + t * a * n0)
    return RegularityResult(t, m, se, bound, a, m > bound + 3 * se + 1e-12 * np.abs(bound))


# -- density estimates ---------------------------------------------------------------------


def density_estimate(states, weights=None, grid: GridSpec | None = None, max_dim: int = 64):
    """``rho = sum w_i |x_i><x_i| / sum w_i`` over normalized states.

    Without weights each state counts once (norm-preserving runs). For linear
    runs pass ``weights = |X_T|^2``; together with normalization this gives
    ``sum |X_i><X_i| / sum |X_i|^2``.
    """
    from .oracle import DensityMatrix

    if isinstance(states, WaveFunction):
        states = [states]
    if isinstance(states, (list, tuple)) and states and isinstance(states[0], WaveFunction):
        grid = states[0].grid
        arr = np.stack([s.amplitudes for s in states])
    else:
        arr = np.asarray(states, dtype=complex)
        if grid is None:
            raise ValueError("grid is required for raw state arrays")
    if grid.size > max_dim:
        raise ValueError(f"density matrices are limited to {max_dim} grid points, grid has {grid.size}")
    V = arr.reshape(arr.shape[0], -1) * np.sqrt(grid.weight)
    n2 = np.sum(np.abs(V) ** 2, axis=1)
    w = np.ones(len(V)) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    U = V * np.sqrt(w / n2)[:, None]
    rho = U.T @ U.conj() / np.sum(w)
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(grid, rho)


def girsanov_comparison(linear_values, linear_weights, nonlinear_values) -> dict:
    """Weighted-linear vs norm-preserving means of one observable at one time.

    ``linear_values`` are ``<X, A X> / |X|^2`` per trajectory.
    """
    ml, _, sl = weighted_stats(np.asarray(linear_values), linear_weights)
    mn, _, sn = weighted_stats(np.asarray(nonlinear_values))
    comb = float(np.sqrt(sl**2 + sn**2))
    return {"linear": complex(ml), "nonlinear": complex(mn), "difference": float(abs(ml - mn)), "combined_stderr": comb}


def observers_for(
    specs: Mapping[str, ObservableSpec], system: System, with_drift: bool = False
) -> dict:
    """Expectation observers (and optionally their generator drifts) by name."""
    out = {}
    for name, A in specs.items():
        out[name] = expectation_observer(A, system.grid)
        if with_drift:
            out["d:" + name] = generator_observer(A, system)
    return out
