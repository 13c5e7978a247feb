"""Time stepping for the linear, norm-preserving and resolvent-regularized SSEs.

All steppers work on batches ``X`` of shape ``(B, *grid.shape)`` with
increments ``dW`` of shape ``(B, m)``; the public ``step_*`` functions wrap
them for single :class:`~ssetraj.grid.WaveFunction` states.

Schemes for the drift ``G(t)``:

* ``euler_maruyama``: explicit, ``X + dt G X``.
* ``semi_implicit``: backward Euler, ``(I - dt G) X' = X + noise``.
* ``crank_nicolson``: trapezoidal, ``(I - dt/2 G) X' = (I + dt/2 G) X + noise``.
  Exactly unitary on the Hamiltonian part, so it adds no artificial damping.

The noise term is always the Ito increment ``sum_l L_l X dW_l``.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .grid import GridSpec, WaveFunction
from .model import OperatorHandle, System
from .noise import NoiseSource

SCHEMES = ("euler_maruyama", "semi_implicit", "crank_nicolson")
KINDS = ("linear", "nonlinear", "regularized")

try:  # keep BLAS single-threaded inside trajectory workers
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


class StepFailure(RuntimeError):
    """A step could not be completed (solver failure or degenerate state)."""


class BoundaryMassError(RuntimeError):
    """Probability reached the box edge; the truncated domain is no longer valid."""

    def __init__(self, trajectory: int, t: float, mass: float, threshold: float):
        super().__init__(
            f"trajectory {trajectory}: boundary mass {mass:.3g} exceeds {threshold:.3g} at t={t:.6g}"
        )
        self.trajectory, self.t, self.mass = trajectory, t, mass


@dataclass(frozen=True)
class SchemeConfig:
    """Time-stepping options.

    ``boundary_margin`` defaults to a tenth of the box half width.
    """

    dt: float
    scheme: str = "euler_maruyama"
    renormalize_nonlinear: bool = True
    abort_boundary_mass: float = 1e-6
    boundary_margin: float | None = None
    solver_tol: float = 1e-10

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")

    def margin(self, grid: GridSpec) -> float:
        return self.boundary_margin if self.boundary_margin is not None else grid.L / 10


def check_stability(system: System, cfg: SchemeConfig, t: float = 0.0) -> float:
    """``dt * |H|`` estimate; warns above 0.5 for the explicit scheme."""
    rho = cfg.dt * system.spectral_radius_H(t)
    if cfg.scheme == "euler_maruyama" and rho > 0.5:
        warnings.warn(f"dt * |H| = {rho:.3g} > 0.5: explicit stepping is likely unstable", stacklevel=2)
    return rho


def _flat(X: np.ndarray, grid: GridSpec) -> np.ndarray:
    return X.reshape(-1, grid.size).T


def _unflat(Y: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.ascontiguousarray(Y.T).reshape((-1, *grid.shape))


class _BandedLU:
    """LU factors of a banded sparse matrix via LAPACK ``gbtrf``."""

    def __init__(self, A: sp.spmatrix, kl: int, ku: int):
        A = A.tocoo()
        n = A.shape[0]
        ab = np.zeros((2 * kl + ku + 1, n), dtype=complex)
        ab[kl + ku + A.row - A.col, A.col] = A.data
        self.lu, self.piv, info = lapack.zgbtrf(ab, kl, ku)
        if info != 0:
            raise StepFailure(f"banded factorization failed (info={info})")
        self.kl, self.ku = kl, ku

    def solve(self, b: np.ndarray) -> np.ndarray:
        x, info = lapack.zgbtrs(self.lu, self.kl, self.ku, b, self.piv)
        if info != 0:
            raise StepFailure(f"banded solve failed (info={info})")
        return x


def factorize(A: sp.spmatrix):
    """Banded LAPACK LU when the band is narrow, sparse SuperLU otherwise."""
    A = A.tocoo()
    off = A.row.astype(np.int64) - A.col
    kl, ku = int(max(off.max(initial=0), 0)), int(max(-off.min(initial=0), 0))
    if kl + ku <= 8:
        return _BandedLU(A, kl, ku)
    return spla.splu(A.tocsc())


class DriftSolver:
    """Factorizations of ``I - theta dt G(t)`` memoized by time.

    Each new factorization is checked once against the matrix-free ``G`` to
    relative residual ``tol``; later solves with it only check finiteness.
    Not thread-safe; each worker keeps its own.
    """

    def __init__(self, system: System, dt: float, theta: float, tol: float, cache_size: int = 4):
        self.system, self.dt, self.theta, self.tol = system, dt, theta, tol
        self._lu: dict = {}
        self._cache_size = cache_size

    def _residual(self, t, out, rhs) -> float:
        g = self.system.grid
        res = out - self.theta * self.dt * self.system.apply_G(t, out) - rhs
        return float(np.sqrt(np.max(g.norm2(res) / np.maximum(g.norm2(rhs), 1e-300))))

    def solve(self, t: float, rhs: np.ndarray) -> np.ndarray:
        g = self.system.grid
        key = self.system.time_key(t)
        lu = self._lu.get(key)
        fresh = lu is None
        if fresh:
            n = g.size
            A = sp.identity(n, dtype=complex, format="csr") - self.theta * self.dt * self.system.sparse_G(t)
            lu = factorize(A)
            if len(self._lu) >= self._cache_size:
                self._lu.pop(next(iter(self._lu)))
            self._lu[key] = lu
        out = _unflat(lu.solve(_flat(rhs, g)), g)
        if fresh:
            rel = self._residual(t, out, rhs)
            if not rel <= self.tol:
                raise StepFailure(f"implicit drift solve residual {rel:.3g} exceeds {self.tol:.3g} at t={t:.6g}")
        elif not np.all(np.isfinite(out)):
            raise StepFailure(f"implicit drift solve produced non-finite values at t={t:.6g}")
        return out


class Resolvent:
    """``R_n = n (n + C^2)^{-1}`` by a cached sparse factorization."""

    def __init__(self, system: System, n: float, tol: float = 1e-10):
        if not n >= 1:
            raise ValueError(f"n must be >= 1, got {n}")
        self.system, self.n, self.tol = system, float(n), tol
        C = system.sparse_C()
        self._lu = factorize((self.n * sp.identity(system.grid.size) + C @ C).astype(complex))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        g = self.system.grid
        U = _unflat(self._lu.solve(_flat(self.n * X, g)), g)
        res = self.n * U + self.system.apply_C(self.system.apply_C(U)) - self.n * X
        rel = float(np.sqrt(np.max(g.norm2(res) / np.maximum(g.norm2(self.n * X), 1e-300))))
        if not rel <= self.tol:
            raise StepFailure(f"resolvent solve residual {rel:.3g} exceeds {self.tol:.3g}")
        return U


def resolvent_apply(n: float, f, C_op: OperatorHandle, tol: float = 1e-10, maxiter: int | None = None):
    """Solve ``(n + C^2) u = n f`` matrix-free by conjugate gradients.

    ``f`` may be a WaveFunction or a single grid array. Raises
    :class:`StepFailure` when the iteration does not reach ``tol``.
    """
    if not n >= 1:
        raise ValueError(f"n must be >= 1, got {n}")
    grid = C_op.grid
    arr = f.amplitudes if isinstance(f, WaveFunction) else np.asarray(f, dtype=complex)
    shape = arr.shape

    def matvec(v):
        v = v.reshape(shape)
        return (n * v + C_op.apply(0.0, C_op.apply(0.0, v))).ravel()

    op = spla.LinearOperator((arr.size, arr.size), matvec=matvec, dtype=complex)
    b = n * arr.ravel()
    iters = [0]

    def count(_):
        iters[0] += 1

    maxiter = maxiter or 20 * arr.size
    u, info = spla.cg(op, b, rtol=tol, atol=0.0, maxiter=maxiter, callback=count)
    res = np.linalg.norm(matvec(u) - b) / max(np.linalg.norm(b), 1e-300)
    if info != 0 or res > tol * 1.01:
        raise StepFailure(f"conjugate gradients stopped after {iters[0]} iterations, relative residual {res:.3g}")
    u = u.reshape(shape)
    return WaveFunction(grid, u) if isinstance(f, WaveFunction) else u


class Stepper:
    """Advance a batch by one step of the chosen equation.

    Parameters
    ----------
    system : System
    cfg : SchemeConfig
    kind : {"linear", "nonlinear", "regularized"}
    n_reg : float, optional
        Resolvent parameter for ``kind="regularized"``.
    """

    def __init__(self, system: System, cfg: SchemeConfig, kind: str = "linear", n_reg: float | None = None):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
        self.system, self.cfg, self.kind = system, cfg, kind
        self.theta = {"euler_maruyama": 0.0, "semi_implicit": 1.0, "crank_nicolson": 0.5}[cfg.scheme]
        self.solver = DriftSolver(system, cfg.dt, self.theta, cfg.solver_tol) if self.theta else None
        self.resolvent = None
        if kind == "regularized":
            if n_reg is None:
                raise ValueError("regularized stepping needs n_reg")
            if self.theta:
                raise ValueError("regularized stepping is defined with the explicit scheme only")
            self.resolvent = Resolvent(system, n_reg, cfg.solver_tol)

    def _noise(self, t, X, dW):
        out = np.zeros_like(X)
        for l in range(self.system.m):
            out = out + self.system.apply_L(t, X, l) * _col(dW[:, l], X)
        return out

    def _drift_update(self, t, X, explicit):
        """``X'`` from ``X + dt G X + explicit`` under the configured scheme."""
        dt = self.cfg.dt
        if self.theta == 0.0:
            return X + dt * self.system.apply_G(t, X) + explicit
        rhs = X + explicit
        if self.theta < 1.0:
            rhs = rhs + (1.0 - self.theta) * dt * self.system.apply_G(t, X)
        return self.solver.solve(t, rhs)

    def step(self, X: np.ndarray, t: float, dW: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return self._drift_update(t, X, self._noise(t, X, dW))
        if self.kind == "nonlinear":
            return self._step_nonlinear(X, t, dW)
        return self._step_regularized(X, t, dW)

    def _step_nonlinear(self, Y, t, dW):
        s, g, dt = self.system, self.system.grid, self.cfg.dt
        extra = np.zeros_like(Y)
        for l in range(s.m):
            LY = s.apply_L(t, Y, l)
            r = _col(g.inner(Y, LY).real, Y)
            extra = extra + (r * LY - 0.5 * r**2 * Y) * dt + (LY - r * Y) * _col(dW[:, l], Y)
        out = self._drift_update(t, Y, extra)
        nrm = np.sqrt(g.norm2(out))
        if np.any(nrm < 1e-6):
            raise StepFailure(f"state norm collapsed to {nrm.min():.3g} at t={t:.6g}")
        if self.cfg.renormalize_nonlinear:
            out = out / _col(nrm, out)
        return out

    def _step_regularized(self, X, t, dW):
        s, R = self.system, self.resolvent
        RX = R(X)
        return X + self.cfg.dt * R(s.apply_G(t, RX)) + self._noise(t, RX, dW)


def _col(v, X):
    """Reshape a per-row vector to broadcast against a batch ``X``."""
    return np.reshape(v, (-1,) + (1,) * (X.ndim - 1))


def _batch(f) -> np.ndarray:
    return f.amplitudes[None] if isinstance(f, WaveFunction) else np.asarray(f)[None]


def _dw(dW, m) -> np.ndarray:
    return np.asarray(dW, dtype=float).reshape(1, m)


def step_linear(X: WaveFunction, t: float, dW, system: System, cfg: SchemeConfig) -> WaveFunction:
    out = Stepper(system, cfg, "linear").step(_batch(X), t, _dw(dW, system.m))
    return WaveFunction(X.grid, out[0])


def step_nonlinear(Y: WaveFunction, t: float, dW, system: System, cfg: SchemeConfig) -> WaveFunction:
    if abs(Y.norm - 1.0) > 1e-8:
        raise ValueError(f"nonlinear step needs a unit state, got norm {Y.norm:.12g}")
    out = Stepper(system, cfg, "nonlinear").step(_batch(Y), t, _dw(dW, system.m))
    return WaveFunction(Y.grid, out[0])


def step_regularized(n: float, X: WaveFunction, t: float, dW, system: System, cfg: SchemeConfig) -> WaveFunction:
    out = Stepper(system, cfg, "regularized", n_reg=n).step(_batch(X), t, _dw(dW, system.m))
    return WaveFunction(X.grid, out[0])


# -- trajectory and ensemble runners ----------------------------------------------

Observer = Callable[[float, np.ndarray], np.ndarray]


def time_grid(T: float, dt: float, sample_every: int) -> tuple[int, np.ndarray]:
    """Step count and sample times; rejects horizons not on the sample lattice."""
    if T < 0:
        raise ValueError(f"T must be non-negative, got {T}")
    if int(sample_every) != sample_every or sample_every < 1:
        raise ValueError(f"sample_every must be a positive integer, got {sample_every}")
    spacing = sample_every * dt
    n_samples = round(T / spacing)
    if abs(n_samples * spacing - T) > 1e-12 * max(1.0, T):
        raise ValueError(f"sample spacing {spacing:.17g} does not divide T = {T:.17g}")
    return n_samples * sample_every, np.arange(n_samples + 1) * spacing


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    values: dict[str, np.ndarray]
    final_state: WaveFunction
    final_norm2: float
    girsanov_weight: float | None
    snapshots: np.ndarray | None = None


@dataclass
class EnsembleRecord:
    """Per-trajectory samples: ``values[name]`` has shape ``(n_traj, n_times)``."""

    times: np.ndarray
    values: dict[str, np.ndarray]
    kind: str
    final_states: np.ndarray | None = None
    weights: np.ndarray | None = None
    snapshots: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_traj(self) -> int:
        first = next(iter(self.values.values()), None)
        if first is not None:
            return first.shape[0]
        return 0 if self.final_states is None else self.final_states.shape[0]


@dataclass
class _Plan:
    system: System
    cfg: SchemeConfig
    kind: str
    n_reg: float | None
    observers: Mapping[str, Observer]
    n_steps: int
    sample_every: int
    times: np.ndarray
    keep_final: bool
    keep_snapshots: bool
    noise: NoiseSource | None
    refine: int
    increments: np.ndarray | None


def _run_chunk(plan: _Plan, X0: np.ndarray, trajs: list[int]):
    s, cfg, g = plan.system, plan.cfg, plan.system.grid
    stepper = Stepper(s, cfg, plan.kind, plan.n_reg)
    X = np.array(X0, dtype=complex)
    B = X.shape[0]
    n_t = len(plan.times)
    vals = {k: None for k in plan.observers}
    snaps = np.empty((B, n_t, *g.shape), dtype=complex) if plan.keep_snapshots else None
    margin = cfg.margin(g)

    def record(i, t):
        mass = g.boundary_mass(X, margin) / np.maximum(g.norm2(X), 1e-300)
        bad = np.nonzero(mass > cfg.abort_boundary_mass)[0]
        if bad.size:
            b = int(bad[0])
            raise BoundaryMassError(trajs[b], t, float(mass[b]), cfg.abort_boundary_mass)
        for name, obs in plan.observers.items():
            v = np.asarray(obs(t, X))
            if vals[name] is None:
                vals[name] = np.empty((B, n_t), dtype=v.dtype)
            vals[name][:, i] = v
        if snaps is not None:
            snaps[:, i] = X

    record(0, 0.0)
    step, dt, r = 0, cfg.dt, plan.refine
    for i in range(1, n_t):
        k = plan.sample_every
        if plan.increments is not None:
            dW = plan.increments[step : step + k][:, None, :].repeat(B, axis=1)
        elif s.m:
            fine = plan.noise.batch(trajs, step * r, k * r, dt / r)
            dW = fine.reshape(k, r, B, s.m).sum(axis=1) if r > 1 else fine
        else:
            dW = np.zeros((k, B, 0))
        for j in range(k):
            X = stepper.step(X, (step + j) * dt, dW[j])
        step += k
        record(i, plan.times[i])
    return vals, X, snaps


def run_ensemble(
    system: System,
    xi,
    T: float,
    cfg: SchemeConfig,
    noise: NoiseSource | None,
    n_traj: int,
    kind: str = "linear",
    observers: Mapping[str, Observer] | None = None,
    sample_every: int = 1,
    n_reg: float | None = None,
    threads: int = 1,
    chunk_size: int = 64,
    keep_final: bool = False,
    keep_snapshots: bool = False,
    first_trajectory: int = 0,
    refine: int = 1,
    increments: np.ndarray | None = None,
) -> EnsembleRecord:
    """Run ``n_traj`` trajectories from ``xi`` to ``T``.

    Trajectories are split into fixed chunks of ``chunk_size`` independent of
    ``threads``, and every reduction runs in trajectory order, so the output
    does not depend on the thread count.

    ``refine`` draws increments on a ``dt / refine`` lattice and sums them,
    which couples runs at different ``dt`` through one Brownian path.
    ``increments`` (shape ``(n_steps, m)``) overrides the noise source with a
    fixed path shared by all trajectories.
    """
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    g = system.grid
    x0 = xi.amplitudes if isinstance(xi, WaveFunction) else np.asarray(xi, dtype=complex)
    if kind == "nonlinear" and abs(g.norm2(x0) - 1.0) > 1e-8:
        raise ValueError("nonlinear runs need a normalized initial state")
    n_steps, times = time_grid(T, cfg.dt, sample_every)
    if increments is not None:
        increments = np.asarray(increments, dtype=float).reshape(n_steps, system.m)
    elif noise is None and system.m:
        raise ValueError("a noise source is required when the model has noise channels")
    check_stability(system, cfg)
    plan = _Plan(
        system, cfg, kind, n_reg, dict(observers or {}), n_steps, sample_every, times,
        keep_final or kind != "nonlinear", keep_snapshots, noise, int(refine), increments,
    )
    ids = list(range(first_trajectory, first_trajectory + n_traj))
    chunks = [ids[i : i + chunk_size] for i in range(0, n_traj, chunk_size)]

    def work(trajs):
        X0 = np.broadcast_to(x0, (len(trajs), *g.shape))
        return _run_chunk(plan, X0, trajs)

    if threads > 1 and len(chunks) > 1:
        ctx = threadpool_limits(1) if threadpool_limits else _null()
        with ctx, ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    values = {
        name: np.concatenate([r[0][name] for r in results], axis=0) for name in plan.observers
    }
    finals = np.concatenate([r[1] for r in results], axis=0)
    snaps = np.concatenate([r[2] for r in results], axis=0) if keep_snapshots else None
    weights = g.norm2(finals) if kind in ("linear", "regularized") else None
    return EnsembleRecord(
        times, values, kind,
        final_states=finals if (keep_final or kind != "nonlinear") else None,
        weights=weights, snapshots=snaps,
        meta={"dt": cfg.dt, "scheme": cfg.scheme, "n_reg": n_reg, "chunk_size": chunk_size},
    )


class _null:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def run_trajectory(
    xi,
    T: float,
    system: System,
    cfg: SchemeConfig,
    noise: NoiseSource | None,
    kind: str = "linear",
    observers: Mapping[str, Observer] | None = None,
    trajectory: int = 0,
    sample_every: int = 1,
    n_reg: float | None = None,
    keep_snapshots: bool = False,
    increments: np.ndarray | None = None,
) -> TrajectoryRecord:
    """One trajectory; see :func:`run_ensemble` for the options."""
    rec = run_ensemble(
        system, xi, T, cfg, noise, 1, kind, observers, sample_every, n_reg,
        keep_final=True, keep_snapshots=keep_snapshots, first_trajectory=trajectory,
        increments=increments,
    )
    final = WaveFunction(system.grid, rec.final_states[0])
    n2 = final.norm2
    return TrajectoryRecord(
        rec.times,
        {k: v[0] for k, v in rec.values.items()},
        final,
        n2,
        n2 if kind == "linear" else None,
        rec.snapshots[0] if keep_snapshots else None,
    )


def fixed_path(noise: NoiseSource, trajectory: int, n_steps: int, dt: float, refine: int = 1) -> np.ndarray:
    """Increments ``(n_steps, m)`` of one trajectory, optionally built from a finer lattice."""
    fine = noise.increments(trajectory, 0, n_steps * refine, dt / refine)
    return fine.reshape(n_steps, refine, -1).sum(axis=1)


def default_threads() -> int:
    import os

    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))

