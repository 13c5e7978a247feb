import numpy as np
import pytest
from hypothesis import given, strategies as st

from ssetraj.grid import GridSpec, WaveFunction, make_gaussian, random_state
from ssetraj.integrate import (
    BoundaryMassError,
    EnsembleRecord,
    Resolvent,
    SchemeConfig,
    StepFailure,
    Stepper,
    resolvent_apply,
    run_ensemble,
    run_trajectory,
    step_linear,
    step_nonlinear,
    step_regularized,
    time_grid,
)
from ssetraj.model import CoefficientSet, System, build_C
from ssetraj.noise import NoiseSource
from ssetraj.presets import get_preset


def small_e2():
    p = get_preset("position-measurement-e2")
    g = p.make_grid(oracle=True)
    return System(p.coefficients(), g), p.initial_state(g)


def test_free_euler_step_is_definition():
    g = GridSpec(1, 10.0, 128)
    s = System(CoefficientSet.create(0.5), g)
    x = make_gaussian(g, 0.0, 1.0, 0.5)
    out = step_linear(x, 0.0, [], s, SchemeConfig(1e-3))
    expect = x.amplitudes + 1e-3 * (0.5j * g.lap(x.amplitudes))
    assert np.array_equal(out.amplitudes, expect)


def test_mean_norm_change_is_second_order_exact_quadrature():
    # the step is quadratic in dW, so +-sqrt(dt) averages give the exact expectation
    s, x = small_e2()
    dt = 1e-3
    X = x.amplitudes[None]
    st_ = Stepper(s, SchemeConfig(dt), "linear")
    n2 = [s.grid.norm2(st_.step(X, 0.0, np.array([[v]])))[0] for v in (np.sqrt(dt), -np.sqrt(dt))]
    GX = s.apply_G(0.0, X)
    assert abs(np.mean(n2) - x.norm2 - dt**2 * s.grid.norm2(GX)[0]) < 1e-14


def test_mean_norm_change_monte_carlo():
    s, x = small_e2()
    dt = 1e-3
    X = np.broadcast_to(x.amplitudes, (10_000, *s.grid.shape))
    dW = NoiseSource(3, 1).increments(0, 0, 10_000, dt)
    d = s.grid.norm2(Stepper(s, SchemeConfig(dt)).step(X, 0.0, dW)) - x.norm2
    se = d.std(ddof=1) / np.sqrt(d.size)
    exact = dt**2 * s.grid.norm2(s.apply_G(0.0, x.amplitudes))
    assert abs(d.mean() - exact) <= 4 * se


@pytest.mark.parametrize("scheme", ["semi_implicit", "crank_nicolson"])
def test_implicit_eigenstate_keeps_direction(scheme):
    g = GridSpec(1, 8.0, 64)
    s = System(CoefficientSet.create(0.5, V="x^2/2"), g)
    w, v = np.linalg.eigh(s.sparse_H(0.0).toarray())
    x = WaveFunction(g, v[:, 0] / np.sqrt(g.h))
    y = step_linear(x, 0.0, [], s, SchemeConfig(1e-2, scheme))
    cos = abs(g.inner(x.amplitudes, y.amplitudes)) / np.sqrt(x.norm2 * y.norm2)
    assert abs(cos - 1) < 1e-8
    if scheme == "crank_nicolson":
        assert abs(y.norm2 - x.norm2) < 1e-10


def test_nonlinear_without_noise_is_normalized_linear():
    g = GridSpec(1, 6.0, 64)
    s = System(CoefficientSet.create(0.5, V="x^2/2"), g)
    x = make_gaussian(g, 1.0, 0.7, 0.3)
    cfg = SchemeConfig(1e-3)
    lin = step_linear(x, 0.0, [], s, cfg)
    raw = step_nonlinear(x, 0.0, [], s, SchemeConfig(1e-3, renormalize_nonlinear=False))
    assert np.allclose(raw.amplitudes, lin.amplitudes, atol=1e-15)
    assert abs(raw.norm2 - 1) < 10 * (1e-3) ** 2 * s.grid.norm2(s.apply_G(0, x.amplitudes))
    y = step_nonlinear(x, 0.0, [], s, cfg)
    assert abs(y.norm - 1) < 1e-14


@given(st.floats(-0.2, 0.2))
def test_nonlinear_renormalized_unit(dw):
    s, x = small_e2()
    y = step_nonlinear(x, 0.0, [dw], s, SchemeConfig(1e-3))
    assert abs(y.norm - 1) < 1e-14


def test_nonlinear_requires_unit_state():
    s, x = small_e2()
    with pytest.raises(ValueError):
        step_nonlinear(WaveFunction(x.grid, 2 * x.amplitudes), 0.0, [0.0], s, SchemeConfig(1e-3))


def test_nonlinear_localization_drift_two_bumps():
    # with H = 0, L = x and dW = 0 the mean of x moves by -dt * (third central moment)
    g = GridSpec(1, 8.0, 128)
    s = System(CoefficientSet.create(0.0, eta=["x"]), g)
    from ssetraj.grid import gaussian_values
    v = 0.8 * gaussian_values(g, -2.0, 0.5, 0.0) + 0.6 * gaussian_values(g, 2.0, 0.5, 0.0)
    y = WaveFunction(g, v / np.sqrt(g.norm2(v)))
    x = g.axis_points
    p = np.abs(y.amplitudes) ** 2 * g.h
    r = np.sum(p * x)
    mu3 = np.sum(p * (x - r) ** 3)
    dt = 1e-5
    y2 = step_nonlinear(y, 0.0, [0.0], s, SchemeConfig(dt))
    r2 = np.sum(np.abs(y2.amplitudes) ** 2 * g.h * x)
    assert np.sign(r2 - r) == np.sign(-mu3)
    assert abs((r2 - r) / dt + mu3) < 1e-3 * abs(mu3)


def test_nonlinear_collapse_raises():
    # H = 0, L = x, dW = 0 on a symmetric two-point state: Y' = (1 - a^2 dt / 2) Y
    g = GridSpec(1, 4.0, 16)
    s = System(CoefficientSet.create(0.0, eta=["x"]), g)
    x = g.axis_points
    i = 12
    v = np.zeros(g.shape, complex)
    v[i] = v[g.N - i] = 1.0
    y = v / np.sqrt(g.norm2(v))
    dt = 2.0 / x[i] ** 2
    with pytest.raises(StepFailure):
        Stepper(s, SchemeConfig(dt), "nonlinear").step(y[None], 0.0, np.zeros((1, 1)))


def test_time_grid():
    n, t = time_grid(1.0, 0.1, 2)
    assert n == 10 and len(t) == 6 and t[0] == 0.0
    assert np.all(np.diff(t) > 0)
    assert time_grid(0.0, 0.1, 1)[0] == 0
    with pytest.raises(ValueError):
        time_grid(1.0, 0.3, 1)


def test_zero_horizon_records_initial_only():
    s, x = small_e2()
    rec = run_trajectory(x, 0.0, s, SchemeConfig(1e-3), NoiseSource(0, 1),
                         observers={"n": lambda t, X: s.grid.norm2(X)})
    assert list(rec.times) == [0.0]
    assert rec.values["n"].shape == (1,)
    assert rec.girsanov_weight == pytest.approx(1.0)


def test_run_is_deterministic_across_threads():
    s, x = small_e2()
    obs = {"n": lambda t, X: s.grid.norm2(X)}
    runs = [run_ensemble(s, x, 0.05, SchemeConfig(1e-3), NoiseSource(5, 1), 20, observers=obs,
                         sample_every=10, threads=th, chunk_size=4) for th in (1, 3)]
    assert np.array_equal(runs[0].values["n"], runs[1].values["n"])
    assert np.array_equal(runs[0].final_states, runs[1].final_states)
    assert np.all(runs[0].weights > 0)


def test_single_trajectory_matches_ensemble_member():
    s, x = small_e2()
    noise = NoiseSource(5, 1)
    ens = run_ensemble(s, x, 0.02, SchemeConfig(1e-3), noise, 4)
    one = run_trajectory(x, 0.02, s, SchemeConfig(1e-3), noise, trajectory=2)
    assert np.array_equal(ens.final_states[2], one.final_state.amplitudes)


def test_refine_couples_to_fine_run():
    s, x = small_e2()
    noise = NoiseSource(8, 1)
    coarse = run_ensemble(s, x, 0.01, SchemeConfig(2e-3), noise, 2, refine=2)
    path = noise.increments(1, 0, 10, 1e-3).reshape(5, 2, 1).sum(axis=1)
    fixed = run_ensemble(s, x, 0.01, SchemeConfig(2e-3), None, 1, increments=path)
    assert np.allclose(coarse.final_states[1], fixed.final_states[0], atol=1e-15)


def test_paul_trap_stays_inside_box():
    p = get_preset("paul-trap-e4")
    g = p.make_grid()
    s = System(p.coefficients(), g)
    rec = run_ensemble(s, p.initial_state(g), 1.0, SchemeConfig(1e-3, "crank_nicolson"),
                       NoiseSource(0, 1), 4, sample_every=1000)
    mass = g.boundary_mass(rec.final_states, 1.0) / g.norm2(rec.final_states)
    assert np.all(mass < 1e-6)


def test_boundary_abort():
    g = GridSpec(1, 4.0, 32)
    s = System(CoefficientSet.create(0.5), g)
    x = make_gaussian(g, 2.0, 0.4)
    with pytest.raises(BoundaryMassError):
        run_ensemble(s, x, 0.01, SchemeConfig(1e-3), None, 1)


def test_noise_required():
    s, x = small_e2()
    with pytest.raises(ValueError):
        run_ensemble(s, x, 0.01, SchemeConfig(1e-3), None, 1)


def _dense_C(g):
    return System(CoefficientSet.create(0.0), g).sparse_C().toarray()


def test_resolvent_eigenpair():
    g = GridSpec(1, 4.0, 16)
    lam, vec = np.linalg.eigh(_dense_C(g))
    op = build_C(g)
    for k in (0, 5, 15):
        f = vec[:, k] / np.sqrt(g.h)
        for n in (1, 16, 256):
            u = resolvent_apply(n, f, op)
            assert np.allclose(u, n / (n + lam[k] ** 2) * f, atol=1e-9)


def test_resolvent_large_n_expansion():
    g = GridSpec(1, 10.0, 128)
    s = System(CoefficientSet.create(0.0), g)
    f = make_gaussian(g, 0.0, 1.0).amplitudes
    n = 1e6
    u = resolvent_apply(n, f, build_C(g))
    C2f = s.apply_C(s.apply_C(f))
    C4f = s.apply_C(s.apply_C(C2f))
    assert np.sqrt(g.norm2(u - (f - C2f / n))) <= np.sqrt(g.norm2(C4f)) / n**2 + 1e-10


@given(st.integers(0, 2**31), st.sampled_from([1, 3, 50]))
def test_resolvent_contracts_and_matches_direct(seed, n):
    g = GridSpec(1, 4.0, 16)
    s = System(CoefficientSet.create(0.0), g)
    f = random_state(g, np.random.default_rng(seed))
    u = resolvent_apply(n, f, build_C(g))
    assert u.norm <= f.norm * (1 + 1e-10)
    assert np.allclose(Resolvent(s, n)(f.amplitudes[None])[0], u.amplitudes, atol=1e-9)


def test_resolvent_rejects_small_n():
    g = GridSpec(1, 4.0, 16)
    with pytest.raises(ValueError):
        resolvent_apply(0.5, np.zeros(16), build_C(g))


def test_regularized_step_with_identity_noise():
    g = GridSpec(1, 4.0, 16)
    s = System(CoefficientSet.create(0.0, eta=[1.0]), g)  # L = I, so G = -I/2
    x = make_gaussian(g, 0.0, 0.7)
    dt, dw = 1e-2, 0.05
    R = np.linalg.inv(np.eye(g.size) + _dense_C(g) @ _dense_C(g))
    y = step_regularized(1, x, 0.0, [dw], s, SchemeConfig(dt))
    Rx = R @ x.amplitudes
    assert np.allclose(y.amplitudes, x.amplitudes - 0.5 * dt * R @ Rx + dw * Rx, atol=1e-12)


def test_regularized_large_n_matches_linear():
    s, x = small_e2()
    cfg = SchemeConfig(1e-3)
    a = step_regularized(1e12, x, 0.0, [0.03], s, cfg)
    b = step_linear(x, 0.0, [0.03], s, cfg)
    assert np.allclose(a.amplitudes, b.amplitudes, atol=1e-8)


def test_regularized_mean_norm_exact():
    s, x = small_e2()
    dt, n = 1e-3, 4
    st_ = Stepper(s, SchemeConfig(dt), "regularized", n_reg=n)
    X = x.amplitudes[None]
    n2 = [s.grid.norm2(st_.step(X, 0.0, np.array([[v]])))[0] for v in (np.sqrt(dt), -np.sqrt(dt))]
    R = st_.resolvent
    RGR = R(s.apply_G(0.0, R(X)))
    assert abs(np.mean(n2) - x.norm2 - dt**2 * s.grid.norm2(RGR)[0]) < 1e-14
    assert np.mean(n2) <= x.norm2 + dt**2 * s.grid.norm2(RGR)[0] + 1e-14


def test_regularized_needs_explicit_scheme():
    s, _ = small_e2()
    with pytest.raises(ValueError):
        Stepper(s, SchemeConfig(1e-3, "semi_implicit"), "regularized", n_reg=2)
    with pytest.raises(ValueError):
        Stepper(s, SchemeConfig(1e-3), "regularized")


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(0.0)
    with pytest.raises(ValueError):
        SchemeConfig(1e-3, "rk4")


def test_ensemble_record_counts():
    rec = EnsembleRecord(np.zeros(1), {}, "linear", final_states=np.zeros((3, 4)))
    assert rec.n_traj == 3
