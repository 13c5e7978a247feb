import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, strategies as st

from ssetraj.grid import GridSpec, WaveFunction, make_gaussian, random_state
from ssetraj.model import (
    CoefficientSet,
    System,
    build_C,
    build_G,
    build_H,
    build_L,
    dissipation_residual,
    operator_scale,
)
from ssetraj.presets import PRESETS, get_preset
from ssetraj.probes import check_growth, check_phase_condition, estimate_alpha, gaussian_battery

seeds = st.integers(0, 2**32 - 1)


def harmonic(grid=None):
    c = CoefficientSet.create(0.5, V="x^2/2")
    return System(c, grid or GridSpec(1, 10.0, 256))


# dense eigensolve of the N=256, L=10 harmonic Hamiltonian (frozen)
HARMONIC_GROUND_N256 = 0.49980919


def _ground_energy():
    s = harmonic()
    vals = spla.eigsh(s.sparse_H(0.0), k=2, sigma=0.0, which="LM", return_eigenvectors=False)
    return float(min(vals.real)), s.grid.h


def test_harmonic_ground_energy_matches_dense_oracle():
    e, h = _ground_energy()
    assert abs(e - HARMONIC_GROUND_N256) < 1e-7
    # second-order stencil bias: -h^2 <p^4> / 24 = -h^2 / 16 for the ground state
    assert abs(e - 0.5) < 1.1 * h**2 / 16


@pytest.mark.xfail(strict=True, reason="stencil bias on this grid is 1.9e-4, larger than 1e-4")
def test_harmonic_ground_energy_within_1e4():
    e, _ = _ground_energy()
    assert abs(e - 0.5) < 1e-4


def test_zero_hamiltonian_is_zero():
    s = System(CoefficientSet.create(0.0), GridSpec(1, 5.0, 32))
    f = random_state(s.grid, np.random.default_rng(0)).amplitudes
    assert np.max(np.abs(s.apply_H(0.0, f))) == 0.0


def test_coefficient_validation():
    with pytest.raises(ValueError):
        CoefficientSet.create(-1.0)
    with pytest.raises(ValueError):
        CoefficientSet.create(1.0, sigma=[[1]], eta=[])
    with pytest.raises(ValueError):
        System(CoefficientSet.create(0.5, V="I*x"), GridSpec(1, 5.0, 16)).apply_H(0.0, np.zeros(16))


def test_channel_range():
    s = System(CoefficientSet.create(0.5, eta=["x"]), GridSpec(1, 5.0, 16))
    with pytest.raises(ValueError):
        s.apply_L(0.0, np.zeros(16), 1)


@pytest.mark.parametrize("name", sorted(PRESETS))
@given(seed=seeds)
def test_hamiltonian_symmetric_and_adjoint_pairs(name, seed):
    p = get_preset(name)
    g = p.make_grid(oracle=True)
    s = System(p.coefficients(), g)
    r = np.random.default_rng(seed)
    f, h = random_state(g, r).amplitudes, random_state(g, r).amplitudes
    t = 0.7
    scale = operator_scale(s, t)
    assert abs(g.inner(f, s.apply_H(t, h)) - g.inner(s.apply_H(t, f), h)) < 1e-12 * scale
    for l in range(s.m):
        assert abs(g.inner(f, s.apply_L(t, h, l)) - g.inner(s.apply_Lstar(t, f, l), h)) < 1e-12 * scale
    assert abs(g.inner(f, s.apply_G(t, h)) - g.inner(s.apply_Gstar(t, f), h)) < 1e-12 * scale


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_dissipation_identity_exact(name):
    p = get_preset(name)
    g = p.make_grid()
    s = System(p.coefficients(), g)
    r = np.random.default_rng(1)
    scale = operator_scale(s, 0.3)
    for _ in range(10):
        f = random_state(g, r)
        assert dissipation_residual(s, 0.3, f) <= 1e-12 * f.norm2 * scale


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_sparse_matches_matrix_free(name):
    p = get_preset(name)
    g = p.make_grid(oracle=True)
    s = System(p.coefficients(), g)
    f = random_state(g, np.random.default_rng(2)).amplitudes
    t = 0.4
    assert np.allclose(s.sparse_H(t) @ f, s.apply_H(t, f), atol=1e-11)
    assert np.allclose(s.sparse_G(t) @ f, s.apply_G(t, f), atol=1e-11)
    for l in range(s.m):
        assert np.allclose(s.sparse_L(t, l) @ f, s.apply_L(t, f, l), atol=1e-11)
    assert np.allclose(s.sparse_C() @ f, s.apply_C(f), atol=1e-11)


def test_handles_wrap_wavefunctions():
    p = get_preset("qbm-e1")
    g = p.make_grid(oracle=True)
    c = p.coefficients()
    f = make_gaussian(g, 0.0, 1.0)
    for op in (build_H(c, g), build_G(c, g), build_L(c, g, 0), build_C(g)):
        out = op(0.0, f)
        assert isinstance(out, WaveFunction)
        back = op.adjoint.adjoint_apply(0.0, f)
        assert np.allclose(back.amplitudes, out.amplitudes)


def test_phase_condition():
    g = GridSpec(1, 5.0, 64)
    assert check_phase_condition(get_preset("qbm-e1").coefficients(), g) == 0.0
    c = CoefficientSet.create(0.5, sigma=[["exp(I*x)"]], eta=[0])
    assert abs(check_phase_condition(c, g) - 2.0) < 1e-12


def test_growth_bounds_paul_trap():
    g = GridSpec(1, 10.0, 256)
    rep = check_growth(get_preset("paul-trap-e4").coefficients(), g)
    assert rep.get("V").constant == pytest.approx(0.5, rel=0.05)
    assert rep.hamiltonian_ok and rep.noise_ok
    assert rep.constant_sigma_ok
    assert "noise branch satisfied" in rep.summary()


def test_growth_flags_quartic_potential():
    rep = check_growth(CoefficientSet.create(0.5, V="x^4"), GridSpec(1, 10.0, 256))
    assert not rep.get("V").bounded and not rep.hamiltonian_ok


def test_gaussian_battery_and_alpha():
    g = GridSpec(1, 10.0, 256)
    states = gaussian_battery(g, 10, seed=0, corners=True)
    assert len(states) == 10
    for s in states:
        assert abs(s.norm2 - 1) < 1e-12
        assert s.grid.boundary_mass(s.amplitudes, 1.0) < 1e-4
    free = System(CoefficientSet.create(0.5), g)
    # pure Hamiltonian dynamics with V=0: the ratio reduces to <Cx, [C, -iH]x> terms only
    assert np.isfinite(estimate_alpha(free, 0.0, states))
    with pytest.raises(ValueError):
        estimate_alpha(free, 0.0, [])


def test_autonomy_and_cache():
    s = System(get_preset("laser-e3").coefficients(), GridSpec(1, 20.0, 64))
    assert not s.coeffs.autonomous
    assert s.at(1.0) is s.at(1.0)
    a = System(get_preset("qbm-e1").coefficients(), GridSpec(1, 5.0, 32))
    assert a.at(0.0) is a.at(3.0)
