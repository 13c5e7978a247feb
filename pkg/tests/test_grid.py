import numpy as np
import pytest
from hypothesis import given, strategies as st

from ssetraj.grid import (
    GridSpec,
    WaveFunction,
    apply_derivative,
    apply_laplacian,
    apply_multiplier,
    boundary_mass,
    inner_product,
    make_gaussian,
    random_state,
)

seeds = st.integers(0, 2**32 - 1)


def test_gridspec_validation():
    for bad in ({"dimension": 3}, {"points_per_axis": 7}, {"points_per_axis": 4},
                {"half_width": -1.0}, {"boundary": "neumann"}):
        with pytest.raises(ValueError):
            GridSpec(**bad)
    with pytest.raises(ValueError):
        GridSpec(2, 10.0, 2**14)


def test_normalized_gaussian_inner_is_one():
    f = make_gaussian(GridSpec(), 0.0, 1.0, 0.0)
    assert abs(inner_product(f, f) - 1) < 1e-12
    assert abs(f.norm2 - 1) < 1e-10


@given(seeds)
def test_inner_product_conjugate_symmetric_and_linear(seed):
    g = GridSpec(1, 5.0, 64)
    r = np.random.default_rng(seed)
    f, h = random_state(g, r), random_state(g, r)
    assert abs(inner_product(f, h) - np.conj(inner_product(h, f))) < 1e-14
    assert abs(inner_product(f, h * 1j) - 1j * inner_product(f, h)) < 1e-14


def test_inner_product_grid_mismatch():
    a = make_gaussian(GridSpec(1, 10.0, 256))
    b = make_gaussian(GridSpec(1, 10.0, 128))
    with pytest.raises(ValueError):
        inner_product(a, b)


@pytest.mark.parametrize("m", [1, 3, 10])
def test_periodic_plane_wave_eigenvalues(m):
    g = GridSpec(1, 4.0, 64, "periodic")
    k = 2 * np.pi * m / (2 * g.L)
    f = WaveFunction(g, np.exp(1j * k * g.axis_points))
    lap = apply_laplacian(f).amplitudes
    assert np.allclose(lap, -(2 / g.h**2) * (1 - np.cos(k * g.h)) * f.amplitudes, atol=1e-11)
    der = apply_derivative(f, 0).amplitudes
    assert np.allclose(der, 1j * np.sin(k * g.h) / g.h * f.amplitudes, atol=1e-12)


def test_constant_periodic_annihilated():
    g = GridSpec(2, 3.0, 16, "periodic")
    f = WaveFunction(g, np.ones(g.shape))
    assert np.max(np.abs(apply_laplacian(f).amplitudes)) < 1e-12
    assert np.max(np.abs(apply_derivative(f, 1).amplitudes)) < 1e-12


def _lap_residual(N):
    g = GridSpec(1, 10.0, N)
    x = g.axis_points
    f = np.exp(-x**2 / 2)
    exact = (x**2 - 1) * f
    r = apply_laplacian(WaveFunction(g, f)).amplitudes - exact
    return np.sqrt(g.norm2(r) / g.norm2(f))


def test_laplacian_second_order():
    r = [_lap_residual(N) for N in (128, 256, 512)]
    assert r[1] < 1e-2
    for a, b in zip(r, r[1:]):
        assert 4 * 0.8 <= a / b <= 4 * 1.2


@pytest.mark.parametrize("boundary", ["dirichlet", "periodic"])
@given(seed=seeds)
def test_derivative_antisymmetric(boundary, seed):
    g = GridSpec(1, 5.0, 32, boundary)
    r = np.random.default_rng(seed)
    f, h = random_state(g, r), random_state(g, r)
    s = inner_product(f, apply_derivative(h, 0)) + inner_product(apply_derivative(f, 0), h)
    assert abs(s) < 1e-12 * max(1.0, 1 / g.h)


def test_derivative_axis_rejected():
    with pytest.raises(ValueError):
        apply_derivative(make_gaussian(GridSpec()), 1)


@given(seeds)
def test_real_multiplier_self_adjoint(seed):
    g = GridSpec(2, 4.0, 16)
    r = np.random.default_rng(seed)
    f, h = random_state(g, r), random_state(g, r)
    phi = g.r2
    assert abs(inner_product(f, apply_multiplier(h, phi)) - inner_product(apply_multiplier(f, phi), h)) < 1e-12
    assert np.array_equal(apply_multiplier(f, 1.0).amplitudes, f.amplitudes)


def test_multiplier_rejects_nonfinite():
    g = GridSpec(1, 5.0, 32)
    phi = np.ones(g.shape)
    phi[3] = np.inf
    with pytest.raises(ValueError):
        apply_multiplier(make_gaussian(g, 0, 1), phi)


def test_multiplier_pointwise():
    g = GridSpec()
    f = make_gaussian(g, 0.5, 1.0, 1.0)
    assert np.array_equal(apply_multiplier(f, g.r2).amplitudes, g.r2 * f.amplitudes)


def test_gaussian_overlap_and_rejection():
    g = GridSpec()
    a, b = make_gaussian(g, 3.0, 0.5), make_gaussian(g, -3.0, 0.5)
    # overlap of two unit Gaussians of width w at distance d is exp(-d^2 / 8w^2)
    assert abs(abs(inner_product(a, b)) - np.exp(-18.0)) < 1e-12
    with pytest.raises(ValueError):
        make_gaussian(g, 8.0, 1.0)
    with pytest.raises(ValueError):
        make_gaussian(g, 0.0, -1.0)


def test_gaussian_mean_position():
    g = GridSpec()
    f = make_gaussian(g, 1.3, 0.8, 0.7)
    mean = g.inner(f.amplitudes, g.axis_points * f.amplitudes).real
    assert abs(mean - 1.3) < 1e-10


def test_boundary_mass():
    g = GridSpec()
    assert boundary_mass(make_gaussian(g, 0.0, 1.0), 2.0) < 1e-10
    u = WaveFunction(g, np.ones(g.shape))
    shell = np.sum(np.abs(g.axis_points) > g.L - 2.0)
    assert abs(boundary_mass(u, 2.0) / u.norm2 - shell / g.N) < 1e-14
    g2 = GridSpec(1, 5.0, 64)
    f = np.where(np.abs(g2.axis_points) < 2.0, 1.0, 0.0)
    assert boundary_mass(WaveFunction(g2, f), 1.0) == 0.0


def test_sparse_matrices_match_stencils(rng):
    for g in (GridSpec(1, 3.0, 16), GridSpec(2, 3.0, 12, "periodic")):
        f = random_state(g, rng).amplitudes
        for j in range(g.d):
            assert np.allclose((g.deriv_matrix(j) @ f.ravel()).reshape(g.shape), g.deriv(f, j), atol=1e-13)
        assert np.allclose((g.lap_matrix @ f.ravel()).reshape(g.shape), g.lap(f), atol=1e-11)


def test_wavefunction_read_only_and_finite():
    g = GridSpec(1, 5.0, 16)
    f = make_gaussian(g, 0, 1)
    with pytest.raises(ValueError):
        f.amplitudes[0] = 1.0
    bad = np.zeros(g.shape, complex)
    bad[0] = np.nan
    with pytest.raises(ValueError):
        WaveFunction(g, bad)
