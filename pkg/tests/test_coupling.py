import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photoion.coupling import (
    CouplingModel,
    DivergentCouplingError,
    KernelTable,
    TruncatedElectron,
    apply_g,
    apply_w01,
    apply_w10,
    g_weighted_norm,
    lambda_constants,
    polarization_vectors,
    w2_kernels_at,
)
from photoion.electron import ElectronModel, electron_function_from_callable
from photoion.photon_field import product_grid

K1 = np.array([0.7, -0.4, 1.1])
K2 = np.array([-0.3, 0.9, 0.5])


@pytest.fixture(scope="module")
def model():
    return ElectronModel(6.25, 1.0, n_r=800, l_max=6)


@pytest.fixture(scope="module")
def coupling(model):
    return CouplingModel.for_model(model)


@pytest.fixture(scope="module")
def electron(model):
    return TruncatedElectron.build(model)


@pytest.fixture(scope="module")
def table(coupling, electron):
    return KernelTable(coupling, electron, product_grid(0.0, 16.0, 8, 4, 8, 2))


def test_default_widths(model, coupling):
    np.testing.assert_allclose(coupling.kappa_width, 3 * np.sqrt(1.7329078), rtol=1e-6)
    np.testing.assert_allclose(coupling.mu_width, 3.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3).filter(lambda v: np.hypot(v[0], v[1]) > 1e-3))
def test_polarization_basis_is_right_handed(k):
    k = np.asarray(k)
    eps = polarization_vectors(k)[0]
    frame = np.array([eps[0], eps[1], k / np.linalg.norm(k)])
    np.testing.assert_allclose(frame @ frame.T, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(frame), 1.0, atol=1e-12)


def test_zero_kappa_gives_zero_output(model, coupling, electron):
    off = coupling.scaled(0.0)
    psi = electron.function(0)
    assert apply_w01(off, K1, "+", psi).norm() == 0.0
    w20, w11 = w2_kernels_at(off, electron, K1, "+", K2, "-")
    assert np.abs(w20).max() == 0.0 and np.abs(w11).max() == 0.0


def test_adjoint_pair(model, coupling):
    chi = electron_function_from_callable(model, lambda x, y, z: np.exp(-((x - 0.5) ** 2 + y**2 + (z - 0.2) ** 2)) * (1 + 0.5j * y), 6)
    psi = electron_function_from_callable(model, lambda x, y, z: np.exp(-((x + 0.3) ** 2 + (y - 0.4) ** 2 + z**2) / 1.5) * (x + 1j), 6)
    lhs = chi.inner(apply_w10(coupling, K1, "+", psi, l_out=14))
    rhs = apply_w01(coupling, K1, "+", chi, l_out=14).inner(psi)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8)


def test_kernel_table_matches_direct_application(coupling, electron):
    grid = product_grid(0.5, 3.0, 2, 1, 2)
    tab = KernelTable(coupling, electron, grid)
    for mode in (0, 3):
        lam = "-+"[grid.pol[mode]]
        for b in range(electron.dim):
            direct = electron.coefficients(apply_w01(coupling, grid.k[mode], lam, electron.function(b), l_out=3))
            np.testing.assert_allclose(direct, tab.w01(mode)[:, b], atol=1e-10)
            g = apply_g(coupling, grid.k[mode], lam, electron.function(b), l_out=3)
            for i in range(3):
                np.testing.assert_allclose(electron.coefficients(g[i]), tab.g(mode)[i][:, b], atol=1e-10)


def test_transversality(table):
    # eps_lam(k) is orthogonal to k at every mode
    np.testing.assert_allclose(np.einsum("mi,mi->m", table.eps, table.grid.k), 0.0, atol=1e-12)


def test_two_photon_kernels(model, coupling, electron):
    _, w11_same = w2_kernels_at(coupling, electron, K1, "+", K1, "+")
    np.testing.assert_allclose(w11_same, w11_same.conj().T, atol=1e-10)
    a20, a11 = w2_kernels_at(coupling, electron, K1, "+", K2, "-")
    b20, b11 = w2_kernels_at(coupling, electron, K2, "-", K1, "+")
    np.testing.assert_allclose(a20[0, 0], b20[0, 0], atol=1e-12)
    np.testing.assert_allclose(a11, b11.conj().T, atol=1e-12)
    # with a real s-wave basis the G matrices are symmetric, so w20 swaps to its transpose
    s_only = TruncatedElectron.build(model, {0: 3})
    c20, _ = w2_kernels_at(coupling, s_only, K1, "+", K2, "-")
    d20, _ = w2_kernels_at(coupling, s_only, K2, "-", K1, "+")
    np.testing.assert_allclose(c20, d20.T, atol=1e-12)


def test_lambda_constants_finite_and_monotone(table):
    lc0 = lambda_constants(0, 0, table)
    lc1 = lambda_constants(1, 0, table)
    values = np.array(list(lc0.as_dict().values())[2:])
    assert np.all(np.isfinite(values)) and np.all(values > 0)
    assert lc1.lambda1 >= lc0.lambda1 and lc1.lambda2 >= lc0.lambda2
    assert lc1.lambda1_tilde >= lc0.lambda1_tilde and lc1.lambda2_tilde >= lc0.lambda2_tilde


def test_lambda_homogeneity(coupling, electron):
    grid = product_grid(0.0, 16.0, 8, 4, 8, 2)
    base = lambda_constants(0, 1, KernelTable(coupling, electron, grid))
    scaled = lambda_constants(0, 1, KernelTable(coupling.scaled(1.7), electron, grid))
    for name in ("lambda1", "lambda1_tilde", "lambda2", "lambda2_tilde"):
        np.testing.assert_allclose(getattr(scaled, name), 1.7**2 * getattr(base, name), rtol=1e-12)


def test_lambda_and_g_norm_grid_stable(coupling, electron, table):
    fine = KernelTable(coupling, electron, product_grid(0.0, 16.0, 16, 6, 12, 4))
    a, b = lambda_constants(0, 0, table), lambda_constants(0, 0, fine)
    for name in ("lambda1", "lambda1_tilde", "lambda2", "lambda2_tilde"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), rtol=0.01)
    np.testing.assert_allclose(g_weighted_norm(table), g_weighted_norm(fine), rtol=0.01)


def test_flat_kappa_is_divergent(model, electron):
    flat = CouplingModel(1.0, 3.0, kappa_profile="flat")
    tab = KernelTable(flat, electron, product_grid(0.5, 3.0, 2, 1, 2))
    with pytest.raises(DivergentCouplingError):
        lambda_constants(0, 0, tab)


def test_shift_must_lie_below_spectrum(electron):
    with pytest.raises(ValueError):
        electron.resolvent_power(0.5, electron.ground_energy + 0.1)
    np.testing.assert_allclose(electron.default_shift(), electron.ground_energy - 1.0)
