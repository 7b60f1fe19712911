import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from photoion.bounds_lab import (
    CASES,
    DimensionCapError,
    TrivialFitError,
    draw_case,
    duhamel_check,
    duhamel_refinement,
    duhamel_toy,
    fit_tail_exponent,
    operator_norm,
    random_hermitian,
    reference_lab,
    sweep,
    verify_bound,
)
from photoion.electron import ElectronModel


@pytest.fixture(scope="module")
def lab():
    return reference_lab(ElectronModel(6.25, 1.0, n_r=1000, l_max=4))


def test_every_case_holds_on_a_short_sweep(lab):
    results = sweep(lab, draws=4, seed=3)
    assert {r.case for r in results} == set(CASES)
    for r in results:
        assert r.passed(), r.as_record()
        assert np.isfinite(r.measured) and r.measured >= 0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), case=st.sampled_from(["energy_ratio", "shifted_energy_ratio", "annihilator", "creator", "creator_full"]))
def test_photon_only_bounds_hold_for_random_draws(lab, seed, case):
    params, functions = draw_case(lab, case, np.random.default_rng(seed))
    assert verify_bound(lab, case, params, functions).passed()


def test_equal_windows_ratio_is_one(lab):
    params = {"alpha": 1.3, "beta": 1.3, "r_tilde": 0.5, "r": 2.0, "s_tilde": 0.5, "s": 2.0, "k": 4}
    res = verify_bound(lab, "energy_ratio", params)
    np.testing.assert_allclose(res.measured, 1.0, rtol=1e-14)
    assert res.bound == 1.0


def test_single_photon_cloud(lab):
    rng = np.random.default_rng(0)
    f = np.where(lab.omega < 2.0, rng.standard_normal(lab.grid.n_modes), 0.0).astype(complex)
    params = {"n_photons": 1, "m": 0, "t": 1.5, "r_tilde": 0.0, "r": 3.5}
    res = verify_bound(lab, "cloud", params, [f])
    assert res.passed()
    w = lab.grid.weights
    theta = np.sqrt(np.sum(w[f != 0] * (1 + 1 / lab.omega[f != 0]) * np.abs(f[f != 0]) ** 2))
    np.testing.assert_allclose(res.bound, theta, rtol=1e-14)


def test_unknown_case_is_rejected(lab):
    with pytest.raises(ValueError):
        verify_bound(lab, "no_such_case", {})


def test_operator_norm_dense_and_iterative_agree():
    rng = np.random.default_rng(1)
    m = sp.random(700, 650, density=0.01, random_state=rng, format="csr") + sp.identity(700, format="csr")[:, :650]
    exact = np.linalg.norm(m.toarray(), 2)
    np.testing.assert_allclose(operator_norm(m), exact, rtol=1e-9)
    np.testing.assert_allclose(operator_norm(m, dense_cap=10_000), exact, rtol=1e-12)


def test_tail_exponent_recovers_power_law():
    s = np.geomspace(1, 200, 40)
    norms = 3.0 * (1 + s) ** -2.4
    np.testing.assert_allclose(fit_tail_exponent(s, norms, 5, 100), 2.4, rtol=1e-10)
    with pytest.raises(TrivialFitError):
        fit_tail_exponent(s, np.zeros_like(s), 5, 100)
    with pytest.raises(ValueError):
        fit_tail_exponent(s, norms, 300, 400)


def test_propagation_matches_matrix_exponential():
    rng = np.random.default_rng(2)
    h0, w, z, psi = duhamel_toy(12, seed=2)
    res = duhamel_check(h0, w, z, psi, 0.4, 1.1, steps=512)
    # independent lhs from scipy's expm
    hg = h0 + w
    u = lambda h, t: expm(-1j * t * h)
    z_t = u(hg, 1.1) @ u(h0, -1.1) @ z @ u(h0, 1.1) @ u(hg, -1.1)
    lhs = u(hg, 0.4) @ z_t @ u(hg, -0.4) @ psi
    np.testing.assert_allclose(res.lhs_norm, np.linalg.norm(lhs), rtol=1e-12)
    assert res.residual < 1e-9
    h = random_hermitian(5, rng, 0.3)
    np.testing.assert_allclose(h, h.conj().T, atol=0)
    np.testing.assert_allclose(np.linalg.norm(h, 2), 0.3, rtol=1e-12)


def test_duhamel_free_case_and_order():
    assert duhamel_check(*duhamel_toy(50, free=True), 0.7, 2.0, steps=32).residual <= 1e-12
    results = duhamel_refinement(*duhamel_toy(50), 0.7, 2.0)
    residuals = np.array([r.residual for r in results])
    orders = np.log2(residuals[:-1] / residuals[1:])
    np.testing.assert_allclose(orders, 4.0, atol=0.3)


def test_duhamel_input_validation():
    h0, w, z, psi = duhamel_toy(6)
    with pytest.raises(ValueError):
        duhamel_check(h0, w, z, psi, 0.1, 0.2, steps=33)
    with pytest.raises(DimensionCapError):
        duhamel_check(h0, w, z, psi, 0.1, 0.2, max_dim=5)
