import math

import numpy as np
import pytest

from photoion.coupling import CouplingModel, apply_w01
from photoion.electron import ElectronModel, bound_function, expand, ground_state, momentum_grid
from photoion.ionisation import (
    ShellCoverageError,
    decoupling_check,
    photon_mode_grid,
    psi_cloud,
    q2_shell,
    q2_time_oracle,
    rho_hat,
    rho_hat_at,
    rho_hat_derivative_norms,
    shell_momentum_grid,
    u_p,
)
from photoion.photon_field import CloudSpec, PhotonWavefunction, product_grid


@pytest.fixture(scope="module")
def model():
    return ElectronModel(6.25, 1.0)


@pytest.fixture(scope="module")
def coupling(model):
    return CouplingModel.for_model(model)


@pytest.fixture(scope="module")
def gap(model):
    return -ground_state(model).e


@pytest.fixture(scope="module")
def setup(model, coupling, gap):
    """Coarse table around a photon band at 2|e0| resolved up to t = 20 / |e0|."""
    e0 = -gap
    mg = photon_mode_grid(1.5 * gap, 2.5 * gap, 20 / gap, 6, 12, 8)
    pg = shell_momentum_grid(e0, 1.5 * gap, 2.5 * gap, 20 / gap, 0.5 * gap, 6, 12, 6)
    table = rho_hat(model, coupling, pg, mg)
    photon = PhotonWavefunction(2 * gap, 0.5 * gap, "+", direction=(1, 0, 0), angular_width=0.6).normalized(mg)
    return table, photon


@pytest.mark.slow
def test_table_matches_direct_expansion(model, coupling):
    pg = momentum_grid(0.6, 1.6, 6, 3, 5)
    mg = product_grid(2.0, 4.0, 4, 3, 5)
    table = rho_hat(model, coupling, pg, mg)
    values = table.values()
    # oracle: apply w01 to the sampled bound state, then expand against scattering states;
    # its own radial error is second order, so refine it and watch the gap shrink
    errors = []
    for n_r in (8000, 16000):
        fine = ElectronModel(6.25, 1.0, n_r=n_r, l_max=16)
        phi0 = bound_function(ground_state(fine), fine)
        err = 0.0
        for mode in (7, 33):
            lam = "-+"[mg.pol[mode]]
            direct = expand(fine, apply_w01(coupling, mg.k[mode], lam, phi0, l_out=16), pg).values
            err = max(err, np.abs(values[:, :, mode] - direct).max() / np.abs(direct).max())
        errors.append(err)
    assert errors[1] < 1e-6
    assert errors[1] < errors[0] / 3
    pointwise = rho_hat_at(table, pg.vectors.reshape(-1, 3), mg.k[:10], "-")
    np.testing.assert_allclose(pointwise[:, 0::2], values.reshape(-1, mg.n_modes)[:, 0:10:2], atol=1e-12)


def test_l2_norm_matches_dense_sum(model, coupling):
    pg = momentum_grid(0.6, 1.6, 4, 3, 5)
    mg = product_grid(2.0, 4.0, 3, 3, 5)
    table = rho_hat(model, coupling, pg, mg)
    dense = np.abs(table.values()) ** 2
    expected = np.einsum("pd,pdm,m->", pg.weights, dense, mg.weights)
    np.testing.assert_allclose(table.l2_norm2(), expected, rtol=1e-12)
    plus = np.einsum("pd,pdm,m->", pg.weights, dense[:, :, mg.pol == 1], mg.weights[mg.pol == 1])
    np.testing.assert_allclose(table.l2_norm2(polarization="+"), plus, rtol=1e-12)


def test_zero_coupling_gives_zero_table(model, coupling):
    pg = momentum_grid(0.6, 1.6, 3, 2, 3)
    mg = product_grid(2.0, 4.0, 2, 2, 3)
    table = rho_hat(model, coupling.scaled(0.0), pg, mg)
    assert np.abs(table.values()).max() == 0.0


def test_well_without_bound_state_is_rejected():
    with pytest.raises(ValueError):
        ElectronModel(0.0, 1.0)


def test_radial_refinement_is_stable(model, coupling):
    pg = momentum_grid(0.6, 1.6, 4, 3, 5)
    mg = product_grid(2.0, 4.0, 3, 3, 5)
    coarse = rho_hat(model, coupling, pg, mg).l2_norm2()
    fine = rho_hat(model, coupling, pg, mg, panel_width=0.25).l2_norm2()
    np.testing.assert_allclose(fine, coarse, rtol=0.01)


def test_shell_formula_internal_consistency(setup):
    table, photon = setup
    res = q2_shell(table, photon)
    assert res.q2 > 0
    np.testing.assert_allclose(res.q2, np.sum(table.p_grid.weights * res.density), rtol=1e-14)
    np.testing.assert_allclose(res.q2_scaled, (2 * math.pi) ** 2 * res.q2, rtol=1e-14)
    u0 = u_p(table, photon, 0.0)
    np.testing.assert_allclose(np.abs(u0) ** 2, res.density, rtol=1e-12, atol=1e-300)
    assert res.diagnostics["shell_interpolation_residual"] < 1e-6


def test_shell_formula_is_quadratic(setup):
    table, photon = setup
    base = q2_shell(table, photon).q2
    bigger = PhotonWavefunction(photon.center, photon.width, "+", 2.5 * photon.amplitude, photon.direction, photon.angular_width)
    np.testing.assert_allclose(q2_shell(table, bigger).q2, 6.25 * base, rtol=1e-12)


def test_incoming_and_outgoing_agree(model, coupling, setup):
    table, photon = setup
    other = rho_hat(model, coupling, table.p_grid, table.mode_grid, "+")
    np.testing.assert_allclose(q2_shell(other, photon).q2, q2_shell(table, photon).q2, rtol=1e-10)


def test_u_p_outside_and_continuity(setup, gap):
    table, photon = setup
    energies = table.p_grid.magnitudes**2 + gap
    ip = int(np.argmin(np.abs(energies - 2 * gap)))
    assert np.all(u_p(table, photon, energies[ip] + 1e-9, p_index=ip) == 0)
    # O(h) increments: halving h roughly halves the change
    d = [np.abs(u_p(table, photon, h, p_index=ip) - u_p(table, photon, 0.0, p_index=ip)).max() for h in (0.02, 0.01)]
    assert d[1] < 0.6 * d[0]


def test_support_locality(setup, gap):
    table, photon = setup
    res = q2_shell(table, photon)
    energy = table.p_grid.magnitudes**2 + gap
    lo, hi = photon.omega_support
    outside = (energy < lo) | (energy > hi)
    assert np.all(res.radial_density[outside] == 0.0)


def test_threshold_gives_exact_zero(model, coupling, gap):
    lo, hi = 0.12 * gap, 0.88 * gap
    mg = photon_mode_grid(lo, hi, 20 / gap, 6, 12, 8)
    pg = shell_momentum_grid(-gap, lo, 2 * gap, 20 / gap, 0.3 * gap, 4, 8, 6)
    table = rho_hat(model, coupling, pg, mg)
    photon = PhotonWavefunction(0.5 * gap, 0.38 * gap, "+").normalized(mg)
    assert q2_shell(table, photon).q2 == 0.0
    values = [q2_time_oracle(table, photon, t / gap) for t in (5, 10, 20)]
    assert values[2] < values[0]


def test_coverage_failure_is_explicit(model, coupling, gap):
    mg = product_grid(1.6 * gap, 2.0 * gap, 4, 3, 6)
    pg = shell_momentum_grid(-gap, 1.5 * gap, 2.5 * gap, 5 / gap, 0.1 * gap, 3, 6, 4)
    table = rho_hat(model, coupling, pg, mg)
    photon = PhotonWavefunction(2 * gap, 0.5 * gap, "+")
    with pytest.raises(ShellCoverageError):
        q2_shell(table, photon)


def test_time_oracle_trend(setup):
    table, photon = setup
    assert q2_time_oracle(table, photon, 0.0) == 0.0
    shell = q2_shell(table, photon).q2
    gaps = [abs(q2_time_oracle(table, photon, t) / (2 * math.pi) ** 2 / shell - 1) for t in (2.5, 5.0, 10.0)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_psi_cloud_structure(setup):
    table, photon = setup
    tables = {"+": table, "-": table}
    assert psi_cloud(tables, CloudSpec(()), 10.0).norm2() == 0.0
    f = photon.on_grid(table.mode_grid)
    one = psi_cloud(tables, CloudSpec(((f, "+"),)), 10.0, tail_tol=None)
    assert one.photon_numbers() == {0}
    doubled = psi_cloud(tables, CloudSpec(((f.scaled(2.0), "+"),)), 10.0, tail_tol=None)
    np.testing.assert_allclose(math.sqrt(doubled.norm2()), 2 * math.sqrt(one.norm2()), rtol=1e-12)
    # the one-photon term is built from scattering states, so it has no bound part
    np.testing.assert_allclose(one.ac_projected(table.model).norm2(), one.norm2(), rtol=1e-10)


def test_single_photon_decoupling_is_exact(setup):
    table, photon = setup
    res = decoupling_check({"+": table, "-": table}, [photon], (1,), (0,), 10.0)
    assert res.gap <= 1e-12


def test_decoupling_rejects_overlapping_photons(setup):
    table, photon = setup
    twin = PhotonWavefunction(photon.center * 1.01, photon.width, "+", photon.amplitude, photon.direction, photon.angular_width)
    with pytest.raises(ValueError):
        decoupling_check({"+": table, "-": table}, [photon, twin], (1, 1), (0, 0), 10.0)


def test_derivative_norms_finite_and_step_stable(model, coupling, gap):
    pg = momentum_grid(1.0, 1.4, 3, 2, 4)
    mg = product_grid(1.5 * gap, 2.5 * gap, 3, 2, 4)
    table = rho_hat(model, coupling, pg, mg)
    k = mg.k[mg.pol == 1]
    w = mg.weights[mg.pol == 1]
    a = rho_hat_derivative_norms(table, "+", k, w, 1e-2)
    b = rho_hat_derivative_norms(table, "+", k, w, 5e-3)
    for order in (0, 1, 2):
        assert np.isfinite(a[order]) and a[order] > 0
        np.testing.assert_allclose(b[order], a[order], rtol=0.01)
