import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photoion.photon_field import (
    CloudSpec,
    FockBasis,
    FockVector,
    OnePhotonFunction,
    PhotonWavefunction,
    annihilate,
    cloud_state,
    create,
    field_energy,
    free_evolve_photons,
    gram_matrix,
    load_snapshot,
    product_grid,
    random_one_photon,
    save_snapshot,
)


@pytest.fixture(scope="module")
def grid():
    return product_grid(0.5, 3.0, 3, 2, 2)


def random_state(grid, rng, n_max=3, n_terms=12):
    amps = {(): complex(rng.standard_normal())}
    for _ in range(n_terms):
        n = int(rng.integers(1, n_max + 1))
        key = tuple(sorted(rng.integers(0, grid.n_modes, n).tolist()))
        amps[key] = complex(rng.standard_normal(), rng.standard_normal())
    return FockVector(grid, n_max, amps)


def test_grid_dispersion_and_weights(grid):
    np.testing.assert_array_equal(grid.omega, np.linalg.norm(grid.k, axis=1))
    assert np.all(grid.weights > 0)
    assert np.all(grid.kabs > 0)
    # radial rule integrates 4 pi k^2 over [0.5, 3] per polarization
    np.testing.assert_allclose(grid.weights.sum(), 2 * 4 * math.pi * (3.0**3 - 0.5**3) / 3, rtol=1e-12)


def test_vacuum_is_annihilated(grid):
    f = random_one_photon(grid, np.random.default_rng(0))
    out = annihilate(f, FockVector.vacuum(grid, 3))
    assert out.norm2() == 0.0


def test_one_photon_round_trip(grid):
    rng = np.random.default_rng(1)
    f = random_one_photon(grid, rng)
    g = random_one_photon(grid, rng)
    vac = FockVector.vacuum(grid, 3)
    back = annihilate(g, create(f, vac))
    np.testing.assert_allclose(back.amplitudes[()], g.inner(f), rtol=1e-13)
    back_same = annihilate(f, create(f.scaled(1 / f.norm()), vac))
    np.testing.assert_allclose(back_same.amplitudes[()], f.norm(), rtol=1e-13)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ccr_on_states_below_cutoff(seed):
    grid = product_grid(0.5, 3.0, 2, 1, 2)
    rng = np.random.default_rng(seed)
    f = random_one_photon(grid, rng)
    g = random_one_photon(grid, rng)
    psi = random_state(grid, rng, n_max=3)
    # keep only occupations <= n_max - 1 so nothing is truncated
    low = FockVector(grid, 3, {k: v for k, v in psi.amplitudes.items() if len(k) <= 2})
    lhs = annihilate(f, create(g, low)) - create(g, annihilate(f, low))
    diff = lhs - low.scaled(f.inner(g))
    assert diff.norm() <= 1e-12 * max(1.0, low.norm() * abs(f.inner(g)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_creation_is_adjoint_of_annihilation(seed):
    grid = product_grid(0.5, 3.0, 2, 1, 2)
    rng = np.random.default_rng(seed)
    f = random_one_photon(grid, rng)
    psi = random_state(grid, rng, n_max=4)
    chi = random_state(grid, rng, n_max=4)
    # direct summation over the sparse keys on both sides
    np.testing.assert_allclose(create(f, psi).inner(chi), psi.inner(annihilate(f, chi)), rtol=1e-12, atol=1e-12)


def test_truncation_drop_matches_larger_cutoff(grid):
    rng = np.random.default_rng(2)
    f = random_one_photon(grid, rng)
    psi = FockVector(grid, 2, {k: v for k, v in random_state(grid, rng, 2).amplitudes.items()})
    small = create(f, psi)
    full = create(f, psi.with_n_max(3))
    top = sum(abs(v) ** 2 for k, v in full.amplitudes.items() if len(k) == 3)
    np.testing.assert_allclose(small.dropped_norm2, top, rtol=1e-12)
    np.testing.assert_allclose(small.norm2() + small.dropped_norm2, full.norm2(), rtol=1e-12)


def test_field_energy_examples(grid):
    vac = FockVector.vacuum(grid, 2)
    assert field_energy(vac).norm2() == 0.0
    special = product_grid(0.7, 0.7 + 1e-9, 1, 1, 1)
    one = FockVector(special, 2, {(0,): 1.0})
    w = special.omega[0]
    np.testing.assert_allclose(field_energy(one).amplitudes[(0,)], w)
    assert field_energy(one, 1.0, 2.0).norm2() == 0.0
    with pytest.raises(ValueError):
        field_energy(one, 2.0, 1.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r_lo=st.floats(0.0, 2.0), width=st.floats(0.1, 3.0))
def test_pull_through(seed, r_lo, width):
    grid = product_grid(0.5, 3.0, 2, 1, 2)
    rng = np.random.default_rng(seed)
    r_hi = r_lo + width
    f = random_one_photon(grid, rng)
    psi = FockVector(grid, 3, {k: v for k, v in random_state(grid, rng, 3).amplitudes.items() if len(k) <= 2})
    lhs = field_energy(create(f, psi), r_lo, r_hi) - create(f, field_energy(psi, r_lo, r_hi))
    rhs = create(f.multiplied(grid.window(r_lo, r_hi)), psi)
    assert (lhs - rhs).norm() <= 1e-12 * max(1.0, rhs.norm())


def test_free_evolution(grid):
    rng = np.random.default_rng(3)
    psi = random_state(grid, rng)
    assert (free_evolve_photons(psi, 0.0) - psi).norm() == 0.0
    moved = free_evolve_photons(psi, 1.7)
    np.testing.assert_allclose(moved.norm(), psi.norm(), rtol=1e-14)
    # commutes with the field energy
    a = field_energy(free_evolve_photons(psi, 0.9))
    b = free_evolve_photons(field_energy(psi), 0.9)
    assert (a - b).norm() <= 1e-12 * b.norm()
    f = random_one_photon(grid, rng)
    vac = FockVector.vacuum(grid, 3)
    pulled = create(f.evolved(2.3), vac)
    assert (free_evolve_photons(create(f, vac), 2.3) - pulled).norm() <= 1e-13 * pulled.norm()


def test_cloud_state_examples(grid):
    with pytest.raises(ValueError):
        cloud_state(CloudSpec(()))
    vac = cloud_state(CloudSpec(()), 3, grid)
    assert vac.amplitudes == {(): 1.0}
    ph = PhotonWavefunction(1.5, 0.6, "+").normalized(grid)
    phm = PhotonWavefunction(1.5, 0.6, "-").normalized(grid)
    f, fm = ph.on_grid(grid), phm.on_grid(grid)
    for q in range(3):
        for r in range(3 - q):
            psi = cloud_state(CloudSpec(((f, "+"),) * q + ((fm, "-"),) * r), 3, grid)
            np.testing.assert_allclose(psi.norm2(), math.factorial(q) * math.factorial(r), rtol=1e-12)
    with pytest.raises(ValueError):
        cloud_state(CloudSpec(((f, "+"),) * 3), 2)


def test_orthonormal_photons_give_orthogonal_states():
    grid = product_grid(0.5, 3.0, 8, 2, 2)
    a = PhotonWavefunction(1.0, 0.4, "+").normalized(grid).on_grid(grid)
    b = PhotonWavefunction(2.2, 0.4, "+").normalized(grid).on_grid(grid)
    assert abs(a.inner(b)) == 0.0
    states = [cloud_state(CloudSpec(((x, "+"),)), 1) for x in (a, b)]
    np.testing.assert_allclose(gram_matrix(states), np.eye(2), atol=1e-12)


def test_cloud_rejects_mixed_polarization(grid):
    f = random_one_photon(grid, np.random.default_rng(4))
    with pytest.raises(ValueError):
        CloudSpec(((f, "+"),))
    CloudSpec(((random_one_photon(grid, np.random.default_rng(4), "+"), "+"),))


def test_one_photon_values_must_match_grid(grid):
    with pytest.raises(ValueError):
        OnePhotonFunction(grid, np.ones(grid.n_modes + 1))
    with pytest.raises(ValueError):
        OnePhotonFunction(grid, np.full(grid.n_modes, np.nan))


def test_grid_mismatch_is_rejected(grid):
    other = product_grid(0.5, 3.0, 2, 2, 2)
    f = random_one_photon(other, np.random.default_rng(5))
    with pytest.raises(ValueError):
        create(f, FockVector.vacuum(grid, 2))


def test_dense_basis_matches_sparse_operators():
    grid = product_grid(0.5, 3.0, 1, 1, 2)
    basis = FockBasis(grid.n_modes, 3)
    rng = np.random.default_rng(6)
    f = random_one_photon(grid, rng)
    psi = random_state(grid, rng, 3)
    dense_a = sum(np.sqrt(grid.weights[m]) * np.conj(f.values[m]) * a.toarray() for m, a in enumerate(basis.annihilators()))
    np.testing.assert_allclose(dense_a @ basis.to_dense(psi), basis.to_dense(annihilate(f, psi)), atol=1e-13)


def test_snapshot_round_trip(tmp_path, grid):
    psi = random_state(grid, np.random.default_rng(7))
    path = tmp_path / "state.txt"
    save_snapshot(path, psi)
    back = load_snapshot(path)
    np.testing.assert_array_equal(back.grid.k, grid.k)
    np.testing.assert_array_equal(back.grid.weights, grid.weights)
    assert back.amplitudes == psi.amplitudes
