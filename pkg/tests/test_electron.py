import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from photoion.electron import (
    ElectronModel,
    NoBoundStateError,
    ac_project,
    bound_amplitudes,
    bound_function,
    electron_function_from_callable,
    expand,
    ground_state,
    momentum_grid,
    phase_shifts,
    radial_hamiltonian_apply,
    radial_scattering,
    scattering_state,
    solve_bound_states,
)
from photoion.pipelines import s_wave_energy_oracle, s_wave_phase_closed_form


def blob(x, y, z):
    return np.exp(-((x - 0.6) ** 2 + (y - 0.3) ** 2 + (z + 0.2) ** 2) / 1.2) * (1 + 0.3 * x)


@pytest.fixture(scope="module")
def reference():
    return ElectronModel(6.25, 1.0)


def cot_oracle(depth, radius):
    # z cot z = -sqrt(V0 a^2 - z^2), z = K a: a second, independently written root finder
    f = lambda z: z / math.tan(z) + math.sqrt(depth * radius**2 - z * z)
    z = brentq(f, math.pi / 2 + 1e-12, min(math.pi, math.sqrt(depth) * radius) - 1e-15, xtol=1e-15)
    return -(depth - (z / radius) ** 2)


def test_ground_state_matches_transcendental_root():
    model = ElectronModel(4.0, 1.0, n_r=4000)  # sqrt(V0) a = 2
    e0 = ground_state(model).e
    np.testing.assert_allclose(e0, cot_oracle(4.0, 1.0), atol=1e-8, rtol=0)
    np.testing.assert_allclose(s_wave_energy_oracle(4.0, 1.0), cot_oracle(4.0, 1.0), atol=1e-12, rtol=0)


def test_reference_well(reference):
    states = solve_bound_states(reference)
    assert len(states) == 1
    ground = states[0]
    assert ground.l == 0 and ground.e < 0
    np.testing.assert_allclose(ground.e, -1.73291, atol=1e-5)
    np.testing.assert_allclose(ground.e, s_wave_energy_oracle(6.25, 1.0), atol=1e-8, rtol=0)
    # nodeless
    assert np.all(ground.u > -1e-12 * ground.u.max())


def test_shallow_well_has_no_bound_state():
    with pytest.raises(NoBoundStateError):
        ElectronModel(2.0, 1.0)  # sqrt(2) < pi / 2
    with pytest.raises(ValueError):
        s_wave_energy_oracle(2.0, 1.0)


def test_domain_convergence():
    base = ElectronModel(16.0, 1.0, r_max=20.0, n_r=4000)
    wide = ElectronModel(16.0, 1.0, r_max=40.0, n_r=8000)
    assert abs(ground_state(base).e - ground_state(wide).e) < 1e-9


def test_bound_states_are_discrete_eigenvectors():
    model = ElectronModel(30.0, 1.0, n_r=4000, l_max=4)
    states = solve_bound_states(model)
    assert len(states) >= 3
    energies = [s.e for s in states]
    assert energies == sorted(energies)
    for s in states:
        res = radial_hamiltonian_apply(model, s.l, s.u) - s.e_grid * s.u
        assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(s.u) * max(1.0, abs(s.e_grid))
    funcs = [bound_function(s, model, m) for s in states for m in range(-s.l, s.l + 1)]
    gram = np.array([[a.inner(b) for b in funcs] for a in funcs])
    np.testing.assert_allclose(gram, np.eye(len(funcs)), atol=1e-10)


def test_s_wave_phase_shift_closed_form(reference):
    p = np.linspace(0.1, 5.0, 10)
    delta = phase_shifts(reference, p, [0])[:, 0]
    closed = s_wave_phase_closed_form(6.25, 1.0, p)
    gap = np.angle(np.exp(2j * (delta - closed))) / 2
    np.testing.assert_allclose(gap, 0.0, atol=1e-8)


@pytest.mark.parametrize("l", [1, 2, 3])
def test_higher_partial_waves_match_ode(reference, l):
    p = 1.3
    depth = reference.depth

    def rhs(r, y):
        v = -depth if r < 1.0 else 0.0
        return [y[1], (l * (l + 1) / r**2 + v - p**2) * y[0]]

    r0 = 1e-3
    sol = solve_ivp(rhs, [r0, 5.0], [r0 ** (l + 1), (l + 1) * r0**l], rtol=1e-12, atol=1e-14, dense_output=True, max_step=0.01)
    radii = np.array([0.5, 3.0, 4.0, 4.7])
    ode = sol.sol(radii)[0]
    synthesized = radial_scattering(reference, [p], l, radii)[0] * radii
    ratio = ode / synthesized
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-6)


def test_free_well_has_zero_shifts():
    free = ElectronModel(0.0, 1.0, require_bound=False)
    np.testing.assert_allclose(phase_shifts(free, [0.3, 1.0, 2.0], range(5)), 0.0, atol=1e-15)
    state = scattering_state(free, [0.2, -0.4, 0.9])
    x = np.array([[0.3, 0.1, -0.7], [1.5, 2.0, 0.4], [-3.0, 0.2, 1.0]])
    plane = np.exp(1j * x @ state.p) / (2 * math.pi) ** 1.5
    np.testing.assert_allclose(state(x), plane, atol=1e-12)


def test_phase_shifts_decay_with_l(reference):
    delta = phase_shifts(reference, [0.5, 1.0, 2.0], range(15))
    assert np.all(np.abs(delta[:, 12:]) < 1e-6)


def test_scattering_state_rejects_zero_momentum(reference):
    with pytest.raises(ValueError):
        scattering_state(reference, [0.0, 0.0, 0.0])


def test_ac_projection_properties(reference):
    phi0 = bound_function(ground_state(reference), reference)
    assert ac_project(reference, phi0).norm() <= 1e-10
    psi = electron_function_from_callable(reference, blob, l_max=4)
    once = ac_project(reference, psi)
    twice = ac_project(reference, once)
    assert (once - twice).norm() <= 1e-12 * psi.norm()
    np.testing.assert_allclose(once.norm2() + np.sum(np.abs(bound_amplitudes(reference, psi)) ** 2), psi.norm2(), rtol=1e-10)


@pytest.mark.slow
def test_expansion_is_isometric_and_improves_under_refinement():
    model = ElectronModel(6.25, 1.0, n_r=4000, l_max=14)
    ac = ac_project(model, electron_function_from_callable(model, blob, l_max=12))
    grids = [
        momentum_grid(1e-3, 6.0, 8, 14, 28, panels=4),
        momentum_grid(1e-3, 8.0, 16, 14, 28, panels=4),
        momentum_grid(1e-3, 10.0, 16, 14, 28, panels=8),
    ]
    errors = [abs(expand(model, ac, pg).norm2() / ac.norm2() - 1) for pg in grids]
    assert max(errors) <= 0.02
    assert errors[0] > errors[1] > errors[2]


def test_expand_of_ground_state_vanishes_after_projection(reference):
    pg = momentum_grid(0.2, 3.0, 6, 4, 8)
    phi0 = bound_function(ground_state(reference), reference)
    assert np.abs(expand(reference, ac_project(reference, phi0), pg).values).max() <= 1e-6


def test_free_expansion_is_fourier_transform():
    from scipy.special import roots_legendre

    free = ElectronModel(0.0, 1.0, require_bound=False, l_max=14)
    psi = electron_function_from_callable(free, blob, l_max=12)
    pg = momentum_grid(0.1, 3.0, 4, 6, 12)
    got = expand(free, psi, pg).values.reshape(-1)[:20]
    x, w = roots_legendre(60)
    x, w = 8 * x, 8 * w
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    weighted = blob(X, Y, Z) * w[:, None, None] * w[None, :, None] * w[None, None, :]
    p = pg.vectors.reshape(-1, 3)[:20]
    direct = np.array([np.sum(weighted * np.exp(-1j * (q[0] * X + q[1] * Y + q[2] * Z))) for q in p]) / (2 * math.pi) ** 1.5
    np.testing.assert_allclose(got, direct, atol=1e-8)
