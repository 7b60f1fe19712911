"""Spherical finite well H_el = -Laplacian + V with V = -V0 on r < a.

Radial functions are stored as u(r) = r R(r) on the interior nodes
r_i = i h (i = 1 .. n_r - 1, h = r_max / n_r) with Dirichlet ends. The well
edge must sit on a node; there the potential takes its midpoint value -V0/2,
which keeps the finite-difference error second order so that one Richardson
step (grids n_r and 2 n_r) removes it.

Generalized eigenfunctions use momentum-delta normalisation:

    phi(p, x) = (2 pi)^(-3/2) sum_l (2l+1) i^l exp(i s delta_l) R_l(p, r) P_l(p.x / |p||x|)

with s = -1 for incoming ('-', the default) and s = +1 for outgoing ('+')
states. R_l = cos(delta_l) j_l(pr) - sin(delta_l) y_l(pr) outside the well.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import spherical_jn, spherical_yn

from .quadrature import SphereQuadrature, gauss_legendre, legendre_table, lm_pairs, sphere_quadrature, ylm


class NoBoundStateError(ValueError):
    """The well has no bound state, so the model has no ground state."""


def scattering_sign(sign) -> int:
    if sign in ("-", -1, "in", "incoming"):
        return -1
    if sign in ("+", 1, "out", "outgoing"):
        return 1
    raise ValueError(f"unknown scattering sign {sign!r}; use '-' (incoming) or '+' (outgoing)")


@dataclass(frozen=True)
class ElectronModel:
    """Finite spherical well of depth ``depth`` and radius ``radius``."""

    depth: float
    radius: float
    r_max: float | None = None
    n_r: int = 4000
    l_max: int = 8
    require_bound: bool = True

    def __post_init__(self):
        if self.r_max is None:
            object.__setattr__(self, "r_max", 20.0 * self.radius)
        if self.radius <= 0 or self.r_max <= 0:
            raise ValueError("well radius and r_max must be positive")
        if self.depth < 0 or (self.depth == 0 and self.require_bound):
            raise ValueError("well depth must be positive")
        if self.r_max < 10.0 * self.radius:
            raise ValueError(f"r_max = {self.r_max} must be at least 10 well radii")
        if self.n_r < 20:
            raise ValueError("n_r too small")
        if self.l_max < 0:
            raise ValueError("l_max must be nonnegative")
        ratio = self.n_r * self.radius / self.r_max
        if self.depth > 0 and abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                f"well edge must fall on a grid node: n_r * radius / r_max = {ratio} is not an integer"
            )
        if self.require_bound and math.sqrt(self.depth) * self.radius <= math.pi / 2:
            raise NoBoundStateError(
                f"sqrt(V0)*a = {math.sqrt(self.depth) * self.radius:.6g} <= pi/2: no s-wave bound state"
            )

    @property
    def step(self) -> float:
        return self.r_max / self.n_r

    @property
    def r(self) -> np.ndarray:
        return self.step * np.arange(1, self.n_r)

    def potential(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        v = np.where(r < self.radius, -self.depth, 0.0)
        return np.where(np.isclose(r, self.radius, rtol=1e-12, atol=0.0), -0.5 * self.depth, v)

    def refined(self, factor: int = 2) -> "ElectronModel":
        return ElectronModel(self.depth, self.radius, self.r_max, self.n_r * factor, self.l_max, self.require_bound)


def _tridiagonal(model: ElectronModel, l: int, n_r: int):
    h = model.r_max / n_r
    r = h * np.arange(1, n_r)
    diag = 2.0 / h**2 + model.potential(r) + l * (l + 1) / r**2
    off = np.full(n_r - 2, -1.0 / h**2)
    return diag, off


_D1_STENCIL = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0


def radial_derivative(u: np.ndarray, h: float, l: int) -> np.ndarray:
    """Sixth-order d/dr of u = r R on the interior nodes.

    Uses u(0) = 0, the parity u(-r) = (-1)^(l+1) u(r) of regular partial waves,
    and u = 0 beyond the outer boundary.
    """
    u = np.asarray(u)
    parity = -1.0 if l % 2 == 0 else 1.0
    left = parity * u[2::-1]
    padded = np.concatenate([left, [0.0], u, [0.0, 0.0, 0.0]])
    return np.convolve(padded, _D1_STENCIL[::-1], mode="valid")[1:] / h


def radial_hamiltonian_apply(model: ElectronModel, l: int, u: np.ndarray) -> np.ndarray:
    """Discrete (-d^2/dr^2 + V + l(l+1)/r^2) u on the model grid."""
    diag, off = _tridiagonal(model, l, model.n_r)
    out = diag * u
    out[:-1] += off * u[1:]
    out[1:] += off * u[:-1]
    return out


@dataclass(frozen=True, eq=False)
class EigenState:
    """Discrete radial eigenpair; ``e_grid`` is the raw finite-difference eigenvalue."""

    e: float
    l: int
    u: np.ndarray
    e_grid: float
    n: int = 0

    @property
    def degeneracy(self) -> int:
        return 2 * self.l + 1


@dataclass(frozen=True, eq=False)
class BoundState(EigenState):
    """Bound state; ``e`` is Richardson-extrapolated from grids n_r and 2 n_r."""

    def __post_init__(self):
        if not self.e < 0:
            raise ValueError("bound state energy must be negative")


@functools.lru_cache(maxsize=16)
def solve_bound_states(model: ElectronModel) -> tuple[BoundState, ...]:
    """All bound states with l <= l_max, ascending in energy; the first is the ground state."""
    found = []
    for l in range(model.l_max + 1):
        d1, o1 = _tridiagonal(model, l, model.n_r)
        lo = -model.depth - 1.0
        e1, vecs = eigh_tridiagonal(d1, o1, select="v", select_range=(lo, 0.0))
        if e1.size == 0:
            continue
        d2, o2 = _tridiagonal(model, l, 2 * model.n_r)
        e2 = eigh_tridiagonal(d2, o2, eigvals_only=True, select="v", select_range=(lo, 0.0))
        count = min(e1.size, e2.size)
        for n in range(count):
            u = vecs[:, n] / math.sqrt(model.step)
            if u[np.argmax(np.abs(u))] < 0:
                u = -u
            e_rich = (4.0 * e2[n] - e1[n]) / 3.0
            if e_rich < 0:
                found.append(BoundState(float(e_rich), l, u, float(e1[n]), n))
    if not found:
        raise NoBoundStateError("no bound state: the well is too shallow")
    found.sort(key=lambda s: s.e)
    ground = found[0]
    if ground.l != 0:
        raise NoBoundStateError("lowest state is not an s-wave")
    return tuple(found)


def ground_state(model: ElectronModel) -> BoundState:
    return solve_bound_states(model)[0]


def box_states(model: ElectronModel, n_per_l: dict[int, int]) -> tuple[EigenState, ...]:
    """Lowest finite-difference eigenpairs per l (bound and box-discretised continuum)."""
    out = []
    for l, count in sorted(n_per_l.items()):
        d, o = _tridiagonal(model, l, model.n_r)
        vals, vecs = eigh_tridiagonal(d, o, select="i", select_range=(0, count - 1))
        for n in range(count):
            u = vecs[:, n] / math.sqrt(model.step)
            if u[np.argmax(np.abs(u))] < 0:
                u = -u
            out.append(EigenState(float(vals[n]), l, u, float(vals[n]), n))
    out.sort(key=lambda s: s.e)
    return tuple(out)


# ---------------------------------------------------------------------------
# Scattering


def phase_shifts(model: ElectronModel, p, l_values) -> np.ndarray:
    """delta_l(p) from matching j_l(K r) inside to the free solutions outside; shape (len p, len l)."""
    p = np.atleast_1d(np.asarray(p, dtype=float))[:, None]
    l = np.atleast_1d(np.asarray(l_values))[None, :]
    if np.any(p <= 0):
        raise ValueError("momentum must be positive")
    a = model.radius
    big_k = np.sqrt(p**2 + model.depth)
    jk = spherical_jn(l, big_k * a)
    djk = spherical_jn(l, big_k * a, derivative=True)
    jp = spherical_jn(l, p * a)
    djp = spherical_jn(l, p * a, derivative=True)
    yp = spherical_yn(l, p * a)
    dyp = spherical_yn(l, p * a, derivative=True)
    num = p * djp * jk - big_k * djk * jp
    den = p * dyp * jk - big_k * djk * yp
    return np.arctan(num / den)


def radial_scattering(model: ElectronModel, p, l: int, r, delta=None) -> np.ndarray:
    """R_l(p, r) on an outer product of momenta and radii; shape (len p, len r)."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if delta is None:
        delta = phase_shifts(model, p, [l])[:, 0]
    delta = np.asarray(delta, dtype=float)
    a = model.radius
    cd, sd = np.cos(delta)[:, None], np.sin(delta)[:, None]
    pr = p[:, None] * r[None, :]
    outside = r[None, :] >= a
    out = np.empty(pr.shape)
    pr_out = np.where(outside, pr, 1.0)
    out_vals = cd * spherical_jn(l, pr_out) - sd * spherical_yn(l, pr_out)
    out[:] = np.where(outside, out_vals, 0.0)
    if model.depth > 0 and np.any(~outside):
        pa = p * a
        ra = cd[:, 0] * spherical_jn(l, pa) - sd[:, 0] * spherical_yn(l, pa)
        dra = p * (cd[:, 0] * spherical_jn(l, pa, True) - sd[:, 0] * spherical_yn(l, pa, True))
        big_k = np.sqrt(p**2 + model.depth)
        jk = spherical_jn(l, big_k * a)
        djk = spherical_jn(l, big_k * a, True)
        amp = (ra * jk + dra / big_k * djk) / (jk**2 + djk**2)
        inside_vals = amp[:, None] * spherical_jn(l, np.sqrt(p[:, None] ** 2 + model.depth) * r[None, :])
        out = np.where(outside, out, inside_vals)
    elif np.any(~outside):
        out = np.where(outside, out, cd * spherical_jn(l, pr))
    return out


@dataclass(frozen=True, eq=False)
class ScatteringState:
    """Direction-resolved generalized eigenfunction phi(p, .) with energy |p|^2.

    Partial waves above ``model.l_max`` are synthesised as free waves.
    """

    model: ElectronModel
    p: np.ndarray
    deltas: np.ndarray
    sign: int = -1

    @property
    def energy(self) -> float:
        return float(self.p @ self.p)

    def __call__(self, x: np.ndarray, l_sum: int | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pabs = float(np.linalg.norm(self.p))
        rr = np.linalg.norm(x, axis=1)
        if l_sum is None:
            l_sum = max(self.model.l_max, int(pabs * rr.max()) + 20)
        cosang = np.divide(x @ self.p, rr * pabs, out=np.ones_like(rr), where=rr > 0)
        leg, _ = legendre_table(l_sum, cosang)
        total = np.zeros(rr.size, dtype=complex)
        for l in range(l_sum + 1):
            d = self.deltas[l] if l < self.deltas.size else 0.0
            radial = radial_scattering(self.model, [pabs], l, rr, [d])[0]
            total += (2 * l + 1) * (1j**l) * np.exp(1j * self.sign * d) * radial * leg[l]
        return total / (2.0 * math.pi) ** 1.5


def scattering_state(model: ElectronModel, p, sign="-") -> ScatteringState:
    p = np.asarray(p, dtype=float)
    if p.shape != (3,):
        raise ValueError("p must be a 3-vector")
    pabs = float(np.linalg.norm(p))
    if pabs == 0:
        raise ValueError("scattering states need |p| > 0")
    deltas = phase_shifts(model, pabs, np.arange(model.l_max + 1))[0]
    return ScatteringState(model, p, deltas, scattering_sign(sign))


# ---------------------------------------------------------------------------
# Electron functions


@dataclass(frozen=True, eq=False)
class ElectronFunction:
    """psi(x) = sum_lm u_lm(r)/r Y_lm(x/r) on the model's radial grid."""

    model: ElectronModel
    components: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        comps = {}
        n = self.model.n_r - 1
        for (l, m), u in self.components.items():
            u = np.asarray(u, dtype=complex)
            if u.shape != (n,):
                raise ValueError("component has the wrong radial length")
            if abs(m) > l:
                raise ValueError(f"invalid (l, m) = ({l}, {m})")
            comps[(int(l), int(m))] = u
        object.__setattr__(self, "components", comps)

    def inner(self, other: "ElectronFunction") -> complex:
        h = self.model.step
        total = 0j
        for key, u in self.components.items():
            v = other.components.get(key)
            if v is not None:
                total += h * np.vdot(u, v)
        return total

    def norm2(self) -> float:
        return float(self.inner(self).real)

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def scaled(self, c: complex) -> "ElectronFunction":
        return ElectronFunction(self.model, {k: c * u for k, u in self.components.items()})

    def __add__(self, other: "ElectronFunction") -> "ElectronFunction":
        comps = dict(self.components)
        for k, u in other.components.items():
            comps[k] = comps[k] + u if k in comps else u
        return ElectronFunction(self.model, comps)

    def __sub__(self, other: "ElectronFunction") -> "ElectronFunction":
        return self + other.scaled(-1.0)

    @property
    def l_max(self) -> int:
        return max((l for l, _ in self.components), default=0)

    def on_sphere(self, sphere: SphereQuadrature) -> np.ndarray:
        """psi(r_i * n_a) with shape (n_r - 1, n_angles)."""
        r = self.model.r
        out = np.zeros((r.size, len(sphere)), dtype=complex)
        th, ph = sphere.theta, sphere.phi
        for (l, m), u in self.components.items():
            out += (u / r)[:, None] * ylm(l, m, th, ph)[None, :]
        return out


def bound_function(state: EigenState, model: ElectronModel, m: int = 0) -> ElectronFunction:
    return ElectronFunction(model, {(state.l, m): state.u.astype(complex)})


def project_partial_waves(model: ElectronModel, values: np.ndarray, sphere: SphereQuadrature, l_max: int):
    """Partial-wave components of samples ``values[r_i, angle]`` of a function on the grid."""
    r = model.r
    th, ph = sphere.theta, sphere.phi
    comps = {}
    for l, m in lm_pairs(l_max):
        y = np.conj(ylm(l, m, th, ph)) * sphere.weights
        comps[(l, m)] = r * (values @ y)
    return ElectronFunction(model, comps)


def electron_function_from_callable(model: ElectronModel, func, l_max: int, n_theta: int = 24, n_phi: int = 48):
    """Partial-wave projection of psi(x, y, z) given as a vectorised callable."""
    sphere = sphere_quadrature(n_theta, n_phi)
    r = model.r
    pts = r[:, None, None] * sphere.directions[None, :, :]
    values = np.asarray(func(pts[..., 0], pts[..., 1], pts[..., 2]), dtype=complex)
    return project_partial_waves(model, values, sphere, l_max)


def bound_basis(model: ElectronModel):
    """(state, m) pairs spanning the point spectrum."""
    return [(s, m) for s in solve_bound_states(model) for m in range(-s.l, s.l + 1)]


def bound_amplitudes(model: ElectronModel, psi: ElectronFunction) -> np.ndarray:
    h = model.step
    out = []
    for s, m in bound_basis(model):
        u = psi.components.get((s.l, m))
        out.append(0j if u is None else h * np.dot(s.u, u))
    return np.array(out, dtype=complex)


@dataclass(frozen=True)
class MomentumGrid:
    """Magnitudes x directions; ``weights`` carries p^2 dp dOmega."""

    magnitudes: np.ndarray
    magnitude_weights: np.ndarray
    sphere: SphereQuadrature

    def __post_init__(self):
        if np.any(np.asarray(self.magnitudes) <= 0):
            raise ValueError("momentum magnitudes must be positive")

    @property
    def directions(self) -> np.ndarray:
        return self.sphere.directions

    @property
    def shape(self) -> tuple[int, int]:
        return self.magnitudes.size, len(self.sphere)

    @property
    def weights(self) -> np.ndarray:
        return (self.magnitude_weights * self.magnitudes**2)[:, None] * self.sphere.weights[None, :]

    @property
    def vectors(self) -> np.ndarray:
        return self.magnitudes[:, None, None] * self.directions[None, :, :]


def momentum_grid(p_min: float, p_max: float, order: int, n_theta: int, n_phi: int, panels: int = 1) -> MomentumGrid:
    if p_min < 0:
        raise ValueError("p_min must be nonnegative")
    p, w = gauss_legendre(p_min, p_max, order, panels)
    return MomentumGrid(p, w, sphere_quadrature(n_theta, n_phi))


@dataclass(frozen=True, eq=False)
class MomentumFunction:
    grid: MomentumGrid
    values: np.ndarray

    def norm2(self) -> float:
        return float(np.sum(self.grid.weights * np.abs(self.values) ** 2))

    def inner(self, other: "MomentumFunction") -> complex:
        return complex(np.sum(self.grid.weights * np.conj(self.values) * other.values))


@dataclass(frozen=True, eq=False)
class SpectralFunction:
    """Electron state as bound amplitudes (ordered as ``bound_basis``) plus its ac part in momentum space."""

    bound: np.ndarray
    ac: MomentumFunction

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.bound) ** 2)) + self.ac.norm2()

    def inner(self, other: "SpectralFunction") -> complex:
        return complex(np.vdot(self.bound, other.bound)) + self.ac.inner(other.ac)

    def scaled(self, c: complex) -> "SpectralFunction":
        return SpectralFunction(c * self.bound, MomentumFunction(self.ac.grid, c * self.ac.values))


def ac_project(model: ElectronModel, psi):
    """Remove the point-spectrum part: psi - sum_b <psi_b, psi> psi_b."""
    if isinstance(psi, SpectralFunction):
        return SpectralFunction(np.zeros_like(psi.bound), psi.ac)
    comps = dict(psi.components)
    h = model.step
    for s, m in bound_basis(model):
        u = comps.get((s.l, m))
        if u is None:
            continue
        comps[(s.l, m)] = u - (h * np.dot(s.u, u)) * s.u
    return ElectronFunction(model, comps)


def expand(model: ElectronModel, psi: ElectronFunction, p_grid: MomentumGrid, sign="-") -> MomentumFunction:
    """p -> <phi(p), psi> on the momentum grid."""
    sgn = scattering_sign(sign)
    r = model.r
    h = model.step
    pm = p_grid.magnitudes
    th, ph = p_grid.sphere.theta, p_grid.sphere.phi
    out = np.zeros(p_grid.shape, dtype=complex)
    by_l: dict[int, list[int]] = {}
    for l, m in psi.components:
        by_l.setdefault(l, []).append(m)
    pref = 4.0 * math.pi / (2.0 * math.pi) ** 1.5
    for l, ms in by_l.items():
        delta = phase_shifts(model, pm, [l])[:, 0] if model.depth > 0 else np.zeros_like(pm)
        radial = radial_scattering(model, pm, l, r, delta) * (h * r)[None, :]
        phase = pref * (-1j) ** l * np.exp(-1j * sgn * delta)
        for m in ms:
            integral = radial @ psi.components[(l, m)]
            out += (phase * integral)[:, None] * ylm(l, m, th, ph)[None, :]
    return MomentumFunction(p_grid, out)


def spectral_decomposition(model: ElectronModel, psi: ElectronFunction, p_grid: MomentumGrid, sign="-"):
    """Bound amplitudes plus the expansion of the ac part."""
    return SpectralFunction(bound_amplitudes(model, psi), expand(model, ac_project(model, psi), p_grid, sign))


def phase_shift_table(model: ElectronModel, momenta) -> list[dict]:
    momenta = np.atleast_1d(np.asarray(momenta, dtype=float))
    table = phase_shifts(model, momenta, np.arange(model.l_max + 1))
    return [
        {"p": float(p), **{f"delta_{l}": float(d) for l, d in enumerate(row)}} for p, row in zip(momenta, table)
    ]


def bound_state_table(states) -> list[dict]:
    return [{"index": i, "l": s.l, "n": s.n, "e": s.e, "e_grid": s.e_grid} for i, s in enumerate(states)]
