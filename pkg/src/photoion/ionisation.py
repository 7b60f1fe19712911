"""Second-order ionisation probability of the ground state by one absorbed photon.

The transition amplitude rho(p, k) = <phi(p), w01(k, lam) phi0> is evaluated
in partial waves. For the s-wave ground state phi0 = u0(r) / (r sqrt(4 pi))
the angular integrals are done in closed form:

    rho(p, k) = A(k) (eps.p_hat) sum_{l>=1} (2l+1) exp(-i s delta_l(p)) P_l'(p_hat.k_hat) J_l(p, |k|)
    A(k)      = 8 pi c(k) / (|k| (2 pi)^(3/2))
    J_l(p, k) = int r R_l(p, r) j_l(k r) g(r) dr,    g = d/dr[mu u0 / r] / sqrt(4 pi)

so a table stores J on (l, |p|, |k|) and the angular factor separately.

Two normalisations of the probability are reported: ``q2`` integrates
|u_p(0)|^2 with u_p the energy-shell integral, and ``q2_scaled`` is
(2 pi)^2 q2, which is the t -> infinity limit of the finite-time integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import spherical_jn

from .coupling import CouplingModel, polarization_vectors
from .electron import (
    ElectronModel,
    MomentumFunction,
    MomentumGrid,
    SpectralFunction,
    ac_project,
    bound_basis,
    ground_state,
    momentum_grid,
    phase_shifts,
    radial_scattering,
    scattering_sign,
)
from .photon_field import (
    CloudSpec,
    FockVector,
    ModeGrid,
    OnePhotonFunction,
    PhotonWavefunction,
    cloud_state,
    gram_matrix,
    polarization_index,
    product_grid,
)
from .quadrature import gauss_legendre, legendre_table, sinc_kernel, sphere_quadrature, ylm_angular_gradient
from .quadrature import unit_vectors_to_angles

_NORM_4PI = 1.0 / math.sqrt(4.0 * math.pi)


class UnresolvedScatteringError(RuntimeError):
    """The partial-wave sum or the phase-shift tail did not converge below tolerance."""


class ShellCoverageError(ValueError):
    """An energy shell carrying photon weight lies outside the tabulated |k| range."""


class TimeWindowError(RuntimeError):
    """The finite s-window leaves a tail above tolerance."""


# ---------------------------------------------------------------------------
# Ground-state radial source


@dataclass(frozen=True)
class GroundProfile:
    """Closed-form s-wave ground state u0 = A sin(K r) inside, A sin(K a) exp(-kappa (r - a)) outside."""

    energy: float
    radius: float
    inner_wavenumber: float
    decay: float
    amplitude: float

    @classmethod
    def from_model(cls, model: ElectronModel) -> "GroundProfile":
        e0 = ground_state(model).e
        big_k = math.sqrt(model.depth + e0)
        kappa = math.sqrt(-e0)
        a = model.radius
        inner = 0.5 * a - math.sin(2.0 * big_k * a) / (4.0 * big_k)
        outer = math.sin(big_k * a) ** 2 / (2.0 * kappa)
        return cls(e0, a, big_k, kappa, 1.0 / math.sqrt(inner + outer))

    def u(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        a, k, q = self.radius, self.inner_wavenumber, self.decay
        inside = self.amplitude * np.sin(k * r)
        outside = self.amplitude * math.sin(k * a) * np.exp(-q * (r - a))
        return np.where(r < a, inside, outside)

    def du(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        a, k, q = self.radius, self.inner_wavenumber, self.decay
        inside = self.amplitude * k * np.cos(k * r)
        outside = -q * self.amplitude * math.sin(k * a) * np.exp(-q * (r - a))
        return np.where(r < a, inside, outside)

    def source(self, r, coupling: CouplingModel) -> np.ndarray:
        """g(r) = d/dr[mu u0 / r] / sqrt(4 pi)."""
        r = np.asarray(r, dtype=float)
        u, du = self.u(r), self.du(r)
        mu, dmu = coupling.mu(r), coupling.mu_derivative(r)
        k = self.inner_wavenumber
        # d/dr (u / r); inside and near 0 use the series of (sin(kr)/r)'
        quotient = (du * r - u) / r**2
        small = r * k < 1e-3
        quotient = np.where(small, -self.amplitude * k**3 * r / 3.0, quotient)
        return (dmu * u / r + mu * quotient) * _NORM_4PI


def _radial_rule(profile: GroundProfile, coupling: CouplingModel, r_max: float, panel_width: float, order: int):
    """Gauss-Legendre panels on [0, a] and [a, r_cut], split at the well edge."""
    a = profile.radius
    probe = np.linspace(a, r_max, 4000)
    g = np.abs(profile.source(probe, coupling))
    keep = np.nonzero(g > 1e-17 * max(g.max(), 1e-300))[0]
    r_cut = float(probe[keep[-1]]) if keep.size else a * 2.0
    r_cut = min(max(r_cut, 2.0 * a), r_max)
    n_in = max(1, int(math.ceil(a / panel_width)))
    n_out = max(1, int(math.ceil((r_cut - a) / panel_width)))
    r1, w1 = gauss_legendre(0.0, a, order, n_in)
    r2, w2 = gauss_legendre(a, r_cut, order, n_out)
    return np.concatenate([r1, r2]), np.concatenate([w1, w2])


# ---------------------------------------------------------------------------
# Tables


def _angular_factor(l_max: int, p_dirs: np.ndarray, k_dirs: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """M[l, d, a, q] = P_l'(p_d.k_a) (eps_{a,q}.p_d)."""
    cos = np.clip(p_dirs @ k_dirs.T, -1.0, 1.0)
    _, dleg = legendre_table(l_max, cos)
    proj = np.einsum("aqi,di->daq", eps, p_dirs)
    return dleg[:, :, :, None] * proj[None, :, :, :]


@dataclass(eq=False)
class RhoHatTable:
    """rho_lam(p, k) on a momentum grid and a product photon grid, stored in factorised form.

    ``radial[l, ip, ik]`` holds J_l(p, k) on the photon grid's radial nodes and
    ``phase[l, ip]`` the factor (2l+1) exp(-i s delta_l(p)).
    """

    model: ElectronModel
    coupling: CouplingModel
    p_grid: MomentumGrid
    mode_grid: ModeGrid
    sign: int
    l_sum: int
    profile: GroundProfile
    r_nodes: np.ndarray
    r_weights: np.ndarray
    deltas: np.ndarray
    radial: np.ndarray
    phase: np.ndarray
    angular: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def e0(self) -> float:
        return self.profile.energy

    @property
    def k_nodes(self) -> np.ndarray:
        return self.mode_grid.radial_nodes

    def amplitude(self, kabs) -> np.ndarray:
        kabs = np.asarray(kabs, dtype=float)
        return 8.0 * math.pi * self.coupling.prefactor(kabs) / (kabs * (2.0 * math.pi) ** 1.5)

    def radial_integrals(self, kabs, p_index=None) -> np.ndarray:
        """J_l(p, k) computed directly at arbitrary |k|; shape (l_sum + 1, n_p, n_k)."""
        kabs = np.atleast_1d(np.asarray(kabs, dtype=float))
        pm = self.p_grid.magnitudes if p_index is None else self.p_grid.magnitudes[p_index]
        deltas = self.deltas if p_index is None else self.deltas[p_index]
        return _radial_table(self.model, self.profile, self.coupling, pm, kabs, deltas, self.r_nodes, self.r_weights)

    def values(self, max_entries: int = 5_000_000) -> np.ndarray:
        """Dense rho on (p magnitude, p direction, mode); only for small grids."""
        n_p, n_d = self.p_grid.shape
        g = self.mode_grid
        size = n_p * n_d * g.n_modes
        if size > max_entries:
            raise MemoryError(f"dense rho table would have {size} entries (cap {max_entries})")
        x = self.phase[:, :, None] * self.radial  # (l, p, u)
        vals = np.einsum("lpu,ldaq->pduaq", x, self.angular)
        vals = vals * self.amplitude(self.k_nodes)[None, None, :, None, None]
        return vals.reshape(n_p, n_d, g.n_modes)

    def contracted(self, f: OnePhotonFunction) -> np.ndarray:
        """T[l, d, u] = sum over directions/polarisations at shell u of w A f M."""
        if not f.grid.same_as(self.mode_grid):
            raise ValueError("photon function lives on a different mode grid")
        g = self.mode_grid
        fw = g.as_product_array(f.values * g.weights)
        fw = fw * self.amplitude(self.k_nodes)[:, None, None]
        return np.einsum("ldaq,uaq->ldu", self.angular, fw)

    def angular_integrated(self, polarization=None) -> np.ndarray:
        """D[ip, u] = int dOmega_p sum_lam int dOmega_k |rho(p, k)|^2 at |p| = p_ip, |k| = k_u."""
        g = self.mode_grid
        q_sel = slice(None) if polarization is None else [polarization_index(polarization)]
        m = self.angular[..., q_sel]
        gram = np.einsum("ldaq,mdaq,d,a->lm", m, m, self.p_grid.sphere.weights, g.sphere.weights)
        x = self.phase[:, :, None] * self.radial
        quad = np.einsum("lpu,lm,mpu->pu", np.conj(x), gram, x).real
        return quad * self.amplitude(self.k_nodes)[None, :] ** 2

    def l2_norm2(self, k_lo: float = 0.0, k_hi: float = math.inf, polarization=None) -> float:
        """sum_p w_p sum_modes w_m |rho|^2 over modes with k_lo <= |k| <= k_hi."""
        kr = self.k_nodes
        sel = (kr >= k_lo) & (kr <= k_hi)
        wk = self.mode_grid.radial_weights[sel] * kr[sel] ** 2
        wp = self.p_grid.magnitude_weights * self.p_grid.magnitudes**2
        dens = self.angular_integrated(polarization)[:, sel]
        return float(np.sum(wp[:, None] * wk[None, :] * dens))


def _radial_table(model, profile, coupling, p, kabs, deltas, r_nodes, r_weights, l_values=None) -> np.ndarray:
    src = r_weights * r_nodes * profile.source(r_nodes, coupling)
    l_values = range(deltas.shape[1]) if l_values is None else l_values
    out = np.empty((len(l_values), p.size, kabs.size))
    for n, l in enumerate(l_values):
        radial = radial_scattering(model, p, l, r_nodes, deltas[:, l]) * src[None, :]
        bessel = spherical_jn(l, kabs[:, None] * r_nodes[None, :])
        out[n] = radial @ bessel.T
    return out


def _choose_l_sum(model, profile, coupling, p, kabs, r_nodes, r_weights, l_start, l_cap, tol):
    """Smallest l_sum whose last two partial waves are below ``tol`` of the dominant one."""
    deltas = phase_shifts(model, p, np.arange(l_cap + 1))
    blocks = [_radial_table(model, profile, coupling, p, kabs, deltas, r_nodes, r_weights, range(l_start + 1))]
    l_sum = l_start
    while True:
        table = np.concatenate(blocks)
        ls = np.arange(l_sum + 1)
        # bound on each partial wave's contribution: (2l+1) max|P_l'| max|J_l|
        size = (2 * ls + 1) * ls * (ls + 1) / 2.0 * np.abs(table).reshape(l_sum + 1, -1).max(axis=1)
        ref = size.max()
        tail = size[-2:].max() / ref if ref > 0 else 0.0
        if tail <= tol:
            return l_sum, deltas[:, : l_sum + 1], table, tail
        if l_sum >= l_cap:
            raise UnresolvedScatteringError(
                f"partial-wave tail {tail:.3g} above tolerance {tol:.3g} at l_sum = {l_sum}"
            )
        new = range(l_sum + 1, min(l_cap, l_sum + 4) + 1)
        blocks.append(_radial_table(model, profile, coupling, p, kabs, deltas, r_nodes, r_weights, new))
        l_sum = new[-1]


def rho_hat(
    model: ElectronModel,
    coupling: CouplingModel,
    p_grid: MomentumGrid,
    mode_grid: ModeGrid,
    sign="-",
    *,
    partial_wave_tol: float = 1e-10,
    phase_tol: float = 1e-6,
    l_cap: int = 60,
    panel_width: float = 0.5,
    radial_order: int = 16,
) -> RhoHatTable:
    """Tabulate rho_lam(p, k) = <phi(p), w01(k, lam) phi0> for all grid pairs.

    Raises ``UnresolvedScatteringError`` when the partial-wave sum or the
    phase shifts at the largest retained l are above tolerance.
    """
    if not mode_grid.is_product:
        raise ValueError("rho tables need a product photon grid (radial shells x sphere)")
    if mode_grid.mass != 0 or coupling.mass != 0:
        raise ValueError("the energy shell construction assumes omega = |k|")
    sgn = scattering_sign(sign)
    profile = GroundProfile.from_model(model)
    r_nodes, r_weights = _radial_rule(profile, coupling, model.r_max, panel_width, radial_order)
    pm = p_grid.magnitudes
    kr = mode_grid.radial_nodes
    l_start = max(model.l_max, 8)
    l_sum, deltas, radial, tail = _choose_l_sum(
        model, profile, coupling, pm, kr, r_nodes, r_weights, l_start, l_cap, partial_wave_tol
    )
    delta_tail = float(np.abs(deltas[:, -1]).max())
    if delta_tail > phase_tol:
        raise UnresolvedScatteringError(f"phase shift at l = {l_sum} is {delta_tail:.3g} > {phase_tol:.3g}")
    ls = np.arange(l_sum + 1)
    phase = (2 * ls + 1)[:, None] * np.exp(-1j * sgn * deltas.T)
    eps = polarization_vectors(mode_grid.sphere.directions)  # (angle, pol, xyz)
    angular = _angular_factor(l_sum, p_grid.directions, mode_grid.sphere.directions, eps)
    diag = {"partial_wave_tail": float(tail), "phase_shift_tail": delta_tail, "l_sum": l_sum}
    return RhoHatTable(
        model, coupling, p_grid, mode_grid, sgn, l_sum, profile, r_nodes, r_weights, deltas, radial, phase, angular, diag
    )


def rho_hat_at(table: RhoHatTable, p_vectors, k_vectors, lam) -> np.ndarray:
    """rho_lam(p, k) evaluated directly at arbitrary momenta; shape (n_p, n_k)."""
    p_vectors = np.atleast_2d(np.asarray(p_vectors, dtype=float))
    k_vectors = np.atleast_2d(np.asarray(k_vectors, dtype=float))
    pabs = np.linalg.norm(p_vectors, axis=1)
    kabs = np.linalg.norm(k_vectors, axis=1)
    deltas = phase_shifts(table.model, pabs, np.arange(table.l_sum + 1))
    radial = _radial_table(
        table.model, table.profile, table.coupling, pabs, kabs, deltas, table.r_nodes, table.r_weights
    )
    eps = polarization_vectors(k_vectors)[:, polarization_index(lam)]
    p_dirs = p_vectors / pabs[:, None]
    k_dirs = k_vectors / kabs[:, None]
    _, dleg = legendre_table(table.l_sum, np.clip(p_dirs @ k_dirs.T, -1.0, 1.0))
    ls = np.arange(table.l_sum + 1)
    phase = (2 * ls + 1)[:, None] * np.exp(-1j * table.sign * deltas.T)
    total = np.einsum("lp,lpk,lpk->pk", phase, radial, dleg)
    return total * (p_dirs @ eps.T) * table.amplitude(kabs)[None, :]


def rho_hat_derivative_norms(
    table: RhoHatTable, lam, k_vectors, k_weights, step: float
) -> dict[int, float]:
    """Discretised int dp int_K dk |d_k^alpha rho|^2 summed over |alpha| = 0, 1, 2.

    Derivatives are central differences with step ``step`` in Cartesian k;
    ``k_vectors``/``k_weights`` define the compact set K.
    """
    p = table.p_grid.vectors.reshape(-1, 3)
    wp = table.p_grid.weights.ravel()
    k = np.atleast_2d(np.asarray(k_vectors, dtype=float))
    wk = np.asarray(k_weights, dtype=float)
    eye = np.eye(3) * step

    def rho(shift):
        return rho_hat_at(table, p, k + shift, lam)

    center = rho(np.zeros(3))
    plus = [rho(eye[i]) for i in range(3)]
    minus = [rho(-eye[i]) for i in range(3)]

    def total(x):
        return float(np.sum(wp[:, None] * wk[None, :] * np.abs(x) ** 2))

    first = sum(total((plus[i] - minus[i]) / (2 * step)) for i in range(3))
    second = 0.0
    for i in range(3):
        second += total((plus[i] - 2 * center + minus[i]) / step**2)
        for j in range(i + 1, 3):
            mixed = (rho(eye[i] + eye[j]) - rho(eye[i] - eye[j]) - rho(eye[j] - eye[i]) + rho(-eye[i] - eye[j])) / (
                4 * step**2
            )
            second += 2.0 * total(mixed)
    return {0: total(center), 1: first, 2: second}


# ---------------------------------------------------------------------------
# Energy-shell formula


@dataclass(frozen=True, eq=False)
class IonisationResult:
    """Shell-formula probability with its per-p density.

    ``density[ip, d] = |u_p(0)|^2`` on the momentum grid, ``q2 = sum w_p density``
    and ``q2_scaled = (2 pi)^2 q2``.
    """

    q2: float
    density: np.ndarray
    p_grid: MomentumGrid
    polarization: str
    diagnostics: dict

    @property
    def q2_scaled(self) -> float:
        return (2.0 * math.pi) ** 2 * self.q2

    @property
    def radial_density(self) -> np.ndarray:
        """int dOmega_p p^2 |u_p(0)|^2 per momentum magnitude."""
        g = self.p_grid
        return g.magnitudes**2 * (self.density @ g.sphere.weights)

    def density_table(self) -> list[dict]:
        g = self.p_grid
        return [{"p": float(p), "q": float(q)} for p, q in zip(g.magnitudes, self.radial_density)]


def _photon_values(photon, k_vectors: np.ndarray) -> np.ndarray:
    return np.asarray(photon.profile(k_vectors), dtype=complex)


def _shell_sums(table: RhoHatTable, photon: PhotonWavefunction, y: float, sphere, j_values, radius, active):
    """u_p(y) for every p on the table's momentum grid using the supplied J values at each radius."""
    n_p, n_d = table.p_grid.shape
    lam = polarization_index(photon.polarization)
    out = np.zeros((n_p, n_d), dtype=complex)
    if not np.any(active):
        return out
    dirs = sphere.directions
    eps = polarization_vectors(dirs)[:, lam]
    m = _angular_factor(table.l_sum, table.p_grid.directions, dirs, eps[:, None, :])[..., 0]  # (l, d, a)
    for ip in np.nonzero(active)[0]:
        big_r = radius[ip]
        k_vec = big_r * dirs
        phi = _photon_values(photon, k_vec)
        weight = sphere.weights * phi * big_r**2 * table.amplitude(big_r)
        coeff = table.phase[:, ip] * j_values[:, ip]
        out[ip] = (coeff @ m.reshape(coeff.size, -1)).reshape(m.shape[1:]) @ weight
    return out


def _shell_radii(table: RhoHatTable, y: float) -> np.ndarray:
    return table.p_grid.magnitudes**2 - table.e0 - y


def _check_coverage(table: RhoHatTable, photon: PhotonWavefunction, radius: np.ndarray, active: np.ndarray):
    lo, hi = photon.omega_support
    kr = table.k_nodes
    carries = active & (radius > lo) & (radius < hi)
    outside = carries & ((radius < kr.min()) | (radius > kr.max()))
    if np.any(outside):
        bad = radius[outside]
        raise ShellCoverageError(
            f"shell radii {bad.min():.6g}..{bad.max():.6g} carry photon weight but the photon grid covers "
            f"|k| in [{kr.min():.6g}, {kr.max():.6g}]"
        )
    return carries


def u_p(table: RhoHatTable, photon: PhotonWavefunction, y: float = 0.0, p_index=None, interpolate: bool = True):
    """u_p(y) = int_{S^2(p^2 - e0 - y)} dmu rho(p, k) phi(k) on the table's p-grid (or one magnitude)."""
    radius = _shell_radii(table, y)
    active = radius > 0
    if p_index is not None:
        mask = np.zeros_like(active)
        mask[p_index] = True
        active &= mask
    carries = _check_coverage(table, photon, radius, active)
    j_values = np.zeros((table.l_sum + 1, radius.size))
    if np.any(carries):
        j_values[:, carries] = _shell_j(table, radius, carries, interpolate)
    out = _shell_sums(table, photon, y, table.mode_grid.sphere, j_values, radius, carries)
    return out if p_index is None else out[p_index]


def _shell_j(table: RhoHatTable, radius: np.ndarray, carries: np.ndarray, interpolate: bool) -> np.ndarray:
    """J_l(p_i, R_i) for the shells that carry weight, by spline or by direct quadrature."""
    idx = np.nonzero(carries)[0]
    if interpolate:
        spline = CubicSpline(table.k_nodes, table.radial, axis=2)
        vals = spline(radius[idx])  # (l, n_p, n_idx)
        return vals[:, idx, np.arange(idx.size)]
    r_nodes = table.r_nodes
    src = table.r_weights * r_nodes * table.profile.source(r_nodes, table.coupling)
    pm = table.p_grid.magnitudes[idx]
    out = np.empty((table.l_sum + 1, idx.size))
    for l in range(table.l_sum + 1):
        radial = radial_scattering(table.model, pm, l, r_nodes, table.deltas[idx, l])
        bessel = spherical_jn(l, radius[idx, None] * r_nodes[None, :])
        out[l] = np.sum(radial * bessel * src[None, :], axis=1)
    return out


def q2_shell(table: RhoHatTable, photon: PhotonWavefunction) -> IonisationResult:
    """Q^2 = int dp |u_p(0)|^2 with the shell integral on the photon grid's sphere rule.

    Diagnostics: ``shell_interpolation_residual`` compares interpolated and
    directly computed radial integrals on the shells; ``sphere_refinement``
    is the change of q2 under a doubled sphere rule.
    """
    radius = _shell_radii(table, 0.0)
    active = radius > 0
    carries = _check_coverage(table, photon, radius, active)
    l_n = table.l_sum + 1
    j_interp = np.zeros((l_n, radius.size))
    j_direct = np.zeros((l_n, radius.size))
    if np.any(carries):
        j_interp[:, carries] = _shell_j(table, radius, carries, True)
        j_direct[:, carries] = _shell_j(table, radius, carries, False)
    sphere = table.mode_grid.sphere
    u = _shell_sums(table, photon, 0.0, sphere, j_interp, radius, carries)
    density = np.abs(u) ** 2
    q2 = float(np.sum(table.p_grid.weights * density))
    u_direct = _shell_sums(table, photon, 0.0, sphere, j_direct, radius, carries)
    q2_direct = float(np.sum(table.p_grid.weights * np.abs(u_direct) ** 2))
    n_theta = np.unique(sphere.cos_theta).size
    n_phi = len(sphere) // n_theta
    fine = sphere_quadrature(2 * n_theta, 2 * n_phi)
    u_fine = _shell_sums(table, photon, 0.0, fine, j_interp, radius, carries)
    q2_fine = float(np.sum(table.p_grid.weights * np.abs(u_fine) ** 2))
    scale = max(abs(q2), 1e-300)
    diag = {
        "shell_interpolation_residual": abs(q2 - q2_direct) / scale if q2 else 0.0,
        "sphere_refinement": abs(q2 - q2_fine) / scale if q2 else 0.0,
        "q2_direct": q2_direct,
        "q2_fine_sphere": q2_fine,
        "shells_with_weight": int(np.count_nonzero(carries)),
        **table.diagnostics,
    }
    return IonisationResult(q2, density, table.p_grid, photon.polarization, diag)


# ---------------------------------------------------------------------------
# Finite-time formula


def time_amplitude(table: RhoHatTable, f: OnePhotonFunction, t: float) -> np.ndarray:
    """c_t(p) = int_{-t}^{t} ds int dk exp(i s (p^2 - e0 - |k|)) rho(p, k) f(k), shape (n_p, n_d)."""
    contracted = table.contracted(f)  # (l, d, u)
    energy = table.p_grid.magnitudes**2 - table.e0
    kernel = sinc_kernel(t, energy[:, None] - table.k_nodes[None, :])  # (p, u)
    out = np.zeros(table.p_grid.shape, dtype=complex)
    for l in range(table.l_sum + 1):
        weights = kernel * table.phase[l][:, None] * table.radial[l]
        out += weights @ contracted[l].T
    return out


def q2_time_oracle(table: RhoHatTable, photon, t: float) -> float:
    """int dp |c_t(p)|^2 with the s-integral done analytically; t = 0 gives 0."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    f = photon.on_grid(table.mode_grid) if isinstance(photon, PhotonWavefunction) else photon
    c = time_amplitude(table, f, t)
    return float(np.sum(table.p_grid.weights * np.abs(c) ** 2))


@dataclass(frozen=True)
class OracleSequence:
    times: tuple[float, ...]
    q2_time: tuple[float, ...]
    q2_shell: float

    @property
    def gaps(self) -> tuple[float, ...]:
        target = (2.0 * math.pi) ** 2 * self.q2_shell
        return tuple(abs(q - target) / target for q in self.q2_time)

    def as_dict(self) -> dict:
        return {"t": list(self.times), "q2_time": list(self.q2_time), "q2_shell": self.q2_shell, "gap": list(self.gaps)}


def oracle_sequence(table: RhoHatTable, photon: PhotonWavefunction, times) -> OracleSequence:
    shell = q2_shell(table, photon).q2
    values = tuple(q2_time_oracle(table, photon, t) for t in times)
    return OracleSequence(tuple(float(t) for t in times), values, shell)


# ---------------------------------------------------------------------------
# Grids sized for a photon profile


def photon_mode_grid(
    omega_lo: float, omega_hi: float, t_max: float, n_theta: int = 10, n_phi: int = 20, order: int = 16
) -> ModeGrid:
    """Radial panels covering [omega_lo, omega_hi] fine enough for sinc kernels up to t_max."""
    period = 2.0 * math.pi / max(t_max, 1e-12)
    width = min(0.25, 2.0 * period)
    panels = max(1, int(math.ceil((omega_hi - omega_lo) / width)))
    return product_grid(omega_lo, omega_hi, order, n_theta, n_phi, panels)


def shell_momentum_grid(
    e0: float, omega_lo: float, omega_hi: float, t_max: float, margin: float, n_theta: int = 8, n_phi: int = 16, order: int = 8
) -> MomentumGrid:
    """Momenta with p^2 - e0 in [omega_lo - margin, omega_hi + margin], resolving the sinc oscillation in p."""
    e_lo = max(omega_lo - margin + e0, 0.0)
    e_hi = omega_hi + margin + e0
    if e_hi <= 0:
        e_hi = margin
    p_lo, p_hi = math.sqrt(e_lo), math.sqrt(e_hi)
    period = math.pi / (max(p_hi, 1e-6) * max(t_max, 1e-12))
    panels = max(1, int(math.ceil((p_hi - p_lo) / (2.0 * period))))
    return momentum_grid(p_lo, p_hi, order, n_theta, n_phi, panels)


# ---------------------------------------------------------------------------
# Photon clouds


def bound_transition(table: RhoHatTable, f: OnePhotonFunction, t: float) -> np.ndarray:
    """Point-spectrum amplitudes int ds dk exp(is(e_b - e0 - |k|)) <b, w01(k) phi0> f(k), ordered as ``bound_basis``.

    For phi0 an s-wave, <b, w01(k) phi0> = (8 pi c i^l / |k|) (eps . grad_Omega conj(Y_b))(k_hat) int u_b g j_l(kr) dr.
    """
    model = table.model
    grid = table.mode_grid
    r, h = model.r, model.step
    g = table.profile.source(r, table.coupling)
    kabs = grid.kabs
    _, kth, kph = unit_vectors_to_angles(grid.k)
    eps = polarization_vectors(grid.k)[np.arange(grid.n_modes), grid.pol]
    c = table.coupling.prefactor(kabs)
    out = []
    for state, m in bound_basis(model):
        l = state.l
        if l == 0:
            out.append(0j)
            continue
        radial = h * (spherical_jn(l, kabs[:, None] * r[None, :]) @ (state.u * g))
        grad = np.conj(ylm_angular_gradient(l, m, kth, kph))  # (3, modes)
        angular = np.einsum("mi,im->m", eps, grad)
        matrix = 8.0 * math.pi * c * (1j**l) / kabs * angular * radial
        kern = sinc_kernel(t, state.e - table.e0 - grid.omega)
        out.append(complex(np.sum(grid.weights * kern * matrix * f.values)))
    return np.array(out, dtype=complex)


@dataclass(frozen=True, eq=False)
class CloudPsi:
    """Psi(A) = sum_j chi_j (x) F_j with electron parts in spectral form."""

    terms: tuple[tuple[SpectralFunction, FockVector], ...]

    def electron_gram(self) -> np.ndarray:
        chis = [chi for chi, _ in self.terms]
        return np.array([[a.inner(b) for b in chis] for a in chis], dtype=complex)

    def fock_gram(self) -> np.ndarray:
        return gram_matrix([fock for _, fock in self.terms])

    def norm2(self) -> float:
        if not self.terms:
            return 0.0
        return float(np.sum(self.electron_gram() * self.fock_gram()).real)

    def ac_projected(self, model: ElectronModel) -> "CloudPsi":
        return CloudPsi(tuple((ac_project(model, chi), fock) for chi, fock in self.terms))

    def photon_numbers(self) -> set[int]:
        return {n for _, fock in self.terms for n in fock.photon_numbers()}


def _single_photon_term(table_for, f: OnePhotonFunction, lam: str, t: float) -> SpectralFunction:
    table = table_for(lam)
    ac = MomentumFunction(table.p_grid, time_amplitude(table, f, t))
    return SpectralFunction(bound_transition(table, f, t), ac)


def psi_cloud(
    tables: dict,
    cloud: CloudSpec,
    t: float,
    n_max: int | None = None,
    tail_tol: float | None = 0.1,
) -> CloudPsi:
    """Psi(A) at finite s-window [-t, t] by the one-commutator reduction.

    ``tables`` maps polarization '-' / '+' to a ``RhoHatTable`` (the same
    table may serve both). Each cloud photon j contributes chi_j (x)
    prod_{l != j} a*(f_l) Omega. With ``tail_tol`` set, Psi(t/2) is also
    computed and a relative change above the tolerance raises
    ``TimeWindowError``.
    """
    if cloud.n_photons == 0:
        return CloudPsi(())
    n_max = cloud.n_photons if n_max is None else n_max
    if cloud.n_photons > n_max:
        raise ValueError(f"cloud has {cloud.n_photons} photons but n_max = {n_max}")

    def table_for(lam):
        return tables[lam] if lam in tables else tables[polarization_index(lam)]

    def build(window):
        terms = []
        for j, (f, lam) in enumerate(cloud.photons):
            rest = CloudSpec(tuple(p for i, p in enumerate(cloud.photons) if i != j))
            fock = cloud_state(rest, n_max=n_max - 1, grid=f.grid)
            terms.append((_single_photon_term(table_for, f, lam, window), fock))
        return CloudPsi(tuple(terms))

    psi = build(t)
    if tail_tol is not None:
        half = build(0.5 * t)
        diff = CloudPsi(psi.terms + tuple((chi.scaled(-1.0), fock) for chi, fock in half.terms))
        n = psi.norm2()
        change = math.sqrt(max(diff.norm2(), 0.0) / n) if n > 0 else 0.0
        if change > tail_tol:
            raise TimeWindowError(f"s-window t = {t:g} leaves relative tail {change:.3g} > {tail_tol:g}")
    return psi


@dataclass(frozen=True)
class DecouplingResult:
    lhs: float
    rhs: float
    one_photon: dict

    @property
    def gap(self) -> float:
        scale = max(abs(self.lhs), abs(self.rhs), 1e-300)
        return abs(self.lhs - self.rhs) / scale

    def as_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "gap": self.gap, "one_photon": self.one_photon}


def with_polarization(f: OnePhotonFunction, lam: str) -> OnePhotonFunction:
    """Copy the profile of f onto the modes of polarization lam (and zero elsewhere)."""
    g = f.grid
    vals = g.as_product_array(f.values).sum(axis=2)
    out = np.zeros((g.n_radial, g.n_angular, 2), dtype=complex)
    out[..., polarization_index(lam)] = vals
    return OnePhotonFunction(g, out.ravel())


def decoupling_check(
    tables: dict,
    photons,
    m_degrees,
    n_degrees,
    t: float,
    orthonormal_tol: float = 1e-10,
    tail_tol: float | None = None,
) -> DecouplingResult:
    """Compare ||(1_ac x 1) Psi(A)||^2 / prod(m_j! n_j!) with sum_j (n_j Q_-(phi_j) + m_j Q_+(phi_j)).

    ``photons`` are profiles (``PhotonWavefunction`` or single-polarisation
    ``OnePhotonFunction``) that must be orthonormal on the grid. The cloud is
    prod_j a*_+(phi_j)^m_j a*_-(phi_j)^n_j.
    """
    if len(photons) != len(m_degrees) or len(photons) != len(n_degrees):
        raise ValueError("one (m, n) degree pair per photon profile is required")
    any_table = next(iter(tables.values()))
    grid = any_table.mode_grid
    base = [p.on_grid(grid) if isinstance(p, PhotonWavefunction) else p for p in photons]
    profiles = [with_polarization(f, "+") for f in base]
    gram = np.array([[a.inner(b) for b in profiles] for a in profiles])
    dev = float(np.abs(gram - np.eye(len(profiles))).max()) if profiles else 0.0
    if dev > orthonormal_tol:
        raise ValueError(f"photon profiles are not orthonormal on the grid (Gram deviation {dev:.3g})")
    factors = []
    for f, m, n in zip(profiles, m_degrees, n_degrees):
        if m < 0 or n < 0:
            raise ValueError("degrees must be nonnegative")
        factors += [(f, "+")] * m + [(with_polarization(f, "-"), "-")] * n
    cloud = CloudSpec(tuple(factors))
    psi = psi_cloud(tables, cloud, t, tail_tol=tail_tol).ac_projected(any_table.model)
    norm = math.prod(math.factorial(m) * math.factorial(n) for m, n in zip(m_degrees, n_degrees))
    lhs = psi.norm2() / norm

    def table_for(lam):
        return tables[lam] if lam in tables else tables[polarization_index(lam)]

    one = {}
    rhs = 0.0
    for j, (f, m, n) in enumerate(zip(profiles, m_degrees, n_degrees)):
        for lam, deg in (("+", m), ("-", n)):
            if deg == 0:
                continue
            q = q2_time_oracle(table_for(lam), with_polarization(f, lam), t)
            one[f"{j}{lam}"] = q
            rhs += deg * q
    return DecouplingResult(float(lhs), float(rhs), one)
