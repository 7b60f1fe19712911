"""Minimal-coupling style interaction kernels and their weighted norms.

    G(k, lam)   = c(k) eps_lam(k) exp(-i k.x) mu(|x|),    c(k) = kappa(|k|)/sqrt(omega(k))
    w10(k, lam) = -2 G(k, lam).(-i grad) = 2i c exp(-i k.x) mu eps.grad
    w01(k, lam) = w10(k, lam)^*          = 2i c exp(+i k.x) eps.grad(mu .)

The last form uses eps.k = 0. Polarisations are eps_- = theta-hat(k),
eps_+ = phi-hat(k), so (eps_-, eps_+, k/|k|) is right-handed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import spherical_jn

from .electron import EigenState, ElectronFunction, ElectronModel, box_states, ground_state, radial_derivative
from .photon_field import ModeGrid, polarization_index
from .quadrature import legendre_table, lm_pairs, sphere_quadrature, unit_vectors_to_angles, ylm, ylm_angular_gradient


class DivergentCouplingError(ValueError):
    """The ultraviolet profile does not make the weighted kernel integrals converge."""


def polarization_vectors(k) -> np.ndarray:
    """eps_-(k), eps_+(k) for each row of k; shape (n, 2, 3)."""
    k = np.atleast_2d(np.asarray(k, dtype=float))
    _, th, ph = unit_vectors_to_angles(k)
    ct, st, cp, sp = np.cos(th), np.sin(th), np.cos(ph), np.sin(ph)
    e_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
    e_phi = np.stack([-sp, cp, np.zeros_like(ph)], axis=-1)
    return np.stack([e_theta, e_phi], axis=1)


@dataclass(frozen=True)
class CouplingModel:
    """UV profile kappa(|k|) and spatial profile mu(r).

    ``kappa_profile`` is ``"gaussian"`` (exp(-k^2 / 2 sigma^2)) or ``"flat"``
    (no ultraviolet decay; useful only to exercise divergence checks).
    """

    kappa_width: float
    mu_width: float
    kappa_scale: float = 1.0
    kappa_profile: str = "gaussian"
    mass: float = 0.0

    def __post_init__(self):
        if self.kappa_width <= 0 or self.mu_width <= 0:
            raise ValueError("coupling widths must be positive")
        if self.kappa_profile not in ("gaussian", "flat"):
            raise ValueError(f"unknown kappa profile {self.kappa_profile!r}")

    @classmethod
    def for_model(cls, model: ElectronModel, kappa_factor: float = 3.0, mu_factor: float = 3.0, **kw):
        """Widths sigma_kappa = kappa_factor sqrt|e0| and sigma_mu = mu_factor a."""
        e0 = ground_state(model).e
        return cls(kappa_factor * math.sqrt(abs(e0)), mu_factor * model.radius, **kw)

    def scaled(self, c: float) -> "CouplingModel":
        return CouplingModel(self.kappa_width, self.mu_width, self.kappa_scale * c, self.kappa_profile, self.mass)

    def kappa(self, kabs) -> np.ndarray:
        kabs = np.asarray(kabs, dtype=float)
        if self.kappa_profile == "flat":
            return np.full_like(kabs, self.kappa_scale)
        return self.kappa_scale * np.exp(-0.5 * (kabs / self.kappa_width) ** 2)

    def mu(self, r) -> np.ndarray:
        return np.exp(-0.5 * (np.asarray(r, dtype=float) / self.mu_width) ** 2)

    def mu_derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return -r / self.mu_width**2 * self.mu(r)

    def omega(self, kabs) -> np.ndarray:
        kabs = np.asarray(kabs, dtype=float)
        return kabs if self.mass == 0 else np.sqrt(kabs**2 + self.mass**2)

    def prefactor(self, kabs) -> np.ndarray:
        """kappa(|k|) / sqrt(omega(k))."""
        kabs = np.asarray(kabs, dtype=float)
        return self.kappa(kabs) / np.sqrt(self.omega(kabs))

    def check_ultraviolet(self, beta: float = 0.0, probe=(1e1, 1e2, 1e3)) -> None:
        """Fail if kappa^2 |k|^(2+beta) (the Lambda integrand scale) does not decay."""
        vals = [float(self.kappa(k) ** 2 * k ** (2.0 + beta)) for k in probe]
        if not (vals[-1] < 1e-12 * max(vals[0], 1e-300) or vals[-1] == 0.0):
            raise DivergentCouplingError("kappa has no ultraviolet decay: weighted kernel integrals diverge")


# ---------------------------------------------------------------------------
# Application to partial-wave electron functions


def _weighted_radial_derivative(u, r, h, l, mu, dmu):
    """d/dr (mu u / r)."""
    return (dmu * u + mu * radial_derivative(u, h, l)) / r - mu * u / r**2


def _gradient_samples(psi: ElectronFunction, sphere, eps: np.ndarray, mu: np.ndarray, dmu: np.ndarray):
    """eps.grad(mu psi) at (r_i, node_a) for a radial weight mu(r_i) with derivative dmu."""
    model = psi.model
    r = model.r
    h = model.step
    th, ph = sphere.theta, sphere.phi
    radial_dot = sphere.directions @ eps
    out = np.zeros((r.size, len(sphere)), dtype=complex)
    for (l, m), u in psi.components.items():
        g = mu * u / r
        dg = _weighted_radial_derivative(u, r, h, l, mu, dmu)
        y = ylm(l, m, th, ph)
        grad_y = ylm_angular_gradient(l, m, th, ph)
        out += dg[:, None] * (radial_dot * y)[None, :] + (g / r)[:, None] * (eps @ grad_y)[None, :]
    return out


def _plane_wave_projection(model: ElectronModel, values, sphere, k, sign: int, l_out: int, l_cap: int):
    """Partial waves (l <= l_out) of exp(sign i k.x) * values(r, angle), exact for values of degree <= l_cap - l_out."""
    r = model.r
    kabs = float(np.linalg.norm(k))
    khat = np.asarray(k, dtype=float) / kabs
    leg, _ = legendre_table(l_cap, sphere.directions @ khat)
    th, ph = sphere.theta, sphere.phi
    pairs = lm_pairs(l_out)
    proj = np.stack([np.conj(ylm(l, m, th, ph)) * sphere.weights for l, m in pairs], axis=1)
    acc = np.zeros((r.size, len(pairs)), dtype=complex)
    for big_l in range(l_cap + 1):
        radial = (2 * big_l + 1) * (sign * 1j) ** big_l * spherical_jn(big_l, kabs * r)
        acc += radial[:, None] * ((values * leg[big_l][None, :]) @ proj)
    return ElectronFunction(model, {lm: r * acc[:, i] for i, lm in enumerate(pairs)})


def _angular_rule(l_total: int):
    n_theta = l_total // 2 + 2
    return sphere_quadrature(n_theta, 2 * n_theta + 1)


def apply_w01(
    coupling: CouplingModel, k, lam, psi: ElectronFunction, l_out: int | None = None
) -> ElectronFunction:
    """w01(k, lam) psi = 2i c exp(ik.x) eps.grad(mu psi), truncated to l <= l_out."""
    k = np.asarray(k, dtype=float)
    kabs = float(np.linalg.norm(k))
    l_out = psi.model.l_max if l_out is None else l_out
    c = float(coupling.prefactor(kabs))
    eps = polarization_vectors(k)[0, polarization_index(lam)]
    l_in = psi.l_max + 1
    l_cap = l_out + l_in
    sphere = _angular_rule(l_out + l_cap + l_in)
    r = psi.model.r
    values = _gradient_samples(psi, sphere, eps, coupling.mu(r), coupling.mu_derivative(r))
    return _plane_wave_projection(psi.model, values, sphere, k, +1, l_out, l_cap).scaled(2j * c)


def apply_w10(
    coupling: CouplingModel, k, lam, psi: ElectronFunction, l_out: int | None = None
) -> ElectronFunction:
    """w10(k, lam) psi = 2i c exp(-ik.x) mu eps.grad psi, truncated to l <= l_out."""
    k = np.asarray(k, dtype=float)
    kabs = float(np.linalg.norm(k))
    l_out = psi.model.l_max if l_out is None else l_out
    c = float(coupling.prefactor(kabs))
    eps = polarization_vectors(k)[0, polarization_index(lam)]
    l_in = psi.l_max + 1
    l_cap = l_out + l_in
    sphere = _angular_rule(l_out + l_cap + l_in)
    r = psi.model.r
    values = _gradient_samples(psi, sphere, eps, np.ones_like(r), np.zeros_like(r)) * coupling.mu(r)[:, None]
    return _plane_wave_projection(psi.model, values, sphere, k, -1, l_out, l_cap).scaled(2j * c)


def apply_g(coupling: CouplingModel, k, lam, psi: ElectronFunction, l_out: int | None = None):
    """The three Cartesian components G_iota(k, lam) psi."""
    k = np.asarray(k, dtype=float)
    kabs = float(np.linalg.norm(k))
    l_out = psi.model.l_max if l_out is None else l_out
    c = float(coupling.prefactor(kabs))
    eps = polarization_vectors(k)[0, polarization_index(lam)]
    l_cap = l_out + psi.l_max
    sphere = _angular_rule(l_out + l_cap + psi.l_max)
    values = psi.on_sphere(sphere) * coupling.mu(psi.model.r)[:, None]
    base = _plane_wave_projection(psi.model, values, sphere, k, -1, l_out, l_cap)
    return [base.scaled(c * e) for e in eps]


# ---------------------------------------------------------------------------
# Truncated electron space and per-mode matrices


@dataclass(frozen=True, eq=False)
class TruncatedElectron:
    """Orthonormal span of finite-difference eigenstates, one entry per (state, m)."""

    model: ElectronModel
    states: tuple[EigenState, ...]

    @classmethod
    def build(cls, model: ElectronModel, n_per_l: dict[int, int] | None = None) -> "TruncatedElectron":
        n_per_l = {0: 2, 1: 1} if n_per_l is None else n_per_l
        return cls(model, box_states(model, n_per_l))

    @property
    def labels(self) -> list[tuple[int, int, int]]:
        """(state index, l, m) per basis vector."""
        return [(i, s.l, m) for i, s in enumerate(self.states) for m in range(-s.l, s.l + 1)]

    @property
    def energies(self) -> np.ndarray:
        return np.array([self.states[i].e for i, _, _ in self.labels])

    @property
    def dim(self) -> int:
        return len(self.labels)

    @property
    def ground_energy(self) -> float:
        return float(self.energies.min())

    @property
    def l_max(self) -> int:
        return max(s.l for s in self.states)

    def default_shift(self) -> float:
        """b = e0 - 1."""
        return self.ground_energy - 1.0

    def function(self, index: int) -> ElectronFunction:
        i, l, m = self.labels[index]
        return ElectronFunction(self.model, {(l, m): self.states[i].u.astype(complex)})

    def coefficients(self, psi: ElectronFunction) -> np.ndarray:
        h = self.model.step
        out = []
        for i, l, m in self.labels:
            u = psi.components.get((l, m))
            out.append(0j if u is None else h * np.dot(self.states[i].u, u))
        return np.array(out)

    def resolvent_power(self, power: float, b: float | None = None) -> np.ndarray:
        """Diagonal of (H_el - b)^power."""
        b = self.default_shift() if b is None else b
        shifted = self.energies - b
        if np.any(shifted <= 0):
            raise ValueError("shift b must lie below the spectrum")
        return shifted**power


class KernelTable:
    """G(k, lam) and w01(k, lam) matrices on a truncated electron space for every grid mode.

    Matrix elements use exp(i k.x) = sum_LM 4 pi i^L j_L(kr) Y_LM(x) conj(Y_LM(k)),
    truncated at the angular selection limit, so they are exact up to the
    radial quadrature.
    """

    def __init__(self, coupling: CouplingModel, electron: TruncatedElectron, grid: ModeGrid):
        if grid.mass != coupling.mass:
            raise ValueError("coupling and mode grid disagree on the photon mass")
        self.coupling = coupling
        self.electron = electron
        self.grid = grid
        labels = electron.labels
        n = len(labels)
        lb = electron.l_max
        l_cap = 2 * lb + 1
        sphere = _angular_rule(4 * lb + 2 + l_cap)
        th, ph = sphere.theta, sphere.phi
        w = sphere.weights
        dirs = sphere.directions
        y_basis = [ylm(l, m, th, ph) for _, l, m in labels]
        grad_basis = [ylm_angular_gradient(l, m, th, ph) for _, l, m in labels]
        pairs = lm_pairs(l_cap)
        y_big = np.stack([ylm(big_l, big_m, th, ph) for big_l, big_m in pairs])
        # angular integrals, indexed [a, b, LM] (and iota)
        ya = np.stack(y_basis)
        ga = np.stack(grad_basis)  # (n, 3, n_ang)
        ang_s = np.einsum("an,pn,bn,n->abp", np.conj(ya), np.conj(y_big), ya, w)
        ang1 = np.einsum("an,pn,in,bn,n->iabp", np.conj(ya), y_big, dirs.T, ya, w)
        ang2 = np.einsum("an,pn,bin,n->iabp", np.conj(ya), y_big, ga, w)
        # radial integrals at each distinct |k|
        model = electron.model
        r, h = model.r, model.step
        mu = coupling.mu(r)
        us = [electron.states[i].u for i, _, _ in labels]
        g = [mu * u / r for u in us]
        dmu = coupling.mu_derivative(r)
        dg = [_weighted_radial_derivative(u, r, h, l, mu, dmu) for u, (_, l, _) in zip(us, labels)]
        kabs = grid.kabs
        uniq, inverse = np.unique(kabs, return_inverse=True)
        big_ls = np.array([big_l for big_l, _ in pairs])
        jl = np.stack([spherical_jn(big_l, uniq[:, None] * r[None, :]) for big_l in range(l_cap + 1)])  # (L, nk, nr)
        ua = np.stack(us)
        rad_s = h * np.einsum("Lkr,ar,br,r->kabL", jl, ua, ua, mu)
        rad_1 = h * np.einsum("Lkr,ar,br,r->kabL", jl, ua, np.stack(dg), r)
        rad_2 = h * np.einsum("Lkr,ar,br->kabL", jl, ua, np.stack(g))
        # assemble per mode
        _, kth, kph = unit_vectors_to_angles(grid.k)
        y_k = np.stack([ylm(big_l, big_m, kth, kph) for big_l, big_m in pairs], axis=1)  # (modes, LM)
        phase_minus = 4 * np.pi * (-1j) ** big_ls
        phase_plus = 4 * np.pi * (1j) ** big_ls
        rs = rad_s[inverse][..., big_ls]  # (modes, a, b, LM)
        r1 = rad_1[inverse][..., big_ls]
        r2 = rad_2[inverse][..., big_ls]
        self.shift_matrix = np.einsum("mp,abp,mabp->mab", y_k * phase_minus, ang_s, rs)
        self.grad_matrix = np.einsum("mp,iabp,mabp->miab", np.conj(y_k) * phase_plus, ang1, r1) + np.einsum(
            "mp,iabp,mabp->miab", np.conj(y_k) * phase_plus, ang2, r2
        )
        self.prefactor = coupling.prefactor(kabs)
        eps_all = polarization_vectors(grid.k)
        self.eps = eps_all[np.arange(grid.n_modes), grid.pol]
        self.n = n

    def g(self, mode: int | np.ndarray | slice = slice(None)) -> np.ndarray:
        """G_iota matrices, shape (..., 3, n, n)."""
        c = self.prefactor[mode]
        e = self.eps[mode]
        s = self.shift_matrix[mode]
        return (np.asarray(c)[..., None, None, None] * np.asarray(e)[..., :, None, None]) * np.asarray(s)[..., None, :, :]

    def w01(self, mode: int | np.ndarray | slice = slice(None)) -> np.ndarray:
        c = np.asarray(self.prefactor[mode])
        d = np.einsum("...i,...iab->...ab", self.eps[mode], self.grad_matrix[mode])
        return 2j * c[..., None, None] * d

    def w10(self, mode: int | np.ndarray | slice = slice(None)) -> np.ndarray:
        return np.conj(np.swapaxes(self.w01(mode), -1, -2))


def w2_kernels(g1: np.ndarray, g2: np.ndarray):
    """(w20, w11) from Cartesian G components of shape (3, n, n) for two modes."""
    w20 = sum(g1[i] @ g2[i] for i in range(3))
    w11 = sum(g1[i].conj().T @ g2[i] + g1[i] @ g2[i].conj().T for i in range(3))
    return w20, w11


def w2_kernels_at(coupling: CouplingModel, electron: TruncatedElectron, k1, lam1, k2, lam2):
    """w20(k1, lam1, k2, lam2) and w11(k1, lam1, k2, lam2) on the truncated electron space."""
    grid = ModeGrid(np.array([k1, k2], float), np.array([polarization_index(lam1), polarization_index(lam2)]), np.ones(2))
    table = KernelTable(coupling, electron, grid)
    g = table.g()
    return w2_kernels(g[0], g[1])


@dataclass(frozen=True)
class LambdaConstants:
    beta: float
    gamma: float
    lambda1: float
    lambda1_tilde: float
    lambda2: float
    lambda2_tilde: float

    def as_dict(self) -> dict:
        return {
            "beta": self.beta,
            "gamma": self.gamma,
            "lambda1": self.lambda1,
            "lambda1_tilde": self.lambda1_tilde,
            "lambda2": self.lambda2,
            "lambda2_tilde": self.lambda2_tilde,
        }


def _spectral_norms(mats: np.ndarray) -> np.ndarray:
    return np.linalg.svd(mats, compute_uv=False)[..., 0]


def sandwiched_norms(table: KernelTable, gamma: float, b: float | None = None) -> dict[str, np.ndarray]:
    """Per-mode norms entering the Lambda constants."""
    left = table.electron.resolvent_power(gamma / 2, b)
    right_w = table.electron.resolvent_power(-(gamma + 1) / 2, b)
    right_g = table.electron.resolvent_power(-gamma / 2, b)
    w01 = left[:, None] * table.w01() * right_w[None, :]
    w10 = left[:, None] * table.w10() * right_w[None, :]
    s = left[:, None] * table.shift_matrix * right_g[None, :]
    # G = c eps S with |eps| = 1, so ||G|| (as a map into three copies) is |c| ||S||
    return {
        "w01": _spectral_norms(w01),
        "w10": _spectral_norms(w10),
        "g": np.abs(table.prefactor) * _spectral_norms(s),
    }


def lambda_constants(beta: float, gamma: float, table: KernelTable, b: float | None = None) -> LambdaConstants:
    """Quadrature of the four weighted kernel norms over the table's mode grid."""
    table.coupling.check_ultraviolet(beta)
    norms = sandwiched_norms(table, gamma, b)
    w = table.grid.weights
    om = table.grid.omega
    grow = (1.0 + om) ** beta

    def total(x, with_omega):
        return float(np.sum(w * x**2 * grow / (om if with_omega else 1.0)))

    return LambdaConstants(
        beta,
        gamma,
        max(total(norms["w01"], True), total(norms["w10"], True)),
        max(total(norms["w01"], False), total(norms["w10"], False)),
        total(norms["g"], True),
        total(norms["g"], False),
    )


def g_weighted_norm(table: KernelTable) -> float:
    """sum over modes of w ||G||^2 (1 + omega), the discretised square-integrability of G."""
    norms = sandwiched_norms(table, 0.0)["g"]
    return float(np.sum(table.grid.weights * norms**2 * (1.0 + table.grid.omega)))
