"""Shared quadrature rules and angular helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre, sph_harm_y


def gauss_legendre(lo: float, hi: float, order: int, panels: int = 1):
    """Composite Gauss-Legendre nodes and weights on ``[lo, hi]``."""
    if hi <= lo:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    if order < 1 or panels < 1:
        raise ValueError("order and panels must be positive")
    x, w = roots_legendre(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class SphereQuadrature:
    """Product rule on the unit sphere: Gauss-Legendre in cos(theta), uniform in azimuth.

    Weights sum to 4*pi. Nodes never sit on the poles.
    """

    cos_theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return np.arccos(self.cos_theta)

    @property
    def directions(self) -> np.ndarray:
        st = np.sqrt(1.0 - self.cos_theta**2)
        return np.stack([st * np.cos(self.phi), st * np.sin(self.phi), self.cos_theta], axis=-1)

    def __len__(self) -> int:
        return self.weights.size


def sphere_quadrature(n_theta: int, n_phi: int) -> SphereQuadrature:
    """Exact for spherical harmonics of degree < min(2*n_theta, n_phi)."""
    x, wx = roots_legendre(n_theta)
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    ct = np.repeat(x, n_phi)
    ph = np.tile(phi, n_theta)
    w = np.repeat(wx, n_phi) * (2.0 * np.pi / n_phi)
    return SphereQuadrature(ct, ph, w)


def unit_vectors_to_angles(vectors: np.ndarray):
    """Return (|v|, theta, phi) with phi in [0, 2pi)."""
    v = np.asarray(vectors, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    theta = np.arccos(np.clip(v[..., 2] / safe, -1.0, 1.0))
    phi = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2.0 * np.pi)
    return r, theta, phi


def lm_pairs(l_max: int):
    return [(l, m) for l in range(l_max + 1) for m in range(-l, l + 1)]


def ylm(l: int, m: int, theta, phi):
    """Complex orthonormal spherical harmonic with the Condon-Shortley phase."""
    return sph_harm_y(l, m, theta, phi)


def ylm_angular_gradient(l: int, m: int, theta, phi):
    """Cartesian components of the surface gradient r*grad(Y_lm), shape (3, ...)."""
    (y, d) = sph_harm_y(l, m, theta, phi, diff_n=1)
    dtheta = d[..., 0]
    st = np.sin(theta)
    dphi_over_sin = 1j * m * y / st
    ct, cp, sp = np.cos(theta), np.cos(phi), np.sin(phi)
    e_theta = np.stack([ct * cp, ct * sp, -st])
    e_phi = np.stack([-sp, cp, np.zeros_like(phi)])
    return e_theta * dtheta + e_phi * dphi_over_sin


def legendre_table(l_max: int, x):
    """P_l(x) and P_l'(x) for l = 0..l_max, each of shape (l_max+1, *x.shape)."""
    x = np.asarray(x, dtype=float)
    p = np.empty((l_max + 1,) + x.shape)
    dp = np.zeros_like(p)
    p[0] = 1.0
    if l_max >= 1:
        p[1] = x
        dp[1] = 1.0
    for l in range(1, l_max):
        p[l + 1] = ((2 * l + 1) * x * p[l] - l * p[l - 1]) / (l + 1)
        dp[l + 1] = dp[l - 1] + (2 * l + 1) * p[l]
    return p, dp


def sinc_kernel(t: float, delta):
    """int_{-t}^{t} exp(i s delta) ds = 2 sin(t delta)/delta, equal to 2t at delta = 0."""
    return 2.0 * t * np.sinc(t * np.asarray(delta) / np.pi)


def smooth_bump(x):
    """C-infinity bump exp(1 - 1/(1 - x^2)) on |x| < 1, zero elsewhere; equals 1 at 0."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - xi * xi))
    return out
