"""Discretised bosonic Fock space over a one-photon mode grid.

Mode operators carry the square root of their quadrature weight, so for
one-photon functions f, g on the same grid

    a(f) a*(g) - a*(g) a(f) = <f, g> = sum_m w_m conj(f_m) g_m

holds exactly on every state whose occupation stays below the truncation.

A Fock basis vector is keyed by the sorted tuple of occupied mode indices
(one entry per photon), so ``()`` is the vacuum and ``(3, 3, 7)`` holds two
photons in mode 3 and one in mode 7.
"""

from __future__ import annotations

import bisect
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .quadrature import SphereQuadrature, gauss_legendre, smooth_bump, sphere_quadrature

POLARIZATIONS = ("-", "+")


def polarization_index(lam) -> int:
    """Map '-', '+', -1, +1 to the stored polarization index 0 or 1."""
    if lam in ("-", -1):
        return 0
    if lam in ("+", 1, +1):
        return 1
    raise ValueError(f"unknown polarization {lam!r}; use '-' or '+'")


@dataclass(frozen=True, eq=False)
class ModeGrid:
    """Ordered photon modes (k, polarization, weight) with dispersion omega.

    Product grids index modes as ``(radial * n_angular + angular) * 2 + pol``.
    """

    k: np.ndarray
    pol: np.ndarray
    weights: np.ndarray
    mass: float = 0.0
    radial_nodes: np.ndarray | None = None
    radial_weights: np.ndarray | None = None
    sphere: SphereQuadrature | None = None
    omega: np.ndarray = field(init=False)

    def __post_init__(self):
        k = np.ascontiguousarray(self.k, dtype=float)
        pol = np.ascontiguousarray(self.pol, dtype=np.int8)
        w = np.ascontiguousarray(self.weights, dtype=float)
        if k.ndim != 2 or k.shape[1] != 3:
            raise ValueError("k must have shape (n_modes, 3)")
        if pol.shape != (k.shape[0],) or w.shape != (k.shape[0],):
            raise ValueError("pol and weights must have one entry per mode")
        if not np.all(np.isin(pol, (0, 1))):
            raise ValueError("polarization indices must be 0 ('-') or 1 ('+')")
        if np.any(w <= 0):
            raise ValueError("quadrature weights must be positive")
        kabs = np.linalg.norm(k, axis=1)
        if np.any(kabs <= 0):
            raise ValueError("mode grid must exclude k = 0")
        if self.mass < 0:
            raise ValueError("photon mass must be nonnegative")
        omega = kabs if self.mass == 0 else np.sqrt(kabs**2 + self.mass**2)
        for name, val in (("k", k), ("pol", pol), ("weights", w), ("omega", omega)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def product(
        cls,
        radial_nodes,
        radial_weights,
        sphere: SphereQuadrature,
        mass: float = 0.0,
    ) -> "ModeGrid":
        """Radial shells x sphere nodes x two polarizations; weights w_r k^2 w_angle."""
        kr = np.asarray(radial_nodes, dtype=float)
        wr = np.asarray(radial_weights, dtype=float)
        dirs = sphere.directions
        k = (kr[:, None, None, None] * dirs[None, :, None, :]).repeat(2, axis=2).reshape(-1, 3)
        w = (wr[:, None] * kr[:, None] ** 2 * sphere.weights[None, :])[:, :, None].repeat(2, axis=2)
        pol = np.tile(np.array([0, 1], dtype=np.int8), kr.size * len(sphere))
        return cls(k, pol, w.ravel(), mass, kr, wr, sphere)

    @property
    def n_modes(self) -> int:
        return self.weights.size

    @property
    def kabs(self) -> np.ndarray:
        return np.linalg.norm(self.k, axis=1)

    @property
    def is_product(self) -> bool:
        return self.radial_nodes is not None

    @property
    def n_radial(self) -> int:
        return self.radial_nodes.size

    @property
    def n_angular(self) -> int:
        return len(self.sphere)

    def as_product_array(self, values) -> np.ndarray:
        """View per-mode values with shape (n_radial, n_angular, 2)."""
        if not self.is_product:
            raise ValueError("grid has no product structure")
        return np.asarray(values).reshape(self.n_radial, self.n_angular, 2)

    def same_as(self, other: "ModeGrid") -> bool:
        if self is other:
            return True
        return (
            self.n_modes == other.n_modes
            and self.mass == other.mass
            and np.array_equal(self.k, other.k)
            and np.array_equal(self.pol, other.pol)
            and np.array_equal(self.weights, other.weights)
        )

    def window(self, r_lo: float = 0.0, r_hi: float = math.inf) -> np.ndarray:
        """omega_(r_lo, r_hi) = omega * 1{r_lo <= omega <= r_hi} per mode."""
        check_window(r_lo, r_hi)
        return np.where((self.omega >= r_lo) & (self.omega <= r_hi), self.omega, 0.0)


def check_window(r_lo: float, r_hi: float) -> None:
    if not (0.0 <= r_lo < r_hi):
        raise ValueError(f"energy window needs 0 <= r_lo < r_hi, got ({r_lo}, {r_hi})")


def product_grid(
    k_min: float,
    k_max: float,
    order: int,
    n_theta: int,
    n_phi: int,
    panels: int = 1,
    mass: float = 0.0,
) -> ModeGrid:
    """Composite Gauss-Legendre radial shells on [k_min, k_max] times a sphere rule."""
    if k_min < 0:
        raise ValueError("k_min must be nonnegative")
    kr, wr = gauss_legendre(k_min, k_max, order, panels)
    return ModeGrid.product(kr, wr, sphere_quadrature(n_theta, n_phi), mass)


@dataclass(frozen=True, eq=False)
class OnePhotonFunction:
    """Complex amplitude per mode of a grid."""

    grid: ModeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        if v.shape != (self.grid.n_modes,):
            raise ValueError("values must have one entry per grid mode")
        if not np.all(np.isfinite(v)):
            raise ValueError("one-photon values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def polarizations(self) -> tuple[str, ...]:
        present = np.unique(self.grid.pol[self.values != 0])
        return tuple(POLARIZATIONS[i] for i in present)

    def inner(self, other: "OnePhotonFunction") -> complex:
        """<self, other>, antilinear in self."""
        _same_grid(self.grid, other.grid)
        return complex(np.sum(self.grid.weights * np.conj(self.values) * other.values))

    def norm(self) -> float:
        return math.sqrt(np.sum(self.grid.weights * np.abs(self.values) ** 2))

    def norm_omega(self, r_lo: float = 0.0, r_hi: float = math.inf) -> float:
        """sqrt(sum w |f|^2 (1 + 1/omega_(r_lo,r_hi))); infinite if f lives outside the window."""
        om = self.grid.window(r_lo, r_hi)
        nz = self.values != 0
        if np.any(om[nz] == 0):
            return math.inf
        w = self.grid.weights[nz] * np.abs(self.values[nz]) ** 2
        return math.sqrt(np.sum(w * (1.0 + 1.0 / om[nz])))

    def scaled(self, c: complex) -> "OnePhotonFunction":
        return OnePhotonFunction(self.grid, c * self.values)

    def multiplied(self, per_mode) -> "OnePhotonFunction":
        return OnePhotonFunction(self.grid, np.asarray(per_mode) * self.values)

    def evolved(self, t: float) -> "OnePhotonFunction":
        """exp(-i t omega) f."""
        return self.multiplied(np.exp(-1j * t * self.grid.omega))

    def omega_support(self) -> tuple[float, float]:
        om = self.grid.omega[self.values != 0]
        if om.size == 0:
            return (math.nan, math.nan)
        return float(om.min()), float(om.max())


def _same_grid(a: ModeGrid, b: ModeGrid) -> None:
    if not a.same_as(b):
        raise ValueError("one-photon function and state live on different mode grids")


@dataclass(frozen=True, eq=False)
class FockVector:
    """Sparse Fock-space vector.

    ``dropped_norm2`` records the squared norm discarded by the operation that
    produced this vector because it would have exceeded ``n_max`` photons.
    """

    grid: ModeGrid
    n_max: int
    amplitudes: Mapping[tuple[int, ...], complex]
    dropped_norm2: float = 0.0

    def __post_init__(self):
        if self.n_max < 0:
            raise ValueError("n_max must be nonnegative")
        amps = {tuple(k): complex(v) for k, v in self.amplitudes.items()}
        for key in amps:
            if len(key) > self.n_max:
                raise ValueError(f"occupation {len(key)} exceeds n_max = {self.n_max}")
            if any(key[i] > key[i + 1] for i in range(len(key) - 1)):
                raise ValueError("occupation keys must be sorted mode tuples")
            if key and (key[0] < 0 or key[-1] >= self.grid.n_modes):
                raise ValueError("mode index out of range")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def vacuum(cls, grid: ModeGrid, n_max: int) -> "FockVector":
        return cls(grid, n_max, {(): 1.0 + 0j})

    @classmethod
    def zero(cls, grid: ModeGrid, n_max: int) -> "FockVector":
        return cls(grid, n_max, {})

    def norm2(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def inner(self, other: "FockVector") -> complex:
        """<self, other>, antilinear in self."""
        _same_grid(self.grid, other.grid)
        small, large = (self, other) if len(self.amplitudes) <= len(other.amplitudes) else (other, self)
        total = 0j
        for key, a in small.amplitudes.items():
            b = large.amplitudes.get(key)
            if b is not None:
                total += (a.conjugate() * b) if small is self else (b.conjugate() * a)
        return total

    def scaled(self, c: complex) -> "FockVector":
        return FockVector(self.grid, self.n_max, {k: c * v for k, v in self.amplitudes.items()})

    def __add__(self, other: "FockVector") -> "FockVector":
        _same_grid(self.grid, other.grid)
        out = dict(self.amplitudes)
        for k, v in other.amplitudes.items():
            out[k] = out.get(k, 0j) + v
        return FockVector(self.grid, max(self.n_max, other.n_max), out)

    def __sub__(self, other: "FockVector") -> "FockVector":
        return self + other.scaled(-1.0)

    def photon_numbers(self) -> Counter:
        return Counter(len(k) for k in self.amplitudes)

    def with_n_max(self, n_max: int) -> "FockVector":
        return FockVector(self.grid, n_max, self.amplitudes)


def _insert(key: tuple[int, ...], m: int) -> tuple[int, ...]:
    lst = list(key)
    bisect.insort(lst, m)
    return tuple(lst)


def create(f: OnePhotonFunction, psi: FockVector) -> FockVector:
    """a*(f) psi with components above n_max dropped and reported."""
    _same_grid(f.grid, psi.grid)
    nz = np.flatnonzero(f.values)
    coef = np.sqrt(f.grid.weights[nz]) * f.values[nz]
    kept: dict[tuple[int, ...], complex] = {}
    lost: dict[tuple[int, ...], complex] = {}
    for key, amp in psi.amplitudes.items():
        target = kept if len(key) < psi.n_max else lost
        counts = Counter(key)
        for m, c in zip(nz.tolist(), coef):
            new = _insert(key, m)
            target[new] = target.get(new, 0j) + math.sqrt(counts[m] + 1) * c * amp
    dropped = float(sum(abs(v) ** 2 for v in lost.values()))
    return FockVector(psi.grid, psi.n_max, kept, dropped)


def annihilate(f: OnePhotonFunction, psi: FockVector) -> FockVector:
    """a(f) psi; antilinear in f."""
    _same_grid(f.grid, psi.grid)
    coef = np.sqrt(f.grid.weights) * np.conj(f.values)
    out: dict[tuple[int, ...], complex] = {}
    for key, amp in psi.amplitudes.items():
        for m, n in Counter(key).items():
            c = coef[m]
            if c == 0:
                continue
            i = key.index(m)
            new = key[:i] + key[i + 1 :]
            out[new] = out.get(new, 0j) + math.sqrt(n) * c * amp
    return FockVector(psi.grid, psi.n_max, out)


def occupied_energy(grid: ModeGrid, key: Sequence[int], r_lo: float = 0.0, r_hi: float = math.inf) -> float:
    om = grid.window(r_lo, r_hi)
    return float(sum(om[m] for m in key))


def apply_field_function(
    psi: FockVector,
    func: Callable[[float], complex],
    r_lo: float = 0.0,
    r_hi: float = math.inf,
) -> FockVector:
    """func(H_f,(r_lo, r_hi)) psi for the diagonal windowed field energy."""
    om = psi.grid.window(r_lo, r_hi)
    out = {k: func(float(sum(om[m] for m in k))) * v for k, v in psi.amplitudes.items()}
    return FockVector(psi.grid, psi.n_max, out)


def field_energy(psi: FockVector, r_lo: float = 0.0, r_hi: float = math.inf) -> FockVector:
    """H_f,(r_lo, r_hi) psi; the default window gives the full field energy H_f."""
    return apply_field_function(psi, lambda e: e, r_lo, r_hi)


def free_evolve_photons(psi: FockVector, t: float) -> FockVector:
    """exp(-i t H_f) psi."""
    om = psi.grid.omega
    out = {k: np.exp(-1j * t * float(sum(om[m] for m in k))) * v for k, v in psi.amplitudes.items()}
    return FockVector(psi.grid, psi.n_max, out)


@dataclass(frozen=True)
class CloudSpec:
    """Photon cloud A = a*_{lam_1}(f_1) ... a*_{lam_N}(f_N)."""

    photons: tuple[tuple[OnePhotonFunction, str], ...]

    def __post_init__(self):
        photons = tuple((f, POLARIZATIONS[polarization_index(lam)]) for f, lam in self.photons)
        grid = None
        for f, lam in photons:
            if grid is None:
                grid = f.grid
            _same_grid(grid, f.grid)
            if set(f.polarizations) - {lam}:
                raise ValueError(f"photon declared with polarization {lam!r} has other components")
            lo, hi = f.omega_support()
            if not (lo > 0 and math.isfinite(hi)):
                raise ValueError("cloud photons need compact support away from omega = 0")
        object.__setattr__(self, "photons", photons)

    @property
    def n_photons(self) -> int:
        return len(self.photons)

    @property
    def grid(self) -> ModeGrid | None:
        return self.photons[0][0].grid if self.photons else None


def cloud_state(cloud: CloudSpec, n_max: int | None = None, grid: ModeGrid | None = None) -> FockVector:
    """prod_j a*(f_j) Omega."""
    n_max = cloud.n_photons if n_max is None else n_max
    if cloud.n_photons > n_max:
        raise ValueError(f"cloud has {cloud.n_photons} photons but n_max = {n_max}")
    grid = cloud.grid or grid
    if grid is None:
        raise ValueError("an empty cloud needs an explicit grid")
    psi = FockVector.vacuum(grid, n_max)
    for f, _ in reversed(cloud.photons):
        psi = create(f, psi)
    return psi


@dataclass(frozen=True)
class PhotonWavefunction:
    """Smooth compactly supported profile in omega with an optional angular window.

    The radial factor is ``smooth_bump((omega - center) / width)``; when
    ``direction`` is given it is multiplied by
    ``smooth_bump((1 - cos(angle to direction)) / angular_width)``.
    """

    center: float
    width: float
    polarization: str = "+"
    amplitude: float = 1.0
    direction: tuple[float, float, float] | None = None
    angular_width: float = 0.5
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "polarization", POLARIZATIONS[polarization_index(self.polarization)])
        if self.width <= 0:
            raise ValueError("profile width must be positive")
        if self.center - self.width <= 0:
            raise ValueError("profile support must stay away from omega = 0")
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=float)
            if np.linalg.norm(d) == 0:
                raise ValueError("direction must be nonzero")

    @property
    def omega_support(self) -> tuple[float, float]:
        return self.center - self.width, self.center + self.width

    def profile(self, k_vectors: np.ndarray, mass: float = 0.0) -> np.ndarray:
        k = np.asarray(k_vectors, dtype=float)
        kabs = np.linalg.norm(k, axis=-1)
        om = np.sqrt(kabs**2 + mass**2)
        out = self.amplitude * smooth_bump((om - self.center) / self.width)
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=float)
            cosang = (k @ (d / np.linalg.norm(d))) / np.where(kabs > 0, kabs, 1.0)
            out = out * smooth_bump((1.0 - cosang) / self.angular_width)
        return out.astype(complex)

    def on_grid(self, grid: ModeGrid) -> OnePhotonFunction:
        vals = self.profile(grid.k, grid.mass)
        vals[grid.pol != polarization_index(self.polarization)] = 0.0
        return OnePhotonFunction(grid, vals)

    def normalized(self, grid: ModeGrid) -> "PhotonWavefunction":
        """Same profile rescaled to unit norm on ``grid``."""
        n = self.on_grid(grid).norm()
        if n == 0:
            raise ValueError("profile vanishes on every grid mode")
        return PhotonWavefunction(
            self.center,
            self.width,
            self.polarization,
            self.amplitude / n,
            self.direction,
            self.angular_width,
            self.label,
        )


# ---------------------------------------------------------------------------
# Dense truncations for small grids


class FockBasis:
    """All occupation keys with at most ``n_max`` photons over ``n_modes`` modes."""

    def __init__(self, n_modes: int, n_max: int):
        self.n_modes = n_modes
        self.n_max = n_max
        keys: list[tuple[int, ...]] = []
        for n in range(n_max + 1):
            keys.extend(itertools.combinations_with_replacement(range(n_modes), n))
        self.keys = keys
        self.index = {k: i for i, k in enumerate(keys)}
        self.photon_number = np.array([len(k) for k in keys])

    @property
    def dim(self) -> int:
        return len(self.keys)

    def energies(self, omega: np.ndarray, r_lo: float = 0.0, r_hi: float = math.inf) -> np.ndarray:
        check_window(r_lo, r_hi)
        om = np.where((omega >= r_lo) & (omega <= r_hi), omega, 0.0)
        return np.array([sum(om[m] for m in k) for k in self.keys], dtype=float)

    def annihilator(self, m: int) -> sp.csr_matrix:
        """Bare a_m (no quadrature weight)."""
        rows, cols, vals = [], [], []
        for j, key in enumerate(self.keys):
            n = key.count(m)
            if n:
                i = key.index(m)
                rows.append(self.index[key[:i] + key[i + 1 :]])
                cols.append(j)
                vals.append(math.sqrt(n))
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))

    def annihilators(self) -> list[sp.csr_matrix]:
        return [self.annihilator(m) for m in range(self.n_modes)]

    def to_dense(self, psi: FockVector) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        for k, a in psi.amplitudes.items():
            v[self.index[k]] = a
        return v

    def from_dense(self, grid: ModeGrid, vec: np.ndarray, tol: float = 0.0) -> FockVector:
        amps = {k: complex(a) for k, a in zip(self.keys, vec) if abs(a) > tol}
        return FockVector(grid, self.n_max, amps)


# ---------------------------------------------------------------------------
# Snapshots

_SNAPSHOT_HEADER = "# photoion fock snapshot v1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_snapshot(path: str | Path, psi: FockVector) -> None:
    """Write the mode table and sparse amplitudes as whitespace-separated text."""
    g = psi.grid
    lines = [
        _SNAPSHOT_HEADER,
        f"n_modes {g.n_modes} n_max {psi.n_max} mass {_fmt(g.mass)}",
        "# mode kx ky kz pol weight omega",
    ]
    for m in range(g.n_modes):
        kx, ky, kz = g.k[m]
        lines.append(
            f"{m} {_fmt(kx)} {_fmt(ky)} {_fmt(kz)} {POLARIZATIONS[g.pol[m]]} {_fmt(g.weights[m])} {_fmt(g.omega[m])}"
        )
    lines.append(f"amplitudes {len(psi.amplitudes)}")
    lines.append("# re im modes (comma separated, '-' for vacuum)")
    for key in sorted(psi.amplitudes, key=lambda k: (len(k), k)):
        a = psi.amplitudes[key]
        modes = ",".join(map(str, key)) if key else "-"
        lines.append(f"{_fmt(a.real)} {_fmt(a.imag)} {modes}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_snapshot(path: str | Path) -> FockVector:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    head = rows[0].split()
    n_modes, n_max, mass = int(head[1]), int(head[3]), float(head[5])
    table = [r.split() for r in rows[1 : 1 + n_modes]]
    k = np.array([[float(c) for c in r[1:4]] for r in table])
    pol = np.array([polarization_index(r[4]) for r in table])
    w = np.array([float(r[5]) for r in table])
    grid = ModeGrid(k, pol, w, mass)
    count = int(rows[1 + n_modes].split()[1])
    amps = {}
    for r in rows[2 + n_modes : 2 + n_modes + count]:
        re, im, modes = r.split()
        key = () if modes == "-" else tuple(int(x) for x in modes.split(","))
        amps[key] = complex(float(re), float(im))
    return FockVector(grid, n_max, amps)


def gram_matrix(states: Iterable[FockVector]) -> np.ndarray:
    states = list(states)
    n = len(states)
    g = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            g[i, j] = states[i].inner(states[j])
    return g


def random_one_photon(grid: ModeGrid, rng: np.random.Generator, polarization=None) -> OnePhotonFunction:
    """Gaussian random amplitudes, optionally restricted to one polarization (for tests and sweeps)."""
    v = rng.standard_normal(grid.n_modes) + 1j * rng.standard_normal(grid.n_modes)
    if polarization is not None:
        v[grid.pol != polarization_index(polarization)] = 0.0
    return OnePhotonFunction(grid, v)


__all__ = [
    "POLARIZATIONS",
    "CloudSpec",
    "FockBasis",
    "FockVector",
    "ModeGrid",
    "OnePhotonFunction",
    "PhotonWavefunction",
    "annihilate",
    "apply_field_function",
    "cloud_state",
    "create",
    "field_energy",
    "free_evolve_photons",
    "gram_matrix",
    "load_snapshot",
    "polarization_index",
    "product_grid",
    "random_one_photon",
    "save_snapshot",
]
