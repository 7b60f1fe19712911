"""Numerical certification of operator inequalities on small truncations.

Every check builds a finite matrix on a truncated space (finitely many photon
modes, at most ``n_max`` photons, a handful of electron states), computes its
operator norm and compares it with a closed-form bound evaluated from the same
discrete data.

Products of truncated field operators are exact compressions here: every product
used below either lowers the photon number before raising it or only raises it,
so no intermediate state leaves the truncation unless the final one does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import simpson
from scipy.sparse.linalg import ArpackNoConvergence, svds

from .coupling import CouplingModel, KernelTable, LambdaConstants, TruncatedElectron, lambda_constants
from .photon_field import FockBasis, ModeGrid, PhotonWavefunction, product_grid

CASES = (
    "energy_ratio",
    "shifted_energy_ratio",
    "annihilator",
    "creator",
    "creator_full",
    "cloud",
    "one_photon_interaction",
    "two_photon_interaction",
    "two_photon_relative",
)
CASE_TITLES = {
    "energy_ratio": "(a) ratio of regularised field energies",
    "shifted_energy_ratio": "(b) shifted ratio of regularised field energies",
    "annihilator": "(c) sandwiched annihilator",
    "creator": "(d) sandwiched creator",
    "creator_full": "(e) sandwiched creator with full field energy",
    "cloud": "(f) evolved photon cloud",
    "one_photon_interaction": "(g) one-photon interaction",
    "two_photon_interaction": "(h) two-photon interaction",
    "two_photon_relative": "(i) two-photon interaction relative to H0",
}
DENSE_CAP = 500


class NormConvergenceError(RuntimeError):
    """The iterative singular-value solver did not converge."""


class DimensionCapError(ValueError):
    """The requested truncation is too large for dense linear algebra."""


def operator_norm(x, dense_cap: int = DENSE_CAP, tol: float = 1e-10) -> float:
    """Largest singular value: dense SVD up to ``dense_cap``, Lanczos (ARPACK) above."""
    if max(x.shape) <= dense_cap:
        dense = x.toarray() if sp.issparse(x) else np.asarray(x)
        if dense.size == 0:
            return 0.0
        return float(np.linalg.norm(dense, 2))
    try:
        s = svds(sp.csr_matrix(x), k=1, tol=tol, return_singular_vectors=False, random_state=0)
    except ArpackNoConvergence as exc:
        raise NormConvergenceError(str(exc)) from exc
    return float(s[0])


@dataclass(frozen=True)
class BoundCase:
    case: str
    params: dict
    measured: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.measured

    def tolerance(self, rel_tol: float = 1e-6) -> float:
        return rel_tol * self.bound

    def passed(self, rel_tol: float = 1e-6) -> bool:
        return bool(self.margin >= -self.tolerance(rel_tol))

    def as_record(self, rel_tol: float = 1e-6) -> dict:
        return {
            "case": self.case,
            "params": self.params,
            "measured": self.measured,
            "bound": self.bound,
            "margin": self.margin,
            "passed": self.passed(rel_tol),
        }


def _diag(values) -> sp.dia_matrix:
    return sp.diags(np.asarray(values))


def _power(base, exponent) -> np.ndarray:
    return np.asarray(base, dtype=float) ** exponent


class BoundsLab:
    """Shared truncation data for the catalogue.

    Photon-only cases use ``FockBasis(n_modes, n_max_photon)``; cases with an
    electron use ``n_max_coupled`` photons tensored with ``electron``.
    """

    def __init__(
        self,
        grid: ModeGrid,
        electron: TruncatedElectron | None = None,
        coupling: CouplingModel | None = None,
        n_max_photon: int = 3,
        n_max_coupled: int = 2,
        b: float | None = None,
        dense_cap: int = DENSE_CAP,
    ):
        self.grid = grid
        self.omega = grid.omega
        self.sqrt_w = np.sqrt(grid.weights)
        self.dense_cap = dense_cap
        self.photon = FockBasis(grid.n_modes, n_max_photon)
        self._photon_ops = [m.tocsr() for m in self.photon.annihilators()]
        self.electron = electron
        self.table = None
        if electron is not None:
            if coupling is None:
                raise ValueError("an electron truncation needs a coupling model")
            self.table = KernelTable(coupling, electron, grid)
            self.coupled = FockBasis(grid.n_modes, n_max_coupled)
            self._coupled_ops = [m.tocsr() for m in self.coupled.annihilators()]
            self.b = electron.default_shift() if b is None else b
            if self.b >= electron.ground_energy:
                raise ValueError("shift b must lie below the electron spectrum")
            self._w1 = None
            self._g_ops = None

    # -- photon-only pieces
    @property
    def energy_range(self) -> tuple[float, float]:
        return float(self.omega.min()), float(self.omega.max())

    def field_energy(self, r_lo: float = 0.0, r_hi: float = math.inf, basis: FockBasis | None = None) -> np.ndarray:
        return (basis or self.photon).energies(self.omega, r_lo, r_hi)

    def window(self, r_lo: float, r_hi: float) -> np.ndarray:
        return self.grid.window(r_lo, r_hi)

    def annihilation(self, f: np.ndarray, coupled: bool = False) -> sp.csr_matrix:
        """a(f) = sum_m sqrt(w_m) conj(f_m) a_m."""
        ops = self._coupled_ops if coupled else self._photon_ops
        coef = self.sqrt_w * np.conj(np.asarray(f))
        out = sp.csr_matrix(ops[0].shape, dtype=complex)
        for m in np.flatnonzero(coef):
            out = out + coef[m] * ops[m]
        return out

    def creation(self, f: np.ndarray, coupled: bool = False) -> sp.csr_matrix:
        return self.annihilation(f, coupled).conj().T.tocsr()

    # -- electron-coupled pieces
    def _require_electron(self):
        if self.table is None:
            raise ValueError("this case needs an electron truncation")

    def electron_power(self, power: float) -> np.ndarray:
        return self.electron.resolvent_power(power, self.b)

    def coupled_diag(self, electron_diag, photon_diag) -> np.ndarray:
        return np.kron(np.asarray(electron_diag), np.asarray(photon_diag))

    def coupled_energy(self, r_lo: float = 0.0, r_hi: float = math.inf) -> np.ndarray:
        return self.coupled.energies(self.omega, r_lo, r_hi)

    def _field_kron(self, mats: np.ndarray, creation: bool) -> sp.csr_matrix:
        """sum_m sqrt(w_m) mats[m] (x) a_m (or a_m^*)."""
        out = None
        for m, op in enumerate(self._coupled_ops):
            term = sp.kron(sp.csr_matrix(self.sqrt_w[m] * mats[m]), op.T if creation else op, format="csr")
            out = term if out is None else out + term
        return out

    def w1_operator(self) -> sp.csr_matrix:
        self._require_electron()
        if self._w1 is None:
            self._w1 = (self._field_kron(self.table.w10(), True) + self._field_kron(self.table.w01(), False)).tocsr()
        return self._w1

    def g_operators(self):
        """Per Cartesian component: B = sum G a^*, E = sum G a (both weighted)."""
        self._require_electron()
        if self._g_ops is None:
            g = self.table.g()  # (modes, 3, n, n)
            self._g_ops = [(self._field_kron(g[:, i], True), self._field_kron(g[:, i], False)) for i in range(3)]
        return self._g_ops

    def w2_operator(self) -> sp.csr_matrix:
        """W20 + W02 + W11 with W20 = sum B B, W11 = sum (E^* E + B B^*)."""
        out = None
        for bmat, emat in self.g_operators():
            bh = bmat.conj().T
            term = bmat @ bmat + bh @ bh + emat.conj().T @ emat + bmat @ bh
            out = term if out is None else out + term
        return out.tocsr()

    def lambdas(self, beta: float, gamma: float) -> LambdaConstants:
        self._require_electron()
        return lambda_constants(beta, gamma, self.table, self.b)

    def norm(self, x) -> float:
        return operator_norm(x, self.dense_cap)


# ---------------------------------------------------------------------------
# Closed-form bounds


def one_photon_interaction_bound(l0: LambdaConstants, lb: LambdaConstants, alpha: float, r: float) -> float:
    return math.sqrt(l0.lambda1) + (1 + r) ** (alpha / 2) * max(math.sqrt(lb.lambda1), math.sqrt(lb.lambda1_tilde))


def two_photon_interaction_bound(l0: LambdaConstants, lb: LambdaConstants, lhalf: LambdaConstants, alpha: float, beta: float, r: float) -> float:
    a0, ab = l0.lambda2, lb.lambda2
    t0, tb, th = l0.lambda2_tilde, lb.lambda2_tilde, lhalf.lambda2_tilde
    inner = ab * a0 + 2 * math.sqrt(ab * a0) * th + ab * t0 + a0 * tb + t0 * th
    return (
        a0
        + 2 * math.sqrt((tb + ab) * a0) * (1 + r) ** (alpha / 2)
        + 2 * (1 + 2 * r) ** (alpha / 2) * max(1.0, 2 ** (beta / 2 - 1)) * math.sqrt(inner)
    )


def two_photon_relative_bound(l0: LambdaConstants) -> float:
    a, t = l0.lambda2, l0.lambda2_tilde
    return a + 2 * math.sqrt((t + a) * a) + 2 * math.sqrt(a * a + 4 * a * t + t * t)


# ---------------------------------------------------------------------------
# Individual checks


def _ratio_case(lab, params, shifted: bool) -> tuple[float, float]:
    a, b = params["alpha"], params["beta"]
    rt, r, st, s = params["r_tilde"], params["r"], params["s_tilde"], params["s"]
    om_r, om_s = lab.window(rt, r), lab.window(st, s)
    e_r, e_s = lab.field_energy(rt, r), lab.field_energy(st, s)
    k = params["k"]
    num = e_r + 1 + om_r[k]
    den = e_s + 1 + om_s[k]
    bound = 1.0
    if shifted:
        num = num + om_r[params["k1"]]
        den = den + om_s[params["k2"]]
        bound = (1 + om_r[params["k1"]]) ** b
    return float(np.max(num**b / den**a)), float(bound)


def _check_annihilator(lab, params, f):
    l_, m_ = params["l"], params["m"]
    rt, r, st, s = params["r_tilde"], params["r"], params["s_tilde"], params["s"]
    hf = lab.field_energy() + 1
    left = _power(lab.field_energy(rt, r) + 1, m_ / 2) * _power(hf, l_ / 2)
    right = _power(lab.field_energy(st, s) + 1, -(m_ + 1) / 2) * _power(hf, -l_ / 2)
    x = _diag(left) @ lab.annihilation(f) @ _diag(right)
    om_s = lab.window(st, s)
    nz = f != 0
    theta0 = float(np.sum(lab.grid.weights[nz] * np.abs(f[nz]) ** 2 / om_s[nz]))
    return lab.norm(x), math.sqrt(theta0)


def _check_creator(lab, params, f):
    n = params["n"]
    rt, r, st, s = params["r_tilde"], params["r"], params["s_tilde"], params["s"]
    left = _power(lab.field_energy(rt, r) + 1, n / 2)
    right = _power(lab.field_energy(st, s) + 1, -(n + 1) / 2)
    x = _diag(left) @ lab.creation(f) @ _diag(right)
    om_r, om_s = lab.window(rt, r), lab.window(st, s)
    nz = f != 0
    theta = np.sum(lab.grid.weights[nz] * (1 + 1 / om_s[nz]) * (1 + om_r[nz]) ** n * np.abs(f[nz]) ** 2)
    return lab.norm(x), math.sqrt(float(theta))


def _check_creator_full(lab, params, f):
    m_, n = params["m"], params["n"]
    rt, r, st, s = params["r_tilde"], params["r"], params["s_tilde"], params["s"]
    hf = lab.field_energy() + 1
    left = _power(hf, m_ / 2) * _power(lab.field_energy(rt, r) + 1, n / 2)
    right = _power(lab.field_energy(st, s) + 1, -(n + 1) / 2) * _power(hf, -m_ / 2)
    x = _diag(left) @ lab.creation(f) @ _diag(right)
    om_s = lab.window(st, s)
    nz = f != 0
    vartheta = float(np.sum(lab.grid.weights[nz] * (1 + 1 / om_s[nz]) * np.abs(f[nz]) ** 2))
    return lab.norm(x), math.sqrt(vartheta) * (1 + s) ** ((m_ + n) / 2)


def _check_cloud(lab, params, fs):
    m_, t = params["m"], params["t"]
    rt, r = params["r_tilde"], params["r"]
    n = len(fs)
    hf = lab.field_energy() + 1
    phase = np.exp(-1j * t * lab.omega)
    x = sp.identity(lab.photon.dim, dtype=complex, format="csr")
    for f in fs:
        x = x @ lab.creation(phase * f)
    x = _diag(_power(hf, m_ / 2)) @ x @ _diag(_power(lab.field_energy(rt, r) + 1, -n / 2) * _power(hf, -m_ / 2))
    om = lab.window(rt, r)
    bound = 1.0
    for f in fs:
        nz = f != 0
        bound *= math.sqrt(float(np.sum(lab.grid.weights[nz] * (1 + 1 / om[nz]) * np.abs(f[nz]) ** 2)))
    return lab.norm(x), bound * (1 + r) ** (n * (2 * m_ + n - 1) / 4)


def _check_one_photon_interaction(lab, params):
    a, bt, g = params["alpha"], params["beta"], params["gamma"]
    rt, r, st, s = params["r_tilde"], params["r"], params["s_tilde"], params["s"]
    hf = lab.coupled_energy() + 1
    ones_e = np.ones(lab.electron.dim)
    ones_f = np.ones(lab.coupled.dim)
    left = lab.coupled_diag(ones_e, _power(lab.coupled_energy(rt, r) + 1, a / 2) * _power(hf, bt / 2))
    left = left * lab.coupled_diag(lab.electron_power(g / 2), ones_f)
    right = lab.coupled_diag(lab.electron_power(-(g + 1) / 2), ones_f)
    right = right * lab.coupled_diag(ones_e, _power(hf, -(bt + 1) / 2) * _power(lab.coupled_energy(st, s) + 1, -a / 2))
    x = _diag(left) @ lab.w1_operator() @ _diag(right)
    bound = one_photon_interaction_bound(lab.lambdas(0.0, g), lab.lambdas(bt, g), a, r)
    return lab.norm(x), bound


def _check_two_photon_interaction(lab, params):
    a, bt, g = params["alpha"], params["beta"], params["gamma"]
    rt, r, st, s = params["r_tilde"], params["r"], params["s_tilde"], params["s"]
    hf = lab.coupled_energy() + 1
    left = lab.coupled_diag(lab.electron_power(g / 2), _power(lab.coupled_energy(rt, r) + 1, a / 2) * _power(hf, bt / 2))
    right = lab.coupled_diag(
        lab.electron_power(-g / 2), _power(hf, -bt / 2 - 1) * _power(lab.coupled_energy(st, s) + 1, -a / 2)
    )
    x = _diag(left) @ lab.w2_operator() @ _diag(right)
    bound = two_photon_interaction_bound(lab.lambdas(0.0, g), lab.lambdas(bt, g), lab.lambdas(bt / 2, g), a, bt, r)
    return lab.norm(x), bound


def _check_two_photon_relative(lab, params):
    lab_b = lab.b
    b = params.get("b", lab_b)
    h0 = lab.coupled_diag(lab.electron.energies, np.ones(lab.coupled.dim)) + lab.coupled_diag(
        np.ones(lab.electron.dim), lab.coupled_energy()
    )
    x = lab.w2_operator() @ _diag(1.0 / (h0 - b + 1))
    # gamma = 0: the Lambda constants do not depend on b
    return lab.norm(x), two_photon_relative_bound(lab.lambdas(0.0, 0.0))


def verify_bound(lab: BoundsLab, case: str, params: dict, functions=None) -> BoundCase:
    """Measure one catalogue entry. ``functions`` holds the per-mode profiles for cases (c)-(f)."""
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {CASES}")
    if case == "energy_ratio":
        measured, bound = _ratio_case(lab, params, shifted=False)
    elif case == "shifted_energy_ratio":
        measured, bound = _ratio_case(lab, params, shifted=True)
    elif case == "annihilator":
        measured, bound = _check_annihilator(lab, params, np.asarray(functions[0]))
    elif case == "creator":
        measured, bound = _check_creator(lab, params, np.asarray(functions[0]))
    elif case == "creator_full":
        measured, bound = _check_creator_full(lab, params, np.asarray(functions[0]))
    elif case == "cloud":
        measured, bound = _check_cloud(lab, params, [np.asarray(f) for f in functions])
    elif case == "one_photon_interaction":
        measured, bound = _check_one_photon_interaction(lab, params)
    elif case == "two_photon_interaction":
        measured, bound = _check_two_photon_interaction(lab, params)
    else:
        measured, bound = _check_two_photon_relative(lab, params)
    if not math.isfinite(bound):
        raise ValueError(f"bound for {case} is not finite")
    return BoundCase(case, dict(params), float(measured), float(bound))


# ---------------------------------------------------------------------------
# Randomised parameter draws


def _windows(rng, top: float, allow_infinite: bool):
    """0 <= s~ <= r~ < r <= s, with s = inf sometimes."""
    pts = np.sort(rng.uniform(0.0, top, size=4))
    st, rt, r, s = (float(x) for x in pts)
    if rng.random() < 0.3:
        st = 0.0
    if rng.random() < 0.3:
        rt = st
    if rng.random() < 0.3:
        r = s
    if allow_infinite and rng.random() < 0.3:
        s = math.inf
        if rng.random() < 0.5:
            r = math.inf
    return {"s_tilde": st, "r_tilde": rt, "r": r, "s": s}


def _random_profile(rng, lab, lo: float, hi: float) -> np.ndarray | None:
    inside = (lab.omega >= lo) & (lab.omega <= hi) & (lab.omega > 0)
    if not inside.any():
        return None
    v = rng.standard_normal(lab.grid.n_modes) + 1j * rng.standard_normal(lab.grid.n_modes)
    keep = inside & (rng.random(lab.grid.n_modes) < 0.7)
    if not keep.any():
        keep = inside
    v[~keep] = 0.0
    return v


def draw_case(lab: BoundsLab, case: str, rng: np.random.Generator):
    """Random admissible parameters (and profiles) for one catalogue entry."""
    top = lab.energy_range[1] * 1.2
    while True:
        if case in ("energy_ratio", "shifted_energy_ratio"):
            alpha = float(rng.uniform(0, 3))
            p = {"alpha": alpha, "beta": float(rng.uniform(0, alpha)), **_windows(rng, top, True)}
            p["k"] = int(rng.integers(lab.grid.n_modes))
            if case == "shifted_energy_ratio":
                p["k1"] = int(rng.integers(lab.grid.n_modes))
                p["k2"] = int(rng.integers(lab.grid.n_modes))
            return p, None
        if case in ("annihilator", "creator", "creator_full"):
            p = _windows(rng, top, case != "creator_full")
            f = _random_profile(rng, lab, max(p["s_tilde"], 1e-300), p["s"])
            if f is None:
                continue
            if case == "annihilator":
                p.update(l=int(rng.integers(0, 4)), m=int(rng.integers(0, 4)))
            elif case == "creator":
                p.update(n=int(rng.integers(0, 4)))
            else:
                p.update(m=int(rng.integers(0, 4)), n=int(rng.integers(0, 4)))
            return p, [f]
        if case == "cloud":
            n = int(rng.integers(1, lab.photon.n_max + 1))
            lo_e, hi_e = lab.energy_range
            lo, hi = np.sort(rng.uniform(lo_e, hi_e, size=2))
            fs = [_random_profile(rng, lab, lo, hi) for _ in range(n)]
            if any(f is None for f in fs):
                continue
            sup_lo = min(lab.omega[f != 0].min() for f in fs)
            sup_hi = max(lab.omega[f != 0].max() for f in fs)
            p = {
                "n_photons": n,
                "m": int(rng.integers(0, 3)),
                "t": float(rng.uniform(-10, 10)),
                "r_tilde": float(rng.uniform(0, sup_lo)),
                "r": float(sup_hi + rng.uniform(1e-3, 1.0)),
            }
            return p, fs
        if case in ("one_photon_interaction", "two_photon_interaction"):
            p = {
                "alpha": int(rng.integers(0, 4)),
                "beta": float(rng.uniform(0, 2)),
                "gamma": float(rng.uniform(0, 2)),
                **_windows(rng, top, False),
            }
            return p, None
        if case == "two_photon_relative":
            return {"b": float(lab.electron.ground_energy - rng.uniform(0.25, 3.0))}, None
        raise ValueError(f"unknown case {case!r}")


def sweep(lab: BoundsLab, cases=CASES, draws: int = 20, seed: int = 0) -> list[BoundCase]:
    """``draws`` random parameter sets per case; each case gets its own seeded stream."""
    out = []
    for i, case in enumerate(cases):
        rng = np.random.default_rng([seed, i])
        for _ in range(draws):
            params, functions = draw_case(lab, case, rng)
            out.append(verify_bound(lab, case, params, functions))
    return out


def reference_lab(
    model,
    coupling: CouplingModel | None = None,
    k_min: float = 0.4,
    k_max: float = 3.0,
    radial_order: int = 3,
    n_theta: int = 1,
    n_phi: int = 2,
    n_max_photon: int = 3,
    n_max_coupled: int = 2,
    n_per_l: dict | None = None,
) -> BoundsLab:
    """Twelve-mode grid, five electron states: every dense matrix stays below the cap."""
    coupling = CouplingModel.for_model(model) if coupling is None else coupling
    grid = product_grid(k_min, k_max, radial_order, n_theta, n_phi)
    electron = TruncatedElectron.build(model, n_per_l)
    return BoundsLab(grid, electron, coupling, n_max_photon, n_max_coupled)


# ---------------------------------------------------------------------------
# Commutator decay


@dataclass
class DecayResult:
    s: np.ndarray
    norms_w1: np.ndarray
    norms_w2: np.ndarray
    exponent_w1: float
    exponent_w2: float
    fit_range: tuple[float, float]
    params: dict = field(default_factory=dict)

    @property
    def exponent(self) -> float:
        return min(self.exponent_w1, self.exponent_w2)

    def records(self) -> list[dict]:
        return [
            {"s": float(s), "norm_w1": float(a), "norm_w2": float(b)}
            for s, a, b in zip(self.s, self.norms_w1, self.norms_w2)
        ]


class TrivialFitError(RuntimeError):
    """All commutator norms in the fit range sit at the numerical floor."""


def fit_tail_exponent(s, norms, s_lo: float, s_hi: float, floor: float = 1e-14) -> float:
    """Minus the least-squares slope of log(norm) against log(1 + s) over [s_lo, s_hi]."""
    s = np.asarray(s, float)
    norms = np.asarray(norms, float)
    sel = (s >= s_lo) & (s <= s_hi)
    if sel.sum() < 2:
        raise ValueError("need at least two samples inside the fit range")
    if np.all(norms[sel] <= floor * max(norms.max(), 1e-300)) or np.all(norms[sel] == 0):
        raise TrivialFitError("commutator norms are at the numerical floor")
    slope = np.polyfit(np.log1p(np.abs(s[sel])), np.log(np.maximum(norms[sel], 1e-300)), 1)[0]
    return float(-slope)


def _fine_grid(photon: PhotonWavefunction, s_max: float, n_theta: int, n_phi: int, order: int) -> ModeGrid:
    lo, hi = photon.omega_support
    width = min(0.25, 2 * math.pi / max(s_max, 1.0))
    panels = max(1, int(math.ceil((hi - lo) / width)))
    return product_grid(lo, hi, order, n_theta, n_phi, panels)


def commutator_decay(
    model,
    coupling: CouplingModel,
    photons: list[PhotonWavefunction],
    s_values,
    *,
    beta: float = 0.0,
    gamma: float = 0.0,
    fock_order: int = 2,
    fock_theta: int = 1,
    fock_phi: int = 3,
    fine_theta: int = 6,
    fine_phi: int = 12,
    fine_order: int = 16,
    n_per_l: dict | None = None,
    fit_range: tuple[float, float] = (5.0, 100.0),
) -> DecayResult:
    """Norms of the sandwiched commutators [W1, A_s] and [W2, A_s] for A = prod a^*(f_j).

    The s-dependence enters only through electron operators of the form
    int dk e^{-i s omega} f_j(k) X(k); those integrals use a fine product grid
    over supp f_j. The remaining field operators act on a small Fock truncation
    spanning the photon supports, with ``N + 1`` photons so the commutators
    have nonzero matrix elements.
    """
    if not photons:
        raise ValueError("the photon cloud is empty")
    n = len(photons)
    s_values = np.asarray(s_values, dtype=float)
    electron = TruncatedElectron.build(model, n_per_l)
    lo = min(p.omega_support[0] for p in photons)
    hi = max(p.omega_support[1] for p in photons)
    r_tilde, r = 0.9 * lo, 1.1 * hi
    coarse = product_grid(lo, hi, fock_order, fock_theta, fock_phi)
    lab = BoundsLab(coarse, electron, coupling, n_max_photon=1, n_max_coupled=n + 1)
    b = lab.b
    # electron-valued integrals on fine grids, one per photon
    fine = []
    for ph in photons:
        grid = _fine_grid(ph, float(np.max(np.abs(s_values))), fine_theta, fine_phi, fine_order)
        table = KernelTable(coupling, electron, grid)
        fvals = ph.on_grid(grid).values
        fine.append((grid, table, fvals))
    coarse_profiles = [ph.on_grid(coarse).values for ph in photons]
    dim_e = electron.dim
    eye_f = sp.identity(lab.coupled.dim, dtype=complex, format="csr")
    hf = lab.coupled_energy() + 1
    hr = lab.coupled_energy(r_tilde, r) + 1
    ones_e = np.ones(dim_e)
    left1 = lab.coupled_diag(lab.electron_power(gamma / 2), _power(hf, beta / 2))
    right1 = lab.coupled_diag(lab.electron_power(-(gamma + 1) / 2), _power(hf, -(beta + 1) / 2) * _power(hr, -n / 2))
    right2 = lab.coupled_diag(ones_e, 1.0 / hf * _power(hr, -n / 2))
    g_ops = lab.g_operators()

    def creations(s):
        ph = np.exp(-1j * s * coarse.omega)
        return [sp.kron(sp.identity(dim_e), lab.creation(ph * f, coupled=True), format="csr") for f in coarse_profiles]

    def product(ops, j, middle):
        x = sp.identity(dim_e * lab.coupled.dim, dtype=complex, format="csr")
        for i, op in enumerate(ops):
            x = x @ (middle if i == j else op)
        return x

    n1, n2 = [], []
    for s in s_values:
        ops = creations(s)
        c1 = None
        c2 = None
        for j, (grid, table, fvals) in enumerate(fine):
            fs = grid.weights * np.exp(-1j * s * grid.omega) * fvals
            t_op = np.einsum("m,mab->ab", fs, table.w01())
            g = table.g()
            m1 = sp.kron(sp.csr_matrix(t_op), eye_f, format="csr")
            term1 = product(ops, j, m1)
            c1 = term1 if c1 is None else c1 + term1
            # [W2, a^*(f)] = sum_iota (B^* C + C B^* + E^* C' + B C)
            y = None
            for iota, (bmat, emat) in enumerate(g_ops):
                c_dag = sp.kron(sp.csr_matrix(np.einsum("m,mba->ab", fs, np.conj(g[:, iota]))), eye_f, format="csr")
                c_pl = sp.kron(sp.csr_matrix(np.einsum("m,mab->ab", fs, g[:, iota])), eye_f, format="csr")
                bh = bmat.conj().T
                part = bh @ c_dag + c_dag @ bh + emat.conj().T @ c_pl + bmat @ c_dag
                y = part if y is None else y + part
            term2 = product(ops, j, y)
            c2 = term2 if c2 is None else c2 + term2
        n1.append(lab.norm(_diag(left1) @ c1 @ _diag(right1)))
        n2.append(lab.norm(c2 @ _diag(right2)))
    n1, n2 = np.array(n1), np.array(n2)
    e1 = fit_tail_exponent(s_values, n1, *fit_range)
    e2 = fit_tail_exponent(s_values, n2, *fit_range)
    params = {"beta": beta, "gamma": gamma, "r_tilde": r_tilde, "r": r, "n_photons": n, "b": b}
    return DecayResult(s_values, n1, n2, e1, e2, fit_range, params)


# ---------------------------------------------------------------------------
# Duhamel identity


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Hermitian matrix with spectral norm ``scale``."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = 0.5 * (a + a.conj().T)
    return scale * h / np.linalg.norm(h, 2)


class _Propagator:
    def __init__(self, h: np.ndarray):
        self.vals, self.vecs = np.linalg.eigh(h)

    def __call__(self, t: float) -> np.ndarray:
        """exp(-i t H)."""
        return (self.vecs * np.exp(-1j * t * self.vals)) @ self.vecs.conj().T


@dataclass(frozen=True)
class DuhamelResult:
    residual: float
    steps: int
    lhs_norm: float


def duhamel_check(
    h0: np.ndarray,
    w: np.ndarray,
    z: np.ndarray,
    psi: np.ndarray,
    tau: float,
    t: float,
    steps: int = 256,
    max_dim: int = 2000,
) -> DuhamelResult:
    """Compare exp(-i tau Hg) Z(t) exp(i tau Hg) psi with its Duhamel integral form.

    Hg = H0 + W, Z_tau = exp(-i tau H0) Z exp(i tau H0), W_s likewise, and
    Z(t) = exp(-i t Hg) exp(i t H0) Z exp(-i t H0) exp(i t Hg). The s-integral
    over [0, t + tau] uses composite Simpson with ``steps`` intervals.
    """
    dim = h0.shape[0]
    if dim > max_dim:
        raise DimensionCapError(f"dimension {dim} exceeds the cap {max_dim}")
    if steps % 2:
        raise ValueError("Simpson's rule needs an even number of steps")
    u0 = _Propagator(h0)
    ug = _Propagator(h0 + w)
    z_tau = u0(tau) @ z @ u0(-tau)
    total = t + tau
    z_t = ug(t) @ u0(-t) @ z @ u0(t) @ ug(-t)
    lhs = ug(tau) @ z_t @ ug(-tau) @ psi
    s_nodes = np.linspace(0.0, total, steps + 1)
    vals = np.empty((s_nodes.size, dim), dtype=complex)
    for i, s in enumerate(s_nodes):
        w_s = u0(s) @ w @ u0(-s)
        comm = w_s @ z_tau - z_tau @ w_s
        vals[i] = ug(s) @ u0(-s) @ comm @ u0(s) @ ug(-s) @ psi
    integral = simpson(vals, x=s_nodes, axis=0)
    rhs = z_tau @ psi - 1j * integral
    return DuhamelResult(float(np.linalg.norm(lhs - rhs)), steps, float(np.linalg.norm(lhs)))


def duhamel_refinement(h0, w, z, psi, tau, t, steps=(32, 64, 128, 256)) -> list[DuhamelResult]:
    return [duhamel_check(h0, w, z, psi, tau, t, n) for n in steps]


def duhamel_toy(dim: int = 50, seed: int = 0, free: bool = False):
    """Random Hermitian H0, W, Z and a unit vector (W = 0 when ``free``)."""
    rng = np.random.default_rng(seed)
    h0 = random_hermitian(dim, rng)
    w = np.zeros((dim, dim), complex) if free else random_hermitian(dim, rng, 0.5)
    z = random_hermitian(dim, rng)
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return h0, w, z, psi / np.linalg.norm(psi)


__all__ = [
    "CASES",
    "CASE_TITLES",
    "BoundCase",
    "BoundsLab",
    "DecayResult",
    "DimensionCapError",
    "DuhamelResult",
    "NormConvergenceError",
    "TrivialFitError",
    "commutator_decay",
    "draw_case",
    "duhamel_check",
    "duhamel_refinement",
    "duhamel_toy",
    "fit_tail_exponent",
    "two_photon_relative_bound",
    "one_photon_interaction_bound",
    "two_photon_interaction_bound",
    "operator_norm",
    "random_hermitian",
    "reference_lab",
    "sweep",
    "verify_bound",
]
