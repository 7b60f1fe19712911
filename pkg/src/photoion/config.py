"""Run configuration: YAML in, validated frozen dataclasses out.

Photon centres and widths are given in units of the ionisation gap |e0| and
times in units of 1/|e0|, so one file works for any well.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ElectronSection:
    depth: float = 6.25
    radius: float = 1.0
    r_max: float = 20.0
    n_r: int = 4000
    l_max: int = 8


@dataclass(frozen=True)
class CouplingSection:
    kappa_factor: float = 3.0
    mu_factor: float = 3.0
    b_offset: float = 1.0
    sign: str = "-"


@dataclass(frozen=True)
class GridSection:
    n_theta: int = 10
    n_phi: int = 20
    order: int = 16
    margin: float = 0.5
    p_theta: int = 8
    p_phi: int = 16
    p_order: int = 8


@dataclass(frozen=True)
class PhotonSection:
    label: str
    center: float
    width: float
    polarization: str = "+"
    direction: tuple[float, float, float] | None = None
    angular_width: float = 0.6


@dataclass(frozen=True)
class TimesSection:
    t_max: float = 100.0
    doublings: int = 3


@dataclass(frozen=True)
class DecouplingCase:
    plus: tuple[int, ...]
    minus: tuple[int, ...]


@dataclass(frozen=True)
class DecouplingSection:
    photons: tuple[str, ...] = ("low", "high")
    cases: tuple[DecouplingCase, ...] = ()
    t: float = 50.0
    n_theta: int = 8
    n_phi: int = 16
    order: int = 12
    p_theta: int = 6
    p_phi: int = 12
    p_order: int = 8
    margin: float = 0.3
    tolerance: float = 0.01


@dataclass(frozen=True)
class BoundsSection:
    draws: int = 20
    n_max_photon: int = 3
    n_max_coupled: int = 2
    k_min: float = 0.4
    k_max: float = 3.0
    radial_order: int = 3
    n_theta: int = 1
    n_phi: int = 2
    n_r: int = 800
    dense_cap: int = 500
    rel_tol: float = 1e-6


@dataclass(frozen=True)
class DecaySection:
    photons: tuple[str, ...] = ("main",)
    s_min: float = 1.0
    s_max: float = 100.0
    n_s: int = 15
    beta: float = 0.0
    gamma: float = 0.0
    fit_lo: float = 5.0
    fit_hi: float = 100.0
    min_exponent: float = 1.7
    n_r: int = 800


@dataclass(frozen=True)
class DuhamelSection:
    dim: int = 50
    tau: float = 1.0
    t: float = 2.0
    steps: tuple[int, ...] = (32, 64, 128, 256)
    tol: float = 1e-8


@dataclass(frozen=True)
class RunsSection:
    q2: tuple[str, ...] = ("main", "narrow", "sub")
    oracle: str = "main"
    threshold: str = "sub"
    reference: str = "main"
    kinetic: str = "narrow"
    kinetic_tolerance: float = 0.1
    oracle_tolerance: float = 0.05
    threshold_ratio: float = 1e-6
    ccr_modes: int = 64
    ccr_n_max: int = 3
    ccr_samples: int = 50


@dataclass(frozen=True)
class RunConfig:
    electron: ElectronSection = field(default_factory=ElectronSection)
    coupling: CouplingSection = field(default_factory=CouplingSection)
    photon_grid: GridSection = field(default_factory=GridSection)
    fock_n_max: int = 3
    photons: tuple[PhotonSection, ...] = ()
    times: TimesSection = field(default_factory=TimesSection)
    runs: RunsSection = field(default_factory=RunsSection)
    decoupling: DecouplingSection = field(default_factory=DecouplingSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)
    decay: DecaySection = field(default_factory=DecaySection)
    duhamel: DuhamelSection = field(default_factory=DuhamelSection)
    output_dir: str = "out"
    seed: int = 0
    deterministic: bool = False

    def photon(self, label: str) -> PhotonSection:
        for p in self.photons:
            if p.label == label:
                return p
        raise KeyError(label)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """sha256 of the canonical JSON form; output location is excluded."""
        data = self.to_dict()
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **changes) -> "RunConfig":
        cfg = self
        if changes.get("t_max") is not None:
            cfg = dataclasses.replace(cfg, times=dataclasses.replace(cfg.times, t_max=float(changes["t_max"])))
        for key in ("seed", "output_dir", "deterministic"):
            if changes.get(key) is not None:
                cfg = dataclasses.replace(cfg, **{key: changes[key]})
        validate(cfg)
        return cfg


# ---------------------------------------------------------------------------
# Parsing


def _section(cls, raw, path: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown field")
    kwargs = {}
    for name, value in raw.items():
        kwargs[name] = _coerce(names[name], value, f"{path}.{name}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from None


def _coerce(f: dataclasses.Field, value, path: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true or false, got {value!r}")
        return value
    if kind.startswith("tuple[int"):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(path, "expected a list of integers")
        return tuple(value)
    if kind.startswith("tuple[str"):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise ConfigError(path, "expected a list of strings")
        return tuple(value)
    if kind.startswith("tuple[float"):
        if value is None:
            return None
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            raise ConfigError(path, "expected three numbers or null")
        try:
            return tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(path, "expected three numbers or null") from None
    if kind.startswith("tuple[DecouplingCase"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list of {plus, minus} entries")
        return tuple(_section(DecouplingCase, v, f"{path}[{i}]") for i, v in enumerate(value))
    raise ConfigError(path, f"unsupported field type {kind}")


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping at the top level")
    known = {
        "electron",
        "coupling",
        "photon_grid",
        "fock",
        "photons",
        "times",
        "runs",
        "decoupling",
        "bounds",
        "decay",
        "duhamel",
        "output",
        "seed",
        "deterministic",
    }
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown section")
    fock = raw.get("fock") or {}
    if not isinstance(fock, dict) or set(fock) - {"n_max"}:
        raise ConfigError("fock", "expected a mapping with the single field n_max")
    n_max = fock.get("n_max", 3)
    if isinstance(n_max, bool) or not isinstance(n_max, int):
        raise ConfigError("fock.n_max", "expected an integer")
    photons_raw = raw.get("photons") or []
    if not isinstance(photons_raw, list):
        raise ConfigError("photons", "expected a list")
    photons = tuple(_section(PhotonSection, p, f"photons[{i}]") for i, p in enumerate(photons_raw))
    output = raw.get("output") or {}
    if not isinstance(output, dict) or set(output) - {"dir"}:
        raise ConfigError("output", "expected a mapping with the single field dir")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", "expected an integer")
    det = raw.get("deterministic", False)
    if not isinstance(det, bool):
        raise ConfigError("deterministic", "expected true or false")
    cfg = RunConfig(
        electron=_section(ElectronSection, raw.get("electron"), "electron"),
        coupling=_section(CouplingSection, raw.get("coupling"), "coupling"),
        photon_grid=_section(GridSection, raw.get("photon_grid"), "photon_grid"),
        fock_n_max=n_max,
        photons=photons,
        times=_section(TimesSection, raw.get("times"), "times"),
        runs=_section(RunsSection, raw.get("runs"), "runs"),
        decoupling=_section(DecouplingSection, raw.get("decoupling"), "decoupling"),
        bounds=_section(BoundsSection, raw.get("bounds"), "bounds"),
        decay=_section(DecaySection, raw.get("decay"), "decay"),
        duhamel=_section(DuhamelSection, raw.get("duhamel"), "duhamel"),
        output_dir=str(output.get("dir", "out")),
        seed=seed,
        deterministic=det,
    )
    validate(cfg)
    return cfg


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"not valid YAML: {exc}") from None
    return from_dict(raw or {})


def default_text() -> str:
    return resources.files("photoion").joinpath("default_config.yaml").read_text()


def load_default() -> RunConfig:
    return from_dict(yaml.safe_load(default_text()))


# ---------------------------------------------------------------------------
# Validation


def _positive(value, path):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError(path, f"must be a positive finite number, got {value!r}")


def _nonnegative(value, path):
    if not (math.isfinite(value) and value >= 0):
        raise ConfigError(path, f"must be nonnegative, got {value!r}")


def _at_least(value, lo, path):
    if value < lo:
        raise ConfigError(path, f"must be at least {lo}, got {value!r}")


def validate(cfg: RunConfig) -> None:
    """Check every module precondition that can be checked without computing anything."""
    e = cfg.electron
    _positive(e.depth, "electron.depth")
    _positive(e.radius, "electron.radius")
    _positive(e.r_max, "electron.r_max")
    if e.r_max < 10 * e.radius:
        raise ConfigError("electron.r_max", "must be at least ten well radii")
    _at_least(e.n_r, 20, "electron.n_r")
    _at_least(e.l_max, 1, "electron.l_max")
    ratio = e.n_r * e.radius / e.r_max
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ConfigError("electron.n_r", f"the well edge must fall on a grid node (n_r * radius / r_max = {ratio:g})")
    if math.sqrt(e.depth) * e.radius <= math.pi / 2:
        raise ConfigError("electron.depth", "sqrt(depth) * radius <= pi/2: the well has no bound state")
    for name in ("bounds", "decay"):
        n_r = getattr(cfg, name).n_r
        r = n_r * e.radius / e.r_max
        if abs(r - round(r)) > 1e-9 * max(1.0, r):
            raise ConfigError(f"{name}.n_r", "the well edge must fall on a grid node")
    c = cfg.coupling
    _positive(c.kappa_factor, "coupling.kappa_factor")
    _positive(c.mu_factor, "coupling.mu_factor")
    _positive(c.b_offset, "coupling.b_offset")
    if c.sign not in ("-", "+"):
        raise ConfigError("coupling.sign", "must be '-' (incoming) or '+' (outgoing)")
    g = cfg.photon_grid
    for name in ("n_theta", "n_phi", "order", "p_theta", "p_phi", "p_order"):
        _at_least(getattr(g, name), 1, f"photon_grid.{name}")
    _nonnegative(g.margin, "photon_grid.margin")
    _at_least(cfg.fock_n_max, 1, "fock.n_max")
    labels = [p.label for p in cfg.photons]
    if len(set(labels)) != len(labels):
        raise ConfigError("photons", "labels must be unique")
    for i, p in enumerate(cfg.photons):
        path = f"photons[{i}]"
        _positive(p.width, f"{path}.width")
        _positive(p.center, f"{path}.center")
        if p.center - p.width <= 0:
            raise ConfigError(f"{path}.width", "the profile support must stay away from omega = 0")
        if p.polarization not in ("-", "+"):
            raise ConfigError(f"{path}.polarization", "must be '-' or '+'")
        if p.direction is not None and not any(p.direction):
            raise ConfigError(f"{path}.direction", "must be nonzero")
        _positive(p.angular_width, f"{path}.angular_width")
    t = cfg.times
    _positive(t.t_max, "times.t_max")
    _at_least(t.doublings, 2, "times.doublings")
    r = cfg.runs
    for name in ("oracle", "threshold", "reference", "kinetic"):
        _require_label(cfg, getattr(r, name), f"runs.{name}")
    for i, lab in enumerate(r.q2):
        _require_label(cfg, lab, f"runs.q2[{i}]")
    _at_least(r.ccr_modes, 16, "runs.ccr_modes")
    if r.ccr_modes % 16:
        raise ConfigError("runs.ccr_modes", "must be a multiple of 16 (eight directions, two polarizations)")
    _at_least(r.ccr_n_max, 1, "runs.ccr_n_max")
    _at_least(r.ccr_samples, 1, "runs.ccr_samples")
    d = cfg.decoupling
    if not d.photons:
        raise ConfigError("decoupling.photons", "needs at least one photon")
    for i, lab in enumerate(d.photons):
        _require_label(cfg, lab, f"decoupling.photons[{i}]")
    for i, case in enumerate(d.cases):
        for side in ("plus", "minus"):
            deg = getattr(case, side)
            if len(deg) != len(d.photons):
                raise ConfigError(f"decoupling.cases[{i}].{side}", "needs one degree per decoupling photon")
            if any(x < 0 for x in deg):
                raise ConfigError(f"decoupling.cases[{i}].{side}", "degrees must be nonnegative")
        if sum(case.plus) + sum(case.minus) == 0:
            raise ConfigError(f"decoupling.cases[{i}]", "the cloud must contain at least one photon")
    _positive(d.t, "decoupling.t")
    _positive(d.tolerance, "decoupling.tolerance")
    b = cfg.bounds
    _at_least(b.draws, 1, "bounds.draws")
    _at_least(b.n_max_photon, 1, "bounds.n_max_photon")
    _at_least(b.n_max_coupled, 1, "bounds.n_max_coupled")
    _positive(b.k_min, "bounds.k_min")
    if b.k_max <= b.k_min:
        raise ConfigError("bounds.k_max", "must exceed bounds.k_min")
    _positive(b.rel_tol, "bounds.rel_tol")
    dc = cfg.decay
    if not dc.photons:
        raise ConfigError("decay.photons", "needs at least one photon")
    for i, lab in enumerate(dc.photons):
        _require_label(cfg, lab, f"decay.photons[{i}]")
    _positive(dc.s_min, "decay.s_min")
    if not dc.s_min < dc.s_max:
        raise ConfigError("decay.s_max", "must exceed decay.s_min")
    _at_least(dc.n_s, 3, "decay.n_s")
    if not dc.fit_lo < dc.fit_hi:
        raise ConfigError("decay.fit_hi", "must exceed decay.fit_lo")
    _nonnegative(dc.beta, "decay.beta")
    _nonnegative(dc.gamma, "decay.gamma")
    du = cfg.duhamel
    _at_least(du.dim, 2, "duhamel.dim")
    if du.dim > 2000:
        raise ConfigError("duhamel.dim", "must not exceed 2000 (dense exponentials)")
    if len(du.steps) < 2 or any(s < 2 or s % 2 for s in du.steps):
        raise ConfigError("duhamel.steps", "needs at least two even step counts")
    _positive(du.tol, "duhamel.tol")


def _require_label(cfg: RunConfig, label: str, path: str) -> None:
    if label not in {p.label for p in cfg.photons}:
        raise ConfigError(path, f"no photon labelled {label!r}")


__all__ = ["ConfigError", "RunConfig", "default_text", "from_dict", "load", "load_default", "validate"]
