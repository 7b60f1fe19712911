"""End-to-end acceptance checks on the bundled reference configuration.

Each test records one line ``<n> PASS|FAIL <name>: <measurement> [<seconds>]``
that the terminal summary prints after the run.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from photoion import ionisation, pipelines
from photoion.config import load_default


@pytest.fixture(scope="module")
def ctx():
    return pipelines.Context(load_default())


class criterion:
    """Times its block; the criterion passes only if ``passed`` is set and the block beats ``limit`` seconds."""

    def __init__(self, number: int, name: str, limit: float):
        self.number, self.name, self.limit = number, name, limit
        self.detail = ""
        self.passed = False

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def in_time(self) -> bool:
        return time.perf_counter() - self.start < self.limit

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        ok = self.passed and exc_type is None and elapsed < self.limit
        verdict = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append(f"{self.number:2d} {verdict} {self.name}: {self.detail} [{elapsed:.2f} s]")
        print(ACCEPTANCE_LINES[-1])
        return False


def test_01_ccr(ctx):
    with criterion(1, "CCR on 64 modes, n_max 3", 1.0) as c:
        rec = pipelines.run_ccr(ctx).records[0]
        c.detail = f"max error {rec['max_error']:.2e} over {rec['samples']} pairs"
        c.passed = rec["modes"] == 64 and rec["n_max"] == 3 and rec["samples"] == 50 and rec["max_error"] <= 1e-12
        assert c.passed and c.in_time()


def test_02_factorial_orthogonality(ctx):
    with criterion(2, "factorial orthogonality, q + r <= 3", 5.0) as c:
        rec = pipelines.run_orthogonality(ctx).records[0]
        c.detail = f"max Gram error {rec['max_error']:.2e}"
        c.passed = rec["max_error"] <= 1e-10
        assert c.passed and c.in_time()


def test_03_ground_state_and_phase_shifts(ctx):
    with criterion(3, "e0 and s-wave phase shifts", 10.0) as c:
        # time the grid solve too, not just the cached context
        fresh = pipelines.Context(ctx.cfg)
        assert fresh.cfg.electron.n_r == 4000
        rec = pipelines.run_ground_state(fresh).records[0]
        c.detail = f"|e0 - oracle| {rec['e0_abs_error']:.2e}, max delta0 error {rec['delta0_max_error']:.2e}"
        c.passed = rec["e0_abs_error"] <= 1e-8 and rec["delta0_max_error"] <= 1e-8
        assert c.passed and c.in_time()


def test_04_time_oracle_converges(ctx):
    with criterion(4, "shell vs finite-time probability", 300.0) as c:
        rec = pipelines.run_oracle(ctx).records[0]
        gaps = rec["gaps"]
        c.detail = "gaps " + ", ".join(f"{g:.2e}" for g in gaps)
        c.passed = len(gaps) >= 4 and gaps[-1] <= 0.05 and all(a >= b for a, b in zip(gaps, gaps[1:]))
        assert c.passed and c.in_time()


def test_05_threshold(ctx):
    with criterion(5, "below-threshold photon", 60.0) as c:
        rec = pipelines.run_threshold(ctx).records[0]
        c.detail = f"shell {rec['q2_shell']!r}, time/reference {rec['ratio']:.2e}"
        c.passed = rec["support_top"] <= 0.9 * ctx.gap and rec["q2_shell"] == 0.0 and rec["ratio"] <= 1e-6
        assert c.passed and c.in_time()


def test_06_kinetic_energy_peak(ctx):
    with criterion(6, "kinetic-energy peak, omega0 = 2|e0|, 5% width", 120.0) as c:
        table, photon = ctx.shell_setup("narrow")
        omega0 = photon.center
        np.testing.assert_allclose(omega0, 2 * ctx.gap, rtol=1e-14)
        np.testing.assert_allclose(photon.width / omega0, 0.05, rtol=1e-14)
        res = ionisation.q2_shell(table, photon)
        peak = float(res.p_grid.magnitudes[np.argmax(res.radial_density)] ** 2)
        rel = abs(peak - (omega0 - ctx.gap)) / omega0
        c.detail = f"peak |p|^2 {peak:.4f} vs {omega0 - ctx.gap:.4f}, relative offset {rel:.3f}"
        c.passed = rel <= 0.10
        assert c.passed and c.in_time()


def test_07_decoupling(ctx):
    with criterion(7, "decoupling law", 300.0) as c:
        rep = pipelines.run_decoupling(ctx)
        gaps = [r["gap"] for r in rep.records]
        c.detail = "gaps " + ", ".join(f"{g:.1e}" for g in gaps)
        c.passed = len(gaps) > 0 and max(gaps) <= 0.01
        assert c.passed and c.in_time()


def test_08_bound_catalogue(ctx):
    with criterion(8, "inequality catalogue, 20 draws each", 180.0) as c:
        rep = pipelines.run_bounds(ctx)
        by_case = {}
        for r in rep.records:
            by_case.setdefault(r["case"], []).append(r["passed"])
        n_ok = sum(all(v) and len(v) == 20 for v in by_case.values())
        c.detail = f"{n_ok}/{len(by_case)} cases pass"
        c.passed = len(by_case) == 9 and n_ok == 9
        assert c.passed and c.in_time()


def test_09_commutator_decay(ctx):
    with criterion(9, "commutator decay exponent on [5, 100]", 120.0) as c:
        rec = pipelines.run_decay(ctx).records[0]
        c.detail = f"exponents {rec['exponent_w1']:.2f} (W1), {rec['exponent_w2']:.2f} (W2)"
        assert tuple(rec["fit_range"]) == (5.0, 100.0)
        c.passed = min(rec["exponent_w1"], rec["exponent_w2"]) >= 1.7
        assert c.passed and c.in_time()


def test_10_duhamel(ctx):
    with criterion(10, "Duhamel residual, dimension 50", 30.0) as c:
        assert ctx.cfg.duhamel.dim == 50
        rec = pipelines.run_duhamel(ctx).records[0]
        res = rec["residuals"]
        orders = [math.log2(a / b) for a, b in zip(res, res[1:])]
        c.detail = f"residuals {', '.join(f'{r:.1e}' for r in res)}; orders {', '.join(f'{o:.2f}' for o in orders)}"
        c.passed = res[-1] <= 1e-8 and all(abs(o - 4.0) <= 0.5 for o in orders) and rec["free_residual"] <= 1e-12
        assert c.passed and c.in_time()
