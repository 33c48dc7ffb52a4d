"""Acceptance criteria, one test per criterion, each logging a PASS/FAIL line."""
import time

import numpy as np
import pytest

from rmpc import experiments as E
from rmpc.blockops import inverse, multiply, shift_stack
from rmpc.model import FilterMode, paper_benchmark, random_system
from rmpc.polytope import max_rci, rci_certificate, rpi_certificate
from rmpc.sls import (SlsProblem, affine_residual, check_solution, min_filter_diagonals, solve_ocp,
                      validate_certificate)
from rmpc.tube import build_tube_controller

from conftest import random_blt

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def sweeps():
    t0 = time.perf_counter()
    out = {kind: E.sweep(kind, grid=15, methods=("sls", "tube"), workers=None)
           for kind in ("eps_a", "sigma_w")}
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def benchmark_report(sweeps):
    (results, _) = sweeps
    for setting, rep, _err in results["eps_a"]:
        if setting == (0.1, 0.1, 0.1):
            return rep
    raise AssertionError("benchmark setting missing from the sweep")


@pytest.fixture(scope="module")
def terminal_spec():
    return E.rci_terminal_spec(paper_benchmark(0.1, 0.1, 0.1))


@pytest.fixture(scope="module")
def certified_solutions(terminal_spec):
    spec = terminal_spec
    pts, inside = E.grid_points(spec.terminal_set, 7)
    x0s = pts[inside][:: max(1, int(inside.sum()) // 25)][:25]
    t0 = time.perf_counter()
    prob = SlsProblem(spec)
    sols, reports = [], []
    for x0 in x0s:
        res, sol = solve_ocp(spec, x0, prob)
        if sol is not None:
            sols.append(sol)
            reports.append(validate_certificate(sol, spec, samples=1000, seed=len(sols)))
    return x0s, sols, reports, time.perf_counter() - t0


def test_certificate_soundness(certified_solutions, acceptance):
    x0s, sols, reports, elapsed = certified_solutions
    worst_w = max(r.max_w_tilde for r in reports)
    worst_slack = min(r.worst_slack for r in reports)
    ok = (len(x0s) == 25 and len(sols) > 0 and all(r.passed for r in reports)
          and worst_w <= 1 + 1e-6 and worst_slack >= -1e-6 and elapsed <= 60.0)
    acceptance("certificate soundness", ok,
               f"{len(sols)}/{len(x0s)} optimal, max|w~|={worst_w:.6f}, worst slack={worst_slack:.3g}, "
               f"{elapsed:.1f}s")
    assert ok


def test_structural_identities(certified_solutions, terminal_spec, acceptance):
    _, sols, _, _ = certified_solutions
    diag_spec = terminal_spec.with_(filter_mode=FilterMode.DIAGONAL)
    diag_sols = [s for s in (solve_ocp(diag_spec, sol.x0)[1] for sol in sols[:10]) if s is not None]
    worst_res, worst_struct = 0.0, 0.0
    for sol, spec in [(s, terminal_spec) for s in sols] + [(s, diag_spec) for s in diag_sols]:
        worst_res = max(worst_res, affine_residual(sol, spec))
        for t in range(1, spec.horizon + 1):
            worst_struct = max(worst_struct, np.abs(sol.phi_x.block(t, 0) - np.diag(sol.d[t - 1])).max())
        assert check_solution(sol, spec) == []
    ok = worst_res <= 1e-6 and worst_struct <= 1e-7
    acceptance("affine residual and structure", ok,
               f"max residual={worst_res:.2e}, max |Phi_x^(t,0)-diag(d)|={worst_struct:.2e}, "
               f"{len(sols) + len(diag_sols)} solutions")
    assert ok


def _trend_ok(values, slack=0.05):
    return all(b <= a + slack for a, b in zip(values, values[1:]))


def test_coverage_dominance_and_trend(sweeps, acceptance):
    results, elapsed = sweeps
    lines, ok = [], elapsed <= 30 * 60
    for kind, rows in results.items():
        assert all(rep is not None for _, rep, _ in rows), f"empty RCI set in {kind} sweep"
        sls = [rep.coverage("sls") for _, rep, _ in rows]
        tube = [rep.coverage("tube") for _, rep, _ in rows]
        dom = all(s >= t for s, t in zip(sls, tube))
        trend = _trend_ok(sls) and _trend_ok(tube)
        ok = ok and dom and trend
        lines.append(f"{kind}: sls={[round(v, 3) for v in sls]} tube={[round(v, 3) for v in tube]}")
    acceptance("coverage dominance and trend", ok, "; ".join(lines) + f"; {elapsed / 60:.1f} min")
    assert ok


def test_near_maximal_domain(benchmark_report, acceptance):
    cov = benchmark_report.coverage("sls")
    ok = cov >= 0.90
    acceptance("near-maximal feasible domain", ok,
               f"sls_coverage={cov:.3f} over {benchmark_report.n_in_region} points")
    assert ok


def test_mode_containment(terminal_spec, benchmark_report, acceptance):
    rep = E.coverage(terminal_spec, 15, "terminal", ("sls-diag",))
    full = benchmark_report.feasible["sls"]
    diag = rep.feasible["sls-diag"]
    violations = int(np.sum(diag & ~full))
    ok = violations == 0
    acceptance("mode containment", ok,
               f"{violations} violations; diag={rep.coverage('sls-diag'):.3f} "
               f"full={benchmark_report.coverage('sls'):.3f}")
    assert ok


def test_rci_certificate(acceptance):
    spec = paper_benchmark(0.1, 0.1, 0.1)
    c = max_rci(spec)
    slack = rci_certificate(c, spec)
    ok = len(spec.uncertainty) == 4 and slack >= -1e-7
    acceptance("RCI certificate", ok, f"worst vertex slack={slack:.3g}, {c.n_constraints} facets")
    assert ok


def test_mrpi_certificate(terminal_spec, acceptance):
    tc = build_tube_controller(terminal_spec)
    a_cl = terminal_spec.system.a_hat + terminal_spec.system.b_hat @ tc.k_gain
    slack = rpi_certificate(tc.omega, a_cl, terminal_spec.sigma_w)
    ok = slack >= -1e-8
    acceptance("mRPI certificate", ok, f"worst facet slack={slack:.3g}")
    assert ok


def test_operator_oracles(acceptance):
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(10_000 + seed)
        T = int(rng.integers(1, 7))
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        a = random_blt(rng, T, n, n, diag_shift=3.0)
        b = random_blt(rng, T, n, m)
        s = rng.normal(size=(n, n))
        worst = max(worst,
                    np.abs(multiply(a, b).to_dense() - a.to_dense() @ b.to_dense()).max(),
                    np.abs(inverse(a).to_dense() - np.linalg.inv(a.to_dense())).max(),
                    np.abs(shift_stack(s, T).to_dense() - np.kron(np.eye(T + 1, k=-1), s)).max())
    ok = worst <= 1e-9
    acceptance("operator algebra oracles", ok, f"200 instances, max entry error={worst:.2e}")
    assert ok


def test_degenerate_analytics(acceptance):
    spec = paper_benchmark(0.0, 0.0, 0.1, filter_mode=FilterMode.DIAGONAL)
    d, sol = min_filter_diagonals(spec, [0.0, 0.0], return_solution=True)
    d_err = float(np.abs(d - 0.1).max())
    from rmpc.simulate import ScenarioSampler
    from rmpc.sls import rollout

    da, db, w = ScenarioSampler(0, w_mode="uniform").draw(spec, 500, spec.horizon)
    r = rollout(sol, spec, da, db, w)
    wt_err = float(np.abs(r.w_tilde - w / 0.1).max())
    ok = d_err <= 1e-6 and wt_err <= 1e-6
    acceptance("degenerate analytics", ok, f"max|d-sigma_w|={d_err:.2e}, max|w~-w/sigma_w|={wt_err:.2e}")
    assert ok


def test_random_suite(acceptance):
    t0 = time.perf_counter()
    res = E.random_suite(count=50, base_seed=0, grid=15)
    elapsed = time.perf_counter() - t0
    covs = [r["sls_coverage"] for r in res.rows]
    dominated = sum(r["sls_coverage"] >= r["tube_coverage"] for r in res.rows)
    failed = [r["seed"] for r in res.rows if r["status"].startswith("error")]
    ok = len(res.rows) == 50 and covs == sorted(covs) and dominated >= 45 and elapsed <= 3600
    acceptance("random suite shape", ok,
               f"{len(res.rows)} systems, sls>=tube on {dominated}, mean sls cov={np.mean(covs):.3f}, "
               f"errors={failed}, {elapsed / 60:.1f} min")
    assert ok


def test_timing_sanity(benchmark_report, acceptance):
    mean = benchmark_report.mean_solve_time("sls")
    ok = mean <= 2.0
    acceptance("timing sanity", ok, f"mean SLS solve {mean:.4f} s")
    assert ok
