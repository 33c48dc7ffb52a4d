import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from rmpc.errors import EmptyTightenedSet
from rmpc.model import paper_benchmark
from rmpc.polytope import contained_in, rpi_certificate, spectral_radius
from rmpc.simulate import ScenarioSampler
from rmpc.tube import build_tube_controller, dlqr, tube_feasible, tube_first_input, tube_rollout


def test_dlqr_scalar_golden_ratio():
    k, p = dlqr([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    phi = (1 + np.sqrt(5)) / 2
    assert p[0, 0] == pytest.approx(phi, abs=1e-8)
    assert k[0, 0] == pytest.approx(phi / (1 + phi), abs=1e-8)


def test_dlqr_zero_dynamics():
    k, _ = dlqr(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2))
    np.testing.assert_allclose(k, 0.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_dlqr_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 2))
    b = rng.normal(size=(2, 1))
    q, r = np.eye(2), np.eye(1)
    k, p = dlqr(a, b, q, r)
    p_ref = scipy.linalg.solve_discrete_are(a, b, q, r)
    np.testing.assert_allclose(p, p_ref, rtol=1e-6, atol=1e-6)
    assert spectral_radius(a - b @ k) < 1.0


def test_benchmark_closed_loop_contractive():
    s = paper_benchmark()
    k, _ = dlqr(s.system.a_hat, s.system.b_hat, s.weights.q, s.weights.r)
    assert spectral_radius(s.system.a_hat - s.system.b_hat @ k) < 1.0


def test_benchmark_controller(benchmark_terminal_spec):
    spec = benchmark_terminal_spec
    tc = build_tube_controller(spec)
    a_cl = spec.system.a_hat + spec.system.b_hat @ tc.k_gain
    assert rpi_certificate(tc.omega, a_cl, spec.sigma_w) >= -1e-8
    assert contained_in(tc.x_tight, spec.x_set)
    assert not contained_in(spec.x_set, tc.x_tight, 1e-6)
    assert tube_feasible(tc, spec, [0.0, 0.0]).optimal
    assert not tube_feasible(tc, spec, [20.0, 0.0]).optimal


def test_no_uncertainty_no_disturbance_trivial_tube():
    spec = paper_benchmark(0.0, 0.0, 0.0)
    tc = build_tube_controller(spec)
    np.testing.assert_allclose(tc.omega.vertices, 0.0)
    assert contained_in(tc.x_tight, spec.x_set) and contained_in(spec.x_set, tc.x_tight)
    assert contained_in(tc.u_tight, spec.u_set) and contained_in(spec.u_set, tc.u_tight)


def test_huge_disturbance_empty():
    with pytest.raises(EmptyTightenedSet) as info:
        build_tube_controller(paper_benchmark(sigma_w=10.0))
    assert info.value.which == "input"


@pytest.mark.parametrize("x0", [(0.0, 0.0), (2.0, 1.0), (-1.5, 0.5)])
def test_tube_guarantee_by_sampling(benchmark_terminal_spec, x0):
    spec = benchmark_terminal_spec
    tc = build_tube_controller(spec)
    res = tube_feasible(tc, spec, x0)
    if not res.optimal:
        pytest.skip("x0 outside the tube feasible set")
    da, db, w = ScenarioSampler(7, "time_varying_uniform", "corners").draw(spec, 1000, spec.horizon)
    xs, us = tube_rollout(tc, spec, np.array(x0), res, da, db, w)
    assert (spec.x_set.b - xs[:, :-1] @ spec.x_set.f.T).min() >= -1e-6
    assert (spec.u_set.b - us @ spec.u_set.f.T).min() >= -1e-6
    assert (spec.terminal_set.b - xs[:, -1] @ spec.terminal_set.f.T).min() >= -1e-6
    np.testing.assert_allclose(us[:, 0], np.broadcast_to(tube_first_input(tc, spec, x0, res), (1000, 1)))


def test_coverage_monotone_in_sigma_w():
    from rmpc.experiments import grid_points

    grid, _ = grid_points(paper_benchmark().x_set, 7)
    counts = []
    for sw in (0.05, 0.1):
        spec = paper_benchmark(0.05, 0.1, sw)
        tc = build_tube_controller(spec)
        counts.append(sum(tube_feasible(tc, spec, x).optimal for x in grid))
    assert counts[0] >= counts[1]
