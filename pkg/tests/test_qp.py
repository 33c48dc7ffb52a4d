import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import example, given, settings, strategies as st

from rmpc import constants as C
from rmpc.qp import QuadraticProgram, SolverSettings, Status, solve


def test_projection_onto_halfline():
    qp = QuadraticProgram(sp.csc_matrix([[2.0]]), [0.0], None, None, sp.csc_matrix([[-1.0]]), [-3.0])
    res = solve(qp)
    assert res.status is Status.OPTIMAL
    assert res.z[0] == pytest.approx(3.0, abs=1e-7)
    assert res.objective == pytest.approx(9.0, abs=1e-6)


def test_infeasible():
    qp = QuadraticProgram(None, [0.0], None, None, sp.csc_matrix([[1.0], [-1.0]]), [0.0, -1.0])
    res = solve(qp)
    assert res.status is Status.INFEASIBLE
    assert res.z is None


@settings(max_examples=30, deadline=None)
@given(c=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       lo=st.lists(st.floats(-5, 0), min_size=3, max_size=3),
       width=st.lists(st.floats(0.1, 5), min_size=3, max_size=3))
@example(c=[0.0, 0.0, 3.0], lo=[0.0, 0.0, -5.0], width=[4.0, 0.25, 0.25])
@example(c=[0.0, 3.0, 3.0], lo=[-2.0, 0.0, 0.0], width=[0.25, 0.125, 1.0])
@example(c=[2.0, 0.5, 3.0], lo=[0.0, -0.5, -5.0], width=[0.5, 0.125, 1.0])
def test_box_clipping_oracle(c, lo, width):
    c, lo = np.array(c), np.array(lo)
    hi = lo + np.array(width)
    n = 3
    # ||z - c||^2 = z'z - 2c'z + c'c
    qp = QuadraticProgram(2 * sp.identity(n, format="csc"), -2 * c, None, None,
                          sp.vstack([sp.identity(n), -sp.identity(n)]), np.concatenate([hi, -lo]),
                          const=float(c @ c))
    res = solve(qp)
    assert res.optimal
    z_star = np.clip(c, lo, hi)
    f_star = float(np.sum((z_star - c) ** 2))
    assert res.objective == pytest.approx(f_star, abs=1e-6)
    # a bound active with zero multiplier pins z only to ~sqrt(gap), so check
    # z through strong convexity: ||z - z*||^2 <= f(z) - f* for feasible z,
    # padded by what a bound violation within the solve contract can shift f
    feas = C.QP_ABS_TOL + C.QP_REL_TOL * max(1.0, np.abs(qp.h_ineq).max())
    assert np.all(res.z >= lo - feas) and np.all(res.z <= hi + feas)
    f_z = float(np.sum((res.z - c) ** 2))
    pad = 2 * feas * np.sqrt(n) * (np.abs(res.z - c).max() + feas)
    assert f_z - f_star <= 1e-6
    assert np.sum((res.z - z_star) ** 2) <= max(f_z - f_star, 0.0) + pad


def test_equality_constraints():
    qp = QuadraticProgram(2 * sp.identity(2, format="csc"), [0.0, 0.0], sp.csc_matrix([[1.0, 1.0]]), [2.0],
                          None, None)
    res = solve(qp)
    np.testing.assert_allclose(res.z, [1.0, 1.0], atol=1e-7)


def test_deterministic():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(6, 4))
    qp = QuadraticProgram(sp.csc_matrix(m.T @ m), rng.normal(size=4), None, None,
                          sp.csc_matrix(rng.normal(size=(5, 4))), rng.uniform(1, 2, size=5))
    r1, r2 = solve(qp), solve(qp)
    assert r1.status == r2.status
    assert r1.objective == pytest.approx(r2.objective, abs=1e-9)


def test_redundant_constraint_keeps_optimal():
    rng = np.random.default_rng(1)
    for _ in range(10):
        g = rng.normal(size=(6, 3))
        qp = QuadraticProgram(sp.identity(3, format="csc"), rng.normal(size=3), None, None,
                              sp.csc_matrix(g), rng.uniform(0.5, 1.5, size=6))
        base = solve(qp)
        assert base.optimal
        more = solve(qp.with_constraints(g[:1], [qp.h_ineq[0] + 10.0]))
        assert more.optimal
        assert more.objective == pytest.approx(base.objective, abs=1e-6)


def test_rejects_asymmetric_p():
    with pytest.raises(ValueError):
        QuadraticProgram(sp.csc_matrix([[1.0, 1.0], [0.0, 1.0]]), [0, 0], None, None, None, None)


def test_rejects_nonfinite():
    from rmpc.errors import NumericalError

    qp = QuadraticProgram(None, [np.nan], None, None, None, None)
    with pytest.raises(NumericalError):
        solve(qp)


def test_max_iterations_is_not_optimal():
    qp = QuadraticProgram(2 * sp.identity(2, format="csc"), [1.0, -1.0], None, None,
                          sp.csc_matrix([[1.0, 1.0]]), [0.5])
    res = solve(qp, SolverSettings(max_iter=1))
    assert res.status is not Status.OPTIMAL or res.primal_residual <= 1e-7


def test_dump_format():
    qp = QuadraticProgram(sp.csc_matrix([[2.0]]), [1.0], None, None, sp.csc_matrix([[-1.0]]), [-3.0])
    text = qp.dump()
    assert "triplet 0 0 2" in text
    assert text.splitlines()[0] == "n_z 1"
