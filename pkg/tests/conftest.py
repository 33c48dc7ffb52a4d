import numpy as np
import pytest

from rmpc.model import paper_benchmark
from rmpc.polytope import max_rci


def random_blt(rng, horizon, p, q, density=1.0, diag_shift=0.0):
    """Random BlockLTOperator together with its dense oracle."""
    from rmpc.blockops import BlockLTOperator

    blocks = {}
    for t in range(horizon + 1):
        for k in range(t + 1):
            if k > 0 and rng.random() > density:
                continue
            blk = rng.normal(size=(p, q))
            if k == 0 and p == q:
                blk = blk + diag_shift * np.eye(p)
            blocks[(t, k)] = blk
    return BlockLTOperator(horizon, p, q, blocks)


@pytest.fixture(scope="session")
def benchmark_spec():
    return paper_benchmark()


@pytest.fixture(scope="session")
def benchmark_rci(benchmark_spec):
    return max_rci(benchmark_spec)


@pytest.fixture(scope="session")
def benchmark_terminal_spec(benchmark_spec, benchmark_rci):
    return benchmark_spec.with_(terminal_set=benchmark_rci)


def simple_spec(a, b, x_half, u_half, sigma_w=0.0, vertices=None, horizon=5, terminal=None):
    """Box-constrained spec; zero model uncertainty unless ``vertices`` is given."""
    from rmpc.model import (CostWeights, DisturbanceBound, NominalSystem, OcpSpec,
                            PolytopicUncertainty)
    from rmpc.polytope import HPolytope

    a, b = np.atleast_2d(a).astype(float), np.atleast_2d(b).astype(float)
    n_x, n_u = a.shape[0], b.shape[1]
    if vertices is None:
        vertices = [(np.zeros((n_x, n_x)), np.zeros((n_x, n_u)))]
    x_set = HPolytope.inf_ball(x_half, n_x)
    return OcpSpec(NominalSystem(a, b), PolytopicUncertainty(tuple(vertices)),
                   DisturbanceBound(sigma_w), x_set, HPolytope.inf_ball(u_half, n_u),
                   x_set if terminal is None else terminal,
                   CostWeights(np.eye(n_x), np.eye(n_u), np.eye(n_x)), horizon)


ACCEPTANCE_LOG: list = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(name: str, passed: bool, detail: str = ""):
        line = f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LOG.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)
