import json

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from rmpc.errors import ValidationError
from rmpc.model import (CostWeights, FilterMode, OcpSpec, paper_benchmark, product_vertices,
                        random_system, spectral_radius_2x2)
from rmpc.polytope import HPolytope


def test_product_vertices_counts():
    z = np.zeros((2, 2))
    assert len(product_vertices([z], [np.zeros((2, 1))])) == 1
    das = [np.full((2, 2), i) for i in range(3)]
    dbs = [np.full((2, 1), j) for j in range(2)]
    pu = product_vertices(das, dbs)
    assert len(pu) == 6
    assert [(int(a[0, 0]), int(b[0, 0])) for a, b in pu.vertices] == [(i, j) for i in range(3) for j in range(2)]
    with pytest.raises(ValidationError):
        product_vertices([np.zeros((2, 2))], [np.zeros((3, 1))])


def test_benchmark():
    s = paper_benchmark(0.1, 0.1, 0.1)
    assert len(s.uncertainty) == 4
    assert s.sigma_w == 0.1 and s.horizon == 10
    np.testing.assert_array_equal(s.system.a_hat, [[1, 0.15], [0.1, 1]])
    np.testing.assert_array_equal(s.system.b_hat, [[0.1], [1.1]])
    assert s.x_set.contains([8, -8]) and not s.x_set.contains([8.01, 0])
    assert s.u_set.contains([4]) and not s.u_set.contains([4.01])
    np.testing.assert_array_equal(s.weights.q, 10 * np.eye(2))
    assert all(np.all(da == 0) and np.all(db == 0) for da, db in paper_benchmark(0, 0, 0.1).uncertainty.vertices)
    assert sorted({da[0, 0] for da, _ in paper_benchmark(0.4).uncertainty.vertices}) == [-0.4, 0.4]


def test_random_system_deterministic():
    a, b = random_system(1), random_system(1)
    np.testing.assert_array_equal(a.system.a_hat, b.system.a_hat)
    np.testing.assert_array_equal(a.system.b_hat, b.system.b_hat)
    assert a.fingerprint() == b.fingerprint()
    assert random_system(2).fingerprint() != a.fingerprint()


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_system_ranges(seed):
    s = random_system(seed)
    rho = max(abs(np.linalg.eigvals(s.system.a_hat)))
    assert 0.5 - 1e-9 <= rho <= 2.5 + 1e-9
    assert rho == pytest.approx(s.meta["spectral_radius"], abs=1e-9)
    assert np.all(np.abs(s.system.b_hat) <= 1.0)
    assert s.terminal_set is s.x_set
    assert s.sigma_w == 0.1 and len(s.uncertainty) == 4


@settings(max_examples=50, deadline=None)
@given(m=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
@example(m=[2.0, 1e-07, 1e-07, 2.0])
def test_closed_form_spectral_radius(m):
    a = np.array(m).reshape(2, 2)
    assert spectral_radius_2x2(a) == pytest.approx(max(abs(np.linalg.eigvals(a))), abs=1e-9)


def test_validation_errors():
    s = paper_benchmark()
    with pytest.raises(ValidationError):
        s.with_(horizon=0)
    with pytest.raises(ValidationError):
        s.with_(x_set=HPolytope.box([0.0, -1.0], [1.0, 1.0]))  # origin on boundary
    with pytest.raises(ValidationError):
        s.with_(x_set=HPolytope([[1.0, 0.0], [-1.0, 0.0]], [1.0, 1.0]))  # unbounded
    with pytest.raises(ValidationError):
        CostWeights(np.eye(2), np.zeros((1, 1)), np.eye(2))
    with pytest.raises(ValidationError):
        CostWeights(np.array([[1.0, 1.0], [0.0, 1.0]]), np.eye(1), np.eye(2))


def test_filter_mode_aliases():
    assert FilterMode.parse("FullBlockLowerTriangular") is FilterMode.FULL
    assert FilterMode.parse("DiagonalOnly") is FilterMode.DIAGONAL
    assert FilterMode.parse("diagonal") is FilterMode.DIAGONAL


def test_json_roundtrip(tmp_path):
    s = paper_benchmark(0.2, 0.05, 0.3, filter_mode=FilterMode.DIAGONAL)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(s.to_json()))
    back = OcpSpec.from_json(path)
    assert back.fingerprint() == s.fingerprint()
    assert back.filter_mode is FilterMode.DIAGONAL


def test_json_null_terminal_and_product_default():
    data = {
        "a_hat": [[1, 0.15], [0.1, 1]], "b_hat": [[0.1], [1.1]],
        "delta_a_vertices": [[[0.1, 0], [0, 0]], [[-0.1, 0], [0, 0]]],
        "delta_b_vertices": [[[0], [0.1]], [[0], [-0.1]]],
        "sigma_w": 0.1,
        "x_set": {"F": [[1, 0], [-1, 0], [0, 1], [0, -1]], "b": [8, 8, 8, 8]},
        "u_set": {"F": [[1], [-1]], "b": [4, 4]},
        "terminal_set": None,
        "q": [[10, 0], [0, 10]], "r": [[1]], "q_t": [[10, 0], [0, 10]],
        "horizon": 10, "filter_mode": "FullBlockLowerTriangular",
    }
    s = OcpSpec.from_json(data)
    assert len(s.uncertainty) == 4
    assert s.terminal_set.contains([8, 8]) and not s.terminal_set.contains([8.1, 0])
    ref = paper_benchmark()
    assert [(da.tolist(), db.tolist()) for da, db in s.uncertainty.vertices] == \
        [(da.tolist(), db.tolist()) for da, db in ref.uncertainty.vertices]
    np.testing.assert_array_equal(s.system.a_hat, ref.system.a_hat)
