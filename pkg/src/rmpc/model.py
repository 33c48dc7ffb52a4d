"""Uncertain linear systems, constraint sets, weights and OCP specifications."""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import constants as C
from .errors import ValidationError
from .polytope import HPolytope, support


def _matrix(x, name, shape=None) -> np.ndarray:
    m = np.array(x, dtype=float, ndmin=2)
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} has non-finite entries")
    if shape is not None and m.shape != shape:
        raise ValidationError(f"{name} has shape {m.shape}, expected {shape}")
    m.setflags(write=False)
    return m


class FilterMode(str, enum.Enum):
    FULL = "full"
    DIAGONAL = "diagonal"

    @classmethod
    def parse(cls, value) -> "FilterMode":
        if isinstance(value, cls):
            return value
        aliases = {
            "full": cls.FULL, "fullblocklowertriangular": cls.FULL,
            "diagonal": cls.DIAGONAL, "diagonalonly": cls.DIAGONAL, "diag": cls.DIAGONAL,
        }
        try:
            return aliases[str(value).replace("_", "").replace("-", "").lower()]
        except KeyError:
            raise ValidationError(f"unknown filter mode {value!r}") from None


@dataclass(frozen=True, eq=False)
class NominalSystem:
    a_hat: np.ndarray
    b_hat: np.ndarray

    def __post_init__(self):
        a = _matrix(self.a_hat, "a_hat")
        if a.shape[0] != a.shape[1]:
            raise ValidationError("a_hat must be square")
        b = _matrix(self.b_hat, "b_hat")
        if b.shape[0] != a.shape[0]:
            raise ValidationError("b_hat row count must equal n_x")
        object.__setattr__(self, "a_hat", a)
        object.__setattr__(self, "b_hat", b)

    @property
    def n_x(self) -> int:
        return self.a_hat.shape[0]

    @property
    def n_u(self) -> int:
        return self.b_hat.shape[1]


@dataclass(frozen=True, eq=False)
class PolytopicUncertainty:
    """Vertex list of (delta_A, delta_B) pairs."""

    vertices: tuple

    def __post_init__(self):
        verts = tuple((_matrix(da, "delta_A"), _matrix(db, "delta_B")) for da, db in self.vertices)
        if not verts:
            raise ValidationError("need at least one uncertainty vertex")
        sa, sb = verts[0][0].shape, verts[0][1].shape
        for da, db in verts:
            if da.shape != sa or db.shape != sb:
                raise ValidationError("uncertainty vertices have inconsistent shapes")
        object.__setattr__(self, "vertices", verts)

    def __len__(self):
        return len(self.vertices)

    def check_against(self, system: NominalSystem):
        da, db = self.vertices[0]
        if da.shape != system.a_hat.shape or db.shape != system.b_hat.shape:
            raise ValidationError("uncertainty vertex shapes do not match the nominal system")


@dataclass(frozen=True)
class DisturbanceBound:
    sigma_w: float

    def __post_init__(self):
        if not np.isfinite(self.sigma_w) or self.sigma_w < 0:
            raise ValidationError("sigma_w must be finite and nonnegative")


@dataclass(frozen=True, eq=False)
class CostWeights:
    q: np.ndarray
    r: np.ndarray
    q_t: np.ndarray

    def __post_init__(self):
        for name, floor in (("q", -C.PD_EIG_FLOOR), ("r", C.PD_EIG_FLOOR), ("q_t", -C.PD_EIG_FLOOR)):
            m = _matrix(getattr(self, name), name)
            if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
                raise ValidationError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(m).min() < floor:
                kind = "positive definite" if floor > 0 else "positive semidefinite"
                raise ValidationError(f"{name} must be {kind}")
            object.__setattr__(self, name, m)


def _check_set(p: HPolytope, dim: int, name: str):
    if p.dim != dim:
        raise ValidationError(f"{name} has dimension {p.dim}, expected {dim}")
    if p.n_constraints == 0 or np.any(p.b <= 0):
        raise ValidationError(f"{name} must contain the origin in its interior")
    if not p.is_bounded():
        raise ValidationError(f"{name} must be bounded")


@dataclass(frozen=True, eq=False)
class OcpSpec:
    system: NominalSystem
    uncertainty: PolytopicUncertainty
    disturbance: DisturbanceBound
    x_set: HPolytope
    u_set: HPolytope
    terminal_set: HPolytope
    weights: CostWeights
    horizon: int
    filter_mode: FilterMode = FilterMode.FULL
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "filter_mode", FilterMode.parse(self.filter_mode))
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValidationError("horizon must be a positive integer")
        object.__setattr__(self, "horizon", int(self.horizon))
        n_x, n_u = self.system.n_x, self.system.n_u
        self.uncertainty.check_against(self.system)
        _check_set(self.x_set, n_x, "x_set")
        _check_set(self.u_set, n_u, "u_set")
        _check_set(self.terminal_set, n_x, "terminal_set")
        w = self.weights
        if w.q.shape != (n_x, n_x) or w.q_t.shape != (n_x, n_x) or w.r.shape != (n_u, n_u):
            raise ValidationError("cost weight shapes do not match the system")

    @property
    def n_x(self) -> int:
        return self.system.n_x

    @property
    def n_u(self) -> int:
        return self.system.n_u

    @property
    def sigma_w(self) -> float:
        return self.disturbance.sigma_w

    def with_(self, **changes) -> "OcpSpec":
        return replace(self, **changes)

    # serialization ------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "a_hat": self.system.a_hat.tolist(),
            "b_hat": self.system.b_hat.tolist(),
            "delta_a_vertices": [da.tolist() for da, _ in self.uncertainty.vertices],
            "delta_b_vertices": [db.tolist() for _, db in self.uncertainty.vertices],
            "vertex_pairing": "zip",
            "sigma_w": self.sigma_w,
            "x_set": self.x_set.to_json(),
            "u_set": self.u_set.to_json(),
            "terminal_set": self.terminal_set.to_json(),
            "q": self.weights.q.tolist(),
            "r": self.weights.r.tolist(),
            "q_t": self.weights.q_t.tolist(),
            "horizon": self.horizon,
            "filter_mode": self.filter_mode.value,
        }

    @classmethod
    def from_json(cls, data) -> "OcpSpec":
        """Build a spec from the JSON schema used by the CLI.

        ``delta_a_vertices`` and ``delta_b_vertices`` are hulls combined by
        Cartesian product, unless ``"vertex_pairing": "zip"`` says they are
        already a joint vertex list (as written by ``to_json``).
        """
        if isinstance(data, (str, Path)):
            data = json.loads(Path(data).read_text())
        das, dbs = data["delta_a_vertices"], data["delta_b_vertices"]
        if data.get("vertex_pairing", "product") == "zip":
            if len(das) != len(dbs):
                raise ValidationError("zip pairing needs equally long vertex lists")
            unc = PolytopicUncertainty(tuple(zip(das, dbs)))
        else:
            unc = product_vertices(das, dbs)
        x_set = HPolytope.from_json(data["x_set"])
        term = data.get("terminal_set")
        return cls(
            system=NominalSystem(data["a_hat"], data["b_hat"]),
            uncertainty=unc,
            disturbance=DisturbanceBound(float(data["sigma_w"])),
            x_set=x_set,
            u_set=HPolytope.from_json(data["u_set"]),
            terminal_set=x_set if term is None else HPolytope.from_json(term),
            weights=CostWeights(data["q"], data["r"], data["q_t"]),
            horizon=data["horizon"],
            filter_mode=data.get("filter_mode", "full"),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def product_vertices(delta_a_hull, delta_b_hull) -> PolytopicUncertainty:
    """All (dA, dB) pairs from separately listed hulls, dA-major order."""
    das = [_matrix(m, "delta_A") for m in delta_a_hull]
    dbs = [_matrix(m, "delta_B") for m in delta_b_hull]
    if not das or not dbs:
        raise ValidationError("both hulls must be nonempty")
    n_x = das[0].shape[0]
    if any(m.shape != (n_x, n_x) for m in das):
        raise ValidationError("delta_A vertices must be n_x x n_x")
    if any(m.shape[0] != n_x or m.shape != dbs[0].shape for m in dbs):
        raise ValidationError("delta_B vertices must be n_x x n_u")
    return PolytopicUncertainty(tuple((da, db) for da in das for db in dbs))


def _benchmark_sets():
    x_set = HPolytope.box([-8.0, -8.0], [8.0, 8.0])
    u_set = HPolytope.box([-4.0], [4.0])
    return x_set, u_set


def _eps_uncertainty(eps_a: float, eps_b: float) -> PolytopicUncertainty:
    da = [np.array([[eps_a, 0.0], [0.0, 0.0]]), np.array([[-eps_a, 0.0], [0.0, 0.0]])]
    db = [np.array([[0.0], [eps_b]]), np.array([[0.0], [-eps_b]])]
    return product_vertices(da, db)


def paper_benchmark(eps_a: float = 0.1, eps_b: float = 0.1, sigma_w: float = 0.1,
                    horizon: int = 10, filter_mode=FilterMode.FULL,
                    terminal_set: HPolytope | None = None) -> OcpSpec:
    """Two-state benchmark: box state/input constraints, Q = Q_T = 10 I, R = 1.

    The terminal set defaults to the state constraint set; the coverage
    experiments replace it with the maximal RCI set.
    """
    x_set, u_set = _benchmark_sets()
    return OcpSpec(
        system=NominalSystem([[1.0, 0.15], [0.1, 1.0]], [[0.1], [1.1]]),
        uncertainty=_eps_uncertainty(eps_a, eps_b),
        disturbance=DisturbanceBound(sigma_w),
        x_set=x_set,
        u_set=u_set,
        terminal_set=x_set if terminal_set is None else terminal_set,
        weights=CostWeights(10.0 * np.eye(2), np.eye(1), 10.0 * np.eye(2)),
        horizon=horizon,
        filter_mode=filter_mode,
        meta={"eps_a": eps_a, "eps_b": eps_b, "sigma_w": sigma_w},
    )


def spectral_radius_2x2(a) -> float:
    """Largest eigenvalue modulus of a 2x2 matrix from the characteristic polynomial."""
    a = np.asarray(a, dtype=float)
    tr = a[0, 0] + a[1, 1]
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    # (tr/2)^2 - det without the cancellation near repeated eigenvalues
    half_gap = 0.5 * (a[0, 0] - a[1, 1])
    disc = half_gap * half_gap + a[0, 1] * a[1, 0]
    if disc >= 0:
        s = np.sqrt(disc)
        return float(max(abs(tr / 2.0 + s), abs(tr / 2.0 - s)))
    # complex pair: |lambda|^2 = det
    return float(np.sqrt(det))


def random_system(seed: int, eps_a: float = 0.2, eps_b: float = 0.1, sigma_w: float = 0.1,
                  horizon: int = 10, filter_mode=FilterMode.FULL) -> OcpSpec:
    """Random 2-state, 1-input instance; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    resamples = 0
    while True:
        a = rng.uniform(-2.0, 2.0, size=(2, 2))
        rho = spectral_radius_2x2(a)
        if rho >= 1e-8:
            break
        resamples += 1
    target = rng.uniform(0.5, 2.5)
    a = a * (target / rho)
    b = rng.uniform(-1.0, 1.0, size=(2, 1))
    x_set, u_set = _benchmark_sets()
    return OcpSpec(
        system=NominalSystem(a, b),
        uncertainty=_eps_uncertainty(eps_a, eps_b),
        disturbance=DisturbanceBound(sigma_w),
        x_set=x_set,
        u_set=u_set,
        terminal_set=x_set,
        weights=CostWeights(10.0 * np.eye(2), np.eye(1), 10.0 * np.eye(2)),
        horizon=horizon,
        filter_mode=filter_mode,
        meta={"seed": seed, "spectral_radius": float(target), "resamples": resamples},
    )


__all__ = [
    "FilterMode", "NominalSystem", "PolytopicUncertainty", "DisturbanceBound", "CostWeights",
    "OcpSpec", "HPolytope", "product_vertices", "paper_benchmark", "random_system",
    "spectral_radius_2x2", "support",
]
