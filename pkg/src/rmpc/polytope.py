"""Polytope geometry for low-dimensional robust control.

H-representation operations (support, erosion, projection, robust
predecessor sets) work in any dimension. Vertex-form operations
(Minkowski sums, vertex enumeration) are restricted to dim <= 3, and the
Minkowski sum to dim <= 2.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection, QhullError

from . import constants as C
from .errors import (
    EmptyInvariantSet,
    EmptySet,
    NotContractive,
    NotConverged,
    Unbounded,
    Unsupported,
)

if TYPE_CHECKING:
    from .model import OcpSpec

_ZERO_ROW = 1e-12


def _as_matrix(f, dim=None):
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f.reshape(-1, dim if dim is not None else f.size)
    return f


@dataclass(frozen=True, eq=False)
class HPolytope:
    """{x | f x <= b} with unit-norm rows and no duplicate rows.

    A polytope with zero rows is the whole space. An infeasible zero row
    (0 <= negative) is kept as the canonical marker of the empty set.
    """

    f: np.ndarray
    b: np.ndarray
    dim: int = field(default=-1)

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        b = np.asarray(self.b, dtype=float).ravel()
        dim = self.dim if self.dim >= 0 else (f.shape[1] if f.ndim == 2 else f.size)
        f = f.reshape(-1, dim) if f.size else np.zeros((0, dim))
        if f.shape[0] != b.size:
            raise ValueError(f"f has {f.shape[0]} rows but b has {b.size} entries")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(b))):
            raise ValueError("polytope data must be finite")
        norms = np.linalg.norm(f, axis=1)
        zero = norms <= _ZERO_ROW
        infeasible_zero = bool(np.any(b[zero] < -_ZERO_ROW))
        keep = ~zero
        f = f[keep] / norms[keep, None]
        b = b[keep] / norms[keep]
        if f.shape[0]:
            # duplicate rows: keep the tightest offset per direction
            key = np.round(f, 12)
            order = np.lexsort((b,) + tuple(key[:, k] for k in range(dim - 1, -1, -1)))
            f, b, key = f[order], b[order], key[order]
            first = np.ones(f.shape[0], dtype=bool)
            first[1:] = np.any(key[1:] != key[:-1], axis=1)
            f, b = f[first], b[first]
        if infeasible_zero:
            f = np.vstack([f, np.zeros((1, dim))])
            b = np.append(b, -1.0)
        f.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "dim", dim)

    # construction -------------------------------------------------------
    @classmethod
    def box(cls, lo, hi) -> "HPolytope":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @classmethod
    def inf_ball(cls, radius: float, dim: int) -> "HPolytope":
        return cls.box(-radius * np.ones(dim), radius * np.ones(dim))

    @classmethod
    def whole_space(cls, dim: int) -> "HPolytope":
        return cls(np.zeros((0, dim)), np.zeros(0), dim)

    @classmethod
    def from_json(cls, data) -> "HPolytope":
        if isinstance(data, str):
            data = json.loads(data)
        f = np.asarray(data["F"], dtype=float)
        return cls(f, np.asarray(data["b"], dtype=float), f.shape[1] if f.ndim == 2 else -1)

    def to_json(self) -> dict:
        return {"F": self.f.tolist(), "b": self.b.tolist()}

    # queries ------------------------------------------------------------
    @property
    def n_constraints(self) -> int:
        return self.f.shape[0]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return bool(np.all(self.f @ x <= self.b + tol))

    def intersect(self, other: "HPolytope") -> "HPolytope":
        return HPolytope(np.vstack([self.f, other.f]), np.concatenate([self.b, other.b]), self.dim)

    def chebyshev(self):
        """Center and radius of the largest inscribed ball (radius < 0 if empty)."""
        m, n = self.f.shape
        if m == 0:
            return np.zeros(n), np.inf
        c = np.zeros(n + 1)
        c[-1] = -1.0
        a = np.hstack([self.f, np.ones((m, 1))])
        bounds = [(None, None)] * n + [(None, 1e6)]
        res = linprog(c, A_ub=a, b_ub=self.b, bounds=bounds, method="highs")
        if res.status == 2:
            return np.full(n, np.nan), -np.inf
        if res.status != 0:
            raise Unbounded("chebyshev LP failed")
        return res.x[:n], float(res.x[-1])

    def is_empty(self, tol: float = C.REDUNDANCY_TOL) -> bool:
        return self.chebyshev()[1] < -tol

    def is_bounded(self) -> bool:
        eye = np.eye(self.dim)
        try:
            for d in np.vstack([eye, -eye]):
                support(self, d)
        except Unbounded:
            return False
        return True

    def vertices(self) -> "VPolytope":
        return VPolytope(_enumerate_vertices(self))

    def bounding_box(self):
        eye = np.eye(self.dim)
        hi = np.array([support(self, e) for e in eye])
        lo = -np.array([support(self, -e) for e in eye])
        return lo, hi

    def remove_redundant(self, tol: float = C.REDUNDANCY_TOL) -> "HPolytope":
        return remove_redundancy(self, tol)

    def __repr__(self):
        return f"HPolytope(dim={self.dim}, n_constraints={self.n_constraints})"


def _hull_2d(points: np.ndarray, tol: float = C.CONVEX_POSITION_TOL) -> np.ndarray:
    """Counterclockwise convex hull (Andrew's monotone chain), collinear points dropped."""
    pts = np.unique(np.round(points, 12), axis=0)
    if len(pts) <= 2:
        if len(pts) == 2 and np.linalg.norm(pts[0] - pts[1]) <= tol:
            return pts[:1]
        return pts
    scale = max(1.0, float(np.max(np.abs(pts))))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= tol * scale:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= tol * scale:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    return hull


@dataclass(frozen=True, eq=False)
class VPolytope:
    """Convex hull of finitely many points; vertices kept in convex position.

    For dim == 2 the vertices are ordered counterclockwise; for dim == 1
    they are ``[[lo], [hi]]``.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.shape[0] == 0:
            raise EmptySet("VPolytope needs at least one point")
        dim = v.shape[1]
        if dim == 1:
            lo, hi = v.min(), v.max()
            v = np.array([[lo]]) if hi - lo <= C.CONVEX_POSITION_TOL else np.array([[lo], [hi]])
        elif dim == 2:
            v = _hull_2d(v)
        elif dim == 3 and v.shape[0] > 4:
            from scipy.spatial import ConvexHull

            try:
                v = v[ConvexHull(v).vertices]
            except QhullError:
                v = np.unique(v, axis=0)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def support(self, direction) -> float:
        return float(np.max(self.vertices @ np.asarray(direction, dtype=float)))

    def linear_map(self, m) -> "VPolytope":
        return VPolytope(self.vertices @ np.asarray(m, dtype=float).T)

    def scale(self, s: float) -> "VPolytope":
        return VPolytope(self.vertices * s)

    def to_hpolytope(self) -> HPolytope:
        return _vertices_to_h(self.vertices)

    def to_csv(self) -> str:
        header = ",".join(f"v{k + 1}" for k in range(self.dim))
        rows = [",".join(repr(float(c)) for c in v) for v in self.vertices]
        return "\n".join([header] + rows) + "\n"

    def __repr__(self):
        return f"VPolytope(dim={self.dim}, n_vertices={len(self.vertices)})"


def _vertices_to_h(v: np.ndarray) -> HPolytope:
    n, dim = v.shape
    if dim == 1:
        return HPolytope.box(v.min(axis=0), v.max(axis=0))
    if dim != 2:
        from scipy.spatial import ConvexHull

        hull = ConvexHull(v)
        return HPolytope(hull.equations[:, :-1], -hull.equations[:, -1])
    if n == 1:
        return HPolytope.box(v[0], v[0])
    if n == 2:
        d = v[1] - v[0]
        d = d / np.linalg.norm(d)
        nrm = np.array([-d[1], d[0]])
        f = np.vstack([nrm, -nrm, d, -d])
        b = np.array([nrm @ v[0], -nrm @ v[0], d @ v[1], -d @ v[0]])
        return HPolytope(f, b)
    edges = np.roll(v, -1, axis=0) - v
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    b = np.einsum("ij,ij->i", normals, v)
    return HPolytope(normals, b)


def _enumerate_vertices(p: HPolytope) -> np.ndarray:
    dim = p.dim
    if dim > 3:
        raise Unsupported("vertex enumeration is limited to dim <= 3")
    if p.n_constraints == 0:
        raise Unbounded("whole space has no vertices")
    center, r = p.chebyshev()
    if r < -C.REDUNDANCY_TOL:
        raise EmptySet("cannot enumerate vertices of an empty polytope")
    if dim == 1:
        lo, hi = p.bounding_box()
        return np.array([lo, hi])
    if r > 1e-7:
        try:
            hs = HalfspaceIntersection(np.hstack([p.f, -p.b[:, None]]), center)
            pts = hs.intersections
            if np.all(np.isfinite(pts)):
                return VPolytope(pts).vertices
        except QhullError:
            pass
    # flat or numerically awkward: brute force over row subsets
    pts = []
    for rows in itertools.combinations(range(p.n_constraints), dim):
        a = p.f[list(rows)]
        if abs(np.linalg.det(a)) < 1e-10:
            continue
        x = np.linalg.solve(a, p.b[list(rows)])
        if p.contains(x, tol=1e-7):
            pts.append(x)
    if not pts:
        raise Unbounded("no vertices found (unbounded or degenerate polytope)")
    return VPolytope(np.array(pts)).vertices


# ----------------------------------------------------------------------
# support, erosion, sums


def support(p, direction) -> float:
    """max of direction . x over p (LP for H-form, vertex max for V-form)."""
    d = np.asarray(direction, dtype=float).ravel()
    if isinstance(p, VPolytope):
        return p.support(d)
    if p.n_constraints == 0:
        if np.allclose(d, 0.0):
            return 0.0
        raise Unbounded("support of the whole space")
    # solve along the unit direction: LP tolerances are absolute
    scale = float(np.linalg.norm(d))
    unit = d / scale if scale > 0 else d
    res = linprog(-unit, A_ub=p.f, b_ub=p.b, bounds=[(None, None)] * p.dim, method="highs")
    if res.status == 2:
        raise EmptySet("support of an empty polytope")
    if res.status == 3:
        raise Unbounded(f"polytope unbounded in direction {d}")
    if res.status != 0:
        raise Unbounded(f"support LP failed: {res.message}")
    return float(-res.fun) * scale if scale > 0 else 0.0


def inf_ball_support(radius: float, f: np.ndarray) -> np.ndarray:
    """Support of the radius-r infinity ball along each row of f: r * ||f_i||_1."""
    return radius * np.abs(np.atleast_2d(f)).sum(axis=1)


def pontryagin_diff(p: HPolytope, q) -> HPolytope:
    """Erosion p - q = {x | f_i x <= b_i - h_q(f_i)}. The result may be empty."""
    h = np.array([support(q, fi) for fi in p.f]) if p.n_constraints else np.zeros(0)
    return HPolytope(p.f, p.b - h, p.dim)


def minkowski_sum(p: VPolytope, q: VPolytope) -> VPolytope:
    """Vertex-form Minkowski sum for dim 1 and 2 (edge-angle merge in 2-D)."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    if p.dim == 1:
        return VPolytope(np.array([[p.vertices.min() + q.vertices.min()],
                                   [p.vertices.max() + q.vertices.max()]]))
    if p.dim != 2:
        raise Unsupported("minkowski_sum supports dim <= 2")
    start = _bottom_left(p.vertices) + _bottom_left(q.vertices)
    edges = np.vstack([_edges_from_bottom(p.vertices), _edges_from_bottom(q.vertices)])
    if len(edges) == 0:
        return VPolytope(start[None, :])
    ang = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), 2 * np.pi)
    edges = edges[np.argsort(ang, kind="stable")]
    pts = start + np.vstack([np.zeros((1, 2)), np.cumsum(edges, axis=0)])
    return VPolytope(pts)


def _bottom_left(v):
    i = np.lexsort((v[:, 0], v[:, 1]))[0]
    return v[i]


def _edges_from_bottom(v):
    if len(v) == 1:
        return np.zeros((0, 2))
    i = np.lexsort((v[:, 0], v[:, 1]))[0]
    v = np.roll(v, -i, axis=0)
    return np.roll(v, -1, axis=0) - v


# ----------------------------------------------------------------------
# redundancy removal and projection


def remove_redundancy(p: HPolytope, tol: float = C.REDUNDANCY_TOL) -> HPolytope:
    """Drop rows implied by the others.

    Full-dimensional sets in dim 2-3 go through qhull's dual hull; anything
    else (flat sets, higher dimension) falls back to one LP per row.
    """
    m, n = p.f.shape
    if m <= 1:
        return p
    center, r = p.chebyshev()
    if r < -tol:
        return HPolytope(np.zeros((1, n)), np.array([-1.0]), n)
    if 2 <= n <= 3 and r > 1e-6 and np.isfinite(r):
        try:
            hs = HalfspaceIntersection(np.hstack([p.f, -p.b[:, None]]), center)
            keep = np.unique(np.concatenate([np.asarray(s) for s in hs.dual_facets]))
            if np.all(np.isfinite(hs.intersections)):
                return HPolytope(p.f[keep], p.b[keep], n)
        except QhullError:
            pass
    return _remove_redundancy_lp(p, tol)


def _remove_redundancy_lp(p: HPolytope, tol: float) -> HPolytope:
    f, b = p.f, p.b
    keep = np.ones(len(b), dtype=bool)
    for i in range(len(b)):
        mask = keep.copy()
        mask[i] = False
        if not mask.any():
            continue
        a = np.vstack([f[mask], f[i]])
        rhs = np.append(b[mask], b[i] + 1.0)
        res = linprog(-f[i], A_ub=a, b_ub=rhs, bounds=[(None, None)] * p.dim, method="highs")
        if res.status == 0 and -res.fun <= b[i] + tol:
            keep[i] = False
    return HPolytope(f[keep], b[keep], p.dim)


def fm_eliminate_last(f: np.ndarray, b: np.ndarray, tol: float = 1e-12):
    """One Fourier-Motzkin step removing the last coordinate."""
    c = f[:, -1]
    pos, neg, zero = c > tol, c < -tol, np.abs(c) <= tol
    rows = [f[zero, :-1]]
    rhs = [b[zero]]
    if pos.any() and neg.any():
        fp = f[pos] / c[pos, None]
        bp = b[pos] / c[pos]
        fn = f[neg] / -c[neg, None]
        bn = b[neg] / -c[neg]
        rows.append((fp[:, None, :-1] + fn[None, :, :-1]).reshape(-1, f.shape[1] - 1))
        rhs.append((bp[:, None] + bn[None, :]).ravel())
    return np.vstack(rows), np.concatenate(rhs)


def project_state(p: HPolytope, n_x: int) -> HPolytope:
    """Exact projection onto the first n_x coordinates by Fourier-Motzkin."""
    f, b = np.asarray(p.f), np.asarray(p.b)
    dim = p.dim
    while dim > n_x:
        f, b = fm_eliminate_last(f, b)
        dim -= 1
        q = HPolytope(f, b, dim)
        if q.n_constraints:
            q = remove_redundancy(q)
        f, b = np.asarray(q.f), np.asarray(q.b)
    return HPolytope(f, b, n_x)


# ----------------------------------------------------------------------
# robust invariance


def _joint_vertex_dynamics(spec: "OcpSpec"):
    a_hat, b_hat = spec.system.a_hat, spec.system.b_hat
    return [(a_hat + da, b_hat + db) for da, db in spec.uncertainty.vertices]


def robust_pre(target: HPolytope, spec: "OcpSpec") -> HPolytope:
    """States from which some admissible input reaches ``target`` for every
    uncertainty vertex and every disturbance in the sigma_w infinity ball."""
    n_x, n_u = spec.system.n_x, spec.system.n_u
    h = target.f
    g = target.b - inf_ball_support(spec.disturbance.sigma_w, h)
    rows, rhs = [], []
    for a_j, b_j in _joint_vertex_dynamics(spec):
        rows.append(np.hstack([h @ a_j, h @ b_j]))
        rhs.append(g)
    rows.append(np.hstack([np.zeros((spec.u_set.n_constraints, n_x)), spec.u_set.f]))
    rhs.append(spec.u_set.b)
    lifted = HPolytope(np.vstack(rows), np.concatenate(rhs), n_x + n_u)
    return project_state(lifted, n_x)


def contained_in(inner: HPolytope, outer: HPolytope, tol: float = 1e-9) -> bool:
    """inner subset of outer, checked through the support of inner on outer's facets."""
    if outer.n_constraints == 0:
        return True
    try:
        if inner.dim <= 3 and inner.n_constraints:
            v = inner.vertices()
            h = np.array([v.support(fi) for fi in outer.f])
        else:
            h = np.array([support(inner, fi) for fi in outer.f])
    except EmptySet:
        return True
    return bool(np.all(h <= outer.b + tol))


def max_rci(spec: "OcpSpec", tol: float = C.RCI_HAUSDORFF_TOL, max_iter: int = 200) -> HPolytope:
    """Maximal robust control invariant subset of the state constraints.

    Iterates C <- robust_pre(C) ∩ X from C = X until the iterate stops
    shrinking (two-sided inclusion within ``tol``).
    """
    x_set = spec.x_set
    c = remove_redundancy(x_set)
    for k in range(1, max_iter + 1):
        nxt = remove_redundancy(robust_pre(c, spec).intersect(x_set))
        if nxt.is_empty():
            raise EmptyInvariantSet(k)
        if contained_in(c, nxt, tol):
            return nxt
        c = nxt
    raise NotConverged(max_iter, "max_rci")


def rci_certificate(c: HPolytope, spec: "OcpSpec") -> float:
    """Worst vertex slack of the robust one-step invariance LP.

    For every vertex v of ``c``: max over admissible u of the smallest margin
    by which every uncertainty vertex and extreme disturbance keeps the
    successor inside ``c``. Nonnegative means robustly control invariant.
    """
    n_u = spec.system.n_u
    h = c.f
    g = c.b - inf_ball_support(spec.disturbance.sigma_w, h)
    dyn = _joint_vertex_dynamics(spec)
    worst = np.inf
    for v in c.vertices().vertices:
        a_ub, b_ub = [], []
        for a_j, b_j in dyn:
            a_ub.append(np.hstack([h @ b_j, np.ones((len(g), 1))]))
            b_ub.append(g - h @ a_j @ v)
        a_ub.append(np.hstack([spec.u_set.f, np.zeros((spec.u_set.n_constraints, 1))]))
        b_ub.append(spec.u_set.b)
        obj = np.zeros(n_u + 1)
        obj[-1] = -1.0
        res = linprog(obj, A_ub=np.vstack(a_ub), b_ub=np.concatenate(b_ub),
                      bounds=[(None, None)] * n_u + [(None, 1.0)], method="highs")
        slack = -np.inf if res.status != 0 else float(-res.fun)
        worst = min(worst, slack)
    return worst


def spectral_radius(a) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(a)))))


def mrpi_approx(a_cl, w_box: HPolytope, eps: float = 1e-2, max_terms: int = 2000) -> VPolytope:
    """Outer epsilon-approximation of the minimal RPI set of x+ = a_cl x + w.

    Sums F_s = W + a_cl W + ... + a_cl^{s-1} W until a_cl^s W lies in
    alpha W with alpha small enough for the requested accuracy, then
    returns F_s / (1 - alpha), which is RPI.
    """
    a_cl = np.atleast_2d(np.asarray(a_cl, dtype=float))
    rho = spectral_radius(a_cl)
    if rho >= 1.0:
        raise NotContractive(rho)
    w_v = w_box.vertices()
    n = a_cl.shape[0]
    if np.all(np.abs(w_v.vertices) <= 1e-15):
        return VPolytope(np.zeros((1, n)))
    if np.any(w_box.b <= 0):
        raise ValueError("disturbance set must contain the origin in its interior")
    eye = np.eye(n)
    axes = np.vstack([eye, -eye])
    f_s = w_v
    a_pow = a_cl.copy()
    for s in range(1, max_terms + 1):
        img = w_v.linear_map(a_pow)
        alpha = max(img.support(fi) / gi for fi, gi in zip(w_box.f, w_box.b))
        m_s = max(f_s.support(e) for e in axes)
        if alpha <= eps / (eps + m_s):
            return f_s.scale(1.0 / (1.0 - alpha))
        f_s = minkowski_sum(f_s, img)
        a_pow = a_pow @ a_cl
    raise NotConverged(max_terms, "mrpi_approx")


def rpi_certificate(omega: VPolytope, a_cl, w_radius: float) -> float:
    """min over facets of Omega of b_i - h_{a_cl Omega}(f_i) - h_W(f_i)."""
    h = omega.to_hpolytope()
    img = omega.linear_map(a_cl)
    slack = h.b - np.array([img.support(fi) for fi in h.f]) - inf_ball_support(w_radius, h.f)
    return float(slack.min())
