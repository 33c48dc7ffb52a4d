"""Rigid-tube robust MPC baseline.

Tube feedback u = v + K (x - z) with K the nominal LQR gain, cross-section
Omega an outer approximation of the minimal RPI set of the nominal closed
loop A + B K, and tube centers z_t propagated so that every uncertainty
vertex keeps z_t + Omega inside z_{t+1} + Omega.

Omega is sized for the lumped disturbance W + conv_j(dA_j X + dB_j U):
with Omega inside X and K Omega inside U, every vertex closed loop then
maps Omega + W back into Omega, so the rigid recursion is feasible around
the origin. Without model uncertainty this is the usual mRPI set of W.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EmptyTightenedSet, NoConvergence, NotContractive
from .model import OcpSpec
from .polytope import (
    HPolytope,
    VPolytope,
    inf_ball_support,
    minkowski_sum,
    mrpi_approx,
    pontryagin_diff,
    spectral_radius,
)
from .qp import QuadraticProgram, SolveResult, SolverSettings, solve


def dlqr(a, b, q, r, tol: float = 1e-10, max_iter: int = 100_000):
    """Infinite-horizon discrete LQR by Riccati fixed-point iteration.

    Returns ``(K, P)`` with the optimal policy u = -K x.
    """
    a, b = np.atleast_2d(a).astype(float), np.atleast_2d(b).astype(float)
    q, r = np.atleast_2d(q).astype(float), np.atleast_2d(r).astype(float)
    p = q.copy()
    for _ in range(max_iter):
        bp = b.T @ p
        k = np.linalg.solve(r + bp @ b, bp @ a)
        p_next = q + a.T @ p @ a - a.T @ p @ b @ k
        p_next = 0.5 * (p_next + p_next.T)
        if np.abs(p_next - p).max() <= tol * max(1.0, np.abs(p_next).max()):
            p = p_next
            bp = b.T @ p
            return np.linalg.solve(r + bp @ b, bp @ a), p
        p = p_next
    raise NoConvergence(max_iter, "Riccati iteration")


@dataclass(frozen=True, eq=False)
class TubeController:
    k_gain: np.ndarray              # tube feedback, u = v + k_gain (x - z)
    omega: VPolytope
    omega_h: HPolytope
    x_tight: HPolytope
    u_tight: HPolytope
    terminal_tight: HPolytope
    recursion_rhs: np.ndarray       # (M, n_facets): margins for the vertex-wise tube recursion


def lumped_disturbance_set(spec: OcpSpec) -> VPolytope:
    """W + conv of (dA_j x + dB_j u) over uncertainty vertices, x in X, u in U."""
    x_v = spec.x_set.vertices()
    u_v = spec.u_set.vertices()
    w_v = HPolytope.inf_ball(spec.sigma_w, spec.n_x).vertices() if spec.sigma_w > 0 \
        else VPolytope(np.zeros((1, spec.n_x)))
    pts = []
    for da, db in spec.uncertainty.vertices:
        pts.append(minkowski_sum(x_v.linear_map(da), u_v.linear_map(db)).vertices)
    return minkowski_sum(VPolytope(np.vstack(pts)), w_v)


def build_tube_controller(spec: OcpSpec, eps: float = 1e-2) -> TubeController:
    a_hat, b_hat = spec.system.a_hat, spec.system.b_hat
    k_lqr, _ = dlqr(a_hat, b_hat, spec.weights.q, spec.weights.r)
    k = -k_lqr
    a_cl = a_hat + b_hat @ k
    rho = spectral_radius(a_cl)
    if rho >= 1.0:
        raise NotContractive(rho)
    w_lumped = lumped_disturbance_set(spec)
    if np.abs(w_lumped.vertices).max() == 0.0:
        omega = VPolytope(np.zeros((1, spec.n_x)))
    else:
        omega = mrpi_approx(a_cl, w_lumped.to_hpolytope(), eps)
    omega_h = omega.to_hpolytope()

    u_tight = pontryagin_diff(spec.u_set, omega.linear_map(k))
    if u_tight.is_empty():
        raise EmptyTightenedSet("input")
    x_tight = pontryagin_diff(spec.x_set, omega)
    if x_tight.is_empty():
        raise EmptyTightenedSet("state")
    terminal_tight = pontryagin_diff(spec.terminal_set, omega)
    if terminal_tight.is_empty():
        raise EmptyTightenedSet("terminal")

    # H_i((A_j + B_j K) omega) is the only omega-dependent term of the
    # recursion, so enforcing it at every vertex of Omega reduces to a support
    h = omega_h.f
    base = omega_h.b - inf_ball_support(spec.sigma_w, h)
    rhs = []
    for da, db in spec.uncertainty.vertices:
        acl_j = (a_hat + da) + (b_hat + db) @ k
        img = omega.linear_map(acl_j)
        rhs.append(base - np.array([img.support(fi) for fi in h]))
    return TubeController(k, omega, omega_h, x_tight, u_tight, terminal_tight, np.array(rhs))


def tube_qp(tc: TubeController, spec: OcpSpec, x0) -> QuadraticProgram:
    """Decision vector [z_0, ..., z_T, v_0, ..., v_{T-1}]."""
    x0 = np.asarray(x0, dtype=float).ravel()
    n_x, n_u, T = spec.n_x, spec.n_u, spec.horizon
    nz = (T + 1) * n_x + T * n_u

    def zcols(t):
        return slice(t * n_x, (t + 1) * n_x)

    def vcols(t):
        off = (T + 1) * n_x
        return slice(off + t * n_u, off + (t + 1) * n_u)

    blocks, rhs = [], []

    def add(row_blocks, b):
        m = len(b)
        g = np.zeros((m, nz))
        for cols, mat in row_blocks:
            g[:, cols] += mat
        blocks.append(g)
        rhs.append(b)

    h = tc.omega_h
    add([(zcols(0), -h.f)], h.b - h.f @ x0)
    for t in range(T):
        add([(zcols(t), tc.x_tight.f)], tc.x_tight.b)
        add([(vcols(t), tc.u_tight.f)], tc.u_tight.b)
    add([(zcols(T), tc.terminal_tight.f)], tc.terminal_tight.b)
    a_hat, b_hat = spec.system.a_hat, spec.system.b_hat
    for j, (da, db) in enumerate(spec.uncertainty.vertices):
        hf_a, hf_b = h.f @ (a_hat + da), h.f @ (b_hat + db)
        for t in range(T):
            add([(zcols(t), hf_a), (vcols(t), hf_b), (zcols(t + 1), -h.f)], tc.recursion_rhs[j])

    w = spec.weights
    p_blocks = [w.q] * T + [w.q_t] + [w.r] * T
    p_mat = 2.0 * sp.block_diag(p_blocks, format="csc")
    return QuadraticProgram(p_mat, np.zeros(nz), None, None,
                            sp.csc_matrix(np.vstack(blocks)), np.concatenate(rhs))


def tube_feasible(tc: TubeController, spec: OcpSpec, x0,
                  settings: SolverSettings | None = None) -> SolveResult:
    return solve(tube_qp(tc, spec, x0), settings)


def tube_plan(spec: OcpSpec, res: SolveResult):
    """Split an optimal tube solution into centers z (T+1, n_x) and inputs v (T, n_u)."""
    n_x, n_u, T = spec.n_x, spec.n_u, spec.horizon
    z = res.z[: (T + 1) * n_x].reshape(T + 1, n_x)
    v = res.z[(T + 1) * n_x:].reshape(T, n_u)
    return z, v


def tube_first_input(tc: TubeController, spec: OcpSpec, x0, res: SolveResult) -> np.ndarray:
    z, v = tube_plan(spec, res)
    return v[0] + tc.k_gain @ (np.asarray(x0, dtype=float) - z[0])


def tube_rollout(tc: TubeController, spec: OcpSpec, x0, res: SolveResult, delta_a, delta_b, w):
    """Apply u_t = v_t + K (x_t - z_t) over the horizon for a batch of realizations."""
    z, v = tube_plan(spec, res)
    S, T = w.shape[0], spec.horizon
    a_hat, b_hat = spec.system.a_hat, spec.system.b_hat
    xs = np.zeros((S, T + 1, spec.n_x))
    us = np.zeros((S, T, spec.n_u))
    xs[:, 0] = x0
    for t in range(T):
        u = v[t] + (xs[:, t] - z[t]) @ tc.k_gain.T
        us[:, t] = u
        xs[:, t + 1] = (np.einsum("sij,sj->si", a_hat + delta_a[:, t], xs[:, t])
                        + np.einsum("sij,sj->si", b_hat + delta_b[:, t], u) + w[:, t])
    return xs, us
