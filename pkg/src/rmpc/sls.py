"""Robust SLS synthesis with a jointly optimized uncertainty filter.

The decision variables are the filtered system responses (Phi_x, Phi_u)
and the block-lower-triangular filter Sigma, linked by

    (I - Z A) Phi_x - Z B Phi_u = Sigma,

with Sigma^{0,0} = I and Sigma^{t,0} = diag(d_{t-1}), d > 0. The lumped
uncertainty eta_t = dA x_t + dB u_t + w_t is certified to equal
Sigma w~ for some ||w~_t||_inf <= 1 through one family of 1-norm
inequalities per time step, state row and uncertainty vertex. With the
filtered disturbance in hand, state/input/terminal constraints are
tightened by Hoelder's inequality, leaving a convex QP.

Every 1-norm is linearized with one epigraph slack per scalar entry.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import constants as C
from .blockops import BlockLTOperator, forward_solve, inverse, multiply
from .errors import NumericalError, RmpcError
from .model import FilterMode, OcpSpec
from .qp import QuadraticProgram, SolveResult, SolverSettings, Status, solve


class OcpInfeasible(RmpcError):
    """The robust OCP had no (certified) optimal solution at this x0."""

    def __init__(self, result: SolveResult):
        self.result = result
        super().__init__(f"robust OCP not solved: {result.status.value}")


# ----------------------------------------------------------------------
# affine expressions over the core variables


@dataclass
class Lin:
    """Vector of affine expressions a @ z + c over the core variables."""

    a: sp.csr_matrix
    c: np.ndarray

    @property
    def size(self) -> int:
        return self.c.size

    def __add__(self, other: "Lin") -> "Lin":
        return Lin(self.a + other.a, self.c + other.c)

    def __sub__(self, other: "Lin") -> "Lin":
        return Lin(self.a - other.a, self.c - other.c)

    def lmap(self, m) -> "Lin":
        m = sp.csr_matrix(m)
        return Lin((m @ self.a).tocsr(), m @ self.c)

    def rows(self, idx) -> "Lin":
        return Lin(self.a[idx], self.c[idx])


def _left(m: np.ndarray, q: int) -> sp.csr_matrix:
    """vec_row(M X) = kron(M, I_q) vec_row(X)."""
    return sp.kron(sp.csr_matrix(m), sp.identity(q), format="csr")


def _right_vec(x: np.ndarray, p: int) -> sp.csr_matrix:
    """vec(X x) = kron(I_p, x') vec_row(X)."""
    return sp.kron(sp.identity(p), sp.csr_matrix(np.asarray(x, dtype=float).reshape(1, -1)), format="csr")


class SlsVariables:
    """Index map for the core decision variables.

    Phi_x^{t,k}: free for 1 <= k <= t <= T; Phi_x^{0,0} = I and
    Phi_x^{t,0} = diag(d_{t-1}) (the affine constraint forces this, so the
    blocks are tied to d instead of duplicated).
    Phi_u^{t,k}: free for 0 <= k <= t <= T-1; block row T is zero.
    Sigma^{t,k}: free for 1 <= k <= t <= T in full mode, zero in diagonal
    mode; Sigma^{0,0} = I, Sigma^{t,0} = diag(d_{t-1}).
    """

    def __init__(self, n_x: int, n_u: int, horizon: int, mode: FilterMode):
        self.n_x, self.n_u, self.horizon, self.mode = n_x, n_u, horizon, mode
        self.names: list[str] = []
        self.phi_x: dict = {}
        self.phi_u: dict = {}
        self.sigma: dict = {}
        T = horizon
        for t in range(1, T + 1):
            for k in range(1, t + 1):
                self.phi_x[(t, k)] = self._alloc(f"phi_x[{t},{k}]", n_x * n_x)
        for t in range(T):
            for k in range(t + 1):
                self.phi_u[(t, k)] = self._alloc(f"phi_u[{t},{k}]", n_u * n_x)
        if mode is FilterMode.FULL:
            for t in range(1, T + 1):
                for k in range(1, t + 1):
                    self.sigma[(t, k)] = self._alloc(f"sigma[{t},{k}]", n_x * n_x)
        self.d = self._alloc("d", T * n_x).reshape(T, n_x)
        self.n_core = len(self.names)

    def _alloc(self, name: str, count: int) -> np.ndarray:
        start = len(self.names)
        self.names.extend(f"{name}#{i}" for i in range(count))
        return np.arange(start, start + count)

    # block expressions ---------------------------------------------------
    def _free(self, idx: np.ndarray) -> Lin:
        m = idx.size
        a = sp.csr_matrix((np.ones(m), (np.arange(m), idx)), shape=(m, self.n_core))
        return Lin(a, np.zeros(m))

    def _const(self, value: np.ndarray) -> Lin:
        value = np.asarray(value, dtype=float).ravel()
        return Lin(sp.csr_matrix((value.size, self.n_core)), value)

    def _diag_d(self, t: int) -> Lin:
        n = self.n_x
        rows = np.arange(n) * (n + 1)
        a = sp.csr_matrix((np.ones(n), (rows, self.d[t])), shape=(n * n, self.n_core))
        return Lin(a, np.zeros(n * n))

    def phi_x_block(self, t: int, k: int) -> Lin:
        n = self.n_x
        if k == 0:
            return self._const(np.eye(n)) if t == 0 else self._diag_d(t - 1)
        return self._free(self.phi_x[(t, k)])

    def phi_u_block(self, t: int, k: int) -> Lin:
        if (t, k) in self.phi_u:
            return self._free(self.phi_u[(t, k)])
        return self._const(np.zeros(self.n_u * self.n_x))

    def sigma_block(self, t: int, k: int) -> Lin:
        n = self.n_x
        if k == 0:
            return self._const(np.eye(n)) if t == 0 else self._diag_d(t - 1)
        if (t, k) in self.sigma:
            return self._free(self.sigma[(t, k)])
        return self._const(np.zeros(n * n))

    # extraction -----------------------------------------------------------
    def unpack(self, z: np.ndarray):
        n_x, n_u, T = self.n_x, self.n_u, self.horizon
        d = z[self.d]
        px = {(0, 0): np.eye(n_x)}
        sg = {(0, 0): np.eye(n_x)}
        for t in range(1, T + 1):
            px[(t, 0)] = np.diag(d[t - 1])
            sg[(t, 0)] = np.diag(d[t - 1])
        for key, idx in self.phi_x.items():
            px[key] = z[idx].reshape(n_x, n_x)
        for key, idx in self.sigma.items():
            sg[key] = z[idx].reshape(n_x, n_x)
        pu = {key: z[idx].reshape(n_u, n_x) for key, idx in self.phi_u.items()}
        return (BlockLTOperator(T, n_x, n_x, px), BlockLTOperator(T, n_u, n_x, pu),
                BlockLTOperator(T, n_x, n_x, sg), d)


@dataclass
class _Rows:
    """Inequality rows split into core-variable and slack-variable parts."""

    core: list = field(default_factory=list)
    slack: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    n_slack: int = 0
    n_groups: dict = field(default_factory=dict)

    def new_slacks(self, m: int) -> np.ndarray:
        idx = np.arange(self.n_slack, self.n_slack + m)
        self.n_slack += m
        return idx

    def abs_bound(self, e: Lin) -> np.ndarray:
        """Slacks s with |e_i| <= s_i; returns the slack indices."""
        m = e.size
        s = self.new_slacks(m)
        rows = np.arange(m)
        # e - s <= 0  and  -e - s <= 0
        self._add_indexed(e.a, rows, s, -np.ones(m), -e.c)
        self._add_indexed(-e.a, rows, s, -np.ones(m), e.c)
        return s

    def _add_indexed(self, core, rows, cols, vals, rhs):
        self.core.append(sp.csr_matrix(core))
        self.slack.append((rows, cols, vals, core.shape[0]))
        self.rhs.append(np.asarray(rhs, dtype=float).ravel())

    def sum_bound(self, e: Lin, slacks: np.ndarray, rhs: float, family: str):
        """e + sum(slacks) <= rhs for a scalar expression e."""
        slacks = np.asarray(slacks)
        self._add_indexed(e.a, np.zeros(slacks.size, dtype=int), slacks, np.ones(slacks.size),
                          np.array([rhs]) - e.c)
        self.n_groups[family] = self.n_groups.get(family, 0) + 1

    def matrices(self, n_core: int):
        g_core = sp.vstack(self.core, format="csr") if self.core else sp.csr_matrix((0, n_core))
        r_all, c_all, v_all = [], [], []
        offset = 0
        for entry in self.slack:
            rows, cols, vals, m = entry
            r_all.append(np.asarray(rows) + offset)
            c_all.append(cols)
            v_all.append(vals)
            offset += m
        g_slack = sp.csr_matrix(
            (np.concatenate(v_all) if v_all else [],
             (np.concatenate(r_all) if r_all else [], np.concatenate(c_all) if c_all else [])),
            shape=(offset, self.n_slack))
        h = np.concatenate(self.rhs) if self.rhs else np.zeros(0)
        return g_core, g_slack, h


# ----------------------------------------------------------------------
# problem assembly


class SlsProblem:
    """QP builder for one OcpSpec; x0-independent pieces are built once."""

    def __init__(self, spec: OcpSpec):
        self.spec = spec
        n_x, n_u, T = spec.n_x, spec.n_u, spec.horizon
        self.vars = v = SlsVariables(n_x, n_u, T, spec.filter_mode)
        a_hat, b_hat = spec.system.a_hat, spec.system.b_hat

        self.px = {(t, k): v.phi_x_block(t, k) for t in range(T + 1) for k in range(t + 1)}
        self.pu = {(t, k): v.phi_u_block(t, k) for t in range(T + 1) for k in range(t + 1)}
        self.sg = {(t, k): v.sigma_block(t, k) for t in range(T + 1) for k in range(t + 1)}

        # affine SLS equalities, delay k >= 1 (k = 0 holds by the d tie)
        la, lb = _left(a_hat, n_x), _left(b_hat, n_x)
        eq = []
        for t in range(1, T + 1):
            for k in range(1, t + 1):
                e = self.px[(t, k)] - self.px[(t - 1, k - 1)].lmap(la) \
                    - self.pu[(t - 1, k - 1)].lmap(lb) - self.sg[(t, k)]
                eq.append(e)
        self.a_eq = sp.vstack([e.a for e in eq], format="csr")
        self.b_eq = -np.concatenate([e.c for e in eq])

        # over-approximation residual blocks R_j^{t,i} = dA_j Phi_x^{t,t-i} + dB_j Phi_u^{t,t-i} - Sigma^{t+1,t+1-i}
        self.resid = {}
        for j, (da, db) in enumerate(spec.uncertainty.vertices):
            lda, ldb = _left(da, n_x), _left(db, n_x)
            for t in range(T):
                for i in range(t + 1):
                    self.resid[(j, t, i)] = (self.px[(t, t - i)].lmap(lda)
                                             + self.pu[(t, t - i)].lmap(ldb)
                                             - self.sg[(t + 1, t + 1 - i)])

        # x0-independent part of the inequalities
        self._fixed = fixed = _Rows()
        sigma_w = spec.sigma_w
        self._over_groups = []
        for j in range(len(spec.uncertainty)):
            for t in range(T):
                for r in range(n_x):
                    slacks = [fixed.abs_bound(self.resid[(j, t, i)].rows(slice(r * n_x, (r + 1) * n_x)))
                              for i in range(1, t + 1)]
                    self._over_groups.append((j, t, r, np.concatenate(slacks) if slacks else np.zeros(0, int)))

        self._tight_groups = []
        for name, pset, blocks, t_range in (
            ("state", spec.x_set, self.px, range(T)),
            ("terminal", spec.terminal_set, self.px, [T]),
            ("input", spec.u_set, self.pu, range(T)),
        ):
            p = n_x if name != "input" else n_u
            for t in t_range:
                for fi, bi in zip(pset.f, pset.b):
                    lf = _left(fi.reshape(1, -1), n_x)
                    slacks = [fixed.abs_bound(blocks[(t, t - i)].lmap(lf)) for i in range(1, t + 1)]
                    self._tight_groups.append((name, t, fi, bi, blocks[(t, t)],
                                               np.concatenate(slacks) if slacks else np.zeros(0, int), p))

        # objective weights over the nominal trajectories Phi(:,0) x0
        q, r, q_t = spec.weights.q, spec.weights.r, spec.weights.q_t
        self._obj_terms = [(self.px[(t, t)], q if t < T else q_t) for t in range(T + 1)]
        self._obj_terms += [(self.pu[(t, t)], r) for t in range(T)]

    @property
    def n_over_groups(self) -> int:
        return len(self._over_groups)

    def _inequalities(self, x0):
        """(G, h) of all inequality rows at x0; slack layout does not depend on x0."""
        v = self.vars
        x0 = np.asarray(x0, dtype=float).ravel()
        n_x, n_u = self.spec.n_x, self.spec.n_u
        rows = _Rows(n_slack=self._fixed.n_slack)
        rx = _right_vec(x0, n_x)
        sigma_w = self.spec.sigma_w

        for j, t, r, slacks in self._over_groups:
            term0 = self.resid[(j, t, 0)].lmap(rx).rows([r])
            s0 = rows.abs_bound(term0)
            d_expr = Lin(sp.csr_matrix(([-1.0], ([0], [v.d[t, r]])), shape=(1, v.n_core)), np.zeros(1))
            rows.sum_bound(d_expr, np.concatenate([s0, slacks]), -sigma_w, "over_approx")

        rxu = _right_vec(x0, n_u)
        for name, t, fi, bi, blk, slacks, p in self._tight_groups:
            nominal = blk.lmap(rx if p == n_x else rxu).lmap(fi.reshape(1, -1))
            rows.sum_bound(nominal, slacks, bi, name)

        floor = max(sigma_w, C.D_FLOOR)
        nd = v.d.size
        d_rows = sp.csr_matrix((-np.ones(nd), (np.arange(nd), v.d.ravel())), shape=(nd, v.n_core))
        rows._add_indexed(d_rows, np.zeros(0, int), np.zeros(0, int), np.zeros(0), -floor * np.ones(nd))

        g1c, g1s, h1 = self._fixed.matrices(v.n_core)
        g2c, g2s, h2 = rows.matrices(v.n_core)
        n_slack = rows.n_slack
        g1s = sp.csr_matrix((g1s.data, g1s.indices, g1s.indptr), shape=(g1s.shape[0], n_slack))
        g = sp.vstack([sp.hstack([g1c, g1s]), sp.hstack([g2c, g2s])], format="csc")
        return g, np.concatenate([h1, h2]), n_slack

    def _prepare(self):
        """Split G(x0), h(x0) and the objective into their x0 coefficients.

        Every inequality is affine in x0 and the objective is quadratic, so
        one evaluation per basis vector replaces per-point assembly.
        """
        n_x = self.spec.n_x
        g0, h0, n_slack = self._inequalities(np.zeros(n_x))
        g_lin, h_lin = [], []
        for i in range(n_x):
            gi, hi, _ = self._inequalities(np.eye(n_x)[i])
            g_lin.append((gi - g0).tocsc())
            h_lin.append(hi - h0)
        # objective: nominal blocks Phi^{t,t} x0 = sum_i x0_i (A_i z + c_i)
        n_core = self.vars.n_core
        quad = [[sp.csr_matrix((n_core, n_core)) for _ in range(n_x)] for _ in range(n_x)]
        lin = [[np.zeros(n_core) for _ in range(n_x)] for _ in range(n_x)]
        const = np.zeros((n_x, n_x))
        for blk, w in self._obj_terms:
            p = blk.size // n_x
            parts = [blk.lmap(_right_vec(np.eye(n_x)[i], p)) for i in range(n_x)]
            w = sp.csr_matrix(w)
            for i, ei in enumerate(parts):
                for k, ek in enumerate(parts):
                    wk_a, wk_c = w @ ek.a, w @ ek.c
                    quad[i][k] = quad[i][k] + ei.a.T @ wk_a
                    lin[i][k] += ei.a.T @ wk_c
                    const[i, k] += float(ei.c @ wk_c)
        a_eq = sp.hstack([self.a_eq, sp.csr_matrix((self.a_eq.shape[0], n_slack))], format="csc")
        names = self.vars.names + [f"slack#{i}" for i in range(n_slack)]
        self._template = dict(g0=g0, h0=h0, g_lin=g_lin, h_lin=h_lin, n_slack=n_slack,
                              quad=quad, lin=lin, const=const, a_eq=a_eq, names=names)

    def assemble(self, x0) -> QuadraticProgram:
        if getattr(self, "_template", None) is None:
            self._prepare()
        tp = self._template
        v = self.vars
        x0 = np.asarray(x0, dtype=float).ravel()
        n_x = self.spec.n_x
        g, h = tp["g0"], tp["h0"].copy()
        for i in range(n_x):
            if x0[i] != 0.0:
                g = g + x0[i] * tp["g_lin"][i]
                h += x0[i] * tp["h_lin"][i]
        g = sp.csc_matrix(g)
        g.eliminate_zeros()

        n_slack = tp["n_slack"]
        p_core = sp.csr_matrix((v.n_core, v.n_core))
        q_core = np.zeros(v.n_core)
        for i in range(n_x):
            for k in range(n_x):
                c = x0[i] * x0[k]
                if c != 0.0:
                    p_core = p_core + (2.0 * c) * tp["quad"][i][k]
                    q_core += (2.0 * c) * tp["lin"][i][k]
        const = float(x0 @ tp["const"] @ x0)
        p_mat = sp.block_diag([p_core, sp.csr_matrix((n_slack, n_slack))], format="csc")
        p_mat = 0.5 * (p_mat + p_mat.T)
        p_mat.eliminate_zeros()
        q_vec = np.concatenate([q_core, np.zeros(n_slack)])
        return QuadraticProgram(p_mat, q_vec, tp["a_eq"], self.b_eq, g, h, const, list(tp["names"]))

    def counts(self) -> dict:
        """Number of constraint groups per family (independent of x0)."""
        out = {"over_approx": len(self._over_groups)}
        for name, *_ in self._tight_groups:
            out[name] = out.get(name, 0) + 1
        return out

    def extract(self, x0, result: SolveResult) -> "SlsSolution":
        z = result.z[: self.vars.n_core]
        phi_x, phi_u, sigma, d = self.vars.unpack(z)
        sol = SlsSolution(phi_x, phi_u, sigma, d, result.objective,
                          np.asarray(x0, dtype=float).ravel(), result.solve_time)
        problems = check_solution(sol, self.spec)
        if problems:
            raise NumericalError("solution failed verification: " + "; ".join(problems))
        return sol


def assemble_qp(spec: OcpSpec, x0):
    """QP for the robust OCP at x0 together with its variable index map."""
    prob = SlsProblem(spec)
    return prob.assemble(x0), prob.vars


# ----------------------------------------------------------------------
# solutions


@dataclass
class SlsSolution:
    phi_x: BlockLTOperator
    phi_u: BlockLTOperator
    sigma: BlockLTOperator
    d: np.ndarray
    objective: float
    x0: np.ndarray
    solve_time: float = 0.0
    status: str = "Optimal"

    @property
    def horizon(self) -> int:
        return self.phi_x.horizon

    def nominal_states(self) -> np.ndarray:
        return np.array([self.phi_x.block(t, t) @ self.x0 for t in range(self.horizon + 1)])

    def nominal_inputs(self) -> np.ndarray:
        return np.array([self.phi_u.block(t, t) @ self.x0 for t in range(self.horizon)])

    def to_json(self) -> dict:
        def blocks(op):
            return {f"{t},{k}": op.block(t, k).tolist() for t in range(op.horizon + 1) for k in range(t + 1)}

        return {
            "status": self.status,
            "objective": self.objective,
            "solve_time": self.solve_time,
            "x0": self.x0.tolist(),
            "d": self.d.tolist(),
            "phi_x": blocks(self.phi_x),
            "phi_u": blocks(self.phi_u),
            "sigma": blocks(self.sigma),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def affine_residual(sol: SlsSolution, spec: OcpSpec) -> float:
    """max |(I - Z A) Phi_x - Z B Phi_u - Sigma| over all dense entries."""
    T, n_x = spec.horizon, spec.n_x
    za = np.kron(np.eye(T + 1, k=-1), spec.system.a_hat)
    zb = np.kron(np.eye(T + 1, k=-1), spec.system.b_hat)
    res = (np.eye((T + 1) * n_x) - za) @ sol.phi_x.to_dense() - zb @ sol.phi_u.to_dense() - sol.sigma.to_dense()
    return float(np.abs(res).max())


def check_solution(sol: SlsSolution, spec: OcpSpec) -> list:
    """Invariant violations of a returned solution (empty list if sound)."""
    problems = []
    res = affine_residual(sol, spec)
    if res > C.AFFINE_RESIDUAL_TOL:
        problems.append(f"affine residual {res:.3g}")
    if np.any(sol.d < spec.sigma_w - 1e-9):
        problems.append("filter diagonal below sigma_w")
    for t in range(1, spec.horizon + 1):
        if np.abs(sol.phi_x.block(t, 0) - np.diag(sol.d[t - 1])).max() > C.STRUCTURE_TOL:
            problems.append(f"Phi_x^{{{t},0}} != diag(d_{t - 1})")
    if np.abs(sol.phi_x.block(0, 0) - np.eye(spec.n_x)).max() > C.STRUCTURE_TOL:
        problems.append("Phi_x^{0,0} != I")
    if np.any(sol.d <= 0):
        problems.append("filter not invertible")
    return problems


def solve_ocp(spec: OcpSpec, x0, problem: SlsProblem | None = None,
              settings: SolverSettings | None = None):
    """(SolveResult, SlsSolution or None) without raising on infeasibility."""
    problem = problem or SlsProblem(spec)
    result = solve(problem.assemble(x0), settings)
    if not result.optimal:
        return result, None
    return result, problem.extract(x0, result)


def synthesize(spec: OcpSpec, x0, problem: SlsProblem | None = None,
               settings: SolverSettings | None = None) -> SlsSolution:
    """Solve the robust OCP at x0; raises OcpInfeasible when not Optimal."""
    result, sol = solve_ocp(spec, x0, problem, settings)
    if sol is None:
        if result.status is Status.NUMERICAL_ERROR:
            raise NumericalError(f"QP backend reported {result.raw_status}")
        raise OcpInfeasible(result)
    return sol


def first_input(sol: SlsSolution) -> np.ndarray:
    return sol.phi_u.block(0, 0) @ sol.x0


def controller_gain(sol: SlsSolution) -> BlockLTOperator:
    """K = Phi_u Phi_x^{-1}; u_t = sum_k K^{t,k} x_{t-k}."""
    return multiply(sol.phi_u, inverse(sol.phi_x))


def nominal_cost(sol: SlsSolution, spec: OcpSpec) -> float:
    """Weighted cost of the nominal trajectory Phi(:,0) x0, recomputed directly."""
    xs, us = sol.nominal_states(), sol.nominal_inputs()
    w = spec.weights
    cost = sum(x @ w.q @ x for x in xs[:-1]) + xs[-1] @ w.q_t @ xs[-1]
    cost += sum(u @ w.r @ u for u in us)
    return float(cost)


def min_filter_diagonals(spec: OcpSpec, x0, settings: SolverSettings | None = None,
                         return_solution: bool = False):
    """Smallest total filter diagonal sum(d) over the robust OCP's feasible set.

    Returns d (T x n_x), or ``(d, SlsSolution)`` with ``return_solution``.
    """
    prob = SlsProblem(spec)
    qp = prob.assemble(x0)
    c = np.zeros(qp.n_z)
    c[prob.vars.d.ravel()] = 1.0
    lp = QuadraticProgram(None, c, qp.a_eq, qp.b_eq, qp.g_ineq, qp.h_ineq)
    res = solve(lp, settings)
    if not res.optimal:
        raise OcpInfeasible(res)
    d = res.z[prob.vars.d]
    if not return_solution:
        return d
    sol = prob.extract(x0, res)
    sol.objective = qp.objective(res.z)
    return d, sol


# ----------------------------------------------------------------------
# certificate validation


@dataclass
class Rollout:
    states: np.ndarray      # (S, T+1, n_x)
    inputs: np.ndarray      # (S, T, n_u)
    eta: np.ndarray         # (S, T, n_x)
    w: np.ndarray           # (S, T, n_x)
    w_tilde: np.ndarray     # (S, T, n_x), virtual disturbance recovered from Sigma


def rollout(sol: SlsSolution, spec: OcpSpec, delta_a, delta_b, w, gain=None) -> Rollout:
    """Closed loop under u = K x for a batch of uncertainty realizations.

    delta_a: (S, T, n_x, n_x), delta_b: (S, T, n_x, n_u), w: (S, T, n_x).
    """
    K = controller_gain(sol) if gain is None else gain
    T = spec.horizon
    a_hat, b_hat = spec.system.a_hat, spec.system.b_hat
    S = w.shape[0]
    xs = np.zeros((S, T + 1, spec.n_x))
    us = np.zeros((S, T, spec.n_u))
    eta = np.zeros((S, T, spec.n_x))
    xs[:, 0] = sol.x0
    for t in range(T):
        u = np.zeros((S, spec.n_u))
        for k in range(t + 1):
            blk = K.blocks.get((t, k))
            if blk is not None:
                u += xs[:, t - k] @ blk.T
        us[:, t] = u
        eta[:, t] = (np.einsum("sij,sj->si", delta_a[:, t], xs[:, t])
                     + np.einsum("sij,sj->si", delta_b[:, t], u) + w[:, t])
        xs[:, t + 1] = xs[:, t] @ a_hat.T + u @ b_hat.T + eta[:, t]
    w_tilde = _batch_forward_solve(sol.sigma, sol.x0, eta)
    return Rollout(xs, us, eta, w, w_tilde)


def _batch_forward_solve(sigma: BlockLTOperator, x0, eta) -> np.ndarray:
    """Solve Sigma w~ = [x0; eta] for every sample; returns w~_0..w~_{T-1}."""
    S, T, n = eta.shape
    sol = np.zeros((S, T + 1, n))
    rhs = np.concatenate([np.broadcast_to(x0, (S, 1, n)), eta], axis=1)
    for t in range(T + 1):
        acc = rhs[:, t].copy()
        for k in range(1, t + 1):
            blk = sigma.blocks.get((t, k))
            if blk is not None:
                acc -= sol[:, t - k] @ blk.T
        sol[:, t] = np.linalg.solve(sigma.block(t, 0), acc.T).T
    return sol[:, 1:]


@dataclass
class CertificateReport:
    samples: int
    max_w_tilde: float
    worst_state_slack: float
    worst_input_slack: float
    worst_terminal_slack: float
    passed: bool
    delta_mode: str = "constant"

    @property
    def worst_slack(self) -> float:
        return min(self.worst_state_slack, self.worst_input_slack, self.worst_terminal_slack)


def constraint_slacks(r: Rollout, spec: OcpSpec):
    """Worst slack of state (t < T), input (t < T) and terminal constraints."""
    xs = r.states
    sx = spec.x_set.b - xs[:, :-1] @ spec.x_set.f.T
    su = spec.u_set.b - r.inputs @ spec.u_set.f.T
    st = spec.terminal_set.b - xs[:, -1] @ spec.terminal_set.f.T
    return float(sx.min()), float(su.min()), float(st.min())


def validate_certificate(sol: SlsSolution, spec: OcpSpec, samples: int = 1000, seed: int = 0,
                         delta_mode: str = "constant", w_mode: str = "uniform",
                         tol: float = C.CERTIFICATE_TOL) -> CertificateReport:
    """Sample uncertainty realizations and check the over-approximation.

    Passes iff every recovered virtual disturbance has infinity norm
    <= 1 + tol and every constraint slack is >= -tol.
    """
    from .simulate import ScenarioSampler

    mode = {"constant": "uniform_convex", "time_varying": "time_varying_uniform",
            "vertex": "vertex_only"}.get(delta_mode, delta_mode)
    sampler = ScenarioSampler(seed, delta_mode=mode, w_mode=w_mode)
    da, db, w = sampler.draw(spec, samples, spec.horizon)
    r = rollout(sol, spec, da, db, w)
    max_wt = float(np.abs(r.w_tilde).max())
    sx, su, st = constraint_slacks(r, spec)
    passed = max_wt <= 1.0 + tol and min(sx, su, st) >= -tol
    return CertificateReport(samples, max_wt, sx, su, st, passed, delta_mode)
