"""Convex QP standard form and the solve contract.

    minimize    1/2 z' P z + q' z + const
    subject to  A_eq z = b_eq,  G z <= h

Backed by the Clarabel interior-point solver. A result is reported
``OPTIMAL`` only after the KKT residuals have been re-checked here.
"""
from __future__ import annotations

import enum
import io
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from . import constants as C
from .errors import NumericalError


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_ERROR = "NumericalError"


@dataclass
class QuadraticProgram:
    p_mat: sp.csc_matrix
    q_vec: np.ndarray
    a_eq: sp.csc_matrix
    b_eq: np.ndarray
    g_ineq: sp.csc_matrix
    h_ineq: np.ndarray
    const: float = 0.0
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.q_vec = np.asarray(self.q_vec, dtype=float).ravel()
        n = self.q_vec.size
        self.p_mat = sp.csc_matrix(self.p_mat if self.p_mat is not None else (n, n), shape=(n, n))
        self.a_eq = sp.csc_matrix(self.a_eq if self.a_eq is not None else (0, n))
        self.g_ineq = sp.csc_matrix(self.g_ineq if self.g_ineq is not None else (0, n))
        self.b_eq = np.asarray(self.b_eq if self.b_eq is not None else [], dtype=float).ravel()
        self.h_ineq = np.asarray(self.h_ineq if self.h_ineq is not None else [], dtype=float).ravel()
        if self.a_eq.shape[1] != n or self.g_ineq.shape[1] != n:
            raise ValueError("constraint matrices must have n_z columns")
        if self.a_eq.shape[0] != self.b_eq.size or self.g_ineq.shape[0] != self.h_ineq.size:
            raise ValueError("constraint right-hand sides have the wrong length")
        asym = abs(self.p_mat - self.p_mat.T)
        if asym.nnz and asym.max() > 1e-12:
            raise ValueError("P must be symmetric")

    @property
    def n_z(self) -> int:
        return self.q_vec.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.p_mat @ z) + self.q_vec @ z + self.const)

    def with_constraints(self, g_extra=None, h_extra=None) -> "QuadraticProgram":
        g = self.g_ineq if g_extra is None else sp.vstack([self.g_ineq, sp.csc_matrix(g_extra)])
        h = self.h_ineq if h_extra is None else np.concatenate([self.h_ineq, np.ravel(h_extra)])
        return QuadraticProgram(self.p_mat, self.q_vec, self.a_eq, self.b_eq, g, h,
                                self.const, list(self.names))

    def dump(self) -> str:
        """Plain-text triplet dump, one section per matrix/vector."""
        buf = io.StringIO()
        buf.write(f"n_z {self.n_z}\n")
        for name, m in (("P", self.p_mat), ("A_eq", self.a_eq), ("G", self.g_ineq)):
            coo = m.tocoo()
            buf.write(f"{name} {m.shape[0]} {m.shape[1]} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                buf.write(f"triplet {i} {j} {v:.17g}\n")
        for name, v in (("q", self.q_vec), ("b_eq", self.b_eq), ("h", self.h_ineq)):
            buf.write(f"{name} {v.size}\n")
            for i, x in enumerate(v):
                if x != 0.0:
                    buf.write(f"triplet {i} 0 {x:.17g}\n")
        buf.write(f"const {self.const:.17g}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class SolverSettings:
    abs_tol: float = C.QP_ABS_TOL
    rel_tol: float = C.QP_REL_TOL
    infeas_tol: float = C.QP_INFEAS_TOL
    max_iter: int = C.QP_MAX_ITER
    time_limit: float = float("inf")
    verbose: bool = False


@dataclass
class SolveResult:
    status: Status
    z: np.ndarray | None
    objective: float
    solve_time: float
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    raw_status: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_residuals(qp: QuadraticProgram, z, y_eq, y_in):
    """Max-norm primal and dual residuals of a candidate primal/dual triple."""
    r_eq = qp.a_eq @ z - qp.b_eq
    r_in = np.maximum(qp.g_ineq @ z - qp.h_ineq, 0.0)
    primal = max(np.abs(r_eq).max(initial=0.0), r_in.max(initial=0.0))
    grad = qp.p_mat @ z + qp.q_vec + qp.a_eq.T @ y_eq + qp.g_ineq.T @ y_in
    dual = float(np.abs(grad).max(initial=0.0))
    return float(primal), dual


def solve(qp: QuadraticProgram, settings: SolverSettings | None = None) -> SolveResult:
    settings = settings or SolverSettings()
    if not (np.all(np.isfinite(qp.q_vec)) and np.all(np.isfinite(qp.b_eq))
            and np.all(np.isfinite(qp.h_ineq))):
        raise NumericalError("QP data contains non-finite values")
    n = qp.n_z
    m_eq, m_in = qp.a_eq.shape[0], qp.g_ineq.shape[0]
    a = sp.vstack([qp.a_eq, qp.g_ineq]).tocsc()
    b = np.concatenate([qp.b_eq, qp.h_ineq])
    cones = []
    if m_eq:
        cones.append(clarabel.ZeroConeT(m_eq))
    if m_in:
        cones.append(clarabel.NonnegativeConeT(m_in))
    if not cones:
        a = sp.csc_matrix((1, n))
        b = np.zeros(1)
        cones = [clarabel.ZeroConeT(1)]

    def run(robust: bool):
        s = clarabel.DefaultSettings()
        s.verbose = settings.verbose
        s.max_iter = settings.max_iter
        s.time_limit = settings.time_limit
        s.tol_gap_abs = s.tol_gap_rel = s.tol_feas = min(settings.abs_tol, settings.rel_tol) * 1e-2
        s.tol_infeas_abs = s.tol_infeas_rel = settings.infeas_tol
        s.max_threads = 1
        if robust:
            # stronger KKT refinement for badly scaled instances
            s.iterative_refinement_reltol = 1e-14
            s.iterative_refinement_max_iter = 50
            s.static_regularization_constant = 1e-7
        try:
            return clarabel.DefaultSolver(sp.triu(qp.p_mat).tocsc(), qp.q_vec, a, b, cones, s).solve()
        except BaseException as exc:  # the Rust core raises PanicException on breakdown
            if isinstance(exc, (KeyboardInterrupt, SystemExit)):
                raise
            raise NumericalError(f"solver failure: {exc}") from exc

    def finish(sol, elapsed):
        raw = str(sol.status).split(".")[-1]
        if raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return SolveResult(Status.INFEASIBLE, None, np.inf, elapsed, raw_status=raw)
        if raw in ("NumericalError", "InsufficientProgress", "DualInfeasible", "AlmostDualInfeasible"):
            return SolveResult(Status.NUMERICAL_ERROR, None, np.nan, elapsed, raw_status=raw)
        if raw not in ("Solved", "AlmostSolved"):
            return SolveResult(Status.MAX_ITERATIONS, None, np.nan, elapsed, raw_status=raw)
        z = np.asarray(sol.x, dtype=float)
        duals = np.asarray(sol.z, dtype=float)
        y_eq, y_in = duals[:m_eq], duals[m_eq:m_eq + m_in]
        primal, dual = kkt_residuals(qp, z, y_eq, y_in)
        p_scale = max(1.0, np.abs(b).max(initial=0.0), np.abs(a @ z).max(initial=0.0))
        d_scale = max(1.0, np.abs(qp.q_vec).max(initial=0.0), np.abs(qp.p_mat @ z).max(initial=0.0),
                      np.abs(a.T @ duals[:m_eq + m_in]).max(initial=0.0))
        ok = (primal <= settings.abs_tol + settings.rel_tol * p_scale
              and dual <= settings.abs_tol + settings.rel_tol * d_scale)
        status = Status.OPTIMAL if ok else Status.MAX_ITERATIONS
        return SolveResult(status, z, qp.objective(z), elapsed, primal, dual, raw)

    t0 = time.perf_counter()
    res = finish(run(False), time.perf_counter() - t0)
    if res.status in (Status.NUMERICAL_ERROR, Status.MAX_ITERATIONS) and res.raw_status != "MaxTime":
        res = finish(run(True), time.perf_counter() - t0)
    return res
