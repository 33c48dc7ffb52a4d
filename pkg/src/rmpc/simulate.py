"""Seeded uncertainty sampling and closed-loop receding-horizon simulation."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import MidRunInfeasible

DELTA_MODES = ("vertex_only", "uniform_convex", "time_varying_uniform")
W_MODES = ("uniform", "corners")


@dataclass
class ScenarioSampler:
    """Reproducible draws of (delta_A, delta_B, w).

    ``uniform_convex`` draws Dirichlet(1, ..., 1) weights over the vertices
    once per trajectory; ``time_varying_uniform`` redraws them every step;
    ``vertex_only`` picks one vertex per trajectory. Disturbances are
    uniform in the sigma_w box or at its corners.
    """

    seed: int = 0
    delta_mode: str = "uniform_convex"
    w_mode: str = "uniform"
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.delta_mode = self.delta_mode.lower().replace("-", "_")
        self.w_mode = {"uniformbox": "uniform", "cornersonly": "corners"}.get(
            self.w_mode.lower().replace("_", ""), self.w_mode.lower())
        if self.delta_mode not in DELTA_MODES:
            raise ValueError(f"delta_mode must be one of {DELTA_MODES}")
        if self.w_mode not in W_MODES:
            raise ValueError(f"w_mode must be one of {W_MODES}")
        self.rng = np.random.default_rng(self.seed)

    def weights(self, n_samples: int, steps: int, n_vertices: int) -> np.ndarray:
        """Convex weights over uncertainty vertices, shape (S, steps, M)."""
        rng = self.rng
        if self.delta_mode == "vertex_only":
            idx = rng.integers(n_vertices, size=n_samples)
            lam = np.eye(n_vertices)[idx][:, None, :]
            return np.broadcast_to(lam, (n_samples, steps, n_vertices))
        if self.delta_mode == "uniform_convex":
            lam = rng.dirichlet(np.ones(n_vertices), size=n_samples)[:, None, :]
            return np.broadcast_to(lam, (n_samples, steps, n_vertices))
        return rng.dirichlet(np.ones(n_vertices), size=(n_samples, steps))

    def disturbances(self, n_samples: int, steps: int, n_x: int, sigma_w: float) -> np.ndarray:
        if self.w_mode == "corners":
            return sigma_w * self.rng.choice([-1.0, 1.0], size=(n_samples, steps, n_x))
        return self.rng.uniform(-sigma_w, sigma_w, size=(n_samples, steps, n_x))

    def draw(self, spec, n_samples: int, steps: int):
        """Batches delta_a (S, steps, n_x, n_x), delta_b (S, steps, n_x, n_u), w (S, steps, n_x)."""
        verts = spec.uncertainty.vertices
        das = np.stack([da for da, _ in verts])
        dbs = np.stack([db for _, db in verts])
        lam = self.weights(n_samples, steps, len(verts))
        delta_a = np.einsum("stm,mij->stij", lam, das)
        delta_b = np.einsum("stm,mij->stij", lam, dbs)
        w = self.disturbances(n_samples, steps, spec.n_x, spec.sigma_w)
        return delta_a, delta_b, w


@dataclass
class TrajectoryRecord:
    states: np.ndarray          # (N+1, n_x)
    inputs: np.ndarray          # (N, n_u)
    delta_a: np.ndarray         # (N, n_x, n_x)
    delta_b: np.ndarray         # (N, n_x, n_u)
    w: np.ndarray               # (N, n_x)
    slack_x: np.ndarray         # (N+1,) against the original state set
    slack_u: np.ndarray         # (N,)
    solve_ms: np.ndarray        # (N,)
    statuses: list
    status: str = "completed"
    failed_step: int | None = None

    @property
    def steps(self) -> int:
        return len(self.inputs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        n_x, n_u = self.states.shape[1], self.inputs.shape[1] if self.inputs.ndim == 2 else 1
        header = ["step"] + [f"x{i + 1}" for i in range(n_x)]
        header += ["u"] if n_u == 1 else [f"u{i + 1}" for i in range(n_u)]
        header += ["slack_x", "slack_u", "solve_ms", "status"]
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        for k in range(len(self.states)):
            x = list(self.states[k])
            if k < self.steps:
                u, su, ms, st = list(self.inputs[k]), self.slack_u[k], self.solve_ms[k], self.statuses[k]
            else:
                u, su, ms, st = [""] * n_u, "", "", self.status
            wr.writerow([k] + [repr(float(v)) for v in x]
                        + [v if v == "" else repr(float(v)) for v in u]
                        + [repr(float(self.slack_x[k])), su if su == "" else repr(float(su)),
                           ms if ms == "" else f"{ms:.3f}", st])
        return buf.getvalue()


def run_receding_horizon(spec, x0, steps: int, method: str = "sls",
                         sampler: ScenarioSampler | None = None, strict: bool = False,
                         settings=None) -> TrajectoryRecord:
    """Closed-loop simulation: solve the OCP, apply the first input, advance the true plant.

    The plant's (delta_A, delta_B) follow the sampler (held constant over the
    run unless the sampler is time varying). An infeasible OCP ends the run
    and is recorded in the returned status; with ``strict=True`` it raises
    MidRunInfeasible instead.
    """
    from . import sls, tube

    sampler = sampler or ScenarioSampler()
    method = method.lower()
    da, db, w = sampler.draw(spec, 1, steps)
    da, db, w = da[0], db[0], w[0]
    a_hat, b_hat = spec.system.a_hat, spec.system.b_hat

    if method in ("sls", "sls-diag"):
        from .model import FilterMode

        run_spec = spec.with_(filter_mode=FilterMode.DIAGONAL) if method == "sls-diag" else spec
        prob = sls.SlsProblem(run_spec)

        def policy(x):
            res, sol = sls.solve_ocp(run_spec, x, prob, settings)
            return res, (sls.first_input(sol) if sol is not None else None)
    elif method == "tube":
        tc = tube.build_tube_controller(spec)

        def policy(x):
            res = tube.tube_feasible(tc, spec, x, settings)
            return res, (tube.tube_first_input(tc, spec, x, res) if res.optimal else None)
    else:
        raise ValueError(f"unknown method {method!r}")

    xs = [np.asarray(x0, dtype=float).ravel()]
    us, times, statuses = [], [], []
    status, failed = "completed", None
    for k in range(steps):
        t0 = time.perf_counter()
        res, u = policy(xs[-1])
        times.append(1e3 * (time.perf_counter() - t0))
        statuses.append(res.status.value)
        if u is None:
            status, failed = f"infeasible:{res.status.value}", k
            times.pop()
            statuses.pop()
            if strict:
                raise MidRunInfeasible(k, res.status.value)
            break
        us.append(u)
        x = xs[-1]
        xs.append((a_hat + da[k]) @ x + (b_hat + db[k]) @ u + w[k])

    n = len(us)
    states = np.array(xs)
    inputs = np.array(us).reshape(n, spec.n_u)
    slack_x = np.min(spec.x_set.b - states @ spec.x_set.f.T, axis=1)
    slack_u = np.min(spec.u_set.b - inputs @ spec.u_set.f.T, axis=1) if n else np.zeros(0)
    return TrajectoryRecord(states, inputs, da[:n], db[:n], w[:n], slack_x, slack_u,
                            np.array(times), statuses, status, failed)
