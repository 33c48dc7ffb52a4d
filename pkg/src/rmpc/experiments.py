"""Experiment harness: RCI terminal sets, coverage grids and the random-system suite.

Reports are plain CSV plus a JSON sidecar that embeds the spec and its
content hash. Grid rows are always ordered by grid index, whatever order
the workers finish in.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInvariantSet, NotContractive, EmptyTightenedSet, RmpcError
from .model import FilterMode, OcpSpec, paper_benchmark, random_system
from .polytope import HPolytope, max_rci

METHODS = ("sls", "sls-diag", "tube")
EPS_A_SWEEP = tuple(round(0.05 * k, 2) for k in range(1, 9))
SIGMA_W_SWEEP = tuple(round(0.1 * k, 1) for k in range(1, 8))


def content_hash(text: str) -> str:
    """Git blob hash (sha1 over ``blob <len>\\0`` + bytes)."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def canonical_spec_json(spec: OcpSpec) -> str:
    return json.dumps(spec.to_json(), sort_keys=True, separators=(",", ":"))


def worker_count() -> int:
    """Worker processes, capped by RMPC_THREADS (default: all CPUs)."""
    n = os.cpu_count() or 1
    env = os.environ.get("RMPC_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            pass
    return max(1, n)


# ----------------------------------------------------------------------
# grids


def grid_points(region: HPolytope, n: int):
    """n x n grid over the region's bounding box and its membership mask.

    Rows are ordered x2-major (index = i * n + j with x1 = xs[j], x2 = ys[i]).
    A single grid point sits at the box center.
    """
    if region.dim != 2:
        raise ValueError("coverage grids are defined for 2-D state spaces")
    if n < 1:
        raise ValueError("grid size must be at least 1")
    lo, hi = region.bounding_box()

    def axis(a, b):
        return np.array([0.5 * (a + b)]) if n == 1 else np.linspace(a, b, n)

    xs, ys = axis(lo[0], hi[0]), axis(lo[1], hi[1])
    pts = np.array([(x, y) for y in ys for x in xs])
    inside = np.array([region.contains(p, tol=1e-9) for p in pts])
    return pts, inside


# ----------------------------------------------------------------------
# per-method evaluation


class _Evaluator:
    """Builds each method's x0-independent data once, then solves single points."""

    def __init__(self, spec: OcpSpec, methods):
        from . import sls, tube

        self.spec = spec
        self.methods = list(methods)
        self.sls_problems = {}
        self.tube_ctrl = None
        self.tube_error = None
        for m in self.methods:
            if m == "sls":
                s = spec.with_(filter_mode=FilterMode.FULL)
                self.sls_problems[m] = (s, sls.SlsProblem(s))
            elif m == "sls-diag":
                s = spec.with_(filter_mode=FilterMode.DIAGONAL)
                self.sls_problems[m] = (s, sls.SlsProblem(s))
            elif m == "tube":
                try:
                    self.tube_ctrl = tube.build_tube_controller(spec)
                except (EmptyTightenedSet, NotContractive, RmpcError) as exc:
                    self.tube_error = type(exc).__name__
            else:
                raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")

    def point(self, method: str, x0):
        """(status, feasible, objective, solve_seconds) for one initial state."""
        from . import sls, tube

        try:
            if method == "tube":
                if self.tube_ctrl is None:
                    return f"TubeUnavailable:{self.tube_error}", False, float("nan"), 0.0
                res = tube.tube_feasible(self.tube_ctrl, self.spec, x0)
                return res.status.value, res.optimal, res.objective, res.solve_time
            s, prob = self.sls_problems[method]
            t0 = time.perf_counter()
            res, sol = sls.solve_ocp(s, x0, prob)
            elapsed = time.perf_counter() - t0
            return res.status.value, sol is not None, res.objective, res.solve_time or elapsed
        except RmpcError as exc:
            return f"error:{type(exc).__name__}", False, float("nan"), 0.0


def _evaluate_chunk(args):
    spec_json, methods, points = args
    ev = _Evaluator(OcpSpec.from_json(spec_json), methods)
    return [[ev.point(m, x) for m in methods] for x in points]


def _evaluate(spec: OcpSpec, methods, points, workers: int):
    if len(points) == 0:
        return []
    if workers <= 1 or len(points) < 2:
        ev = _Evaluator(spec, methods)
        return [[ev.point(m, x) for m in methods] for x in points]
    chunks = np.array_split(np.arange(len(points)), min(workers, len(points)))
    spec_json = spec.to_json()
    jobs = [(spec_json, list(methods), [points[i] for i in c]) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_evaluate_chunk, jobs))
    return [row for part in parts for row in part]


# ----------------------------------------------------------------------
# coverage


@dataclass
class CoverageReport:
    spec: OcpSpec
    region: str
    grid: int
    methods: list
    points: np.ndarray              # (n*n, 2)
    in_region: np.ndarray           # (n*n,) bool
    status: dict                    # method -> list[str] (in-region points only; "" outside)
    feasible: dict                  # method -> (n*n,) bool
    objective: dict                 # method -> (n*n,) float
    solve_time: dict                # method -> (n*n,) seconds
    seeds: dict = field(default_factory=dict)

    @property
    def n_in_region(self) -> int:
        return int(self.in_region.sum())

    def coverage(self, method: str) -> float:
        return float(self.feasible[method][self.in_region].sum()) / self.n_in_region

    @property
    def tube_unavailable(self) -> str:
        """Reason the tube controller could not be built, or ''."""
        for s in self.status.get("tube", []):
            if s.startswith("TubeUnavailable:"):
                return s.split(":", 1)[1]
        return ""

    def mean_solve_time(self, method: str) -> float:
        t = self.solve_time[method][self.in_region]
        t = t[t > 0]
        return float(t.mean()) if t.size else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        header = ["index", "ix", "iy", "x1", "x2", "in_region"]
        for m in self.methods:
            header += [f"{m}_status", f"{m}_feasible", f"{m}_objective", f"{m}_solve_ms"]
        wr.writerow(header)
        n = self.grid
        for idx, p in enumerate(self.points):
            row = [idx, idx % n, idx // n, repr(float(p[0])), repr(float(p[1])), int(self.in_region[idx])]
            for m in self.methods:
                if self.in_region[idx]:
                    obj = self.objective[m][idx]
                    row += [self.status[m][idx], int(self.feasible[m][idx]),
                            "" if not np.isfinite(obj) else repr(float(obj)),
                            f"{1e3 * self.solve_time[m][idx]:.3f}"]
                else:
                    row += ["OutOfRegion", "", "", ""]
            wr.writerow(row)
        return buf.getvalue()

    def summary(self, timings: bool = True) -> dict:
        spec_text = canonical_spec_json(self.spec)
        out = {
            "region": self.region,
            "grid": self.grid,
            "methods": list(self.methods),
            "n_points": int(len(self.points)),
            "n_in_region": self.n_in_region,
            "coverage": {m: self.coverage(m) for m in self.methods},
            "n_feasible": {m: int(self.feasible[m][self.in_region].sum()) for m in self.methods},
            "seeds": dict(self.seeds),
            "spec_hash": content_hash(spec_text),
            "spec_fingerprint": self.spec.fingerprint(),
            "spec": json.loads(spec_text),
        }
        if timings:
            out["mean_solve_s"] = {m: self.mean_solve_time(m) for m in self.methods}
        return out


def rci_terminal_spec(spec: OcpSpec, rci: HPolytope | None = None) -> OcpSpec:
    """Spec with its terminal set replaced by the maximal RCI set."""
    return spec.with_(terminal_set=rci if rci is not None else max_rci(spec))


def coverage(spec: OcpSpec, grid: int = 15, region: str = "terminal", methods=("sls", "tube"),
             workers: int | None = None, seeds: dict | None = None) -> CoverageReport:
    """Fraction of in-region grid points where each method's robust OCP is feasible.

    ``region="terminal"`` grids the spec's terminal set (pass a spec whose
    terminal set is the RCI set, e.g. from :func:`rci_terminal_spec`);
    ``region="state"`` grids the state set.
    """
    region = region.lower().replace("set", "").strip("_- ")
    if region not in ("terminal", "state"):
        raise ValueError("region must be 'terminal' or 'state'")
    methods = [m.strip().lower() for m in methods]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    poly = spec.terminal_set if region == "terminal" else spec.x_set
    if poly.is_empty():
        raise ValueError(f"{region} region is empty; coverage is undefined")
    pts, inside = grid_points(poly, grid)
    if not inside.any():
        raise ValueError(f"no grid point lies in the {region} region; coverage is undefined")
    idx = np.flatnonzero(inside)
    rows = _evaluate(spec, methods, [pts[i] for i in idx], worker_count() if workers is None else workers)

    n = len(pts)
    status = {m: [""] * n for m in methods}
    feas = {m: np.zeros(n, dtype=bool) for m in methods}
    obj = {m: np.full(n, np.nan) for m in methods}
    st = {m: np.zeros(n) for m in methods}
    for i, per_method in zip(idx, rows):
        for m, (s, f, o, t) in zip(methods, per_method):
            status[m][i], feas[m][i], obj[m][i], st[m][i] = s, f, o, t
    return CoverageReport(spec, region, grid, methods, pts, inside, status, feas, obj, st,
                          dict(seeds or {}))


def benchmark_coverage(eps_a=0.1, eps_b=0.1, sigma_w=0.1, grid=15, methods=("sls", "tube"),
                       workers=None) -> CoverageReport:
    """Terminal-set coverage of the 2-D benchmark with the RCI set as terminal set."""
    spec = rci_terminal_spec(paper_benchmark(eps_a=eps_a, eps_b=eps_b, sigma_w=sigma_w))
    return coverage(spec, grid, "terminal", methods, workers)


def sweep(kind: str, grid: int = 15, methods=("sls", "tube"), workers=None):
    """Coverage sweep over eps_A (``kind="eps_a"``) or sigma_w (``kind="sigma_w"``).

    Returns a list of ``(setting, CoverageReport | None, error)`` where the
    setting is the (eps_a, eps_b, sigma_w) triple. An empty RCI set yields
    a ``None`` report with the error name.
    """
    if kind == "eps_a":
        settings = [(e, 0.1, 0.1) for e in EPS_A_SWEEP]
    elif kind == "sigma_w":
        settings = [(0.1, 0.1, s) for s in SIGMA_W_SWEEP]
    else:
        raise ValueError("kind must be 'eps_a' or 'sigma_w'")
    out = []
    for setting in settings:
        try:
            out.append((setting, benchmark_coverage(*setting, grid=grid, methods=methods,
                                                    workers=workers), ""))
        except (EmptyInvariantSet, ValueError) as exc:
            out.append((setting, None, type(exc).__name__))
    return out


def sweep_csv(results, methods=("sls", "tube")) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["eps_a", "eps_b", "sigma_w", "n_in_region"] + [f"{m}_coverage" for m in methods]
                + [f"{m}_mean_solve_s" for m in methods] + ["error"])
    for (ea, eb, sw), rep, err in results:
        if rep is None:
            wr.writerow([ea, eb, sw, 0] + [""] * (2 * len(methods)) + [err])
        else:
            wr.writerow([ea, eb, sw, rep.n_in_region] + [f"{rep.coverage(m):.6f}" for m in methods]
                        + [f"{rep.mean_solve_time(m):.6f}" for m in methods] + [""])
    return buf.getvalue()


# ----------------------------------------------------------------------
# random suite


SUMMARY_COLUMNS = ("seed", "spectral_radius", "resamples", "n_in_region", "sls_coverage",
                   "tube_coverage", "status")
TIMING_COLUMNS = ("seed", "sls_mean_solve_s", "tube_mean_solve_s")


@dataclass
class SuiteResult:
    rows: list          # dicts with SUMMARY_COLUMNS keys, sorted ascending in sls_coverage
    timings: list       # dicts with TIMING_COLUMNS keys, in the same order
    reports: dict       # seed -> CoverageReport (missing for failed systems)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(SUMMARY_COLUMNS)
        for r in self.rows:
            wr.writerow([r["seed"], f"{r['spectral_radius']:.12g}", r["resamples"], r["n_in_region"],
                         f"{r['sls_coverage']:.6f}", f"{r['tube_coverage']:.6f}", r["status"]])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(TIMING_COLUMNS)
        for r in self.timings:
            wr.writerow([r["seed"], f"{r['sls_mean_solve_s']:.6f}", f"{r['tube_mean_solve_s']:.6f}"])
        return buf.getvalue()


def random_suite(count: int = 50, base_seed: int = 0, grid: int = 15, workers=None,
                 progress=None) -> SuiteResult:
    """State-set coverage of ``count`` random systems seeded base_seed, base_seed+1, ...

    A system whose evaluation fails is recorded with zero coverage and the
    error name in ``status``; the suite carries on.
    """
    rows, timings, reports = [], [], {}
    for seed in range(base_seed, base_seed + count):
        spec = random_system(seed)
        row = {"seed": seed, "spectral_radius": float(spec.meta.get("spectral_radius", np.nan)),
               "resamples": int(spec.meta.get("resamples", 0)), "n_in_region": 0,
               "sls_coverage": 0.0, "tube_coverage": 0.0, "status": "ok"}
        tim = {"seed": seed, "sls_mean_solve_s": float("nan"), "tube_mean_solve_s": float("nan")}
        try:
            rep = coverage(spec, grid, "state", ("sls", "tube"), workers, seeds={"system": seed})
            reports[seed] = rep
            row.update(n_in_region=rep.n_in_region, sls_coverage=rep.coverage("sls"),
                       tube_coverage=rep.coverage("tube"))
            if rep.tube_unavailable:
                row["status"] = f"tube:{rep.tube_unavailable}"
            tim.update(sls_mean_solve_s=rep.mean_solve_time("sls"),
                       tube_mean_solve_s=rep.mean_solve_time("tube"))
        except (RmpcError, ValueError) as exc:
            row["status"] = f"error:{type(exc).__name__}"
        rows.append(row)
        timings.append(tim)
        if progress is not None:
            progress(row)
    order = sorted(range(len(rows)), key=lambda i: (rows[i]["sls_coverage"], rows[i]["seed"]))
    return SuiteResult([rows[i] for i in order], [timings[i] for i in order], reports)
