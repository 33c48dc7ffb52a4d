"""Command-line entry point ``rmpc``.

Subcommands: ``spec`` (write a benchmark or random spec), ``rci``,
``coverage``, ``random-suite`` and ``simulate``. Exit code 2 marks an
empty invariant set or an otherwise infeasible request; 1 marks bad input.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as E
from .errors import EmptyInvariantSet, NotConverged, RmpcError
from .model import OcpSpec, paper_benchmark, random_system
from .polytope import HPolytope, max_rci
from .simulate import ScenarioSampler, run_receding_horizon


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_spec(path: str) -> OcpSpec:
    return OcpSpec.from_json(Path(path))


def cmd_spec(args) -> int:
    if args.random_seed is not None:
        spec = random_system(args.random_seed)
    else:
        spec = paper_benchmark(eps_a=args.eps_a, eps_b=args.eps_b, sigma_w=args.sigma_w,
                               horizon=args.horizon)
    _write(Path(args.out), _dump_json(spec.to_json()))
    return 0


def cmd_rci(args) -> int:
    spec = _load_spec(args.spec)
    try:
        c = max_rci(spec, tol=args.tol, max_iter=args.max_iter)
    except EmptyInvariantSet as exc:
        print(f"EmptyInvariantSet: {exc}", file=sys.stderr)
        return 2
    except NotConverged as exc:
        print(f"NotConverged: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    _write(out / "rci.json", _dump_json(c.to_json()))
    _write(out / "rci_vertices.csv", c.vertices().to_csv())
    print(f"RCI set with {c.n_constraints} facets written to {out}")
    return 0


def _terminal_spec(spec: OcpSpec, rci_file: str | None, out: Path) -> OcpSpec:
    candidates = [Path(rci_file)] if rci_file else [out / "rci.json"]
    for path in candidates:
        if path.exists():
            return spec.with_(terminal_set=HPolytope.from_json(json.loads(path.read_text())))
    if rci_file:
        raise FileNotFoundError(rci_file)
    c = max_rci(spec)
    _write(out / "rci.json", _dump_json(c.to_json()))
    _write(out / "rci_vertices.csv", c.vertices().to_csv())
    return spec.with_(terminal_set=c)


def cmd_coverage(args) -> int:
    spec = _load_spec(args.spec)
    out = Path(args.out)
    region = args.region
    try:
        if region == "terminal":
            spec = _terminal_spec(spec, args.rci, out)
        rep = E.coverage(spec, args.grid, region, args.methods.split(","), args.workers)
    except EmptyInvariantSet as exc:
        print(f"EmptyInvariantSet: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _write(out / "coverage.csv", rep.to_csv())
    _write(out / "coverage_summary.json", _dump_json(rep.summary()))
    for m in rep.methods:
        print(f"{m}: coverage {rep.coverage(m):.4f} over {rep.n_in_region} points, "
              f"mean solve {rep.mean_solve_time(m):.4f} s")
    return 0


def cmd_random_suite(args) -> int:
    out = Path(args.out)

    def progress(row):
        print(f"seed {row['seed']}: sls {row['sls_coverage']:.3f} tube {row['tube_coverage']:.3f} "
              f"({row['status']})", flush=True)

    res = E.random_suite(args.count, args.seed, args.grid, args.workers,
                         progress=None if args.quiet else progress)
    _write(out / "summary.csv", res.summary_csv())
    _write(out / "timing.csv", res.timing_csv())
    for seed, rep in sorted(res.reports.items()):
        _write(out / "systems" / f"seed_{seed}.csv", rep.to_csv())
        _write(out / "systems" / f"seed_{seed}.json", _dump_json(rep.summary(timings=False)))
    dominated = sum(r["sls_coverage"] >= r["tube_coverage"] for r in res.rows)
    print(f"{len(res.rows)} systems; sls >= tube on {dominated}")
    return 0


def cmd_simulate(args) -> int:
    spec = _load_spec(args.spec)
    x0 = np.array([float(v) for v in args.x0.split(",")])
    if x0.size != spec.n_x or not np.all(np.isfinite(x0)):
        print(f"error: --x0 needs {spec.n_x} finite values", file=sys.stderr)
        return 1
    sampler = ScenarioSampler(args.seed, args.delta_mode, args.w_mode)
    rec = run_receding_horizon(spec, x0, args.steps, args.method, sampler)
    out = Path(args.out)
    _write(out / "trajectory.csv", rec.to_csv())
    print(f"{rec.steps} steps, status {rec.status}, min state slack {rec.slack_x.min():.4g}")
    return 0 if rec.status == "completed" else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rmpc", description="Robust MPC via filtered system level synthesis.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spec", help="write a benchmark or random-system spec JSON")
    s.add_argument("--eps-a", type=float, default=0.1)
    s.add_argument("--eps-b", type=float, default=0.1)
    s.add_argument("--sigma-w", type=float, default=0.1)
    s.add_argument("--horizon", type=int, default=10)
    s.add_argument("--random-seed", type=int, default=None, help="write random_system(seed) instead")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spec)

    s = sub.add_parser("rci", help="maximal robust control invariant set")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int, default=200)
    s.set_defaults(func=cmd_rci)

    s = sub.add_parser("coverage", help="feasibility coverage over a grid of initial states")
    s.add_argument("--spec", required=True)
    s.add_argument("--grid", type=int, default=15)
    s.add_argument("--region", choices=("terminal", "state"), default="terminal")
    s.add_argument("--methods", default="sls,tube")
    s.add_argument("--rci", default=None, help="RCI JSON to use as terminal set (default: OUT/rci.json or computed)")
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_coverage)

    s = sub.add_parser("random-suite", help="state-set coverage on random 2-D systems")
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", type=int, default=15)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--quiet", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_random_suite)

    s = sub.add_parser("simulate", help="closed-loop receding-horizon simulation")
    s.add_argument("--spec", required=True)
    s.add_argument("--x0", required=True, help="comma-separated initial state")
    s.add_argument("--steps", type=int, default=20)
    s.add_argument("--method", choices=("sls", "sls-diag", "tube"), default="sls")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--delta-mode", default="uniform_convex",
                   choices=("vertex_only", "uniform_convex", "time_varying_uniform"))
    s.add_argument("--w-mode", default="uniform", choices=("uniform", "corners"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (RmpcError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, RmpcError) else 1


if __name__ == "__main__":
    sys.exit(main())
