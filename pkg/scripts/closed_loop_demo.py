"""Closed-loop runs of each controller from one initial state of the benchmark.

    python3 scripts/closed_loop_demo.py --x0 2.0,-1.0 --steps 20
"""
import argparse

import numpy as np

from rmpc import experiments as E
from rmpc.model import FilterMode, paper_benchmark
from rmpc.simulate import ScenarioSampler, run_receding_horizon


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--x0", default="2.0,-1.0")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    x0 = np.array([float(v) for v in args.x0.split(",")])
    spec = E.rci_terminal_spec(paper_benchmark())
    for method in ("sls", "sls-diag", "tube"):
        s = spec.with_(filter_mode=FilterMode.DIAGONAL) if method == "sls-diag" else spec
        rec = run_receding_horizon(s, x0, args.steps, method, ScenarioSampler(args.seed))
        print(f"{method:9s} status={rec.status:12s} final |x|={np.abs(rec.states[-1]).max():.3f} "
              f"min slack_x={rec.slack_x.min():.3f} mean solve={np.mean(rec.solve_ms):.1f} ms")


if __name__ == "__main__":
    main()
