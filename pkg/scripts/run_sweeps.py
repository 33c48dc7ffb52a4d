"""Coverage sweeps over eps_A and sigma_w on the 2-D benchmark.

Writes sweep_eps_a.csv and sweep_sigma_w.csv into the output directory and
prints one line per setting.

    python3 scripts/run_sweeps.py --out results/sweeps --methods sls,sls-diag,tube
"""
import argparse
import time
from pathlib import Path

from rmpc import experiments as E


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="results/sweeps")
    p.add_argument("--grid", type=int, default=15)
    p.add_argument("--methods", default="sls,tube")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--only", choices=("eps_a", "sigma_w"), default=None)
    args = p.parse_args()

    methods = tuple(args.methods.split(","))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in ("eps_a", "sigma_w"):
        if args.only and kind != args.only:
            continue
        t0 = time.perf_counter()
        results = E.sweep(kind, grid=args.grid, methods=methods, workers=args.workers)
        (out / f"sweep_{kind}.csv").write_text(E.sweep_csv(results, methods))
        for setting, rep, err in results:
            if rep is None:
                print(f"{kind} {setting}: {err}")
                continue
            covs = "  ".join(f"{m}={rep.coverage(m):.3f}" for m in methods)
            print(f"{kind} {setting}: {covs}  ({rep.n_in_region} points)")
        print(f"{kind} sweep took {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
