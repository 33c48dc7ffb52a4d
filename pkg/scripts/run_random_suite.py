"""Random-system coverage suite; thin wrapper over ``rmpc random-suite``.

    python3 scripts/run_random_suite.py --count 50 --out results/random
"""
import sys

from rmpc.cli import main

if __name__ == "__main__":
    sys.exit(main(["random-suite"] + sys.argv[1:]))
