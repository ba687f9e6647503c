"""Print the first two rows of the initial PCA, PLS and PPLS bases.

The bases are fitted to the 20-D constrained illustrative problem sampled
either with the 24-run Plackett-Burman design or with a seeded Latin
hypercube of the same size.

Usage::

    python scripts/initial_bases.py [--seed 0]
"""

import argparse

import numpy as np

from redspace.benchmarks import get_benchmark
from redspace.doe import Dataset, latin_hypercube, plackett_burman
from redspace.ppls import em_fit
from redspace.reduction import nipals_fit, pca_fit


def bases(S, problem, d_z=2):
    Y = np.array([problem.evaluate(s) for s in S])
    data = Dataset(S, Y)
    return {
        "PCA": pca_fit(data, d_z),
        "PLS": nipals_fit(data, d_z).W,
        "PPLS": em_fit(data, d_z, n_t=100).W,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="seed of the Latin hypercube design")
    args = parser.parse_args()

    problem = get_benchmark("illustrative-constrained").problem
    pbd = plackett_burman(problem.domain)
    designs = {"PBD": pbd, "LHS": latin_hypercube(len(pbd), problem.domain, args.seed)}
    for name, S in designs.items():
        print(f"{name} ({len(S)} runs)")
        for method, W in bases(S, problem).items():
            rows = "  ".join("[" + ", ".join(f"{v:+.3f}" for v in W[i]) + "]" for i in range(2))
            print(f"  {method:5s} {rows}")


if __name__ == "__main__":
    main()
