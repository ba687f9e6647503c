"""Iterations-to-target on the unconstrained cantilever cost functions.

Each method starts from the 8-run Plackett-Burman design and stops as soon
as its incumbent falls below the target. Runs that never reach it count as
``n_k`` iterations in the mean.

Usage::

    python scripts/run_cantilever.py --variant periodic --out results/cantilever
"""

import argparse

import numpy as np

from redspace.benchmarks import get_benchmark
from redspace.cli import iterations_to_target, parse_config, run_experiment
from redspace.optimizer import Trace

METHODS = ["PPLS-BO", "PLS-BO", "PCA-BO", "BO"]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--variant", choices=["step", "periodic"], default="periodic")
    parser.add_argument("--out", default="results/cantilever")
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--n-k", type=int, default=100)
    parser.add_argument("--n-l", type=int, default=200)
    parser.add_argument("--d-z", type=int, default=3)
    parser.add_argument("--acquisitions", nargs="+", default=["UCB", "EI"], choices=["UCB", "EI"])
    parser.add_argument("--methods", nargs="+", default=["PPLS-BO", "PLS-BO", "BO"], choices=METHODS)
    parser.add_argument("--parallelism", type=int, default=None)
    args = parser.parse_args()

    spec = get_benchmark(f"cantilever-{args.variant}-unconstrained")
    seeds = list(range(args.seeds))
    print(f"{spec.name}: target {spec.target}, constraint omitted ({spec.flags['constraint_omitted']})")
    for kind in args.acquisitions:
        config = parse_config({
            "benchmark": spec.name,
            "methods": args.methods,
            "seeds": seeds,
            "defaults": {"d_z": args.d_z, "n_k": args.n_k, "n_l": args.n_l,
                         "init": {"pbd": True, "n_lhs": 0}, "acquisition": {"kind": kind},
                         "stop_below": spec.target},
        })
        out, ok = run_experiment(config, f"{args.out}/{args.variant}_{kind}", args.parallelism)
        for m in args.methods:
            counts = []
            for s in seeds:
                k = iterations_to_target(Trace.read_csv(out / f"trace_{m}_seed{s}.csv"), spec.target)
                counts.append(args.n_k if k is None else k)
            counts = np.array(counts, dtype=float)
            print(f"{kind:3s} {m:8s} mean {counts.mean():6.1f} ({counts.std():.1f})  per seed {counts.astype(int).tolist()}")
        if not ok:
            print("some runs failed; see manifest.json")


if __name__ == "__main__":
    main()
