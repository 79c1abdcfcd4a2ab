"""Class-1 paths of the explanation tree on the one-day-firm scenario.

    python3 scripts/oneday_paths.py --seeds 0 1 2
"""
import argparse

from singlebid import explain, pipeline, synth
from singlebid.config import RunConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--depth", type=int, default=4)
    parser.add_argument("--min-leaf", type=int, default=100)
    args = parser.parse_args()

    for seed in args.seeds:
        records, _ = synth.generate(synth.oneday_scenario(seed=seed))
        result = pipeline.run(records, RunConfig(seed=seed, tree_depth=args.depth, tree_min_leaf=args.min_leaf))
        print(f"seed {seed}: alpha_star {result.posterior.alpha_star:.4f}, "
              f"cluster {explain.label_cluster(result.posterior.posteriors).mean():.4f}")
        if result.paths is None:
            print("  no tree (cluster empty or complete)")
            continue
        for path in result.paths.paths:
            print(f"  {path.describe()}  [n={path.coverage}, precision {path.precision:.3f}]")


if __name__ == "__main__":
    main()
