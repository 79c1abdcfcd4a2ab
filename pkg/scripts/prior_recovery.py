"""Prior recovery and ranking quality of the full pipeline on synthetic data.

    python3 scripts/prior_recovery.py --seeds 0 1 2 3 4
"""
import argparse
import time

from sklearn.metrics import roc_auc_score

from singlebid import explain, pipeline, synth
from singlebid.config import RunConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--auctions", type=int, default=synth.ScenarioConfig.n_auctions)
    parser.add_argument("--scenario", choices=("default", "oneday"), default="default")
    args = parser.parse_args()

    print("seed  bids   alpha_true  alpha_star  alpha_em  cluster  auc     seconds")
    for seed in args.seeds:
        t0 = time.perf_counter()
        if args.scenario == "oneday":
            scenario = synth.oneday_scenario(n_auctions=args.auctions, seed=seed)
        else:
            scenario = synth.ScenarioConfig(n_auctions=args.auctions, seed=seed)
        records, truth = synth.generate(scenario)
        result = pipeline.run(records, RunConfig(seed=seed))
        post = result.posterior
        corrupt = result.single["auction_id"].map(truth.corrupt)
        auc = roc_auc_score(corrupt, post.posteriors)
        cluster = explain.label_cluster(post.posteriors).mean()
        print(f"{seed:<5d} {len(records):<6d} {truth.alpha_true:<11.4f} {post.alpha_star:<11.4f} "
              f"{post.alpha_em:<9.4f} {cluster:<8.4f} {auc:<7.4f} {time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
