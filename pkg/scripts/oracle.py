"""Two-Gaussian PU oracle: estimated prior and posteriors against the closed form.

Positives are N(mu, 1); unlabelled instances mix positives with negatives
N(-mu, 1) at rate alpha. Scores are either the logistic map of x (a perfect
score) or out-of-fold scores of the boosted classifier.

    python3 scripts/oracle.py --alpha 0.3 0.5 0.8 --mu 1.0 --classifier
"""
import argparse

import numpy as np
from scipy import stats

from singlebid import dedpul, ntc


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--alpha", type=float, nargs="+", default=[0.5])
    parser.add_argument("--mu", type=float, nargs="+", default=[1.0])
    parser.add_argument("-n", type=int, default=50_000)
    parser.add_argument("--reps", type=int, default=3)
    parser.add_argument("--classifier", action="store_true", help="also score with the boosted classifier")
    args = parser.parse_args()

    kinds = ["logistic", "classifier"] if args.classifier else ["logistic"]
    print("alpha  mu    score       rep  true_inf  alpha_star  alpha_em  posterior_mae")
    for alpha in args.alpha:
        for mu in args.mu:
            grid = np.linspace(-12, 12, 200_001)
            ratio = alpha + (1 - alpha) * stats.norm.pdf(grid, -mu) / stats.norm.pdf(grid, mu)
            true_inf = ratio.min()
            for rep in range(args.reps):
                rng = np.random.default_rng(rep)
                n = args.n // 2
                x_pos = rng.normal(mu, 1, n)
                x_unl = np.where(rng.random(n) < alpha, rng.normal(mu, 1, n), rng.normal(-mu, 1, n))
                x = np.r_[x_pos, x_unl]
                labels = np.r_[np.ones(n), np.zeros(n)]
                f_pos, f_neg = stats.norm.pdf(x_unl, mu), stats.norm.pdf(x_unl, -mu)
                true_post = (1 - alpha) * f_neg / (alpha * f_pos + (1 - alpha) * f_neg)
                for kind in kinds:
                    if kind == "logistic":
                        scores = stats.logistic.cdf(x)
                    else:
                        scores = ntc.cross_val_scores(x.reshape(-1, 1), labels, seed=rep)
                    res = dedpul.run(scores, labels)
                    mae = np.abs(res.posteriors - true_post).mean()
                    print(f"{alpha:<6.2f} {mu:<5.2f} {kind:<11s} {rep:<4d} {true_inf:<9.4f} "
                          f"{res.alpha_star:<11.4f} {res.alpha_em:<9.4f} {mae:.4f}")


if __name__ == "__main__":
    main()
