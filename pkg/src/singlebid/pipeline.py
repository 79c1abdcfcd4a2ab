"""In-process pipeline, for experiments that should not go through files."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import dedpul, explain, features, ingest, ntc
from .config import RunConfig


@dataclass
class PipelineResult:
    report: ingest.CleaningReport
    auctions: list[ingest.Auction]
    instances: pd.DataFrame
    scores: np.ndarray  # out-of-fold, aligned with ``instances``
    posterior: dedpul.PosteriorResult
    tree: explain.CartTree | None  # None when the cluster is empty or everything
    paths: explain.PathReport | None

    @property
    def single(self) -> pd.DataFrame:
        return self.instances[self.instances["s"] == 0].reset_index(drop=True)


def run(records: list[ingest.BidRecord], cfg: RunConfig | None = None) -> PipelineResult:
    cfg = cfg or RunConfig()
    kept, report = ingest.clean(records, cfg.cleaning())
    auctions, _ = ingest.group_auctions(kept)
    instances = features.compute_features(auctions, cfg.feature_config())
    X = features.model_matrix(instances)
    s = instances["s"].to_numpy()
    scores = ntc.cross_val_scores(X, s, cfg.ntc_params(), k=cfg.folds, seed=cfg.seed, threads=cfg.threads)
    post = dedpul.run(scores, s, q=cfg.quantile, bandwidth=cfg.kde_bandwidth(), threshold=cfg.threshold)
    labels = explain.label_cluster(post.posteriors, cfg.threshold)
    tree = paths = None
    if 0 < labels.sum() < len(labels):
        tree = explain.fit_tree(X[s == 0], labels, cfg.cart_params(), features.MODEL_FEATURES)
        paths = explain.extract_paths(tree)
    return PipelineResult(report, auctions, instances, scores, post, tree, paths)
