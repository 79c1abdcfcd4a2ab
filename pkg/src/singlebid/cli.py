"""Command-line pipeline: one subcommand per stage, artifacts in one output directory.

Each stage reads the previous stage's files from the output directory, keeps
its own outputs in memory and only then moves them into place (temp file and
rename), so a failing stage leaves nothing half-written. ``MANIFEST.txt``
records every artifact's SHA-256 together with the hash of the config that
produced it.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

from . import config as configmod
from . import dedpul, explain, features, ingest, ntc, synth
from .config import ConfigError, RunConfig

logger = logging.getLogger("singlebid")

STAGES = ("clean", "features", "train", "dedpul", "explain", "synth", "report", "all")
PIPELINE = ("clean", "features", "train", "dedpul", "explain", "report")
LOCK_NAME = ".singlebid.lock"
MANIFEST = "MANIFEST.txt"


class StageError(RuntimeError):
    pass


# -- artifact handling ----------------------------------------------------------------


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _read_manifest(path: Path) -> dict[str, tuple[str, str]]:
    entries = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines()[1:]:
            name, digest, config_hash = line.split("\t")
            entries[name] = (digest, config_hash)
    return entries


def commit(cfg: RunConfig, outputs: dict[str, str | bytes]) -> None:
    """Move a finished stage's outputs into the output directory."""
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    blobs = {name: data.encode("utf-8") if isinstance(data, str) else data for name, data in outputs.items()}
    blobs["config.txt"] = cfg.dumps(hashed_only=True).encode("utf-8")
    manifest = _read_manifest(out / MANIFEST)
    for name in sorted(blobs):
        _atomic_write(out / name, blobs[name])
        manifest[name] = (hashlib.sha256(blobs[name]).hexdigest(), cfg.digest())
    text = "artifact\tsha256\tconfig_hash\n" + "".join(
        f"{name}\t{digest}\t{h}\n" for name, (digest, h) in sorted(manifest.items())
    )
    _atomic_write(out / MANIFEST, text.encode("utf-8"))


@contextmanager
def output_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(f"{lock} exists: another run is using {out} (remove the file if that run died)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _need(path: Path) -> Path:
    if not path.exists():
        raise StageError(f"missing input {path}")
    return path


def _csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")


def _kv(pairs) -> str:
    return "".join(f"{k}\t{v}\n" for k, v in pairs)


def _read_kv(path: Path) -> dict[str, str]:
    return dict(line.split("\t", 1) for line in _need(path).read_text(encoding="utf-8").splitlines() if line)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# -- stages -----------------------------------------------------------------------


def stage_synth(cfg: RunConfig) -> dict[str, str]:
    if cfg.synth_scenario == "oneday":
        scenario = synth.oneday_scenario(n_auctions=cfg.synth_auctions, seed=cfg.seed)
    else:
        scenario = synth.ScenarioConfig(n_auctions=cfg.synth_auctions, seed=cfg.seed)
    bids, truth = synth.generate(scenario)
    gt = io.StringIO()
    truth.write(gt)
    print(f"synth: {len(bids)} bids in {len(truth.regime)} auctions, alpha_true {truth.alpha_true:.4f}")
    return {"bids.csv": ingest.bids_to_csv(bids), "ground_truth.csv": gt.getvalue()}


def stage_clean(cfg: RunConfig) -> dict[str, str]:
    try:
        records, diagnostics = ingest.parse_bids(_need(cfg.input_path))
    except ingest.IngestError as exc:
        raise StageError(str(exc)) from None
    kept, report = ingest.clean(records, cfg.cleaning())
    buf = io.StringIO()
    ingest.write_cleaning_report(report, buf)
    diag = io.StringIO()
    writer = csv.writer(diag, lineterminator="\n")
    writer.writerow(("row", "cause"))
    writer.writerows((d.row, d.cause) for d in diagnostics)
    print(f"clean: {len(diagnostics)} unparseable rows, {report.input_count} parsed, "
          f"{report.total_rejected} rejected, {report.retained_count} retained")
    return {"clean_bids.csv": ingest.bids_to_csv(kept), "cleaning_report.csv": buf.getvalue(),
            "parse_diagnostics.csv": diag.getvalue()}


def _auctions(cfg: RunConfig):
    records, diagnostics = ingest.parse_bids(_need(cfg.out_dir / "clean_bids.csv"))
    if diagnostics:
        raise StageError(f"clean_bids.csv has {len(diagnostics)} unparseable rows")
    auctions, dropped = ingest.group_auctions(records)
    return auctions, dropped


def stage_features(cfg: RunConfig) -> dict[str, str]:
    auctions, dropped = _auctions(cfg)
    if not auctions:
        raise StageError("no auctions left after cleaning")
    instances = features.compute_features(auctions, cfg.feature_config())
    table = features.summarize(instances, auctions)
    print(f"features: {len(instances)} instances from {len(auctions)} auctions "
          f"({len(dropped)} dropped), single-bidder rate {features.single_bidder_rate(auctions):.4f}")
    stats = table.stats.reset_index()
    return {
        "features.csv": _csv(instances),
        "summary.csv": _csv(stats),
        "yearly_rates.csv": _csv(table.yearly),
        "group_diagnostics.txt": "".join(f"{d}\n" for d in dropped),
    }


def stage_train(cfg: RunConfig) -> dict[str, str]:
    instances = features.read_features(_need(cfg.out_dir / "features.csv"))
    X = features.model_matrix(instances)
    s = instances["s"].to_numpy()
    params = cfg.ntc_params()
    try:
        scores = ntc.cross_val_scores(X, s, params, k=cfg.folds, seed=cfg.seed, threads=cfg.threads)
        model = ntc.fit(X, s, params, seed=cfg.seed)
    except ntc.DegenerateTrainingSet as exc:
        raise StageError(str(exc)) from None
    frame = instances[["auction_id", "firm_id", "s"]].copy()
    frame["score"] = scores
    print(f"train: {len(s)} instances, {int(s.sum())} labelled, {cfg.folds}-fold out-of-fold scores")
    return {"scores.csv": _csv(frame), "ntc_model.txt": ntc.dumps(model)}


def stage_dedpul(cfg: RunConfig) -> dict[str, str]:
    frame = pd.read_csv(_need(cfg.out_dir / "scores.csv"), dtype={"auction_id": str, "firm_id": str})
    s = frame["s"].to_numpy()
    try:
        res = dedpul.run(frame["score"].to_numpy(), s, q=cfg.quantile,
                         bandwidth=cfg.kde_bandwidth(), threshold=cfg.threshold)
    except dedpul.DegenerateScores as exc:
        raise StageError(str(exc)) from None
    post = frame.loc[s == 0, ["auction_id", "firm_id", "score"]].copy()
    post["ratio"] = res.ratios
    post["posterior"] = res.posteriors
    summary = _kv([
        ("alpha_star", repr(res.alpha_star)),
        ("alpha_em", repr(res.alpha_em)),
        ("em_converged", str(res.em_converged).lower()),
        ("quantile", repr(cfg.quantile)),
        ("bandwidth", repr(res.pos_density.bandwidth)),
        ("positive_density_integral", repr(res.pos_density.integral())),
        ("unlabelled_density_integral", repr(res.unl_density.integral())),
        ("cluster_threshold", repr(res.threshold)),
        ("cluster_mass", repr(res.cluster_mass)),
        ("n_labelled", str(int((s == 1).sum()))),
        ("n_unlabelled", str(int((s == 0).sum()))),
    ])
    print(f"dedpul: alpha_star {_fmt(res.alpha_star)}, alpha_em {_fmt(res.alpha_em)}, "
          f"cluster mass {_fmt(res.cluster_mass)}")
    return {"posteriors.csv": _csv(post), "dedpul_summary.txt": summary}


def _read_posteriors(cfg: RunConfig) -> pd.DataFrame:
    path = _need(cfg.out_dir / "posteriors.csv")
    try:
        post = pd.read_csv(path, dtype={"auction_id": str, "firm_id": str})
    except pd.errors.EmptyDataError:
        raise StageError(f"{path} is empty") from None
    if len(post) == 0:
        raise StageError(f"{path} holds no posteriors")
    return post


def stage_explain(cfg: RunConfig) -> dict[str, str]:
    instances = features.read_features(_need(cfg.out_dir / "features.csv"))
    post = _read_posteriors(cfg)
    single = instances[instances["s"] == 0].reset_index(drop=True)
    if len(single) != len(post) or not (
        (single["auction_id"].to_numpy() == post["auction_id"].to_numpy()).all()
        and (single["firm_id"].to_numpy() == post["firm_id"].to_numpy()).all()
    ):
        raise StageError("posteriors.csv does not match the single-bidder rows of features.csv")
    X = features.model_matrix(single)
    y = explain.label_cluster(post["posterior"].to_numpy(), cfg.threshold)
    params = cfg.cart_params()
    try:
        tree = explain.fit_tree(X, y, params, features.MODEL_FEATURES)
    except explain.SingleClassError:
        raise StageError(f"every single-bidder instance falls on one side of the {cfg.threshold} threshold") from None
    paths = explain.extract_paths(tree)
    train = explain.evaluate_tree(tree, X, y)

    rows = [("instances", len(y)), ("cluster", int(y.sum())),
            ("train_accuracy", repr(train.accuracy)),
            ("train_precision_1", repr(train.precision[1])), ("train_recall_1", repr(train.recall[1]))]
    fit_idx, test_idx = explain.holdout_split(len(y), cfg.holdout_fraction, cfg.seed)
    try:
        held = explain.evaluate_tree(explain.fit_tree(X[fit_idx], y[fit_idx], params, features.MODEL_FEATURES),
                                     X[test_idx], y[test_idx])
        rows += [("holdout_fraction", repr(cfg.holdout_fraction)), ("holdout_accuracy", repr(held.accuracy)),
                 ("holdout_precision_1", repr(held.precision[1])), ("holdout_recall_1", repr(held.recall[1]))]
    except explain.SingleClassError:
        rows += [("holdout_accuracy", "n/a")]
    rows += [("paths", len(paths.paths))]
    buf = io.StringIO()
    paths.write_csv(buf)
    print(f"explain: depth {tree.depth}, {len(paths.paths)} class-1 paths, train accuracy {_fmt(train.accuracy)}")
    return {"tree.dot": explain.to_dot(tree), "tree.txt": explain.to_text(tree), "paths.csv": buf.getvalue(),
            "explain_summary.txt": _kv(rows)}


def top_suspicious(post: pd.DataFrame, n: int) -> pd.DataFrame:
    """Best instance per auction, ranked by posterior (desc) then ratio (asc)."""
    ranked = post.sort_values(["posterior", "ratio", "auction_id", "firm_id"],
                              ascending=[False, True, True, True], kind="mergesort")
    ranked = ranked.drop_duplicates("auction_id").head(n).reset_index(drop=True)
    ranked.insert(0, "rank", np.arange(1, len(ranked) + 1))
    return ranked[["rank", "auction_id", "firm_id", "posterior", "ratio", "score"]]


def stage_report(cfg: RunConfig) -> dict[str, str]:
    post = _read_posteriors(cfg)
    summary = _read_kv(cfg.out_dir / "dedpul_summary.txt")
    top = top_suspicious(post, cfg.top_n)
    alpha_star = float(summary["alpha_star"])
    lines = [
        "single-bidder auction screening report",
        f"config hash          {cfg.digest()}",
        f"labelled instances   {summary['n_labelled']}",
        f"unlabelled instances {summary['n_unlabelled']}",
        f"alpha_star           {_fmt(alpha_star)}",
        f"alpha_em             {_fmt(float(summary['alpha_em']))} (converged: {summary['em_converged']})",
        f"suspicious share     {_fmt(1.0 - alpha_star)}",
        f"cluster threshold    {summary['cluster_threshold']}",
        f"cluster mass         {_fmt(float(summary['cluster_mass']))}",
    ]
    yearly_path = cfg.out_dir / "yearly_rates.csv"
    if yearly_path.exists():
        yearly = pd.read_csv(yearly_path)
        lines.append("single-bidder rate by year")
        lines += [f"  {int(r.year)}  {_fmt(r.rate)}  ({int(r.single_auctions)}/{int(r.auctions)})"
                  for r in yearly.itertuples()]
    explain_path = cfg.out_dir / "explain_summary.txt"
    if explain_path.exists():
        ex = _read_kv(explain_path)
        lines.append(f"tree train accuracy  {ex['train_accuracy']}")
        lines.append(f"tree holdout accuracy {ex.get('holdout_accuracy', 'n/a')}")
    lines.append(f"top {len(top)} auctions by posterior in top_suspicious.csv")
    print(f"report: alpha_star {_fmt(alpha_star)}, top {len(top)} auctions ranked")
    return {"report.txt": "\n".join(lines) + "\n", "top_suspicious.csv": _csv(top)}


STAGE_FUNCS = {
    "synth": stage_synth,
    "clean": stage_clean,
    "features": stage_features,
    "train": stage_train,
    "dedpul": stage_dedpul,
    "explain": stage_explain,
    "report": stage_report,
}


def run_stage(stage: str, cfg: RunConfig) -> None:
    if stage not in STAGES:
        raise StageError(f"unknown stage {stage!r}")
    with output_lock(cfg.out_dir):
        for name in PIPELINE if stage == "all" else (stage,):
            logger.info("stage %s", name)
            commit(cfg, STAGE_FUNCS[name](cfg))


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("-v", "--verbose", action="store_true")
    for key in configmod.KEYS:
        common.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="VALUE",
                            help=argparse.SUPPRESS if key not in ("input", "out", "seed", "threads") else None)
    parser = argparse.ArgumentParser(
        prog="singlebid",
        description="Screen single-bidder procurement auctions with positive-unlabelled learning.",
        epilog=f"Any config key can be overridden as --key-name VALUE. Default output directory: ${configmod.OUT_ENV}.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    helps = {
        "synth": "generate a synthetic bid CSV with ground truth",
        "clean": "parse and clean the bid CSV",
        "features": "group auctions and compute per-bid features",
        "train": "out-of-fold classifier scores",
        "dedpul": "class prior and posteriors from the scores",
        "explain": "classification tree over the suspicious cluster",
        "report": "run summary and top-ranked auctions",
        "all": "clean, features, train, dedpul, explain, report",
    }
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=helps[stage])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in configmod.KEYS if getattr(args, k) is not None}
    try:
        cfg = configmod.load(args.config, overrides)
    except ConfigError as exc:
        print(f"singlebid: config error: {exc}", file=sys.stderr)
        return 2
    try:
        run_stage(args.stage, cfg)
    except (StageError, ValueError, OSError) as exc:
        print(f"singlebid {args.stage}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
