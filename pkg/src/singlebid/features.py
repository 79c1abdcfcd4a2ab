"""Per-bid feature engineering and class-conditional summaries.

One instance per bid. ``s = 1`` marks bids from multi-bidder auctions (the
labelled-fair set); single-bidder bids are unlabelled.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .ingest import MAX_RESERVE_PRICE, Auction

logger = logging.getLogger(__name__)

# order matters: it is the column order of the model matrix
MODEL_FEATURES = (
    "bid_date_gap",
    "bid_price_ratio",
    "con_met",
    "con_win",
    "sel_num",
    "sel_period",
    "au_reserve",
    "au_duration",
    "au_moscow",
    "buy_unique",
)
FEATURES = ("single",) + MODEL_FEATURES
ID_COLUMNS = ("auction_id", "firm_id")
FEATURE_COLUMNS = ID_COLUMNS + ("s",) + FEATURES

INT_FEATURES = ("single", "bid_date_gap", "con_met", "sel_num", "sel_period", "au_duration", "au_moscow")

MOSCOW_REGIONS = frozenset({"77", "50"})


@dataclass(frozen=True)
class FeatureConfig:
    moscow_regions: frozenset[str] = MOSCOW_REGIONS
    max_reserve_price: float = MAX_RESERVE_PRICE
    known_regions: frozenset[str] | None = None  # None accepts any region code


def _bid_frame(auctions: list[Auction]) -> pd.DataFrame:
    rows = [
        (a.auction_id, a.procurer_id, a.region_id, a.reserve_price, a.start_date, a.end_date,
         a.winner, a.is_single, firm, price, bid_date)
        for a in auctions
        for firm, price, bid_date in a.bids
    ]
    return pd.DataFrame(
        rows,
        columns=["auction_id", "procurer_id", "region_id", "reserve_price", "start_date", "end_date",
                 "winner", "is_single", "firm_id", "price", "bid_date"],
    )


def _calendar_days(later: pd.Series, earlier: pd.Series) -> pd.Series:
    return (later.dt.normalize() - earlier.dt.normalize()).dt.days


def compute_features(auctions: list[Auction], config: FeatureConfig | None = None) -> pd.DataFrame:
    """Compute the eleven features for every bid of every auction.

    Returns a frame with columns ``FEATURE_COLUMNS`` sorted by
    ``(auction_id, firm_id)``. Firm and procurer histories (``con_*``,
    ``sel_*``, ``buy_unique``) are aggregated over the whole input.
    """
    config = config or FeatureConfig()
    if not auctions:
        return pd.DataFrame({c: pd.Series(dtype=float) for c in FEATURE_COLUMNS})
    bids = _bid_frame(auctions)

    if config.known_regions is not None:
        unknown = sorted(set(bids["region_id"]) - set(config.known_regions))
        for region in unknown:
            logger.warning("unknown region code %r; au_moscow set to 0", region)

    out = pd.DataFrame({"auction_id": bids["auction_id"], "firm_id": bids["firm_id"]})
    out["single"] = bids["is_single"].astype(np.int64)
    out["s"] = 1 - out["single"]
    out["bid_date_gap"] = (bids["end_date"] - bids["bid_date"]).dt.total_seconds().astype(np.int64)
    out["bid_price_ratio"] = bids["price"] / bids["reserve_price"]

    first_meeting = bids.groupby(["firm_id", "procurer_id"])["start_date"].transform("min")
    out["con_met"] = (first_meeting < bids["start_date"]).astype(np.int64)

    winners = pd.DataFrame(
        [(a.winner, a.procurer_id) for a in auctions], columns=["firm_id", "procurer_id"]
    )
    pair_wins = winners.groupby(["firm_id", "procurer_id"]).size().rename("pair_wins")
    firm_wins = winners.groupby("firm_id").size().rename("firm_wins")
    keyed = bids[["firm_id", "procurer_id"]]
    pw = keyed.join(pair_wins, on=["firm_id", "procurer_id"])["pair_wins"].fillna(0).to_numpy()
    fw = keyed.join(firm_wins, on="firm_id")["firm_wins"].fillna(0).to_numpy()
    out["con_win"] = np.divide(pw, fw, out=np.zeros(len(bids)), where=fw > 0)

    by_firm = bids.groupby("firm_id")
    out["sel_num"] = by_firm["auction_id"].transform("nunique").astype(np.int64)
    out["sel_period"] = _calendar_days(
        by_firm["bid_date"].transform("max"), by_firm["bid_date"].transform("min")
    ).astype(np.int64)

    out["au_reserve"] = bids["reserve_price"] / config.max_reserve_price
    out["au_duration"] = _calendar_days(bids["end_date"], bids["start_date"]).astype(np.int64)
    out["au_moscow"] = bids["region_id"].isin(config.moscow_regions).astype(np.int64)

    auction_level = pd.DataFrame(
        [(a.procurer_id, a.winner) for a in auctions], columns=["procurer_id", "winner"]
    )
    per_procurer = auction_level.groupby("procurer_id")["winner"]
    buy_unique = (per_procurer.nunique() / per_procurer.size()).rename("buy_unique")
    out["buy_unique"] = bids[["procurer_id"]].join(buy_unique, on="procurer_id")["buy_unique"].to_numpy()

    out = out[list(FEATURE_COLUMNS)]
    # stable sort keeps multiple bids of one firm in one auction in bid order
    return out.sort_values(list(ID_COLUMNS), kind="mergesort").reset_index(drop=True)


def model_matrix(instances: pd.DataFrame) -> np.ndarray:
    return instances[list(MODEL_FEATURES)].to_numpy(dtype=np.float64)


def read_features(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"auction_id": str, "firm_id": str})
    missing = [c for c in FEATURE_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing feature columns {missing}")
    return frame[list(FEATURE_COLUMNS)]


def write_features(instances: pd.DataFrame, path) -> None:
    instances.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


# -- summaries ------------------------------------------------------------------


@dataclass
class SummaryTable:
    stats: pd.DataFrame  # index: feature; columns: (statistic, single) pairs flattened
    class_counts: dict[int, int]
    yearly: pd.DataFrame | None  # columns: year, auctions, single_auctions, rate


def summarize(instances: pd.DataFrame, auctions: list[Auction] | None = None) -> SummaryTable:
    """Mean, median and population std of every feature, split by ``single``.

    With ``auctions`` given, also the single-bidder rate per end-date year.
    """
    if len(instances) == 0:
        raise ValueError("cannot summarize an empty instance set")
    columns = {}
    for stat in ("mean", "median", "std"):
        for single in (1, 0):
            part = instances.loc[instances["single"] == single, list(MODEL_FEATURES)]
            if stat == "mean":
                values = part.mean()
            elif stat == "median":
                values = part.median()
            else:
                values = part.std(ddof=0)
            columns[f"{stat}_single{single}"] = values
    stats = pd.DataFrame(columns)
    stats.index.name = "feature"
    counts = {int(k): int(v) for k, v in instances["single"].value_counts().items()}

    yearly = None
    if auctions is not None:
        frame = pd.DataFrame(
            [(a.end_date.year, a.is_single) for a in auctions], columns=["year", "single"]
        )
        grouped = frame.groupby("year")["single"]
        yearly = pd.DataFrame({"auctions": grouped.size(), "single_auctions": grouped.sum()})
        yearly["rate"] = yearly["single_auctions"] / yearly["auctions"]
        yearly = yearly.reset_index()
    return SummaryTable(stats=stats, class_counts=counts, yearly=yearly)


def single_bidder_rate(auctions: list[Auction]) -> float:
    if not auctions:
        raise ValueError("no auctions")
    return sum(a.is_single for a in auctions) / len(auctions)
