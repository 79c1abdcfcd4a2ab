"""Synthetic bid datasets with known fair/corrupt ground truth.

Five auction regimes:

``competitive_fair``
    2-6 bidders drawn from the fair firm pool, bid/reserve ratio from a
    truncated normal (mean 0.81 by default).
``lone_fair``
    a fair auction that attracted one bidder: the bid is drawn by exactly the
    same process as a competitive bid, so these auctions satisfy SCAR and are
    what a PU prior estimate can recover.
``monopolist_fair``
    one long-lived, high-activity firm per region bidding at or next to the
    reserve price. Fair, but not SCAR-distributed.
``oneday_corrupt``
    a short-lived firm with 2-3 auctions at distinct procurers inside a short
    window, bidding the reserve price; it never meets a procurer twice.
``established_corrupt``
    a long-lived firm repeatedly winning single-bidder auctions of one
    partner procurer at the reserve price.

Every generated row passes :func:`singlebid.ingest.clean` unchanged.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, fields
from datetime import datetime, timedelta
from typing import TextIO

import numpy as np

from .ingest import BidRecord

REGIMES = ("competitive_fair", "lone_fair", "monopolist_fair", "oneday_corrupt", "established_corrupt")
CORRUPT_REGIMES = frozenset({"oneday_corrupt", "established_corrupt"})
SINGLE_REGIMES = frozenset(REGIMES[1:])

REGION_CODES = tuple(f"{i:02d}" for i in range(1, 86))
MOSCOW_CODES = ("77", "50")

WINDOW_START = datetime(2014, 1, 28)
WINDOW_END = datetime(2018, 3, 26)
MIN_RESERVE = 3_440.0
MAX_RESERVE = 500_000.0


@dataclass(frozen=True)
class ScenarioConfig:
    n_auctions: int = 19_500  # about 50,000 bids with the default weights
    seed: int = 0
    # regime weights over auctions; must sum to 1
    w_competitive_fair: float = 0.52
    w_lone_fair: float = 0.2208
    w_monopolist_fair: float = 0.0
    w_oneday_corrupt: float = 0.16
    w_established_corrupt: float = 0.0992
    # competitive / lone bids
    min_bidders: int = 2
    max_bidders: int = 6
    fair_ratio_mean: float = 0.81
    fair_ratio_sd: float = 0.15
    fair_ratio_min: float = 0.3
    fair_firm_activity: float = 20.0  # mean bids per fair firm
    home_procurers_max: int = 1
    fair_firm_lifetime_days: float | None = None  # mean active span; None = the whole window
    p_home: float = 1.0  # chance a fair bidder comes from the procurer's local firms
    p_fair_reserve: float = 0.0  # chance a fair firm that met the procurer before bids the reserve
    # reserve-price bidding regimes
    p_exact_reserve: float = 0.6
    near_reserve_scale: float = 0.005
    monopolist_activity: float = 60.0
    established_activity: float = 12.0
    oneday_span_days: int = 30
    # auctions and procurers
    auctions_per_procurer: float = 90.0
    reserve_median: float = 134_637.0
    reserve_sigma: float = 0.9
    fair_duration_mean: float = 6.0
    corrupt_duration_mean: float = 4.0
    moscow_share: float = 0.12
    corrupt_moscow_factor: float = 0.3

    def __post_init__(self):
        if self.n_auctions < 1:
            raise ValueError("n_auctions must be >= 1")
        weights = self.weights
        if any(w < 0 for w in weights.values()):
            raise ValueError("regime weights must be nonnegative")
        if abs(sum(weights.values()) - 1.0) > 1e-9:
            raise ValueError(f"regime weights sum to {sum(weights.values())!r}, not 1")
        if not 2 <= self.min_bidders <= self.max_bidders:
            raise ValueError("need 2 <= min_bidders <= max_bidders")
        if not 0 < self.fair_ratio_min < 1:
            raise ValueError("fair_ratio_min must lie in (0, 1)")
        for name in ("p_home", "p_fair_reserve", "p_exact_reserve", "moscow_share", "corrupt_moscow_factor"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.fair_firm_lifetime_days is not None and not self.fair_firm_lifetime_days > 0:
            raise ValueError("fair_firm_lifetime_days must be positive")
        if not MIN_RESERVE <= self.reserve_median <= MAX_RESERVE:
            raise ValueError("reserve_median outside the legal reserve range")

    @property
    def weights(self) -> dict[str, float]:
        return {r: getattr(self, f"w_{r}") for r in REGIMES}

    @property
    def single_bidder_rate(self) -> float:
        return sum(w for r, w in self.weights.items() if r in SINGLE_REGIMES)

    @property
    def alpha_true(self) -> float:
        """Fair share among single-bidder auctions."""
        single = self.single_bidder_rate
        if single == 0:
            return float("nan")
        return (self.w_lone_fair + self.w_monopolist_fair) / single

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass
class GroundTruth:
    regime: dict[str, str]  # auction_id -> regime
    alpha_true: float

    def corrupt(self, auction_id: str) -> bool:
        return self.regime[auction_id] in CORRUPT_REGIMES

    def write(self, out: TextIO) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("auction_id", "regime", "corrupt"))
        for auction_id in sorted(self.regime):
            writer.writerow((auction_id, self.regime[auction_id], int(self.corrupt(auction_id))))


def read_ground_truth(path) -> dict[str, tuple[str, bool]]:
    with open(path, newline="", encoding="utf-8") as handle:
        return {row["auction_id"]: (row["regime"], row["corrupt"] == "1") for row in csv.DictReader(handle)}


def allocate(n: int, weights: dict[str, float]) -> dict[str, int]:
    """Largest-remainder split of ``n`` items by weight (ties by regime order)."""
    raw = {k: n * w for k, w in weights.items()}
    counts = {k: int(math.floor(v)) for k, v in raw.items()}
    short = n - sum(counts.values())
    order = sorted(weights, key=lambda k: (-(raw[k] - counts[k]), REGIMES.index(k)))
    for k in order[:short]:
        counts[k] += 1
    return counts


class _Builder:
    def __init__(self, config: ScenarioConfig):
        self.cfg = config
        self.rng = np.random.default_rng(config.seed)
        self.window_days = (WINDOW_END - WINDOW_START).days
        self.auctions: list[dict] = []  # procurer, start, end, reserve, regime, bids=[(firm, ratio, frac)]
        self.firm_counter = 0

    # -- primitives ----------------------------------------------------------------

    def new_firm(self) -> int:
        self.firm_counter += 1
        return self.firm_counter

    def reserve(self) -> float:
        cfg, rng = self.cfg, self.rng
        while True:
            value = math.exp(math.log(cfg.reserve_median) + cfg.reserve_sigma * rng.standard_normal())
            if MIN_RESERVE <= value <= MAX_RESERVE:
                return round(value, 2)

    def fair_ratio(self) -> float:
        cfg, rng = self.cfg, self.rng
        while True:
            value = cfg.fair_ratio_mean + cfg.fair_ratio_sd * rng.standard_normal()
            if cfg.fair_ratio_min <= value <= 1.0:
                return value

    def reserve_ratio(self) -> float:
        if self.rng.random() < self.cfg.p_exact_reserve:
            return 1.0
        return max(0.9, 1.0 - self.rng.exponential(self.cfg.near_reserve_scale))

    def schedule(self, duration_mean: float, start_day: float | None = None):
        rng = self.rng
        duration = int(min(26, 1 + rng.poisson(duration_mean)))
        if start_day is None:
            start_day = rng.uniform(0, self.window_days - duration - 1)
        start = WINDOW_START + timedelta(days=int(start_day), seconds=int(rng.integers(8 * 3600, 18 * 3600)))
        return start, start + timedelta(days=duration)

    def add_auction(self, regime, procurer, bids, duration_mean, start_day=None):
        start, end = self.schedule(duration_mean, start_day)
        self.auctions.append(
            dict(regime=regime, procurer=procurer, start=start, end=end, reserve=self.reserve(), bids=bids)
        )

    # -- regimes --------------------------------------------------------------------

    def procurers(self):
        cfg, rng = self.cfg, self.rng
        n = max(10, int(round(cfg.n_auctions / cfg.auctions_per_procurer)))
        other = [c for c in REGION_CODES if c not in MOSCOW_CODES]
        is_moscow = rng.random(n) < cfg.moscow_share
        regions = np.where(is_moscow, rng.choice(MOSCOW_CODES, n), rng.choice(other, n))
        self.proc_region = regions
        self.proc_moscow = np.isin(regions, MOSCOW_CODES)
        corrupt_w = np.where(self.proc_moscow, cfg.corrupt_moscow_factor, 1.0)
        if corrupt_w.sum() == 0:
            corrupt_w = np.ones(n)
        self.corrupt_proc_p = corrupt_w / corrupt_w.sum()
        self.n_procurers = n

    def fair(self, n_competitive: int, n_lone: int):
        cfg, rng = self.cfg, self.rng
        kinds = np.array(["competitive_fair"] * n_competitive + ["lone_fair"] * n_lone)
        rng.shuffle(kinds)
        sizes = np.where(
            kinds == "competitive_fair", rng.integers(cfg.min_bidders, cfg.max_bidders + 1, len(kinds)), 1
        )
        total_slots = int(sizes.sum())
        if total_slots == 0:
            return
        n_firms = max(cfg.max_bidders + 1, int(round(total_slots / cfg.fair_firm_activity)))
        local: list[list[int]] = [[] for _ in range(self.n_procurers)]
        for f in range(n_firms):
            for p in rng.choice(self.n_procurers, size=int(rng.integers(1, cfg.home_procurers_max + 1)), replace=False):
                local[p].append(f)
        procs = rng.integers(0, self.n_procurers, len(kinds))
        if cfg.fair_firm_lifetime_days is None:
            days = [None] * len(kinds)
        else:
            # date first, then bidders among the firms alive on that day
            span = self.window_days - 27  # latest start that keeps any auction inside the window
            life = np.minimum(span, 1.0 + rng.exponential(cfg.fair_firm_lifetime_days, n_firms))
            birth = rng.uniform(0.0, span - life)
            death = birth + life
            days = rng.uniform(0.0, span, len(kinds)).tolist()
        slots = []  # per auction list of pool indices
        for size, p, d in zip(sizes, procs, days):
            chosen: list[int] = []
            alive = d is not None
            while len(chosen) < size:
                free = [g for g in local[p] if g not in chosen and (not alive or birth[g] <= d <= death[g])]
                if free and rng.random() < cfg.p_home:
                    f = free[int(rng.integers(len(free)))]
                elif alive:
                    pool = np.flatnonzero((birth <= d) & (death >= d))
                    pool = pool[~np.isin(pool, chosen)]
                    f = int(pool[rng.integers(len(pool))]) if len(pool) else int(rng.integers(n_firms))
                else:
                    f = int(rng.integers(n_firms))
                if f not in chosen:
                    chosen.append(f)
            slots.append(chosen)
        # firms bidding once would be removed by cleaning: hand their slot to another firm
        while True:
            counts = np.bincount([f for s in slots for f in s], minlength=n_firms)
            lonely = set(np.flatnonzero(counts == 1).tolist())
            if not lonely:
                break
            for a, chosen in enumerate(slots):
                for i, f in enumerate(chosen):
                    if f not in lonely:
                        continue
                    busy = [g for g in local[procs[a]] if counts[g] >= 2 and g not in chosen]
                    if not busy:
                        busy = [g for g in np.flatnonzero(counts >= 2).tolist() if g not in chosen]
                    if not busy:
                        raise ValueError("too few fair auctions to give every fair firm two bids")
                    g = busy[int(rng.integers(len(busy)))]
                    chosen[i] = g
                    counts[g] += 1
                    counts[f] -= 1
                    lonely.discard(f)
        firm_ids = [self.new_firm() for _ in range(n_firms)]
        first = len(self.auctions)
        for kind, p, chosen, d in zip(kinds, procs, slots, days):
            bids = [(firm_ids[f], self.fair_ratio(), rng.random()) for f in chosen]
            self.add_auction(str(kind), int(p), bids, cfg.fair_duration_mean, d)
        # a firm that already knows the procurer may bid the reserve price;
        # lone and competitive auctions are treated alike
        fair_auctions = sorted(self.auctions[first:], key=lambda a: a["start"])
        met: set[tuple[int, int]] = set()
        for _, same_start in itertools.groupby(fair_auctions, key=lambda a: a["start"]):
            same_start = list(same_start)
            for a in same_start:
                bids = a["bids"]
                for i, (firm, ratio, frac) in enumerate(bids):
                    if (firm, a["procurer"]) in met and rng.random() < cfg.p_fair_reserve:
                        bids[i] = (firm, 1.0, frac)
            met.update((firm, a["procurer"]) for a in same_start for firm, _, _ in a["bids"])

    def split(self, n: int, activity: float) -> list[int]:
        """Partition ``n`` auctions over firms, every firm getting at least 2."""
        if n == 0:
            return []
        n_firms = max(1, min(n // 2, int(round(n / activity))))
        extra = self.rng.multinomial(n - 2 * n_firms, np.full(n_firms, 1.0 / n_firms))
        return (2 + extra).tolist()

    def monopolists(self, n: int):
        cfg, rng = self.cfg, self.rng
        for count in self.split(n, cfg.monopolist_activity):
            firm = self.new_firm()
            region = self.proc_region[int(rng.integers(self.n_procurers))]
            candidates = np.flatnonzero(self.proc_region == region)
            for _ in range(count):
                p = int(candidates[int(rng.integers(len(candidates)))])
                bids = [(firm, self.reserve_ratio(), rng.beta(1.0, 3.0))]
                self.add_auction("monopolist_fair", p, bids, cfg.fair_duration_mean)

    def parts(self, n: int) -> list[int]:
        """Split ``n >= 2`` auctions into firms of 2 or 3."""
        parts = []
        rem = n
        while rem >= 5:
            c = int(self.rng.integers(2, 4))
            parts.append(c)
            rem -= c
        return parts + {0: [], 2: [2], 3: [3], 4: [2, 2]}[rem]

    def oneday(self, n: int):
        cfg, rng = self.cfg, self.rng
        for count in self.parts(n):
            firm = self.new_firm()
            procs = rng.choice(self.n_procurers, size=count, replace=False, p=self.corrupt_proc_p)
            first = rng.uniform(0, self.window_days - cfg.oneday_span_days - 28)
            offsets = np.sort(rng.uniform(0, cfg.oneday_span_days, count))
            for p, off in zip(procs, offsets):
                bids = [(firm, self.reserve_ratio(), rng.beta(1.0, 3.0))]
                self.add_auction("oneday_corrupt", int(p), bids, cfg.corrupt_duration_mean, first + off)

    def established(self, n: int):
        cfg, rng = self.cfg, self.rng
        for count in self.split(n, cfg.established_activity):
            firm = self.new_firm()
            p = int(rng.choice(self.n_procurers, p=self.corrupt_proc_p))
            for _ in range(count):
                bids = [(firm, self.reserve_ratio(), rng.beta(1.0, 3.0))]
                self.add_auction("established_corrupt", p, bids, cfg.corrupt_duration_mean)

    # -- output ---------------------------------------------------------------------

    def records(self) -> tuple[list[BidRecord], GroundTruth]:
        rng = self.rng
        order = rng.permutation(len(self.auctions))
        firm_perm = rng.permutation(self.firm_counter) + 1  # hide regime in firm numbering
        width_a = len(str(len(self.auctions)))
        width_f = len(str(self.firm_counter))
        width_p = len(str(self.n_procurers))
        bids: list[BidRecord] = []
        regime: dict[str, str] = {}
        for number, idx in enumerate(order, start=1):
            a = self.auctions[idx]
            auction_id = f"A{number:0{width_a}d}"
            regime[auction_id] = a["regime"]
            span = (a["end"] - a["start"]).total_seconds()
            for firm, ratio, frac in a["bids"]:
                price = math.floor(ratio * a["reserve"] * 100) / 100
                price = min(max(price, 0.01), a["reserve"])
                bid_date = a["start"] + timedelta(seconds=int(frac * span))
                bids.append(
                    BidRecord(
                        auction_id=auction_id,
                        procurer_id=f"P{a['procurer'] + 1:0{width_p}d}",
                        firm_id=f"F{firm_perm[firm - 1]:0{width_f}d}",
                        region_id=str(self.proc_region[a["procurer"]]),
                        reserve_price=a["reserve"],
                        price=price,
                        start_date=a["start"],
                        end_date=a["end"],
                        bid_date=bid_date,
                    )
                )
        bids.sort(key=lambda b: (b.auction_id, b.firm_id))
        return bids, GroundTruth(regime=regime, alpha_true=self.cfg.alpha_true)


def oneday_scenario(**overrides) -> ScenarioConfig:
    """One-day firms as the only corrupt regime, among small short-lived fair firms.

    Fair firms here live about two months, bid a few times at up to two
    procurers and sometimes bid the reserve price once they know the
    procurer, so neither firm size, lifetime nor a reserve-price bid alone
    marks a one-day firm.
    """
    params = dict(
        w_competitive_fair=0.52,
        w_lone_fair=0.2208,
        w_monopolist_fair=0.0,
        w_oneday_corrupt=0.2592,
        w_established_corrupt=0.0,
        fair_firm_activity=3.0,
        fair_firm_lifetime_days=60.0,
        home_procurers_max=2,
        p_fair_reserve=0.15,
    )
    params.update(overrides)
    return ScenarioConfig(**params)


def generate(config: ScenarioConfig | None = None) -> tuple[list[BidRecord], GroundTruth]:
    config = config or ScenarioConfig()
    counts = allocate(config.n_auctions, config.weights)
    for regime in ("monopolist_fair", "established_corrupt", "oneday_corrupt"):
        if counts[regime] == 1:
            raise ValueError(f"{regime} would get a single auction; its firm would bid once")
    b = _Builder(config)
    b.procurers()
    b.fair(counts["competitive_fair"], counts["lone_fair"])
    b.monopolists(counts["monopolist_fair"])
    b.oneday(counts["oneday_corrupt"])
    b.established(counts["established_corrupt"])
    return b.records()
