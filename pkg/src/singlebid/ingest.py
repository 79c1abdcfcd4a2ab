"""Bid parsing, cleaning and grouping into auctions.

Input CSV columns (header required, UTF-8)::

    auction_id,procurer_id,firm_id,region_id,reserve_price,price,start_date,end_date,bid_date

Timestamps are ISO 8601 ``YYYY-MM-DDTHH:MM:SS``. An empty field parses to
``None`` and is rejected later by the missing-field cleaning rule; a field
that is present but unparseable is a parse diagnostic.
"""
from __future__ import annotations

import csv
import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, TextIO

logger = logging.getLogger(__name__)

COLUMNS = (
    "auction_id",
    "procurer_id",
    "firm_id",
    "region_id",
    "reserve_price",
    "price",
    "start_date",
    "end_date",
    "bid_date",
)
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S"

MAX_RESERVE_PRICE = 500_000.0
LOW_RESERVE_THRESHOLD = 3_440.0
BAIKONUR_REGIONS = frozenset({"99"})

RULES = (
    "missing-field",
    "date-order",
    "price-bounds",
    "reserve-cap",
    "baikonur",
    "low-reserve",
    "single-appearance-firm",
)


class IngestError(Exception):
    """Raised when a bid source cannot be read at all."""


@dataclass(frozen=True, slots=True)
class BidRecord:
    auction_id: str | None
    procurer_id: str | None
    firm_id: str | None
    region_id: str | None
    reserve_price: float | None
    price: float | None
    start_date: datetime | None
    end_date: datetime | None
    bid_date: datetime | None

    def is_complete(self) -> bool:
        return all(getattr(self, f.name) is not None for f in fields(self))


@dataclass(frozen=True)
class ParseDiagnostic:
    row: int  # 1-based data row number, header excluded
    cause: str


@dataclass(frozen=True)
class CleaningConfig:
    max_reserve_price: float = MAX_RESERVE_PRICE
    low_reserve_threshold: float = LOW_RESERVE_THRESHOLD
    baikonur_regions: frozenset[str] = BAIKONUR_REGIONS


@dataclass
class CleaningReport:
    input_count: int = 0
    rejected: dict[str, int] = field(default_factory=lambda: dict.fromkeys(RULES, 0))
    retained_count: int = 0

    @property
    def total_rejected(self) -> int:
        return sum(self.rejected.values())

    def rows(self) -> list[tuple[str, int]]:
        return (
            [("input", self.input_count)]
            + [(rule, self.rejected[rule]) for rule in RULES]
            + [("retained", self.retained_count)]
        )


@dataclass(frozen=True)
class Auction:
    auction_id: str
    procurer_id: str
    region_id: str
    reserve_price: float
    start_date: datetime
    end_date: datetime
    bids: tuple[tuple[str, float, datetime], ...]  # (firm_id, price, bid_date)
    winner: str
    is_single: bool


# -- parsing ------------------------------------------------------------------


def _parse_money(text: str, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{name} not numeric") from None
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError(f"{name} not finite")
    return value


def _parse_time(text: str, name: str) -> datetime:
    try:
        return datetime.strptime(text, TIMESTAMP_FORMAT)
    except ValueError:
        raise ValueError(f"{name} not an ISO 8601 timestamp") from None


def _parse_row(row: list[str]) -> BidRecord:
    if len(row) != len(COLUMNS):
        raise ValueError(f"expected {len(COLUMNS)} columns, got {len(row)}")
    raw = {name: value.strip() for name, value in zip(COLUMNS, row)}
    values: dict[str, object] = {}
    for name in COLUMNS:
        text = raw[name]
        if text == "":
            values[name] = None
        elif name in ("reserve_price", "price"):
            values[name] = _parse_money(text, name)
        elif name in ("start_date", "end_date", "bid_date"):
            values[name] = _parse_time(text, name)
        else:
            values[name] = text
    return BidRecord(**values)


def iter_bids(source: TextIO) -> Iterator[BidRecord | ParseDiagnostic]:
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty bid source (no header row)") from None
    except csv.Error as exc:
        raise IngestError(f"unreadable bid source: {exc}") from None
    header = [h.strip().lstrip("﻿") for h in header]
    if tuple(header) != COLUMNS:
        raise IngestError(f"unexpected header {header!r}; expected {list(COLUMNS)!r}")
    row_number = 0
    while True:
        row_number += 1
        try:
            row = next(reader)
        except StopIteration:
            return
        except csv.Error as exc:
            yield ParseDiagnostic(row_number, f"csv error: {exc}")
            continue
        if not row:
            yield ParseDiagnostic(row_number, "blank row")
            continue
        try:
            yield _parse_row(row)
        except ValueError as exc:
            yield ParseDiagnostic(row_number, str(exc))


def parse_bids(source: str | Path | TextIO) -> tuple[list[BidRecord], list[ParseDiagnostic]]:
    """Parse a bid CSV into records and per-row diagnostics.

    Every data row ends up in exactly one of the two returned lists.
    """
    if isinstance(source, (str, Path)):
        try:
            handle = open(source, newline="", encoding="utf-8")
        except OSError as exc:
            raise IngestError(f"cannot open {source}: {exc}") from None
        with handle:
            return parse_bids(handle)
    records: list[BidRecord] = []
    diagnostics: list[ParseDiagnostic] = []
    try:
        for item in iter_bids(source):
            if isinstance(item, ParseDiagnostic):
                diagnostics.append(item)
            else:
                records.append(item)
    except UnicodeDecodeError as exc:
        raise IngestError(f"source is not valid UTF-8: {exc}") from None
    return records, diagnostics


def _format_money(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _format_time(value: datetime | None) -> str:
    return "" if value is None else value.strftime(TIMESTAMP_FORMAT)


def bid_to_row(bid: BidRecord) -> list[str]:
    return [
        bid.auction_id or "",
        bid.procurer_id or "",
        bid.firm_id or "",
        bid.region_id or "",
        _format_money(bid.reserve_price),
        _format_money(bid.price),
        _format_time(bid.start_date),
        _format_time(bid.end_date),
        _format_time(bid.bid_date),
    ]


def write_bids(bids: Iterable[BidRecord], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    for bid in bids:
        writer.writerow(bid_to_row(bid))


def bids_to_csv(bids: Iterable[BidRecord]) -> str:
    buf = io.StringIO()
    write_bids(bids, buf)
    return buf.getvalue()


def write_cleaning_report(report: CleaningReport, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("rule", "count"))
    writer.writerows(report.rows())


# -- cleaning -----------------------------------------------------------------


def _first_violation(bid: BidRecord, config: CleaningConfig) -> str | None:
    if not bid.is_complete():
        return "missing-field"
    if not (bid.start_date <= bid.bid_date <= bid.end_date):
        return "date-order"
    if bid.price < 0 or bid.price > bid.reserve_price:
        return "price-bounds"
    if bid.reserve_price > config.max_reserve_price:
        return "reserve-cap"
    if bid.region_id in config.baikonur_regions:
        return "baikonur"
    if bid.reserve_price < config.low_reserve_threshold:
        return "low-reserve"
    return None


def clean(
    records: list[BidRecord], config: CleaningConfig | None = None
) -> tuple[list[BidRecord], CleaningReport]:
    """Apply the validity and exclusion rules in their fixed order.

    Each record is charged to the first rule it violates. The
    single-appearance-firm rule is a single pass over the survivors of the
    record-level rules; it drops whole firms only, so the output is a fixed
    point and cleaning is idempotent.
    """
    config = config or CleaningConfig()
    report = CleaningReport(input_count=len(records))
    survivors: list[BidRecord] = []
    for bid in records:
        rule = _first_violation(bid, config)
        if rule is None:
            survivors.append(bid)
        else:
            report.rejected[rule] += 1

    appearances = Counter(bid.firm_id for bid in survivors)
    retained = [bid for bid in survivors if appearances[bid.firm_id] > 1]
    report.rejected["single-appearance-firm"] = len(survivors) - len(retained)
    report.retained_count = len(retained)
    return retained, report


# -- grouping -----------------------------------------------------------------


def group_auctions(bids: list[BidRecord]) -> tuple[list[Auction], list[str]]:
    """Group cleaned bids into auctions and pick the winner of each.

    The winner is the lowest price, ties broken by earliest ``bid_date`` and
    then by ``firm_id``. Auctions whose bids disagree on procurer, region,
    reserve price or dates are dropped; their ids come back as diagnostics.
    Output is ordered by ``auction_id``.
    """
    by_auction: dict[str, list[BidRecord]] = defaultdict(list)
    for bid in bids:
        by_auction[bid.auction_id].append(bid)

    auctions: list[Auction] = []
    diagnostics: list[str] = []
    for auction_id in sorted(by_auction):
        members = by_auction[auction_id]
        meta = {
            (b.procurer_id, b.region_id, b.reserve_price, b.start_date, b.end_date)
            for b in members
        }
        if len(meta) != 1:
            diagnostics.append(f"auction {auction_id}: inconsistent metadata across {len(members)} bids")
            continue
        procurer_id, region_id, reserve_price, start_date, end_date = meta.pop()
        entries = tuple(
            sorted(((b.firm_id, b.price, b.bid_date) for b in members), key=lambda e: (e[0], e[2], e[1]))
        )
        winner = min(entries, key=lambda e: (e[1], e[2], e[0]))[0]
        auctions.append(
            Auction(
                auction_id=auction_id,
                procurer_id=procurer_id,
                region_id=region_id,
                reserve_price=reserve_price,
                start_date=start_date,
                end_date=end_date,
                bids=entries,
                winner=winner,
                is_single=len({e[0] for e in entries}) == 1,
            )
        )
    if diagnostics:
        logger.warning("dropped %d auctions with inconsistent metadata", len(diagnostics))
    return auctions, diagnostics
