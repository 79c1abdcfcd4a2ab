"""Run configuration: one flat dataclass, stored as ``key = value`` text."""
from __future__ import annotations

import hashlib
import os
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .dedpul import DEFAULT_QUANTILE, DEFAULT_THRESHOLD
from .explain import CartParams
from .features import FeatureConfig
from .ingest import BAIKONUR_REGIONS, LOW_RESERVE_THRESHOLD, MAX_RESERVE_PRICE, CleaningConfig
from .ntc import NtcParams

OUT_ENV = "SINGLEBID_OUT"
SCENARIOS = ("default", "oneday")

# keys that cannot change any artifact; left out of the config hash
UNHASHED = frozenset({"out", "threads"})


class ConfigError(ValueError):
    pass


def _codes(text: str) -> frozenset[str]:
    return frozenset(c.strip() for c in text.split(",") if c.strip())


@dataclass(frozen=True)
class RunConfig:
    input: str = ""  # bid CSV; empty means <out>/bids.csv
    out: str = ""  # empty means $SINGLEBID_OUT, then ./singlebid-out
    seed: int = 0
    threads: int = 1
    # cleaning
    max_reserve_price: float = MAX_RESERVE_PRICE
    low_reserve_threshold: float = LOW_RESERVE_THRESHOLD
    baikonur_regions: str = ",".join(sorted(BAIKONUR_REGIONS))
    moscow_regions: str = "50,77"
    # classifier
    folds: int = 5
    ntc_trees: int = 200
    ntc_depth: int = 4
    ntc_learning_rate: float = 0.1
    ntc_min_leaf: int = 50
    ntc_bins: int = 0  # 0 = exact splits
    ntc_colsample: float = 1.0
    # density ratio
    bandwidth: str = "auto"
    quantile: float = DEFAULT_QUANTILE
    threshold: float = DEFAULT_THRESHOLD
    # explanation tree
    tree_depth: int = 4
    tree_min_leaf: int = 100
    holdout_fraction: float = 0.3
    # report
    top_n: int = 1000
    # synthetic data
    synth_scenario: str = "default"
    synth_auctions: int = 19_500

    def __post_init__(self):
        checks = [
            (self.threads >= 1, "threads must be >= 1"),
            (self.max_reserve_price > 0, "max_reserve_price must be > 0"),
            (0 <= self.low_reserve_threshold <= self.max_reserve_price,
             "low_reserve_threshold must lie in [0, max_reserve_price]"),
            (self.folds >= 2, "folds must be >= 2"),
            (self.ntc_trees >= 1, "ntc_trees must be >= 1"),
            (self.ntc_depth >= 1, "ntc_depth must be >= 1"),
            (self.ntc_learning_rate > 0, "ntc_learning_rate must be > 0"),
            (self.ntc_min_leaf >= 1, "ntc_min_leaf must be >= 1"),
            (self.ntc_bins == 0 or self.ntc_bins >= 2, "ntc_bins must be 0 or >= 2"),
            (0 < self.ntc_colsample <= 1, "ntc_colsample must lie in (0, 1]"),
            (0 <= self.quantile <= 1, "quantile must lie in [0, 1]"),
            (0 <= self.threshold <= 1, "threshold must lie in [0, 1]"),
            (self.tree_depth >= 1, "tree_depth must be >= 1"),
            (self.tree_min_leaf >= 1, "tree_min_leaf must be >= 1"),
            (0 < self.holdout_fraction < 1, "holdout_fraction must lie in (0, 1)"),
            (self.top_n >= 1, "top_n must be >= 1"),
            (self.synth_scenario in SCENARIOS, f"synth_scenario must be one of {SCENARIOS}"),
            (self.synth_auctions >= 1, "synth_auctions must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if self.bandwidth != "auto":
            try:
                h = float(self.bandwidth)
            except ValueError:
                raise ConfigError("bandwidth must be 'auto' or a positive number") from None
            if not h > 0:
                raise ConfigError("bandwidth must be 'auto' or a positive number")

    # -- derived settings -------------------------------------------------------

    @property
    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or "singlebid-out")

    @property
    def input_path(self) -> Path:
        return Path(self.input) if self.input else self.out_dir / "bids.csv"

    def cleaning(self) -> CleaningConfig:
        return CleaningConfig(
            max_reserve_price=self.max_reserve_price,
            low_reserve_threshold=self.low_reserve_threshold,
            baikonur_regions=_codes(self.baikonur_regions),
        )

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(moscow_regions=_codes(self.moscow_regions), max_reserve_price=self.max_reserve_price)

    def ntc_params(self) -> NtcParams:
        return NtcParams(
            n_trees=self.ntc_trees,
            max_depth=self.ntc_depth,
            learning_rate=self.ntc_learning_rate,
            min_leaf=self.ntc_min_leaf,
            n_bins=self.ntc_bins or None,
            colsample=self.ntc_colsample,
        )

    def kde_bandwidth(self) -> float | str:
        return "auto" if self.bandwidth == "auto" else float(self.bandwidth)

    def cart_params(self) -> CartParams:
        return CartParams(max_depth=self.tree_depth, min_leaf=self.tree_min_leaf)

    # -- serialization ----------------------------------------------------------

    def dumps(self, hashed_only: bool = False) -> str:
        items = asdict(self)
        return "".join(
            f"{k} = {items[k]}\n" for k in sorted(items) if not (hashed_only and k in UNHASHED)
        )

    def digest(self) -> str:
        return hashlib.sha256(self.dumps(hashed_only=True).encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return replace(self, **{k: _convert(k, v) for k, v in overrides.items()})


_TYPES = typing.get_type_hints(RunConfig)
KEYS = tuple(f.name for f in fields(RunConfig))


def _convert(key: str, text):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if not isinstance(text, str):
        return kind(text)
    try:
        return kind(text.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind.__name__}") from None


def parse(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments ignored."""
    values: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{number}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key {key!r}")
        values[key] = value
    return values


def load(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides``."""
    values: dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse(text, str(path)))
    values.update(overrides or {})
    return RunConfig().with_overrides(values)
