import io

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import truncnorm

from singlebid import features, ingest, synth
from singlebid.synth import ScenarioConfig


def weights(competitive=0.0, lone=0.0, monopolist=0.0, oneday=0.0, established=0.0):
    return dict(w_competitive_fair=competitive, w_lone_fair=lone, w_monopolist_fair=monopolist,
                w_oneday_corrupt=oneday, w_established_corrupt=established)


def pipeline_frame(config):
    records, truth = synth.generate(config)
    kept, report = ingest.clean(records)
    auctions, diags = ingest.group_auctions(kept)
    inst = features.compute_features(auctions)
    inst["regime"] = inst["auction_id"].map(truth.regime)
    return records, truth, report, auctions, diags, inst


def test_default_alpha_true():
    cfg = ScenarioConfig()
    assert cfg.alpha_true == pytest.approx(0.46)
    assert cfg.single_bidder_rate == pytest.approx(0.48)


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        ScenarioConfig(**weights(competitive=0.5, lone=0.4))
    with pytest.raises(ValueError):
        ScenarioConfig(**weights(competitive=1.2, lone=-0.2))
    with pytest.raises(ValueError):
        ScenarioConfig(n_auctions=0)


def test_all_competitive_has_no_single_bidders():
    _, truth, report, auctions, _, _ = pipeline_frame(ScenarioConfig(n_auctions=2_000, **weights(competitive=1.0)))
    assert report.total_rejected == 0
    assert features.single_bidder_rate(auctions) == 0.0
    assert np.isnan(truth.alpha_true)


def test_all_monopolist_bids_near_reserve():
    _, _, report, auctions, _, inst = pipeline_frame(ScenarioConfig(n_auctions=2_000, **weights(monopolist=1.0)))
    assert report.total_rejected == 0
    assert features.single_bidder_rate(auctions) == 1.0
    assert inst["bid_price_ratio"].mean() > 0.99


def test_default_rows_need_no_cleaning():
    records, truth, report, auctions, diags, _ = pipeline_frame(ScenarioConfig(n_auctions=5_000, seed=4))
    assert report.total_rejected == 0 and diags == []
    assert len(auctions) == 5_000 == len(truth.regime)
    single = {a.auction_id for a in auctions if a.is_single}
    assert single == {a for a, r in truth.regime.items() if r in synth.SINGLE_REGIMES}


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.5), st.sampled_from([None, 30.0, 200.0]))
def test_generated_rows_pass_cleaning(seed, p_fair_reserve, lifetime):
    cfg = ScenarioConfig(n_auctions=1_500, seed=seed, p_fair_reserve=p_fair_reserve,
                         fair_firm_lifetime_days=lifetime, home_procurers_max=2, p_home=0.8)
    records, _ = synth.generate(cfg)
    _, report = ingest.clean(records)
    assert report.total_rejected == 0


def test_deterministic_given_seed():
    a = ingest.bids_to_csv(synth.generate(ScenarioConfig(n_auctions=1_000, seed=3))[0])
    b = ingest.bids_to_csv(synth.generate(ScenarioConfig(n_auctions=1_000, seed=3))[0])
    c = ingest.bids_to_csv(synth.generate(ScenarioConfig(n_auctions=1_000, seed=4))[0])
    assert a == b != c


def test_single_bidder_rate_at_scale():
    cfg = ScenarioConfig(n_auctions=100_000, seed=1)
    records, _ = synth.generate(cfg)
    kept, report = ingest.clean(records)
    auctions, _ = ingest.group_auctions(kept)
    assert report.total_rejected == 0
    assert abs(features.single_bidder_rate(auctions) - cfg.single_bidder_rate) <= 0.01


def test_planted_fifty_percent_rate():
    cfg = ScenarioConfig(n_auctions=20_000, seed=2, **weights(competitive=0.5, lone=0.2, oneday=0.2, established=0.1))
    _, _, _, auctions, _, _ = pipeline_frame(cfg)
    assert abs(features.single_bidder_rate(auctions) - 0.5) <= 0.01


def test_regime_feature_ordering():
    cfg = ScenarioConfig(n_auctions=10_000, seed=5,
                         **weights(competitive=0.5, lone=0.1, monopolist=0.15, oneday=0.15, established=0.1))
    *_, inst = pipeline_frame(cfg)
    means = inst.groupby("regime")[["sel_period", "sel_num", "bid_price_ratio", "con_met", "con_win"]].mean()
    assert means.loc["oneday_corrupt", "sel_period"] < means.loc["monopolist_fair", "sel_period"]
    assert means.loc["oneday_corrupt", "sel_num"] < means.loc["monopolist_fair", "sel_num"]
    assert means.loc["oneday_corrupt", "con_met"] == 0
    assert means.loc["established_corrupt", "con_win"] > means.loc["competitive_fair", "con_win"]
    for regime in ("monopolist_fair", "oneday_corrupt", "established_corrupt"):
        assert means.loc[regime, "bid_price_ratio"] > 0.99
    # fair ratios are a normal truncated to [fair_ratio_min, 1]
    a, b = (cfg.fair_ratio_min - cfg.fair_ratio_mean) / cfg.fair_ratio_sd, (1 - cfg.fair_ratio_mean) / cfg.fair_ratio_sd
    want = truncnorm.mean(a, b, loc=cfg.fair_ratio_mean, scale=cfg.fair_ratio_sd)
    assert means.loc["competitive_fair", "bid_price_ratio"] == pytest.approx(want, abs=0.005)


def test_ground_truth_file():
    _, truth = synth.generate(ScenarioConfig(n_auctions=500, seed=6))
    buf = io.StringIO()
    truth.write(buf)
    frame = pd.read_csv(io.StringIO(buf.getvalue()), dtype={"auction_id": str})
    assert list(frame.columns) == ["auction_id", "regime", "corrupt"]
    assert (frame["corrupt"] == frame["regime"].isin(synth.CORRUPT_REGIMES)).all()


def test_allocate_largest_remainder():
    w = dict.fromkeys(synth.REGIMES, 0.0) | {"competitive_fair": 0.5, "lone_fair": 1 / 3, "oneday_corrupt": 1 / 6}
    assert synth.allocate(10, w) == dict.fromkeys(synth.REGIMES, 0) | {
        "competitive_fair": 5, "lone_fair": 3, "oneday_corrupt": 2}


def test_oneday_preset():
    cfg = synth.oneday_scenario()
    assert cfg.w_established_corrupt == 0 and cfg.w_oneday_corrupt > 0
    assert synth.oneday_scenario(seed=9).seed == 9
