import pytest

from singlebid import config
from singlebid.config import ConfigError, RunConfig


def test_defaults_valid_and_documented_values():
    cfg = RunConfig()
    assert (cfg.folds, cfg.ntc_trees, cfg.ntc_depth, cfg.ntc_min_leaf) == (5, 200, 4, 50)
    assert (cfg.quantile, cfg.threshold, cfg.top_n) == (0.05, 0.96, 1000)
    assert cfg.cleaning().low_reserve_threshold == 3440
    assert cfg.feature_config().moscow_regions == frozenset({"50", "77"})
    assert cfg.ntc_params().n_bins is None


@pytest.mark.parametrize("bad", [
    {"folds": 1}, {"quantile": 1.5}, {"threshold": -0.1}, {"bandwidth": "wide"}, {"bandwidth": "-1"},
    {"ntc_colsample": 0.0}, {"synth_scenario": "nope"}, {"holdout_fraction": 1.0}, {"threads": 0},
])
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({k: str(v) for k, v in bad.items()})


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nseed = 7\nntc_trees = 50  # fewer\n\nbandwidth = 0.3\n")
    cfg = config.load(path, {"seed": "9"})
    assert (cfg.seed, cfg.ntc_trees, cfg.kde_bandwidth()) == (9, 50, 0.3)


@pytest.mark.parametrize("text", ["seed 7\n", "colour = red\n", "seed = 1\nseed = 2\n", "seed = x\n"])
def test_bad_files(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        config.load(path)


def test_missing_file():
    with pytest.raises(ConfigError):
        config.load("/nonexistent/run.cfg")


def test_dump_roundtrip_and_hash():
    cfg = RunConfig(seed=3, ntc_learning_rate=0.05, bandwidth="0.2")
    again = RunConfig().with_overrides(config.parse(cfg.dumps()))
    assert again == cfg
    assert cfg.digest() == RunConfig(seed=3, ntc_learning_rate=0.05, bandwidth="0.2", out="/x", threads=4).digest()
    assert cfg.digest() != RunConfig(seed=4, ntc_learning_rate=0.05, bandwidth="0.2").digest()
    assert "out =" not in cfg.dumps(hashed_only=True)


def test_out_dir_sources(monkeypatch, tmp_path):
    monkeypatch.delenv(config.OUT_ENV, raising=False)
    assert str(RunConfig().out_dir) == "singlebid-out"
    monkeypatch.setenv(config.OUT_ENV, str(tmp_path))
    assert RunConfig().out_dir == tmp_path
    assert RunConfig().input_path == tmp_path / "bids.csv"
    assert str(RunConfig(out="elsewhere").out_dir) == "elsewhere"
