"""
Unit tests for Screenfolio synthetic bundle generator.
"""

import json

import numpy as np
import pandas as pd

# Add src to path for imports
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from screenfolio.agents import signal_hit_rate
from screenfolio.backtest import run_screening
from screenfolio.data import load_bundle, shift_months
from screenfolio.ruledsl import parse_rule
from screenfolio.schedule import RuleSchedule
from screenfolio.settings import BacktestConfig, SettingsManager, SyntheticSpec
from screenfolio.synthetic import FEATURES, backtest_config, generate_synthetic, generate_world


def _spec(**overrides):
    values = dict(seed=5, n_assets=12, n_months=48, start="2010-01")
    values.update(overrides)
    return SyntheticSpec(**values)


class TestGenerateWorld:
    """Tests for generate_world."""

    def test_panel_shapes(self):
        """Test the size of every generated panel."""
        world = generate_world(_spec())
        assert len(world.months) == 48
        assert len(world.returns) == 48 * 12
        assert len(world.characteristics) == 48 * 12 * len(FEATURES)
        assert list(world.factors.columns) == ["date", "f1", "f2", "f3"]
        assert len(world.benchmark) == 48
        assert len(world.rules) == 4

    def test_deterministic(self):
        """Test that one seed always yields the same world."""
        first, second = generate_world(_spec()), generate_world(_spec())
        pd.testing.assert_frame_equal(first.returns, second.returns)
        pd.testing.assert_frame_equal(first.sentiment, second.sentiment)
        assert first.rules == second.rules

    def test_seed_changes_world(self):
        """Test that another seed yields other returns."""
        first, second = generate_world(_spec()), generate_world(_spec(seed=6))
        assert not np.allclose(first.returns["ret"], second.returns["ret"])

    def test_returns_above_total_loss(self):
        """Test that every simple return stays above -1."""
        world = generate_world(_spec())
        assert (world.returns["ret"] > -1.0).all()

    def test_event_ranges(self):
        """Test that sentiment lies in [-1, 1] and recommendations in [1, 5]."""
        world = generate_world(_spec(articles_per_month=2.0, analyst_updates_per_month=1.0))
        assert world.sentiment["score"].between(-1.0, 1.0).all()
        assert world.analyst["recommendation"].between(1.0, 5.0).all()
        months = world.sentiment["date"].str[:7]
        assert months.min() >= "2010-01" and months.max() <= "2013-12"

    def test_missing_rate(self):
        """Test that the missing-value rate leaves gaps in the characteristics."""
        world = generate_world(_spec(missing_rate=0.2))
        share = world.characteristics["value"].isna().mean()
        assert 0.1 < share < 0.3
        assert generate_world(_spec(missing_rate=0.0)).characteristics["value"].notna().all()

    def test_rules_parse(self):
        """Test that generated rules form a valid yearly schedule."""
        world = generate_world(_spec())
        schedule = RuleSchedule.from_records(world.rules)
        for record in world.rules:
            parse_rule(record["buy"])
            parse_rule(record["sell"])
        assert schedule.is_covered("2010-01") and schedule.is_covered("2013-12")


class TestWriteBundle:
    """Tests for writing and loading a generated bundle."""

    def test_files_written(self, tmp_path):
        """Test that every role gets a file."""
        paths = generate_synthetic(_spec(), tmp_path / "bundle")
        assert set(paths) == {"returns", "characteristics", "factors", "sentiment", "analyst",
                              "benchmark", "rules", "config"}
        assert all(path.exists() for path in paths.values())

    def test_config_matches_bundle(self):
        """Test the generated backtest configuration."""
        config = backtest_config(_spec())
        assert config["train_window"] == 24
        assert config["agents"] == ["rules", "sentiment"]
        assert BacktestConfig.from_dict(config).train_window == 24

    def test_bundle_loads(self, tmp_path):
        """Test that the written configuration loads its own bundle."""
        paths = generate_synthetic(_spec(), tmp_path)
        config = SettingsManager(paths["config"]).load()
        bundle = load_bundle(config)
        assert len(bundle.returns.dates) == 48
        assert len(bundle.returns.assets) == 12
        assert bundle.factors is not None and bundle.factors.k == 3
        assert len(bundle.sentiment) > 0
        assert set(bundle.characteristics.features) == set(FEATURES)

    def test_rules_file(self, tmp_path):
        """Test that the rule file is a JSON list of yearly records."""
        paths = generate_synthetic(_spec(), tmp_path)
        records = json.loads(paths["rules"].read_text(encoding="utf-8"))
        assert [r["effective_from"] for r in records] == ["2010-01", "2011-01", "2012-01", "2013-01"]


class TestNullWorld:
    """Tests for a world where nothing predicts returns."""

    def test_rule_signals_are_coin_flips(self, tmp_path):
        """Test that rule signals hit 50% +/- 5% when predictive strength is 0."""
        spec = SyntheticSpec(predictive_strength=0.0, sentiment_strength=0.0, analyst_strength=0.0)
        paths = generate_synthetic(spec, tmp_path)
        config = SettingsManager(paths["config"]).load()
        config.agents = ["rules"]
        config.train_window = 24
        bundle = load_bundle(config)
        screens = run_screening(config, bundle)
        wide = bundle.returns.wide
        next_returns = {month: wide.loc[shift_months(month, 1)].to_dict()
                        for month in wide.index if shift_months(month, 1) in wide.index}
        signals = [screen.signals for screen in screens]
        total = sum(len(s) for s in signals if s.date in next_returns)
        assert total >= 1000
        assert 0.45 <= signal_hit_rate(signals, next_returns) <= 0.55
