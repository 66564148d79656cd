"""
Unit tests for Screenfolio agents and signals modules.
"""

import itertools
import math

import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

# Add src to path for imports
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from screenfolio.agents import (
    UNION,
    DesignatedAgent,
    LogisticFit,
    analyst_agent,
    combine_consensus,
    combine_consensus_with_audit,
    decay_weighted_sum,
    fit_logistic_irls,
    group_events,
    logistic_agent,
    logistic_training_set,
    make_fallback,
    novy_marx_agent,
    rule_agent,
    sentiment_agent,
    signal_hit_rate,
)
from screenfolio.data import CharacteristicsPanel, ScoredEvent, month_end
from screenfolio.errors import AgentError, RuleScheduleError, SeparationError
from screenfolio.schedule import RuleSchedule
from screenfolio.signals import Signal, SignalSet

BUY, SELL, HOLD = Signal.BUY, Signal.SELL, Signal.HOLD


def _event(asset, day, value):
    return ScoredEvent(asset, pd.Timestamp(day), value)


class TestSignalSet:
    """Tests for SignalSet."""

    def test_hold_not_stored(self):
        """Test that Hold entries are dropped and absent assets read as Hold."""
        signals = SignalSet("2020-01", {"a": BUY, "b": HOLD, "c": "sell"})
        assert signals.screened == ("a", "c")
        assert signals.get("b") is HOLD
        assert signals.get("zzz") is HOLD
        assert signals.get("c") is SELL

    def test_restrict_and_frame(self):
        """Test universe restriction and the long frame layout."""
        signals = SignalSet("2020-01", {"a": BUY, "b": SELL}).restrict(["b"])
        frame = signals.to_frame()
        assert frame.to_dict("records") == [{"date": "2020-01", "asset": "b", "signal": "sell"}]


class TestDecayWeightedSum:
    """Tests for decay_weighted_sum."""

    def test_event_at_month_end(self):
        """Test that an age-0 event keeps its value."""
        assert decay_weighted_sum([_event("a", "2020-01-31", 1.0)], month_end("2020-01")) == pytest.approx(1.0)

    def test_one_half_life(self):
        """Test that a 7-day-old event with half-life 7 is halved."""
        assert decay_weighted_sum([_event("a", "2020-01-24", 1.0)], month_end("2020-01"), 7.0) == pytest.approx(0.5)

    def test_two_events(self):
        """Test 0.4 at age 0 plus 0.4 at age 14 sums to 0.5."""
        events = [_event("a", "2020-01-31", 0.4), _event("a", "2020-01-17", 0.4)]
        assert decay_weighted_sum(events, month_end("2020-01"), 7.0) == pytest.approx(0.5)

    def test_event_after_month_end(self):
        """Test that a future event raises AgentError."""
        with pytest.raises(AgentError):
            decay_weighted_sum([_event("a", "2020-02-01", 1.0)], month_end("2020-01"))

    def test_group_events_by_month(self):
        """Test that grouping keeps only the month's events."""
        events = [_event("a", "2020-01-01", 1.0), _event("a", "2020-01-31", 1.0),
                  _event("b", "2020-02-01", 1.0)]
        grouped = group_events(events, "2020-01")
        assert list(grouped) == ["a"]
        assert len(grouped["a"]) == 2


class TestSentimentAgent:
    """Tests for sentiment_agent."""

    def test_thresholds(self):
        """Test buy above 0.1, hold at exactly 0.1 and sell below -0.1."""
        scores = {
            "up": [_event("up", "2020-01-31", 0.25)],
            "edge": [_event("edge", "2020-01-31", 0.1)],
            "down": [_event("down", "2020-01-31", -0.3)],
        }
        signals = sentiment_agent(scores, month_end("2020-01"), 0.1)
        assert signals.get("up") is BUY
        assert signals.get("edge") is HOLD
        assert signals.get("down") is SELL
        assert signals.get("silent") is HOLD

    def test_universe_restriction(self):
        """Test that assets outside the universe are ignored."""
        scores = {"a": [_event("a", "2020-01-31", 1.0)], "b": [_event("b", "2020-01-31", 1.0)]}
        assert sentiment_agent(scores, month_end("2020-01"), universe=["b"]).screened == ("b",)


class TestAnalystAgent:
    """Tests for analyst_agent."""

    def _signal(self, current, previous):
        cur = {"a": [_event("a", "2020-02-29", current)]}
        prev = {"a": [_event("a", "2020-01-31", previous)]}
        return analyst_agent(cur, prev, month_end("2020-02"), month_end("2020-01"), 0.5).get("a")

    def test_rising_level_is_sell(self):
        """Test that a change of +0.8 is a Sell."""
        assert self._signal(3.8, 3.0) is SELL

    def test_no_change_is_hold(self):
        """Test that a change of 0 is a Hold."""
        assert self._signal(3.0, 3.0) is HOLD

    def test_falling_level_is_buy(self):
        """Test that a change of -0.6 is a Buy."""
        assert self._signal(2.4, 3.0) is BUY


class TestLogisticAgent:
    """Tests for the logistic agent."""

    def test_all_labels_one(self):
        """Test that constant labels raise SeparationError."""
        X = np.random.default_rng(0).normal(size=(50, 2))
        with pytest.raises(SeparationError):
            fit_logistic_irls(X, np.ones(50))

    def test_perfect_separation(self):
        """Test that separable labels raise SeparationError."""
        X = np.linspace(-2, 2, 40).reshape(-1, 1)
        with pytest.raises(SeparationError):
            fit_logistic_irls(X, (X[:, 0] > 0).astype(float))

    def test_recovers_known_coefficients(self):
        """Test that beta = (1, -1, 0) is recovered within 0.1 from 5000 draws."""
        rng = np.random.default_rng(1)
        X = rng.standard_normal((5000, 3))
        beta = np.array([1.0, -1.0, 0.0])
        y = (rng.random(5000) < expit(X @ beta)).astype(float)
        fit = fit_logistic_irls(X, y, ["a", "b", "c"])
        np.testing.assert_allclose(fit.coef, beta, atol=0.1)
        assert abs(fit.intercept) < 0.1
        assert fit.trace[-1][0] == fit.iterations

    def test_decile_counts(self):
        """Test that a 100-asset cross-section gives 10 Buys and 10 Sells."""
        fit = LogisticFit(("x",), 0.0, np.array([1.0]), 1)
        rows = {f"A{j:03d}": {"x": j / 10.0} for j in range(100)}
        signals = logistic_agent(None, None, rows, ["x"], "2020-01", fit=fit)
        assert len(signals.buys) == 10 and len(signals.sells) == 10
        assert "A099" in signals.buys and "A000" in signals.sells

    def test_needs_thirty_observations(self):
        """Test that fewer than 30 observations raise AgentError."""
        with pytest.raises(AgentError):
            logistic_agent(np.zeros((10, 1)), np.zeros(10), {}, ["x"], "2020-01")

    def test_training_set_pairs_features_with_next_month(self):
        """Test that features at s are labelled by the return at s+1."""
        chars = CharacteristicsPanel.from_records([
            ("2020-01", "a", "x", 1.0), ("2020-01", "b", "x", -1.0),
            ("2020-02", "a", "x", 2.0), ("2020-02", "b", "x", -2.0),
        ])
        index = pd.date_range("2020-01-01", periods=3, freq="MS")
        returns = pd.DataFrame({"a": [0.0, 0.05, -0.02], "b": [0.0, -0.01, 0.03]}, index=index)
        X, y = logistic_training_set(chars, returns, ["x"], "2020-03", 3)
        np.testing.assert_array_equal(X[:, 0], [1.0, -1.0, 2.0, -2.0])
        np.testing.assert_array_equal(y, [1.0, 0.0, 0.0, 1.0])


class TestNovyMarxAgent:
    """Tests for novy_marx_agent."""

    def test_five_hundred_assets(self):
        """Test 150 Buys, 150 Sells and 200 Holds."""
        rng = np.random.default_rng(2)
        assets = [f"A{j:03d}" for j in range(500)]
        signals = novy_marx_agent(dict(zip(assets, rng.normal(size=500))),
                                  dict(zip(assets, rng.normal(size=500))), "2020-01")
        assert len(signals.buys) == 150 and len(signals.sells) == 150

    def test_ties_by_identifier(self):
        """Test that equal combined ranks are broken by asset identifier."""
        assets = [f"A{j}" for j in range(10)]
        signals = novy_marx_agent(dict.fromkeys(assets, 1.0), dict.fromkeys(assets, 1.0), "2020-01")
        assert signals.buys == ("A0", "A1", "A2")
        assert signals.sells == ("A7", "A8", "A9")

    def test_ranking(self):
        """Test that high profitability plus value is bought."""
        assets = [f"A{j}" for j in range(10)]
        prof = {a: float(j) for j, a in enumerate(assets)}
        signals = novy_marx_agent(prof, dict(prof), "2020-01")
        assert signals.buys == ("A7", "A8", "A9")
        assert signals.sells == ("A0", "A1", "A2")

    def test_too_few_assets(self):
        """Test that too small a universe raises AgentError."""
        with pytest.raises(AgentError):
            novy_marx_agent({"a": 1.0}, {"a": 1.0}, "2020-01", universe_size=10)


class TestConsensus:
    """Tests for combine_consensus."""

    def test_small_intersection_falls_back_to_union(self):
        """Test that an intersection of one asset falls back to the union."""
        s1 = SignalSet("2020-01", {"A": BUY})
        s2 = SignalSet("2020-01", {"A": BUY, "B": SELL})
        combined, audit = combine_consensus_with_audit([s1, s2])
        assert combined.pairs() == {"A": BUY, "B": SELL}
        assert audit.fallback_used is True
        assert audit.intersection_size == 1

    def test_intersection(self):
        """Test that an intersection of two assets is kept."""
        s1 = SignalSet("2020-01", {"A": BUY, "B": BUY})
        s2 = SignalSet("2020-01", {"A": BUY, "B": BUY, "C": SELL})
        assert combine_consensus([s1, s2]).pairs() == {"A": BUY, "B": BUY}

    def test_union_drops_conflicts(self):
        """Test that the union fallback drops assets with opposite actions."""
        s1 = SignalSet("2020-01", {"A": BUY, "B": BUY})
        s2 = SignalSet("2020-01", {"A": SELL, "B": BUY})
        combined, audit = combine_consensus_with_audit([s1, s2])
        assert combined.pairs() == {"B": BUY}
        assert audit.conflicts_dropped == 1

    def test_designated_fallback(self):
        """Test that a designated agent's set is used on fallback."""
        s1 = SignalSet("2020-01", {"A": BUY}, source="rules")
        s2 = SignalSet("2020-01", {"B": SELL, "C": BUY}, source="sentiment")
        assert combine_consensus([s1, s2], DesignatedAgent(1)).pairs() == {"B": SELL, "C": BUY}
        assert combine_consensus([s1, s2], make_fallback("rules")).pairs() == {"A": BUY}

    def test_majority(self):
        """Test that two votes of three decide."""
        s1 = SignalSet("2020-01", {"A": BUY, "B": SELL})
        s2 = SignalSet("2020-01", {"A": BUY, "B": BUY})
        s3 = SignalSet("2020-01", {"C": SELL})
        assert combine_consensus([s1, s2, s3]).pairs() == {"A": BUY}

    def test_mismatched_dates(self):
        """Test that sets from different months are rejected."""
        with pytest.raises(AgentError):
            combine_consensus([SignalSet("2020-01"), SignalSet("2020-02")])

    @pytest.mark.parametrize("count", [1, 4])
    def test_set_count(self, count):
        """Test that only 2 or 3 sets can be combined."""
        with pytest.raises(AgentError):
            combine_consensus([SignalSet("2020-01")] * count)

    def test_intersection_is_subset_of_inputs(self):
        """Test that a signed intersection only holds pairs present in every input."""
        rng = np.random.default_rng(3)
        actions = [BUY, SELL, HOLD]
        assets = [f"A{j}" for j in range(20)]
        for _ in range(200):
            s1 = SignalSet("2020-01", {a: actions[rng.integers(3)] for a in assets})
            s2 = SignalSet("2020-01", {a: actions[rng.integers(3)] for a in assets})
            combined, audit = combine_consensus_with_audit([s1, s2])
            if audit.fallback_used:
                continue
            for asset, action in combined.pairs().items():
                assert s1.get(asset) is action and s2.get(asset) is action


    @staticmethod
    def _two_agent_oracle(first, second):
        agreed = {a: s for a, s in first.items() if s is not HOLD and second.get(a, HOLD) is s}
        if len(agreed) > 1:
            return agreed
        union = {}
        for asset in set(first) | set(second):
            actions = {first.get(asset, HOLD), second.get(asset, HOLD)} - {HOLD}
            if len(actions) == 1:
                union[asset] = actions.pop()
        return union

    def test_two_agents_exhaustive(self):
        """Test every pair of action assignments on four assets against a brute-force rule."""
        assets = ("A", "B", "C", "D")
        assignments = [dict(zip(assets, combo)) for combo in itertools.product((BUY, SELL, HOLD), repeat=4)]
        sets = [SignalSet("2020-01", assignment) for assignment in assignments]
        for first, s1 in zip(assignments, sets):
            for second, s2 in zip(assignments, sets):
                expected = self._two_agent_oracle(first, second)
                assert combine_consensus([s1, s2]).pairs() == expected
                assert combine_consensus([s2, s1]).pairs() == expected

    @pytest.mark.parametrize("votes", list(itertools.product((BUY, SELL, HOLD), repeat=3)))
    def test_three_agents_every_single_asset_vote(self, votes):
        """Test the two-of-three majority on every single-asset vote."""
        sets = [SignalSet("2020-01", {"A": vote}) for vote in votes]
        winners = [a for a in (BUY, SELL) if votes.count(a) >= 2]
        expected = {"A": winners[0]} if winners else {}
        assert combine_consensus(sets).pairs() == expected

    def test_order_insensitive(self):
        """Test that permuting the inputs never changes the combined signals."""
        rng = np.random.default_rng(8)
        actions = [BUY, SELL, HOLD]
        assets = [f"A{j}" for j in range(6)]
        names = ["rules", "sentiment", "analyst"]
        for _ in range(100):
            sets = [SignalSet("2020-01", {a: actions[rng.integers(3)] for a in assets}, source=name)
                    for name in names]
            for inputs, fallback in ((sets[:2], UNION), (sets[:2], make_fallback("sentiment")),
                                     (sets, UNION)):
                expected = combine_consensus(inputs, fallback).pairs()
                for permuted in itertools.permutations(inputs):
                    assert combine_consensus(list(permuted), fallback).pairs() == expected


class TestRuleAgent:
    """Tests for rule_agent."""

    def _schedule(self):
        return RuleSchedule.from_records([
            {"effective_from": "2024-01", "effective_to": "2024-12", "buy": "bm > 0", "sell": "bm < 0"},
        ])

    def test_uses_year_rules(self):
        """Test that a 2024 month is screened by the 2024 rules."""
        signals = rule_agent(self._schedule(), {"a": {"bm": 1.0}, "b": {"bm": -1.0}}, "2024-03")
        assert signals.pairs() == {"a": BUY, "b": SELL}

    def test_uncovered_month(self):
        """Test that a month without rules raises RuleScheduleError."""
        with pytest.raises(RuleScheduleError):
            rule_agent(self._schedule(), {"a": {"bm": 1.0}}, "2025-01")


class TestSignalHitRate:
    """Tests for signal_hit_rate."""

    def test_hit_rate(self):
        """Test the share of correctly signed signals."""
        signals = [SignalSet("2020-01", {"a": BUY, "b": SELL, "c": BUY})]
        realized = {pd.Timestamp("2020-01-01"): {"a": 0.02, "b": 0.01, "c": 0.03}}
        assert signal_hit_rate(signals, realized) == pytest.approx(2 / 3)

    def test_no_signals(self):
        """Test that no realized signal gives NaN."""
        assert math.isnan(signal_hit_rate([SignalSet("2020-01")], {}))
