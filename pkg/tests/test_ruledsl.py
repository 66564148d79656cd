"""
Unit tests for Screenfolio rule language module.
"""

import numpy as np
import pytest

# Add src to path for imports
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from screenfolio.errors import MissingFeatureError, RuleError, RuleSyntaxError, UnknownTokenError
from screenfolio.ruledsl import (
    And,
    Comparison,
    Not,
    Or,
    RulePair,
    apply_rules,
    evaluate_rule,
    format_rule,
    parse_rule,
    rule_features,
)
from screenfolio.signals import Signal

FEATURES = ("bm", "mve", "mom12m", "gp")
OPS = ("<", ">", "<=", ">=")


def _random_expr(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        return Comparison(FEATURES[rng.integers(len(FEATURES))], OPS[rng.integers(len(OPS))],
                          int(rng.integers(-300, 301)) / 100.0)
    kind = rng.integers(3)
    if kind == 0:
        return Not(_random_expr(rng, depth - 1))
    node = And if kind == 1 else Or
    return node(_random_expr(rng, depth - 1), _random_expr(rng, depth - 1))


def _naive_eval(expr, row):
    if isinstance(expr, Comparison):
        value = row[expr.feature]
        return {"<": value < expr.threshold, ">": value > expr.threshold,
                "<=": value <= expr.threshold, ">=": value >= expr.threshold}[expr.op]
    if isinstance(expr, Not):
        return not _naive_eval(expr.child, row)
    if isinstance(expr, And):
        left = _naive_eval(expr.left, row)
        right = _naive_eval(expr.right, row)
        return left and right
    left = _naive_eval(expr.left, row)
    right = _naive_eval(expr.right, row)
    return left or right


class TestParseRule:
    """Tests for parse_rule."""

    def test_single_comparison(self):
        """Test that 'bm > 0' parses to one comparison."""
        assert parse_rule("bm > 0") == Comparison("bm", ">", 0.0)

    def test_and_chain_is_left_associative(self):
        """Test that a chain of ANDs folds to the left."""
        expected = And(And(Comparison("bm", ">", 0.95), Comparison("mve", ">", 0.3)),
                       Comparison("mom12m", ">", -0.5))
        assert parse_rule("bm > 0.95 AND mve > 0.3 AND mom12m > -0.5") == expected

    def test_precedence(self):
        """Test NOT > AND > OR precedence."""
        a, b, c = (Comparison(f, ">", 0.0) for f in ("bm", "mve", "gp"))
        assert parse_rule("bm > 0 OR mve > 0 AND gp > 0") == Or(a, And(b, c))
        assert parse_rule("NOT bm > 0 AND mve > 0") == And(Not(a), b)

    def test_parentheses_override(self):
        """Test that parentheses group before precedence applies."""
        expr = parse_rule("(bm < -1.02 AND mom12m > 0.53) OR mve > 1.59")
        assert expr == Or(And(Comparison("bm", "<", -1.02), Comparison("mom12m", ">", 0.53)),
                          Comparison("mve", ">", 1.59))

    def test_keywords_case_insensitive(self):
        """Test that lower-case keywords parse the same tree."""
        assert parse_rule("bm > 0 and not mve <= 1") == parse_rule("bm > 0 AND NOT mve <= 1")

    def test_whitespace_insensitive(self):
        """Test that extra whitespace is ignored."""
        assert parse_rule("  bm>0.5\tAND   mve<1 ") == parse_rule("bm > 0.5 AND mve < 1")

    @pytest.mark.parametrize("text", ["bm >", "bm > 0 AND", "AND bm > 0", "(bm > 0", "bm 0", ""])
    def test_syntax_errors(self, text):
        """Test that malformed rules raise RuleSyntaxError."""
        with pytest.raises(RuleSyntaxError):
            parse_rule(text)

    def test_unknown_token(self):
        """Test that '==' is reported with its position."""
        with pytest.raises(UnknownTokenError) as excinfo:
            parse_rule("bm == 1")
        assert excinfo.value.position == 3
        assert excinfo.value.token == "=="

    def test_scientific_notation_rejected(self):
        """Test that thresholds must be plain decimals."""
        with pytest.raises(RuleSyntaxError):
            parse_rule("bm > 1e5")

    def test_round_trip_random_expressions(self):
        """Test that formatted random expressions of depth <= 6 parse back to the same tree."""
        rng = np.random.default_rng(0)
        for _ in range(300):
            expr = _random_expr(rng, 6)
            assert parse_rule(format_rule(expr)) == expr

    @pytest.mark.slow
    def test_round_trip_ten_thousand_expressions(self):
        """Test the parse/format round trip on 10^4 random expressions."""
        rng = np.random.default_rng(100)
        for _ in range(10_000):
            expr = _random_expr(rng, 6)
            assert parse_rule(format_rule(expr)) == expr


class TestEvaluateRule:
    """Tests for evaluate_rule."""

    def test_simple_comparison(self):
        """Test that bm > 0 holds for bm = 1."""
        assert evaluate_rule(parse_rule("bm > 0"), {"bm": 1.0}) is True

    def test_not_guard_blocks_sell(self):
        """Test that the NOT guard keeps a high-momentum asset out of the sell rule."""
        rule = parse_rule("(bm < -0.75 OR mom12m < -0.55 OR mve < -0.75) AND NOT (mom12m > 1.5)")
        assert evaluate_rule(rule, {"bm": -1.0, "mom12m": 2.0, "mve": 0.0}) is False

    def test_weak_and_strict_comparisons(self):
        """Test the boundary behaviour of each operator."""
        row = {"bm": 0.5}
        assert evaluate_rule(parse_rule("bm >= 0.5"), row) is True
        assert evaluate_rule(parse_rule("bm > 0.5"), row) is False
        assert evaluate_rule(parse_rule("bm <= 0.5"), row) is True
        assert evaluate_rule(parse_rule("bm < 0.5"), row) is False

    def test_missing_feature(self):
        """Test that an absent feature raises MissingFeatureError naming it."""
        with pytest.raises(MissingFeatureError) as excinfo:
            evaluate_rule(parse_rule("bm > 0 AND gp > 0"), {"bm": 1.0})
        assert excinfo.value.feature == "gp"

    @pytest.mark.parametrize(
        "text,row",
        [
            ("bm > 0 AND gp > 0", {"bm": -1.0}),
            ("bm > 0 OR gp > 0", {"bm": 1.0}),
            ("NOT (bm > 0 OR mve > 0) AND gp > 0", {"bm": 1.0, "mve": 0.0}),
        ],
    )
    def test_missing_feature_on_unreached_side(self, text, row):
        """Test that a feature the operators never reach must still be present."""
        with pytest.raises(MissingFeatureError) as excinfo:
            evaluate_rule(parse_rule(text), row)
        assert excinfo.value.feature == "gp"

    def test_agrees_with_naive_evaluator(self):
        """Test random expressions against a naive recursive evaluator on random rows."""
        rng = np.random.default_rng(1)
        exprs = [_random_expr(rng, 4) for _ in range(20)]
        for _ in range(10_000):
            row = {f: float(rng.normal()) for f in FEATURES}
            for expr in exprs:
                assert evaluate_rule(expr, row) == _naive_eval(expr, row)

    def test_exhaustive_three_leaf_truth_table(self):
        """Test a 3-leaf tree over all 2^3 truth assignments."""
        expr = parse_rule("(bm > 0 OR mve > 0) AND NOT gp > 0")
        for bits in range(8):
            row = {f: (1.0 if bits >> i & 1 else -1.0) for i, f in enumerate(("bm", "mve", "gp"))}
            assert evaluate_rule(expr, row) == _naive_eval(expr, row)

    def test_features(self):
        """Test that referenced features are collected."""
        pair = RulePair.from_text("bm > 0 AND gp > 0", "mve < 0", "2024-01", "2024-12")
        assert rule_features(pair) == {"bm", "gp", "mve"}


class TestApplyRules:
    """Tests for apply_rules."""

    def _pair(self):
        return RulePair.from_text("bm > 0.5", "mom12m < 0", "2024-01", "2024-12")

    def test_buy_precedence(self):
        """Test that an asset satisfying both rules is a Buy."""
        signals = apply_rules(self._pair(), {"AAA": {"bm": 1.0, "mom12m": -1.0}})
        assert signals.get("AAA") is Signal.BUY

    def test_classification(self):
        """Test Buy, Sell and Hold assignment."""
        section = {
            "AAA": {"bm": 1.0, "mom12m": 0.3},
            "BBB": {"bm": 0.0, "mom12m": -0.3},
            "CCC": {"bm": 0.0, "mom12m": 0.3},
        }
        signals = apply_rules(self._pair(), section, "2024-03")
        assert signals.buys == ("AAA",)
        assert signals.sells == ("BBB",)
        assert signals.get("CCC") is Signal.HOLD
        assert signals.source == "rules"

    def test_empty_cross_section(self):
        """Test that an empty cross-section gives an empty SignalSet."""
        assert len(apply_rules(self._pair(), {})) == 0

    def test_missing_feature_behind_satisfied_or(self):
        """Test that an asset already satisfying the left side of OR still needs every feature."""
        pair = RulePair.from_text("bm > 0 OR gp > 0", "bm < 0", "2024-01", "2024-12")
        with pytest.raises(MissingFeatureError) as excinfo:
            apply_rules(pair, {"AAA": {"bm": 1.0}})
        assert excinfo.value.feature == "gp"
        assert excinfo.value.asset == "AAA"

    def test_2024_rules_on_hand_built_cross_section(self):
        """Test the published 2024 buy and sell rules on six hand-evaluated assets."""
        pair = RulePair.from_text(
            "bm > 0.95 AND mve > 0.3 AND mom12m > -0.5",
            "(bm < -0.75 OR mom12m < -0.55 OR mve < -0.75) AND NOT (mom12m > 1.5)",
            "2024-01", "2024-12",
        )
        section = {
            "CHEAP": {"bm": 1.2, "mve": 0.5, "mom12m": 0.0},
            "SMALLCHEAP": {"bm": 1.2, "mve": 0.2, "mom12m": 0.0},
            "GLAMOUR": {"bm": -1.0, "mve": 0.0, "mom12m": 0.2},
            "ROCKET": {"bm": -1.0, "mve": 0.0, "mom12m": 2.0},
            "TINY": {"bm": 0.0, "mve": -1.0, "mom12m": 0.0},
            "FALLING": {"bm": 1.0, "mve": 0.4, "mom12m": -0.6},
        }
        signals = apply_rules(pair, section, "2024-06")
        assert signals.pairs() == {
            "CHEAP": Signal.BUY,
            "GLAMOUR": Signal.SELL,
            "TINY": Signal.SELL,
            "FALLING": Signal.SELL,
        }
        assert signals.get("SMALLCHEAP") is Signal.HOLD
        assert signals.get("ROCKET") is Signal.HOLD

    def test_missing_feature_names_asset(self):
        """Test that the asset lacking a feature is named."""
        with pytest.raises(MissingFeatureError) as excinfo:
            apply_rules(self._pair(), {"AAA": {"bm": 0.0}})
        assert excinfo.value.asset == "AAA"
        assert excinfo.value.feature == "mom12m"

    def test_pair_range_must_be_ordered(self):
        """Test that effective_from after effective_to is rejected."""
        with pytest.raises(RuleError):
            RulePair.from_text("bm > 0", "bm < 0", "2024-12", "2024-01")
