"""
Screening Rule Language

Parses and evaluates boolean combinations of z-score threshold comparisons
such as ``bm > 0.95 AND mve > 0.3 AND NOT (mom12m > 1.5)``.

Precedence is NOT > AND > OR, binary operators associate to the left and
keywords are case-insensitive. Thresholds are plain decimals.
"""

import logging
import operator
import re
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Mapping, Union

import numpy as np
import pandas as pd
from pyparsing import (CaselessKeyword, OpAssoc, ParseBaseException, ParserElement,
                       Regex, infix_notation, one_of)

from .data import format_month, to_month
from .errors import MissingFeatureError, RuleError, RuleSyntaxError, UnknownTokenError
from .signals import Signal, SignalSet

logger = logging.getLogger(__name__)

ParserElement.enable_packrat()

_COMPARATORS: Dict[str, Callable[[float, float], bool]] = {
    "<": operator.lt,
    ">": operator.gt,
    "<=": operator.le,
    ">=": operator.ge,
}


@dataclass(frozen=True)
class Comparison:
    feature: str
    op: str
    threshold: float

    def evaluate(self, row: Mapping[str, float]) -> bool:
        if self.feature not in row:
            raise MissingFeatureError(self.feature)
        return bool(_COMPARATORS[self.op](float(row[self.feature]), self.threshold))

    def features(self) -> FrozenSet[str]:
        return frozenset([self.feature])

    def __str__(self) -> str:
        return f"{self.feature} {self.op} {_format_threshold(self.threshold)}"


@dataclass(frozen=True)
class And:
    left: "RuleExpr"
    right: "RuleExpr"

    def evaluate(self, row: Mapping[str, float]) -> bool:
        return self.left.evaluate(row) and self.right.evaluate(row)

    def features(self) -> FrozenSet[str]:
        return self.left.features() | self.right.features()

    def __str__(self) -> str:
        return f"({self.left} AND {self.right})"


@dataclass(frozen=True)
class Or:
    left: "RuleExpr"
    right: "RuleExpr"

    def evaluate(self, row: Mapping[str, float]) -> bool:
        return self.left.evaluate(row) or self.right.evaluate(row)

    def features(self) -> FrozenSet[str]:
        return self.left.features() | self.right.features()

    def __str__(self) -> str:
        return f"({self.left} OR {self.right})"


@dataclass(frozen=True)
class Not:
    child: "RuleExpr"

    def evaluate(self, row: Mapping[str, float]) -> bool:
        return not self.child.evaluate(row)

    def features(self) -> FrozenSet[str]:
        return self.child.features()

    def __str__(self) -> str:
        return f"NOT ({self.child})"


RuleExpr = Union[Comparison, And, Or, Not]


def _format_threshold(value: float) -> str:
    if value == 0.0:
        return "0"
    return np.format_float_positional(value, trim="-")


def _fold(node_type):
    def action(tokens):
        items = tokens[0]
        node = items[0]
        for i in range(2, len(items), 2):
            node = node_type(node, items[i])
        return node
    return action


def _make_not(tokens):
    return Not(tokens[0][1])


def _build_grammar() -> ParserElement:
    and_ = CaselessKeyword("AND")
    or_ = CaselessKeyword("OR")
    not_ = CaselessKeyword("NOT")
    identifier = ~(and_ | or_ | not_) + Regex(r"[a-zA-Z_][a-zA-Z0-9_]*")
    number = Regex(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?![0-9eE.])")
    comparison = identifier + one_of("<= >= < >") + number
    comparison.set_parse_action(lambda t: Comparison(t[0], t[1], float(t[2])))
    return infix_notation(comparison, [
        (not_, 1, OpAssoc.RIGHT, _make_not),
        (and_, 2, OpAssoc.LEFT, _fold(And)),
        (or_, 2, OpAssoc.LEFT, _fold(Or)),
    ])


_GRAMMAR = _build_grammar()
_TOKEN_RE = re.compile(r"\s+|<=|>=|<|>|\(|\)|[+-]?(?:\d+(?:\.\d*)?|\.\d+)|[a-zA-Z_][a-zA-Z0-9_]*")


def _check_tokens(text: str) -> None:
    position = 0
    while position < len(text):
        match = _TOKEN_RE.match(text, position)
        if match is None:
            end = position + 1
            while end < len(text) and not text[end].isspace() and _TOKEN_RE.match(text, end) is None:
                end += 1
            raise UnknownTokenError(text, position, text[position:end])
        position = match.end()


def parse_rule(text: str) -> RuleExpr:
    """
    Parse rule text into an expression tree.

    Args:
        text: Rule text, e.g. ``"(bm < -1.02 AND mom12m > 0.53) OR mve > 1.59"``.

    Returns:
        The parsed RuleExpr.

    Raises:
        UnknownTokenError: If the text contains characters outside the grammar.
        RuleSyntaxError: If the tokens do not form a rule; carries the position.
    """
    if not isinstance(text, str):
        raise RuleSyntaxError(f"Rule must be text, got {type(text).__name__}")
    _check_tokens(text)
    try:
        result = _GRAMMAR.parse_string(text, parse_all=True)
    except ParseBaseException as e:
        raise RuleSyntaxError(f"Invalid rule at position {e.loc}: {e.msg}", text=text, position=e.loc) from e
    except RecursionError as e:
        raise RuleSyntaxError("Rule is nested too deeply", text=text, position=0) from e
    return result[0]


def format_rule(expr: RuleExpr) -> str:
    """Canonical fully parenthesised text; parses back to the same tree."""
    return str(expr)


def _require_features(features: FrozenSet[str], row: Mapping[str, float]) -> None:
    missing = features.difference(row)
    if missing:
        raise MissingFeatureError(sorted(missing)[0])


def evaluate_rule(expr: RuleExpr, row: Mapping[str, float]) -> bool:
    """
    Evaluate a rule on one asset's feature row.

    Every referenced feature must be present, including those on a side the
    boolean operators would not reach.

    Raises:
        MissingFeatureError: Naming the first missing feature alphabetically.
    """
    _require_features(expr.features(), row)
    return expr.evaluate(row)


@dataclass(frozen=True)
class RulePair:
    """Buy and sell rules with the months they are effective for."""

    buy: RuleExpr
    sell: RuleExpr
    effective_from: pd.Timestamp
    effective_to: pd.Timestamp

    def __post_init__(self):
        start, end = to_month(self.effective_from), to_month(self.effective_to)
        if start > end:
            raise RuleError(f"Rule effective_from {format_month(start)} is after effective_to {format_month(end)}")
        object.__setattr__(self, "effective_from", start)
        object.__setattr__(self, "effective_to", end)

    @classmethod
    def from_text(cls, buy: str, sell: str, effective_from, effective_to) -> "RulePair":
        return cls(parse_rule(buy), parse_rule(sell), effective_from, effective_to)

    def covers(self, date) -> bool:
        return self.effective_from <= to_month(date) <= self.effective_to

    @property
    def label(self) -> str:
        return f"{format_month(self.effective_from)}..{format_month(self.effective_to)}"


def rule_features(rules: RulePair) -> FrozenSet[str]:
    """Features referenced by either rule of a pair."""
    return rules.buy.features() | rules.sell.features()


def apply_rules(rules: RulePair, cross_section: Mapping[str, Mapping[str, float]],
                date=None) -> SignalSet:
    """
    Classify every asset of a cross-section with a rule pair.

    Buy is checked first, then sell; everything else is Hold.

    Args:
        rules: Effective rule pair.
        cross_section: Mapping asset -> standardized feature row.
        date: Month of the cross-section (defaults to the rule's first month).

    Raises:
        MissingFeatureError: Naming the feature and the asset lacking it.
    """
    date = rules.effective_from if date is None else date
    required = rule_features(rules)
    signals: Dict[str, Signal] = {}
    overlaps = 0
    for asset in sorted(cross_section):
        row = cross_section[asset]
        try:
            _require_features(required, row)
            is_buy = rules.buy.evaluate(row)
            is_sell = rules.sell.evaluate(row)
        except MissingFeatureError as e:
            raise MissingFeatureError(e.feature, asset) from e
        if is_buy:
            signals[asset] = Signal.BUY
            if is_sell:
                overlaps += 1
        elif is_sell:
            signals[asset] = Signal.SELL
    if overlaps:
        logger.warning("%d assets satisfy both buy and sell rules at %s; buy applied",
                       overlaps, format_month(date))
    return SignalSet(date, signals, source="rules")

