"""
Rule Schedule Module

Determines which buy/sell rule pair is effective for a given month. Rules are
regenerated once a year, so a schedule is a list of RulePairs whose effective
ranges must not overlap.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional

import pandas as pd

from .data import format_month, to_month
from .errors import ConfigError, MissingFileError, RuleScheduleError, RuleSyntaxError
from .ruledsl import RulePair, parse_rule

logger = logging.getLogger(__name__)


class RuleSchedule:
    """
    Manages the effective rule pair per month.

    Looks up the RulePair whose [effective_from, effective_to] range contains
    a month, rejecting months with no coverage or with more than one rule.
    """

    def __init__(self, rules: Optional[Iterable[RulePair]] = None):
        """
        Initialize the schedule.

        Args:
            rules: Rule pairs, in any order.
        """
        self._rules: List[RulePair] = sorted(rules or [], key=lambda r: (r.effective_from, r.effective_to))

    @property
    def rules(self) -> List[RulePair]:
        """Get the rule pairs ordered by start month."""
        return list(self._rules)

    def __len__(self) -> int:
        return len(self._rules)

    @staticmethod
    def _parse_month(month_str: object, field_name: str) -> pd.Timestamp:
        """
        Parse a month bound in YYYY-MM format.

        Raises:
            ConfigError: If month_str is not a valid YYYY-MM string.
        """
        if not isinstance(month_str, str):
            raise ConfigError(f"Rule field '{field_name}' must be a YYYY-MM string", field=field_name)
        try:
            return to_month(month_str)
        except ValueError as e:
            raise ConfigError(f"Invalid month '{month_str}' for '{field_name}': expected YYYY-MM",
                              field=field_name) from e

    def covering(self, date) -> List[RulePair]:
        month = to_month(date)
        return [rule for rule in self._rules if rule.covers(month)]

    def is_covered(self, date) -> bool:
        """Check whether exactly one rule pair is effective at a month."""
        return len(self.covering(date)) == 1

    def rules_for(self, date) -> RulePair:
        """
        Get the rule pair effective at a month.

        Raises:
            RuleScheduleError: If no rule, or more than one, covers the month.
        """
        matches = self.covering(date)
        month = format_month(date)
        if not matches:
            raise RuleScheduleError(f"No screening rule is effective for {month}", date=month)
        if len(matches) > 1:
            raise RuleScheduleError(f"{len(matches)} screening rules cover {month}: "
                                    + ", ".join(rule.label for rule in matches),
                                    date=month, rules=[rule.label for rule in matches])
        return matches[0]

    @classmethod
    def from_records(cls, records: object) -> "RuleSchedule":
        """
        Build a schedule from rule-file records.

        Each record has ``effective_from``, ``effective_to`` (YYYY-MM) and
        ``buy``/``sell`` rule text.

        Raises:
            ConfigError: If the records do not follow the schema.
            RuleSyntaxError: If rule text does not parse; names the record.
        """
        if not isinstance(records, list):
            raise ConfigError("Rule file must contain a JSON list of rule records")
        rules = []
        for index, record in enumerate(records):
            if not isinstance(record, dict):
                raise ConfigError(f"Rule record {index} must be an object", record=index)
            for key in ("effective_from", "effective_to", "buy", "sell"):
                if key not in record:
                    raise ConfigError(f"Rule record {index} is missing '{key}'", record=index, field=key)
            start = cls._parse_month(record["effective_from"], "effective_from")
            end = cls._parse_month(record["effective_to"], "effective_to")
            if start > end:
                raise ConfigError(f"Rule record {index}: effective_from is after effective_to", record=index)
            try:
                buy = parse_rule(record["buy"])
                sell = parse_rule(record["sell"])
            except RuleSyntaxError as e:
                e.details["record"] = index
                raise
            rules.append(RulePair(buy, sell, start, end))
        return cls(rules)

    @classmethod
    def load(cls, path) -> "RuleSchedule":
        """Load a JSON rule file."""
        path = Path(path)
        if not path.exists():
            raise MissingFileError(str(path), "rules")
        try:
            with open(path, "r", encoding="utf-8") as f:
                records = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Rule file {path} is not valid JSON: {e}", path=str(path)) from e
        schedule = cls.from_records(records)
        logger.debug("Loaded %d rule pairs from %s", len(schedule), path)
        return schedule

    def to_records(self) -> List[dict]:
        return [
            {
                "effective_from": format_month(rule.effective_from),
                "effective_to": format_month(rule.effective_to),
                "buy": str(rule.buy),
                "sell": str(rule.sell),
            }
            for rule in self._rules
        ]
