"""
Unit tests for Screenfolio rule schedule module.
"""

import json

import pytest

# Add src to path for imports
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

import screenfolio.schedule as schedule_module
from screenfolio.errors import ConfigError, MissingFileError, RuleScheduleError, RuleSyntaxError
from screenfolio.ruledsl import RulePair


def _year(year, buy="bm > 0.5", sell="bm < -0.5"):
    return {"effective_from": f"{year}-01", "effective_to": f"{year}-12", "buy": buy, "sell": sell}


class TestRuleSchedule:
    """Tests for RuleSchedule class."""

    def test_empty_schedule(self):
        """Test that an empty schedule covers nothing."""
        manager = schedule_module.RuleSchedule()
        assert len(manager) == 0
        assert manager.is_covered("2024-03") is False

    def test_rules_for_year(self):
        """Test that a 2024 month resolves to the 2024 rules."""
        manager = schedule_module.RuleSchedule.from_records([_year(2023, buy="gp > 1"), _year(2024)])
        rules = manager.rules_for("2024-03")
        assert rules.label == "2024-01..2024-12"
        assert str(rules.buy) == "bm > 0.5"

    def test_rules_at_boundaries(self):
        """Test that both ends of an effective range are covered."""
        manager = schedule_module.RuleSchedule.from_records([_year(2024)])
        assert manager.is_covered("2024-01") is True
        assert manager.is_covered("2024-12") is True
        assert manager.is_covered("2025-01") is False

    def test_uncovered_month(self):
        """Test that a month without a rule raises RuleScheduleError."""
        manager = schedule_module.RuleSchedule.from_records([_year(2024)])
        with pytest.raises(RuleScheduleError):
            manager.rules_for("2023-06")

    def test_overlapping_rules(self):
        """Test that two rules covering a month raise an ambiguity error."""
        overlapping = {"effective_from": "2024-06", "effective_to": "2025-05",
                       "buy": "gp > 0", "sell": "gp < 0"}
        manager = schedule_module.RuleSchedule.from_records([_year(2024), overlapping])
        with pytest.raises(RuleScheduleError) as excinfo:
            manager.rules_for("2024-08")
        assert len(excinfo.value.details["rules"]) == 2
        assert manager.rules_for("2024-03").label == "2024-01..2024-12"

    def test_rules_sorted(self):
        """Test that rules are ordered by start month."""
        manager = schedule_module.RuleSchedule([
            RulePair.from_text("bm > 0", "bm < 0", "2025-01", "2025-12"),
            RulePair.from_text("bm > 0", "bm < 0", "2024-01", "2024-12"),
        ])
        assert [r.label for r in manager.rules] == ["2024-01..2024-12", "2025-01..2025-12"]


class TestRuleScheduleRecords:
    """Tests for rule file parsing."""

    def test_not_a_list(self):
        """Test that a non-list rule file is rejected."""
        with pytest.raises(ConfigError):
            schedule_module.RuleSchedule.from_records({"buy": "bm > 0"})

    def test_missing_field(self):
        """Test that a record without 'sell' is rejected."""
        record = _year(2024)
        del record["sell"]
        with pytest.raises(ConfigError):
            schedule_module.RuleSchedule.from_records([record])

    @pytest.mark.parametrize("month", ["2024-13", "2024/01", 202401, "24-01"])
    def test_invalid_month(self, month):
        """Test that invalid effective months are rejected."""
        record = _year(2024)
        record["effective_from"] = month
        with pytest.raises(ConfigError):
            schedule_module.RuleSchedule.from_records([record])

    def test_reversed_range(self):
        """Test that effective_from after effective_to is rejected."""
        record = {"effective_from": "2024-12", "effective_to": "2024-01", "buy": "bm > 0", "sell": "bm < 0"}
        with pytest.raises(ConfigError):
            schedule_module.RuleSchedule.from_records([record])

    def test_bad_rule_names_record(self):
        """Test that a syntax error names the offending record."""
        with pytest.raises(RuleSyntaxError) as excinfo:
            schedule_module.RuleSchedule.from_records([_year(2023), _year(2024, buy="bm >")])
        assert excinfo.value.details["record"] == 1

    def test_load_and_records(self, tmp_path):
        """Test loading a rule file and writing it back as records."""
        path = tmp_path / "rules.json"
        records = [_year(2024, buy="(bm > 0.5 AND gp > 0.2) OR mom12m > 1.2")]
        path.write_text(json.dumps(records), encoding="utf-8")
        manager = schedule_module.RuleSchedule.load(path)
        assert len(manager) == 1
        out = manager.to_records()[0]
        assert out["effective_from"] == "2024-01"
        assert schedule_module.RuleSchedule.from_records(manager.to_records()).rules == manager.rules

    def test_load_missing_file(self, tmp_path):
        """Test that an absent rule file raises MissingFileError."""
        with pytest.raises(MissingFileError):
            schedule_module.RuleSchedule.load(tmp_path / "absent.json")

    def test_load_invalid_json(self, tmp_path):
        """Test that a malformed rule file raises ConfigError."""
        path = tmp_path / "rules.json"
        path.write_text("[{", encoding="utf-8")
        with pytest.raises(ConfigError):
            schedule_module.RuleSchedule.load(path)
