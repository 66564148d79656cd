"""
Panel Data Module

Loads and validates the return, characteristic, factor and event files,
standardizes characteristics cross-sectionally and cuts the rolling windows
the estimators consume.
"""

import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DataError, DuplicateKeyError, MissingFileError, ParseError

if TYPE_CHECKING:
    from .settings import BacktestConfig

logger = logging.getLogger(__name__)

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")
_DAY_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")


def to_month(value) -> pd.Timestamp:
    """
    Normalize a month to its first-of-month timestamp.

    Args:
        value: 'YYYY-MM' string, or anything pandas accepts as a timestamp.

    Returns:
        Timestamp at midnight on the first day of the month.

    Raises:
        ValueError: If a string is not in YYYY-MM (or YYYY-MM-DD) format.
    """
    if isinstance(value, str):
        match = _MONTH_RE.match(value.strip())
        if match is None:
            match = _DAY_RE.match(value.strip())
        if match is None:
            raise ValueError(f"Invalid month '{value}': expected YYYY-MM")
        year, month = int(match.group(1)), int(match.group(2))
        if not 1 <= month <= 12:
            raise ValueError(f"Month must be 01-12, got {month:02d}")
        return pd.Timestamp(year=year, month=month, day=1)
    stamp = pd.Timestamp(value)
    return pd.Timestamp(year=stamp.year, month=stamp.month, day=1)


def month_end(month) -> pd.Timestamp:
    """Last calendar day of the month containing ``month``."""
    return to_month(month) + pd.offsets.MonthEnd(0)


def shift_months(month, offset: int) -> pd.Timestamp:
    """Move a month by ``offset`` calendar months."""
    return to_month(month) + pd.DateOffset(months=offset)


def format_month(month) -> str:
    return to_month(month).strftime("%Y-%m")


def _read_table(path: Path, required: Sequence[str], purpose: str) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(str(path), purpose)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"Could not parse {path}: {e}", path=str(path)) from e
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: header must contain {', '.join(required)}; missing {', '.join(missing)}",
                         path=str(path), line=1)
    for column in frame.columns:
        frame[column] = frame[column].str.strip()
    return frame


def _first_bad_line(mask: pd.Series) -> int:
    # Header is line 1; data rows start at line 2.
    return int(np.flatnonzero(mask.to_numpy())[0]) + 2


def _parse_months(frame: pd.DataFrame, column: str, path: Path) -> pd.Series:
    text = frame[column]
    parts = text.str.extract(_MONTH_RE)
    bad = parts[0].isna() | ~parts[1].fillna("00").astype(int).between(1, 12)
    if bad.any():
        line = _first_bad_line(bad)
        raise ParseError(f"{path}:{line}: invalid month '{text[bad].iloc[0]}' (expected YYYY-MM)",
                         path=str(path), line=line)
    return pd.to_datetime(text + "-01", format="%Y-%m-%d")


def _parse_days(frame: pd.DataFrame, column: str, path: Path) -> pd.Series:
    text = frame[column]
    parsed = pd.to_datetime(text, format="%Y-%m-%d", errors="coerce")
    bad = parsed.isna() | ~text.str.match(_DAY_RE)
    if bad.any():
        line = _first_bad_line(bad)
        raise ParseError(f"{path}:{line}: invalid date '{text[bad].iloc[0]}' (expected YYYY-MM-DD)",
                         path=str(path), line=line)
    return parsed


def _parse_reals(frame: pd.DataFrame, column: str, path: Path, allow_missing: bool = False) -> pd.Series:
    text = frame[column]
    values = pd.to_numeric(text, errors="coerce")
    bad = values.isna()
    if allow_missing:
        bad = bad & (text != "")
    if bad.any():
        line = _first_bad_line(bad)
        raise ParseError(f"{path}:{line}: invalid number '{text[bad].iloc[0]}' in column '{column}'",
                         path=str(path), line=line)
    return values.astype(float)


def _reject_duplicates(frame: pd.DataFrame, keys: List[str], path: Path) -> None:
    duplicated = frame.duplicated(keys, keep="first")
    if duplicated.any():
        line = _first_bad_line(duplicated)
        row = frame.loc[duplicated].iloc[0]
        key = ", ".join(str(row[k].strftime("%Y-%m") if isinstance(row[k], pd.Timestamp) else row[k])
                        for k in keys)
        raise DuplicateKeyError(f"{path}:{line}: duplicate key ({key})",
                                path=str(path), line=line, key=key)


# ---------------------------------------------------------------------------
# Returns
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReturnsPanel:
    """Long-format monthly returns keyed by (date, asset)."""

    frame: pd.DataFrame

    def __post_init__(self):
        ret = self.frame["ret"].to_numpy(dtype=float)
        if not np.all(np.isfinite(ret)):
            raise DataError("Returns must be finite")
        if np.any(ret <= -1.0):
            raise DataError("Returns must be greater than -1")
        if self.frame.duplicated(["date", "asset"]).any():
            raise DuplicateKeyError("Returns panel has duplicate (date, asset) keys")

    @classmethod
    def from_records(cls, records: Iterable[Tuple]) -> "ReturnsPanel":
        """Build a panel from (month, asset, return) tuples."""
        rows = [(to_month(d), str(a), float(r)) for d, a, r in records]
        frame = pd.DataFrame(rows, columns=["date", "asset", "ret"])
        return cls(frame.sort_values(["date", "asset"], kind="mergesort").reset_index(drop=True))

    @classmethod
    def from_wide(cls, wide: pd.DataFrame) -> "ReturnsPanel":
        """Build a panel from a date x asset frame; NaN cells are absent observations."""
        wide = wide.copy()
        wide.index = [to_month(d) for d in wide.index]
        long = (wide.rename_axis(index="date", columns=None).reset_index()
                .melt(id_vars="date", var_name="asset", value_name="ret")
                .dropna(subset=["ret"]))
        long["asset"] = long["asset"].astype(str)
        return cls(long.sort_values(["date", "asset"], kind="mergesort").reset_index(drop=True))

    def __len__(self) -> int:
        return len(self.frame)

    @cached_property
    def wide(self) -> pd.DataFrame:
        """Date x asset matrix of returns, NaN where unobserved."""
        return self.frame.pivot(index="date", columns="asset", values="ret").sort_index()

    @cached_property
    def dates(self) -> Tuple[pd.Timestamp, ...]:
        return tuple(self.wide.index)

    @cached_property
    def assets(self) -> Tuple[str, ...]:
        return tuple(self.wide.columns)

    def has_date(self, date) -> bool:
        return to_month(date) in self.wide.index

    def returns_at(self, date) -> pd.Series:
        """Observed returns at a month, indexed by asset."""
        date = to_month(date)
        if date not in self.wide.index:
            return pd.Series(dtype=float)
        return self.wide.loc[date].dropna()


def load_returns_panel(path) -> ReturnsPanel:
    """
    Load and validate a returns file with header ``date,asset,ret``.

    Args:
        path: Path to the delimited returns file.

    Returns:
        Validated ReturnsPanel.

    Raises:
        ParseError: On malformed rows, with the offending line number.
        DuplicateKeyError: If a (date, asset) pair appears twice.
        DataError: If a return is non-finite or not greater than -1.
    """
    path = Path(path)
    raw = _read_table(path, ["date", "asset", "ret"], "returns")
    frame = pd.DataFrame({
        "date": _parse_months(raw, "date", path),
        "asset": raw["asset"],
        "ret": _parse_reals(raw, "ret", path),
    })
    empty_asset = frame["asset"] == ""
    if empty_asset.any():
        line = _first_bad_line(empty_asset)
        raise ParseError(f"{path}:{line}: empty asset identifier", path=str(path), line=line)
    invalid = ~np.isfinite(frame["ret"]) | (frame["ret"] <= -1.0)
    if invalid.any():
        line = _first_bad_line(invalid)
        raise DataError(f"{path}:{line}: return {frame['ret'][invalid].iloc[0]} must be finite and > -1",
                        path=str(path), line=line)
    _reject_duplicates(frame, ["date", "asset"], path)
    frame = frame.sort_values(["date", "asset"], kind="mergesort").reset_index(drop=True)
    panel = ReturnsPanel(frame)
    gaps = coverage_gaps(panel)
    if gaps:
        logger.info("%d assets have interior coverage gaps in %s", len(gaps), path)
    logger.debug("Loaded %d return observations from %s", len(panel), path)
    return panel


def coverage_gaps(panel: ReturnsPanel) -> Dict[str, List[pd.Timestamp]]:
    """
    Interior months missing from each asset's membership span.

    Returns:
        Mapping asset -> missing months between its first and last observation.
    """
    gaps: Dict[str, List[pd.Timestamp]] = {}
    observed = panel.wide.notna()
    for asset in observed.columns:
        present = observed[asset]
        months = present.index[present.to_numpy()]
        if len(months) == 0:
            continue
        span = pd.date_range(months[0], months[-1], freq="MS")
        missing = span.difference(months)
        if len(missing):
            gaps[asset] = list(missing)
    return gaps


@dataclass(frozen=True)
class ReturnsMatrix:
    """An n x p block of returns with full coverage, columns ordered as ``assets``."""

    assets: Tuple[str, ...]
    dates: Tuple[pd.Timestamp, ...]
    values: np.ndarray
    dropped: Tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("Returns matrix must be two-dimensional")
        if values.shape != (len(self.dates), len(self.assets)):
            raise DataError(f"Returns matrix shape {values.shape} does not match "
                            f"{len(self.dates)} dates x {len(self.assets)} assets")
        if not np.all(np.isfinite(values)):
            raise DataError("Returns matrix has missing or non-finite cells")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, values, assets: Optional[Sequence[str]] = None,
                   dates: Optional[Sequence] = None) -> "ReturnsMatrix":
        """Wrap a plain array, inventing asset and date labels when absent."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        n, p = values.shape
        if assets is None:
            assets = [f"A{j:03d}" for j in range(p)]
        if dates is None:
            dates = pd.date_range("2000-01-01", periods=n, freq="MS")
        return cls(tuple(str(a) for a in assets), tuple(to_month(d) for d in dates), values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def subset(self, assets: Sequence[str]) -> "ReturnsMatrix":
        index = {a: j for j, a in enumerate(self.assets)}
        columns = [index[a] for a in assets]
        return ReturnsMatrix(tuple(assets), self.dates, self.values[:, columns])

    def column(self, asset: str) -> np.ndarray:
        return self.values[:, self.assets.index(asset)]


def align_window(panel: ReturnsPanel, end_date, length: int, assets: Sequence[str]) -> ReturnsMatrix:
    """
    Cut the ``length`` months ending at ``end_date`` for the requested assets.

    Assets lacking any month in the window are dropped and listed in the
    result's ``dropped`` field.

    Raises:
        DataError: If length < 2, end_date is not in the panel, or no asset
            has full coverage.
    """
    if length < 2:
        raise DataError(f"Window length must be at least 2 months, got {length}")
    end = to_month(end_date)
    if not panel.has_date(end):
        raise DataError(f"End date {format_month(end)} is not present in the returns panel",
                        end_date=format_month(end))
    requested = list(dict.fromkeys(str(a) for a in assets))
    months = pd.date_range(end=end, periods=length, freq="MS")
    window = panel.wide.reindex(index=months, columns=requested)
    complete = window.notna().all(axis=0)
    kept = [a for a in requested if complete[a]]
    dropped = tuple(a for a in requested if not complete[a])
    if dropped:
        logger.debug("Window ending %s drops %d assets lacking coverage", format_month(end), len(dropped))
    if not kept:
        raise DataError(f"No asset has full coverage in the {length}-month window ending {format_month(end)}",
                        end_date=format_month(end), length=length)
    return ReturnsMatrix(tuple(kept), tuple(months), window[kept].to_numpy(dtype=float), dropped)


# ---------------------------------------------------------------------------
# Characteristics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CharacteristicsPanel:
    """Long-format (date, asset, feature, value) observations with imputation flags."""

    frame: pd.DataFrame
    standardized: bool = False

    @classmethod
    def from_records(cls, records: Iterable[Tuple], standardized: bool = False) -> "CharacteristicsPanel":
        """Build a panel from (month, asset, feature, value) tuples; None marks missing."""
        rows = [(to_month(d), str(a), str(f), np.nan if v is None else float(v)) for d, a, f, v in records]
        frame = pd.DataFrame(rows, columns=["date", "asset", "feature", "value"])
        frame["imputed"] = False
        return cls(frame, standardized)

    @cached_property
    def features(self) -> Tuple[str, ...]:
        return tuple(sorted(self.frame["feature"].unique()))

    @cached_property
    def dates(self) -> Tuple[pd.Timestamp, ...]:
        return tuple(sorted(self.frame["date"].unique()))

    @cached_property
    def _by_date(self) -> Dict[pd.Timestamp, pd.DataFrame]:
        return {date: group for date, group in self.frame.groupby("date", sort=True)}

    def table_at(self, date) -> pd.DataFrame:
        """Asset x feature table at a month (NaN where missing)."""
        group = self._by_date.get(to_month(date))
        if group is None:
            return pd.DataFrame()
        return group.pivot(index="asset", columns="feature", values="value").sort_index()

    def cross_section(self, date, assets: Optional[Iterable[str]] = None) -> Dict[str, Dict[str, float]]:
        """
        Feature rows at one month.

        Args:
            date: Month of the cross-section.
            assets: Optional universe restriction.

        Returns:
            Mapping asset -> {feature: value}; missing values are omitted.
        """
        table = self.table_at(date)
        if assets is not None:
            table = table.reindex(index=[a for a in assets if a in table.index])
        section: Dict[str, Dict[str, float]] = {}
        for asset, row in table.iterrows():
            section[str(asset)] = {f: float(v) for f, v in row.items() if not pd.isna(v)}
        return section

    def feature_at(self, date, feature: str) -> Dict[str, float]:
        table = self.table_at(date)
        if feature not in table.columns:
            return {}
        column = table[feature].dropna()
        return {str(a): float(v) for a, v in column.items()}


def load_characteristics_panel(path) -> CharacteristicsPanel:
    """
    Load a characteristics file with header ``date,asset,feature,value``.

    An empty ``value`` marks a missing observation.
    """
    path = Path(path)
    raw = _read_table(path, ["date", "asset", "feature", "value"], "characteristics")
    frame = pd.DataFrame({
        "date": _parse_months(raw, "date", path),
        "asset": raw["asset"],
        "feature": raw["feature"],
        "value": _parse_reals(raw, "value", path, allow_missing=True),
    })
    bad_name = ~frame["feature"].str.match(r"^[a-zA-Z_][a-zA-Z0-9_]*$")
    if bad_name.any():
        line = _first_bad_line(bad_name)
        raise ParseError(f"{path}:{line}: invalid feature name '{frame['feature'][bad_name].iloc[0]}'",
                         path=str(path), line=line)
    infinite = np.isinf(frame["value"])
    if infinite.any():
        line = _first_bad_line(infinite)
        raise DataError(f"{path}:{line}: characteristic values must be finite", path=str(path), line=line)
    _reject_duplicates(frame, ["date", "asset", "feature"], path)
    frame["imputed"] = False
    logger.debug("Loaded %d characteristic observations from %s", len(frame), path)
    return CharacteristicsPanel(frame, standardized=False)


def _standardize_group(values: np.ndarray, label: str) -> np.ndarray:
    observed = values[~np.isnan(values)]
    if observed.size < 2:
        raise DataError(f"Characteristic group {label} has fewer than 2 observed values", group=label)
    lo, hi = np.percentile(observed, [1.0, 99.0])
    clipped = np.clip(observed, lo, hi)
    sd = np.std(clipped, ddof=1)
    if not sd > 0.0:
        raise DataError(f"Characteristic group {label} has zero variance after winsorization", group=label)
    out = np.zeros_like(values)
    out[~np.isnan(values)] = (clipped - clipped.mean()) / sd
    return out


def winsorize_standardize(raw: CharacteristicsPanel) -> CharacteristicsPanel:
    """
    Winsorize each (date, feature) cross-section at its 1st/99th percentiles,
    z-score it with the sample standard deviation, and impute missing values
    as exactly 0 with the imputed flag set.

    Assets present at a date but lacking a row for some feature are treated as
    missing for that feature.

    Raises:
        DataError: Naming the (date, feature) group that is degenerate.
    """
    frame = raw.frame[["date", "asset", "feature", "value"]]
    pieces = []
    for date, group in frame.groupby("date", sort=True):
        table = group.pivot(index="asset", columns="feature", values="value").sort_index()
        table = table.reindex(columns=sorted(table.columns))
        for feature in table.columns:
            values = table[feature].to_numpy(dtype=float)
            label = f"({format_month(date)}, {feature})"
            z = _standardize_group(values, label)
            pieces.append(pd.DataFrame({
                "date": date,
                "asset": table.index.astype(str),
                "feature": feature,
                "value": z,
                "imputed": np.isnan(values),
            }))
    if not pieces:
        return CharacteristicsPanel(frame.assign(imputed=False), standardized=True)
    result = pd.concat(pieces, ignore_index=True)
    imputed = int(result["imputed"].sum())
    if imputed:
        logger.info("Imputed %d missing characteristic values as the cross-sectional mean", imputed)
    return CharacteristicsPanel(result, standardized=True)


# ---------------------------------------------------------------------------
# Factors, events, benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactorPanel:
    """Observable factor realizations, one row per month."""

    dates: Tuple[pd.Timestamp, ...]
    names: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.shape != (len(self.dates), len(self.names)):
            raise DataError("Factor values do not match dates x names")
        if len(self.names) < 1:
            raise DataError("Factor panel needs at least one factor")
        if not np.all(np.isfinite(values)):
            raise DataError("Factor values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, values, dates: Optional[Sequence] = None,
                   names: Optional[Sequence[str]] = None) -> "FactorPanel":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        n, k = values.shape
        if dates is None:
            dates = pd.date_range("2000-01-01", periods=n, freq="MS")
        if names is None:
            names = [f"f{i + 1}" for i in range(k)]
        return cls(tuple(to_month(d) for d in dates), tuple(names), values)

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def window(self, dates: Sequence) -> "FactorPanel":
        """
        Rows for exactly the given months, in order.

        Raises:
            DataError: If any month is not covered.
        """
        index = {d: i for i, d in enumerate(self.dates)}
        months = [to_month(d) for d in dates]
        missing = [format_month(d) for d in months if d not in index]
        if missing:
            raise DataError(f"Factor panel does not cover {len(missing)} window months (first {missing[0]})",
                            missing=missing[:12])
        rows = [index[d] for d in months]
        return FactorPanel(tuple(months), self.names, self.values[rows])


def load_factor_panel(path) -> FactorPanel:
    """Load a factor file with header ``date,f1,...,fK``."""
    path = Path(path)
    raw = _read_table(path, ["date"], "factors")
    names = [c for c in raw.columns if c != "date"]
    if not names:
        raise ParseError(f"{path}: factor file needs at least one factor column", path=str(path), line=1)
    dates = _parse_months(raw, "date", path)
    frame = pd.DataFrame({"date": dates})
    for name in names:
        frame[name] = _parse_reals(raw, name, path)
    _reject_duplicates(frame, ["date"], path)
    frame = frame.sort_values("date", kind="mergesort")
    return FactorPanel(tuple(frame["date"]), tuple(names), frame[names].to_numpy(dtype=float))


@dataclass(frozen=True)
class ScoredEvent:
    """A dated per-asset score: a news sentiment score or an analyst recommendation."""

    asset: str
    timestamp: pd.Timestamp
    value: float


def load_scored_events(path, value_column: str) -> List[ScoredEvent]:
    """
    Load a ``date,asset,<value_column>`` event file with daily timestamps.

    Args:
        path: Path to the event file.
        value_column: 'score' for sentiment files, 'recommendation' for analyst files.
    """
    path = Path(path)
    raw = _read_table(path, ["date", "asset", value_column], value_column)
    stamps = _parse_days(raw, "date", path)
    values = _parse_reals(raw, value_column, path)
    infinite = np.isinf(values)
    if infinite.any():
        line = _first_bad_line(infinite)
        raise DataError(f"{path}:{line}: event values must be finite", path=str(path), line=line)
    return [ScoredEvent(str(a), pd.Timestamp(t), float(v))
            for a, t, v in zip(raw["asset"], stamps, values)]


def load_benchmark(path) -> pd.Series:
    """Load a ``date,ret`` benchmark series indexed by month."""
    path = Path(path)
    raw = _read_table(path, ["date", "ret"], "benchmark")
    frame = pd.DataFrame({"date": _parse_months(raw, "date", path), "ret": _parse_reals(raw, "ret", path)})
    _reject_duplicates(frame, ["date"], path)
    return frame.set_index("date")["ret"].sort_index()


# ---------------------------------------------------------------------------
# Bundle
# ---------------------------------------------------------------------------

@dataclass
class DataBundle:
    """Everything a backtest reads, loaded once."""

    returns: ReturnsPanel
    characteristics: Optional[CharacteristicsPanel] = None
    raw_characteristics: Optional[CharacteristicsPanel] = None
    factors: Optional[FactorPanel] = None
    sentiment: List[ScoredEvent] = field(default_factory=list)
    analyst: List[ScoredEvent] = field(default_factory=list)
    benchmark: Optional[pd.Series] = None
    input_files: Dict[str, Path] = field(default_factory=dict)


_FACTOR_METHODS = {"rnw", "deep"}
_CHARACTERISTIC_AGENTS = {"rules", "logistic", "novymarx"}


def required_inputs(config: "BacktestConfig") -> Dict[str, Optional[Path]]:
    """Input files the configured agents and methods need, keyed by role."""
    needed: Dict[str, Optional[Path]] = {"returns": config.returns_path}
    agents = set(config.agents)
    if agents & _CHARACTERISTIC_AGENTS or config.long_short:
        needed["characteristics"] = config.characteristics_path
    if "rules" in agents:
        needed["rules"] = config.rules_path
    if "sentiment" in agents:
        needed["sentiment"] = config.sentiment_path
    if "analyst" in agents:
        needed["analyst"] = config.analyst_path
    if set(config.methods) & _FACTOR_METHODS:
        needed["factors"] = config.factors_path
    if config.benchmark_path is not None:
        needed["benchmark"] = config.benchmark_path
    return needed


def load_bundle(config: "BacktestConfig") -> DataBundle:
    """
    Load the files a backtest configuration needs.

    Raises:
        MissingFileError: Naming the first required file that is absent.
    """
    needed = required_inputs(config)
    for role, path in needed.items():
        if path is None:
            raise MissingFileError("<not configured>", role)
        if not Path(path).exists():
            raise MissingFileError(str(path), role)

    bundle = DataBundle(returns=load_returns_panel(needed["returns"]),
                        input_files={role: Path(path) for role, path in needed.items() if path is not None})
    if "characteristics" in needed:
        raw = load_characteristics_panel(needed["characteristics"])
        bundle.raw_characteristics = raw
        bundle.characteristics = winsorize_standardize(raw)
    if "factors" in needed:
        bundle.factors = load_factor_panel(needed["factors"])
    if "sentiment" in needed:
        bundle.sentiment = load_scored_events(needed["sentiment"], "score")
    if "analyst" in needed:
        bundle.analyst = load_scored_events(needed["analyst"], "recommendation")
    if "benchmark" in needed:
        bundle.benchmark = load_benchmark(needed["benchmark"])
    return bundle
