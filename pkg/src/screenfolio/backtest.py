"""
Rolling Backtest Module

Runs the monthly pipeline: screen, estimate, weight and realize net returns
after proportional transaction costs.

Timing: the decision taken at month m uses data through m only. The weights
chosen at m-1 earn the month-m returns, and the month-m record prices the
rebalance from those drifted weights to the weights chosen at m.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .agents import (ConsensusAudit, LogisticFit, analyst_agent, combine_consensus_with_audit,
                     fit_logistic_irls, group_events, logistic_agent, logistic_training_set,
                     make_fallback, novy_marx_from_characteristics, rule_agent, sentiment_agent)
from .data import (DataBundle, ReturnsMatrix, align_window, format_month, month_end, shift_months,
                   to_month)
from .errors import AgentError, DataError, EstimationError, PortfolioError
from .portfolio import (DOLLAR_NEUTRAL, WeightVector, compute_weights, estimate_mean, weights_frame)
from .precision import Method, PrecisionEstimate, estimate_precision
from .rng import stream_seed
from .schedule import RuleSchedule
from .settings import BacktestConfig
from .signals import Signal, SignalSet

logger = logging.getLogger(__name__)

MONTHS_PER_YEAR = 12
LONG_SHORT = "long_short"


# ---------------------------------------------------------------------------
# Net returns and summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HoldingsState:
    """Weights carried into a month; empty means all cash."""

    weights: WeightVector = field(default_factory=WeightVector.empty)

    @property
    def assets(self) -> Tuple[str, ...]:
        return self.weights.assets

    @property
    def is_cash(self) -> bool:
        return len(self.weights) == 0


@dataclass(frozen=True)
class NetReturn:
    gross: float
    net: float
    turnover: float


def net_return(w_new: WeightVector, w_old: HoldingsState, y: Mapping[str, float], c: float) -> NetReturn:
    """
    Realize one month of the held portfolio and price the rebalance.

    gross = w_old'y, turnover = sum_j |w_new_j - w_old_j (1 + y_j) / (1 + gross)|
    over the union of both asset lists (zero-filled), and
    net = gross - c (1 + gross) turnover.

    Args:
        w_new: Weights chosen at the end of the month.
        w_old: Holdings that earned the month's returns.
        y: Returns of the month, keyed by asset; must cover every held asset.
        c: Proportional cost rate (10 bp is 0.001).

    Raises:
        DataError: If a held asset has no return.
        PortfolioError: If 1 + gross <= 0.
    """
    held = w_old.weights
    missing = [a for a in held.assets if a not in y]
    if missing:
        raise DataError(f"No return for held asset {missing[0]}", assets=missing)
    r_old = np.array([float(y[a]) for a in held.assets], dtype=float)
    gross = float(held.weights @ r_old) if len(held) else 0.0
    if 1.0 + gross <= 0.0:
        raise PortfolioError(f"Portfolio return {gross:.6g} wipes out the portfolio; net return undefined")

    universe = sorted(set(held.assets) | set(w_new.assets))
    position = {a: j for j, a in enumerate(universe)}
    drifted = np.zeros(len(universe))
    target = np.zeros(len(universe))
    for a, w, r in zip(held.assets, held.weights, r_old):
        drifted[position[a]] = w * (1.0 + r) / (1.0 + gross)
    for a, w in zip(w_new.assets, w_new.weights):
        target[position[a]] = w
    turnover = float(np.abs(target - drifted).sum())
    return NetReturn(gross, gross - c * (1.0 + gross) * turnover, turnover)


@dataclass(frozen=True)
class PerformanceSummary:
    """Monthly and annualized statistics of a net return series."""

    months: int
    mean: float
    variance: float
    sharpe: float
    annual_return: float
    annual_variance: float
    annual_sharpe: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "months": self.months,
            "mean": self.mean,
            "variance": self.variance,
            "sharpe": self.sharpe,
            "annual_return": self.annual_return,
            "annual_variance": self.annual_variance,
            "annual_sharpe": self.annual_sharpe,
        }


def summarize(returns: Sequence[float]) -> PerformanceSummary:
    """
    Mean (divisor T), variance (divisor T-1) and Sharpe ratio of monthly net
    returns, plus the annualized return (x12), variance (x12) and Sharpe
    ratio (x sqrt 12).

    Raises:
        EstimationError: With fewer than 2 months or zero variance.
    """
    series = np.asarray(returns, dtype=float)
    if series.size < 2:
        raise EstimationError(f"Performance summary needs at least 2 months, got {series.size}")
    mean = float(series.mean())
    variance = float(np.var(series, ddof=1))
    if not variance > 0.0:
        raise EstimationError("Net return series has zero variance; Sharpe ratio is undefined")
    sharpe = mean / math.sqrt(variance)
    return PerformanceSummary(
        months=int(series.size),
        mean=mean,
        variance=variance,
        sharpe=sharpe,
        annual_return=MONTHS_PER_YEAR * mean,
        annual_variance=MONTHS_PER_YEAR * variance,
        annual_sharpe=math.sqrt(MONTHS_PER_YEAR) * sharpe,
    )


def _summary_or_none(returns: Sequence[float], label: str) -> Optional[PerformanceSummary]:
    try:
        return summarize(returns)
    except EstimationError as e:
        if len(returns):
            logger.warning("No summary for %s: %s", label, e)
        return None


class Weighting(str, Enum):
    EQUAL = "equal"
    VALUE = "value"


def long_short_portfolio(signals: SignalSet, weighting=Weighting.EQUAL,
                         sizes: Optional[Mapping[str, float]] = None) -> WeightVector:
    """
    Market-neutral portfolio long the buys and short the sells.

    Each leg carries half of the gross exposure: equal weighting gives
    +1/(2 n_long) and -1/(2 n_short); value weighting splits each leg in
    proportion to ``sizes``.

    Raises:
        PortfolioError: If a leg is empty or a value weight is missing or not positive.
    """
    weighting = Weighting(weighting)
    longs, shorts = signals.buys, signals.sells
    if not longs or not shorts:
        raise PortfolioError(f"Long-short portfolio at {format_month(signals.date)} needs both legs "
                             f"({len(longs)} longs, {len(shorts)} shorts)")

    def leg(assets: Tuple[str, ...]) -> np.ndarray:
        if weighting is Weighting.EQUAL:
            return np.full(len(assets), 0.5 / len(assets))
        if sizes is None:
            raise PortfolioError("Value weighting needs firm sizes")
        missing = [a for a in assets if a not in sizes]
        if missing:
            raise PortfolioError(f"No size for {missing[0]}", assets=missing)
        values = np.array([float(sizes[a]) for a in assets])
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise PortfolioError("Value weights need positive finite sizes")
        return 0.5 * values / values.sum()

    weights = np.concatenate([leg(longs), -leg(shorts)])
    return WeightVector(longs + shorts, weights, kind=DOLLAR_NEUTRAL)


# ---------------------------------------------------------------------------
# Screening
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScreenResult:
    """Screened signals at one decision date, with how they were reached."""

    date: pd.Timestamp
    signals: SignalSet
    universe: Tuple[str, ...]
    regime: str
    audit: Optional[ConsensusAudit] = None

    @property
    def screened(self) -> Tuple[str, ...]:
        return self.signals.screened

    def to_audit_row(self) -> Dict:
        row = {
            "date": format_month(self.date),
            "regime": self.regime,
            "universe_size": len(self.universe),
            "agent_sizes": "",
            "intersection_size": "",
            "fallback_used": False,
            "conflicts_dropped": 0,
            "screened_size": len(self.screened),
        }
        if self.audit is not None:
            row.update(self.audit.to_dict())
        return row


class Screener:
    """
    Produces the screened set for any decision date.

    Every lookup is a function of the date alone, so a decision does not
    depend on where a run starts. Logistic fits are cached by refit month.
    """

    def __init__(self, config: BacktestConfig, bundle: DataBundle,
                 schedule: Optional[RuleSchedule] = None):
        self._config = config
        self._bundle = bundle
        self._fallback = make_fallback(config.fallback)
        self._fits: Dict[pd.Timestamp, LogisticFit] = {}
        self._events: Dict[Tuple[str, pd.Timestamp], Dict] = {}
        if schedule is None and "rules" in config.agents:
            if config.rules_path is None:
                raise DataError("The rule agent needs 'rules_path'")
            schedule = RuleSchedule.load(config.rules_path)
        self._schedule = schedule

    def universe(self, date) -> Tuple[str, ...]:
        """Assets with a full training window ending at ``date``."""
        returns = self._bundle.returns
        window = align_window(returns, date, self._config.train_window, returns.assets)
        return window.assets

    def _grouped(self, kind: str, month: pd.Timestamp) -> Dict:
        key = (kind, month)
        if key not in self._events:
            events = self._bundle.sentiment if kind == "sentiment" else self._bundle.analyst
            self._events[key] = group_events(events, month)
        return self._events[key]

    def _characteristics(self):
        if self._bundle.characteristics is None:
            raise DataError("Characteristic agents need a characteristics file")
        return self._bundle.characteristics

    def logistic_fit(self, date) -> LogisticFit:
        """Fit used at ``date``: the one estimated at the latest refit month."""
        config = self._config
        date = to_month(date)
        year = date.year if date.month >= config.logistic_refit_month else date.year - 1
        refit = pd.Timestamp(year=year, month=config.logistic_refit_month, day=1)
        if refit not in self._fits:
            X, y = logistic_training_set(self._characteristics(), self._bundle.returns.wide,
                                         config.logistic_features, refit, config.train_window)
            if y.size < 30:
                raise AgentError(f"Logistic agent needs at least 30 labeled observations at "
                                 f"{format_month(refit)}, got {y.size}")
            self._fits[refit] = fit_logistic_irls(X, y, config.logistic_features)
            logger.debug("Refit logistic agent at %s on %d observations", format_month(refit), y.size)
        return self._fits[refit]

    def agent_signals(self, name: str, date, universe: Sequence[str]) -> SignalSet:
        """SignalSet of one agent at a decision date, restricted to the universe."""
        config = self._config
        date = to_month(date)
        if name == "rules":
            section = self._characteristics().cross_section(date, universe)
            return rule_agent(self._schedule, section, date)
        if name == "sentiment":
            return sentiment_agent(self._grouped("sentiment", date), month_end(date),
                                   config.sentiment_threshold, config.half_life_days, universe)
        if name == "analyst":
            previous = shift_months(date, -1)
            return analyst_agent(self._grouped("analyst", date), self._grouped("analyst", previous),
                                 month_end(date), month_end(previous),
                                 config.analyst_threshold, config.half_life_days, universe)
        if name == "logistic":
            rows = self._characteristics().cross_section(date, universe)
            return logistic_agent(None, None, rows, config.logistic_features, date,
                                  fit=self.logistic_fit(date))
        if name == "novymarx":
            raw = self._bundle.raw_characteristics
            if raw is None:
                raw = self._characteristics()
            return novy_marx_from_characteristics(raw, date, universe, config.profitability_feature,
                                                  config.value_feature)
        raise AgentError(f"Unknown agent '{name}'")

    def screen(self, date) -> ScreenResult:
        """Run the configured ensemble at a decision date."""
        date = to_month(date)
        universe = self.universe(date)
        agents = self._config.agents
        if not agents:
            signals = SignalSet(date, {a: Signal.BUY for a in universe}, source="baseline")
            return ScreenResult(date, signals, universe, "baseline")
        sets = [self.agent_signals(name, date, universe).restrict(universe).with_source(name)
                for name in agents]
        if len(sets) == 1:
            return ScreenResult(date, sets[0], universe, "single")
        combined, audit = combine_consensus_with_audit(sets, self._fallback)
        if len(sets) == 3:
            regime = "majority"
        else:
            regime = "fallback" if audit.fallback_used else "intersection"
        return ScreenResult(date, combined, universe, regime, audit)


# ---------------------------------------------------------------------------
# Decisions and the monthly loop
# ---------------------------------------------------------------------------

Cell = Tuple[str, str]

INVESTED = "invested"
CASH = "cash"
FAILED = "failed"


@dataclass
class Decision:
    """Screen and per-cell weights chosen at one month."""

    date: pd.Timestamp
    screen: ScreenResult
    weights: Dict[Cell, WeightVector] = field(default_factory=dict)
    status: Dict[Cell, str] = field(default_factory=dict)


@dataclass(frozen=True)
class MonthlyRecord:
    """One realized month of one cell."""

    date: pd.Timestamp
    gross: float
    net: float
    turnover: float
    p_hat: int
    assets: Tuple[str, ...]
    status: str
    regime: str

    def to_dict(self) -> Dict:
        return {
            "date": format_month(self.date),
            "gross": self.gross,
            "net": self.net,
            "turnover": self.turnover,
            "p_hat": self.p_hat,
            "status": self.status,
            "regime": self.regime,
            "assets": ";".join(self.assets),
        }


@dataclass
class CellResult:
    """Monthly records and summaries of one method x objective cell."""

    method: str
    objective: str
    records: List[MonthlyRecord] = field(default_factory=list)
    weights: List[Tuple[pd.Timestamp, WeightVector]] = field(default_factory=list)
    summary: Optional[PerformanceSummary] = None
    intersection_summary: Optional[PerformanceSummary] = None
    fallback_summary: Optional[PerformanceSummary] = None

    @property
    def label(self) -> str:
        if self.method == LONG_SHORT:
            return f"Long-short {self.objective}"
        return Method(self.method).label

    @property
    def net_returns(self) -> List[float]:
        return [r.net for r in self.records]

    @property
    def average_p_hat(self) -> float:
        return float(np.mean([r.p_hat for r in self.records])) if self.records else math.nan

    @property
    def cash_months(self) -> int:
        return sum(1 for r in self.records if r.status != INVESTED)

    def finalize(self) -> None:
        label = f"{self.method}/{self.objective}"
        self.summary = _summary_or_none(self.net_returns, label)
        for regime in ("intersection", "fallback"):
            series = [r.net for r in self.records if r.regime == regime]
            setattr(self, f"{regime}_summary", _summary_or_none(series, f"{label} {regime} months"))


@dataclass
class BacktestReport:
    """Everything a backtest produced."""

    config: BacktestConfig
    cells: Dict[Cell, CellResult]
    screens: List[ScreenResult]
    benchmark: Optional[PerformanceSummary] = None
    missing_returns: int = 0

    def cell(self, method: str, objective: str) -> CellResult:
        return self.cells[(method, objective)]


def _cells(config: BacktestConfig) -> List[Cell]:
    cells = [(m, o) for m in config.methods for o in config.objectives]
    if config.long_short:
        cells += [(LONG_SHORT, w.value) for w in Weighting]
    return cells


def out_sample_months(config: BacktestConfig, bundle: DataBundle) -> List[pd.Timestamp]:
    """
    Months realized by the backtest.

    Defaults run from the first month whose preceding decision has a full
    training window to the last month of the returns panel.

    Raises:
        DataError: If the returns panel does not cover the requested range.
    """
    dates = bundle.returns.dates
    if len(dates) <= config.train_window:
        raise DataError(f"Returns cover {len(dates)} months; a {config.train_window}-month window "
                        "needs at least one more")
    first, last = dates[0], dates[-1]
    start = to_month(config.out_sample_start) if config.out_sample_start else shift_months(first, config.train_window)
    end = to_month(config.out_sample_end) if config.out_sample_end else last
    earliest = shift_months(first, config.train_window)
    if start < earliest:
        raise DataError(f"out_sample_start {format_month(start)} leaves less than {config.train_window} "
                        f"months of history; earliest is {format_month(earliest)}",
                        out_sample_start=format_month(start))
    if end > last:
        raise DataError(f"out_sample_end {format_month(end)} is after the last return month {format_month(last)}",
                        out_sample_end=format_month(end))
    if start > end:
        raise DataError("Out-of-sample range is empty")
    return list(pd.date_range(start, end, freq="MS"))


class BacktestRunner:
    """
    Runs the rolling out-of-sample loop for every configured cell.

    Decisions are computed once per month and shared by the two records that
    use them.
    """

    def __init__(self, config: BacktestConfig, bundle: DataBundle,
                 schedule: Optional[RuleSchedule] = None):
        self._config = config
        self._bundle = bundle
        self._screener = Screener(config, bundle, schedule)
        self._cells = _cells(config)
        self.missing_returns = 0
        self.screens: List[ScreenResult] = []

    @property
    def screener(self) -> Screener:
        return self._screener

    @property
    def bundle(self) -> DataBundle:
        return self._bundle

    def _handle_failure(self, decision: Decision, cells: Sequence[Cell], error: EstimationError) -> None:
        if self._config.on_estimator_error == "abort":
            raise error
        logger.warning("Estimation failed at %s for %s: %s; holding cash",
                       format_month(decision.date), ", ".join("/".join(c) for c in cells), error)
        for cell in cells:
            decision.weights[cell] = WeightVector.empty()
            decision.status[cell] = FAILED

    def estimate(self, date, R: ReturnsMatrix, method: str) -> PrecisionEstimate:
        """Precision estimate of one method on a training window ending at ``date``."""
        factors = self._bundle.factors.window(R.dates) if self._bundle.factors is not None else None
        seed = stream_seed(self._config.seed, "precision", method, format_month(date))
        return estimate_precision(method, R, factors, self._config, seed)

    def _sizes(self, date, assets: Sequence[str]) -> Dict[str, float]:
        raw = self._bundle.raw_characteristics
        if raw is None:
            return {}
        sizes = raw.feature_at(date, self._config.size_feature)
        return {a: math.exp(sizes[a]) for a in assets if a in sizes}

    def decide(self, date) -> Decision:
        """Screen, estimate and weight at one decision date."""
        config = self._config
        date = to_month(date)
        decision = Decision(date, self._screener.screen(date))
        self.screens.append(decision.screen)
        assets = decision.screen.screened
        if not assets:
            logger.warning("Screen at %s is empty; all cells hold cash", format_month(date))
            for cell in self._cells:
                decision.weights[cell] = WeightVector.empty()
                decision.status[cell] = CASH
            return decision

        R = align_window(self._bundle.returns, date, config.train_window, assets)
        mu = estimate_mean(R)
        for method in config.methods:
            cells = [(method, o) for o in config.objectives]
            try:
                gamma = self.estimate(date, R, method)
            except EstimationError as e:
                self._handle_failure(decision, cells, e)
                continue
            for cell in cells:
                try:
                    decision.weights[cell] = compute_weights(cell[1], gamma, mu, config.rho)
                    decision.status[cell] = INVESTED
                except EstimationError as e:
                    self._handle_failure(decision, [cell], e)

        if config.long_short:
            sizes = self._sizes(date, assets)
            for weighting in Weighting:
                cell = (LONG_SHORT, weighting.value)
                try:
                    decision.weights[cell] = long_short_portfolio(decision.screen.signals, weighting, sizes)
                    decision.status[cell] = INVESTED
                except PortfolioError as e:
                    logger.warning("Long-short %s at %s: %s; holding cash", weighting.value,
                                   format_month(date), e)
                    decision.weights[cell] = WeightVector.empty()
                    decision.status[cell] = CASH
        return decision

    def _month_returns(self, date, held: Sequence[str]) -> Dict[str, float]:
        observed = self._bundle.returns.returns_at(date)
        y = {str(a): float(r) for a, r in observed.items()}
        missing = [a for a in held if a not in y]
        if missing:
            self.missing_returns += len(missing)
            logger.warning("%d held assets have no return in %s; treated as 0", len(missing), format_month(date))
            for asset in missing:
                y[asset] = 0.0
        return y

    def run(self) -> BacktestReport:
        config = self._config
        months = out_sample_months(config, self._bundle)
        logger.info("Backtest over %s..%s: %d cells", format_month(months[0]), format_month(months[-1]),
                    len(self._cells))
        decisions = {shift_months(months[0], -1): self.decide(shift_months(months[0], -1))}
        results = {cell: CellResult(*cell) for cell in self._cells}
        for cell in self._cells:
            first = decisions[shift_months(months[0], -1)]
            results[cell].weights.append((first.date, first.weights[cell]))

        for month in months:
            old = decisions[shift_months(month, -1)]
            new = self.decide(month)
            decisions[month] = new
            held_assets = sorted({a for cell in self._cells for a in old.weights[cell].assets})
            y = self._month_returns(month, held_assets)
            for cell in self._cells:
                held = old.weights[cell]
                outcome = net_return(new.weights[cell], HoldingsState(held), y, config.cost_rate)
                net, turnover = outcome.net, outcome.turnover
                if month == months[0] and config.charge_initial_position:
                    establishment = float(np.abs(held.weights).sum())
                    net -= config.cost_rate * establishment
                    turnover += establishment
                results[cell].records.append(MonthlyRecord(
                    month, outcome.gross, net, turnover, len(held), held.assets,
                    old.status[cell], old.screen.regime))
                results[cell].weights.append((month, new.weights[cell]))
            decisions.pop(shift_months(month, -1))

        for result in results.values():
            result.finalize()
        return BacktestReport(config, results, self.screens,
                              benchmark=self._benchmark(months), missing_returns=self.missing_returns)

    def _benchmark(self, months: Sequence[pd.Timestamp]) -> Optional[PerformanceSummary]:
        series = self._bundle.benchmark
        if series is None:
            return None
        aligned = series.reindex(pd.DatetimeIndex(months))
        if aligned.isna().any():
            logger.warning("Benchmark lacks %d out-of-sample months", int(aligned.isna().sum()))
        return _summary_or_none(aligned.dropna().to_numpy(dtype=float), "benchmark")


def run_backtest(config: BacktestConfig, bundle: DataBundle,
                 schedule: Optional[RuleSchedule] = None) -> BacktestReport:
    """
    Run the rolling backtest.

    Args:
        config: Validated backtest configuration.
        bundle: Loaded input data.
        schedule: Rule schedule; loaded from ``config.rules_path`` when omitted.

    Raises:
        DataError: If the data do not cover the out-of-sample range.
        EstimationError: On an estimator failure under the abort policy.
    """
    return BacktestRunner(config, bundle, schedule).run()


def run_screening(config: BacktestConfig, bundle: DataBundle,
                  schedule: Optional[RuleSchedule] = None) -> List[ScreenResult]:
    """Screens for every out-of-sample month, without estimation."""
    screener = Screener(config, bundle, schedule)
    return [screener.screen(month) for month in out_sample_months(config, bundle)]


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

SUMMARY_STATS = (("SR", "annual_sharpe"), ("Returns", "annual_return"), ("Variance", "annual_variance"))


class ReportWriter:
    """Writes a BacktestReport as delimited text files."""

    FLOAT_FORMAT = "%.17g"

    def __init__(self, output_dir):
        self._output_dir = Path(output_dir)

    @property
    def output_dir(self) -> Path:
        return self._output_dir

    def _write(self, frame: pd.DataFrame, name: str, float_format: Optional[str] = None) -> Path:
        self._output_dir.mkdir(parents=True, exist_ok=True)
        path = self._output_dir / name
        frame.to_csv(path, index=False, float_format=float_format or self.FLOAT_FORMAT, lineterminator="\n")
        return path

    @staticmethod
    def ledger_frame(report: BacktestReport) -> pd.DataFrame:
        rows = [{"method": result.method, "objective": result.objective, **record.to_dict()}
                for result in report.cells.values() for record in result.records]
        columns = ["method", "objective", "date", "gross", "net", "turnover", "p_hat", "status",
                   "regime", "assets"]
        return pd.DataFrame(rows, columns=columns)

    @staticmethod
    def summary_frame(report: BacktestReport) -> pd.DataFrame:
        """Rows per method, (SR, Returns, Variance) column triples per objective."""
        config = report.config
        rows = []
        for method in config.methods:
            row = {"method": Method(method).label}
            for objective in config.objectives:
                summary = report.cell(method, objective).summary
                for column, attribute in SUMMARY_STATS:
                    value = getattr(summary, attribute) if summary is not None else math.nan
                    row[f"{objective.upper()} {column}"] = value
            rows.append(row)
        return pd.DataFrame(rows)

    @staticmethod
    def details_frame(report: BacktestReport) -> pd.DataFrame:
        rows = []
        for result in report.cells.values():
            row = {"method": result.method, "objective": result.objective,
                   "average_p_hat": result.average_p_hat, "cash_months": result.cash_months}
            for prefix, summary in (("", result.summary), ("intersection_", result.intersection_summary),
                                    ("fallback_", result.fallback_summary)):
                stats = summary.to_dict() if summary is not None else dict.fromkeys(
                    PerformanceSummary.__dataclass_fields__, math.nan)
                row.update({f"{prefix}{key}": value for key, value in stats.items()})
            rows.append(row)
        if report.benchmark is not None:
            rows.append({"method": "benchmark", "objective": "", **report.benchmark.to_dict()})
        return pd.DataFrame(rows)

    def write(self, report: BacktestReport) -> Dict[str, Path]:
        """
        Write ledger.csv, summary.csv, details.csv, audit.csv and weights.csv.

        Returns:
            Mapping file role -> path.
        """
        paths = {
            "ledger": self._write(self.ledger_frame(report), "ledger.csv"),
            "summary": self._write(self.summary_frame(report), "summary.csv", "%.6f"),
            "details": self._write(self.details_frame(report), "details.csv"),
            "audit": self._write(pd.DataFrame([s.to_audit_row() for s in report.screens]), "audit.csv"),
        }
        weights = []
        for result in report.cells.values():
            frame = weights_frame(result.weights)
            frame.insert(0, "objective", result.objective)
            frame.insert(0, "method", result.method)
            weights.append(frame)
        paths["weights"] = self._write(pd.concat(weights, ignore_index=True), "weights.csv")
        logger.info("Wrote backtest report to %s", self._output_dir)
        return paths
