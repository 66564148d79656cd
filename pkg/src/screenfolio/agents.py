"""
Screening Agents Module

Each agent turns one information source into a per-month SignalSet:
  - rule agent: yearly buy/sell rules over standardized characteristics
  - sentiment agent: decayed news sentiment scores
  - analyst agent: change in decayed analyst recommendation levels
  - logistic agent: cross-sectional logistic regression of next-month up moves
  - Novy-Marx agent: combined profitability and value ranks

combine_consensus merges two or three agents into the screened set.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import expit
from scipy.stats import rankdata

from .data import ScoredEvent, format_month, month_end, to_month
from .errors import AgentError, ConvergenceError, SeparationError
from .ruledsl import apply_rules
from .schedule import RuleSchedule
from .signals import Signal, SignalSet

logger = logging.getLogger(__name__)

DEFAULT_HALF_LIFE_DAYS = 7.0
SENTIMENT_THRESHOLD = 0.1
ANALYST_THRESHOLD = 0.5


def decay_weighted_sum(events: Sequence[ScoredEvent], month_end_date,
                       half_life: float = DEFAULT_HALF_LIFE_DAYS) -> float:
    """
    Exponentially decayed sum of event values as of a month end.

    Each value is weighted by 2^(-age/half_life), age in days before month end.

    Raises:
        AgentError: If half_life is not positive or an event is dated after month end.
    """
    if not half_life > 0:
        raise AgentError(f"half_life must be positive, got {half_life}")
    if not events:
        return 0.0
    end = pd.Timestamp(month_end_date).normalize()
    ages = np.array([(end - pd.Timestamp(e.timestamp).normalize()).days for e in events], dtype=float)
    if np.any(ages < 0):
        late = events[int(np.argmax(ages < 0))]
        raise AgentError(f"Event for {late.asset} dated {late.timestamp.date()} is after month end {end.date()}",
                         asset=late.asset)
    values = np.array([e.value for e in events], dtype=float)
    return float(np.sum(values * np.exp2(-ages / half_life)))


def group_events(events: Iterable[ScoredEvent], month) -> Dict[str, List[ScoredEvent]]:
    """Events timestamped within a calendar month, grouped by asset."""
    start = to_month(month)
    end = month_end(start) + pd.Timedelta(days=1)
    grouped: Dict[str, List[ScoredEvent]] = {}
    for event in events:
        if start <= event.timestamp < end:
            grouped.setdefault(event.asset, []).append(event)
    return grouped


def _restrict(grouped: Mapping[str, Sequence[ScoredEvent]],
              universe: Optional[Iterable[str]]) -> Mapping[str, Sequence[ScoredEvent]]:
    if universe is None:
        return grouped
    allowed = set(universe)
    return {a: evs for a, evs in grouped.items() if a in allowed}


def sentiment_agent(scores: Mapping[str, Sequence[ScoredEvent]], month_end_date,
                    threshold: float = SENTIMENT_THRESHOLD,
                    half_life: float = DEFAULT_HALF_LIFE_DAYS,
                    universe: Optional[Iterable[str]] = None) -> SignalSet:
    """
    Buy when the decayed sentiment score exceeds the threshold, sell when it is
    below its negative, hold otherwise (including assets without articles).
    """
    signals: Dict[str, Signal] = {}
    for asset, events in _restrict(scores, universe).items():
        score = decay_weighted_sum(events, month_end_date, half_life)
        if score > threshold:
            signals[asset] = Signal.BUY
        elif score < -threshold:
            signals[asset] = Signal.SELL
    return SignalSet(to_month(month_end_date), signals, source="sentiment")


def analyst_agent(recommendations: Mapping[str, Sequence[ScoredEvent]],
                  previous: Mapping[str, Sequence[ScoredEvent]],
                  current_month_end, previous_month_end,
                  threshold: float = ANALYST_THRESHOLD,
                  half_life: float = DEFAULT_HALF_LIFE_DAYS,
                  universe: Optional[Iterable[str]] = None) -> SignalSet:
    """
    Signal from the month-on-month change of decayed recommendation levels.

    Recommendation levels rise toward "sell", so a change above the threshold
    is a sell and a change below its negative is a buy.
    """
    current = _restrict(recommendations, universe)
    prior = _restrict(previous, universe)
    signals: Dict[str, Signal] = {}
    for asset in sorted(set(current) | set(prior)):
        change = (decay_weighted_sum(current.get(asset, []), current_month_end, half_life)
                  - decay_weighted_sum(prior.get(asset, []), previous_month_end, half_life))
        if change > threshold:
            signals[asset] = Signal.SELL
        elif change < -threshold:
            signals[asset] = Signal.BUY
    return SignalSet(to_month(current_month_end), signals, source="analyst")


# ---------------------------------------------------------------------------
# Logistic agent
# ---------------------------------------------------------------------------

@dataclass
class LogisticFit:
    """Maximum-likelihood logistic regression coefficients."""
    features: Tuple[str, ...]
    intercept: float
    coef: np.ndarray
    iterations: int
    trace: List[Tuple[int, float, float]] = field(default_factory=list)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.intercept + np.asarray(X, dtype=float) @ self.coef)


def fit_logistic_irls(X, y, features: Optional[Sequence[str]] = None,
                      tol: float = 1e-8, max_iter: int = 100) -> LogisticFit:
    """
    Fit a logistic regression with an intercept by iteratively reweighted
    least squares.

    Args:
        X: n x k feature matrix.
        y: n binary labels.
        tol: Convergence tolerance on the largest coefficient change.
        max_iter: Iteration limit.

    Raises:
        SeparationError: If the labels are constant or perfectly separated.
        ConvergenceError: If IRLS does not converge; carries the iteration trace.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = tuple(features) if features is not None else tuple(f"x{i}" for i in range(k))
    if y.min() == y.max():
        raise SeparationError(f"All {n} labels equal {int(y[0])}; logistic MLE does not exist")
    design = np.column_stack([np.ones(n), X])
    beta = np.zeros(k + 1)
    trace: List[Tuple[int, float, float]] = []
    for iteration in range(1, max_iter + 1):
        eta = design @ beta
        prob = expit(eta)
        weight = prob * (1.0 - prob)
        if np.all(weight < 1e-10):
            raise SeparationError("Fitted probabilities collapsed to 0/1; labels are perfectly separated",
                                  trace=trace)
        weight = np.maximum(weight, 1e-12)
        hessian = design.T @ (design * weight[:, None])
        gradient = design.T @ (y - prob)
        try:
            step = linalg.solve(hessian, gradient, assume_a="pos")
        except (linalg.LinAlgError, ValueError) as e:
            raise SeparationError("Logistic information matrix is singular", trace=trace) from e
        beta = beta + step
        change = float(np.max(np.abs(step)))
        loglik = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        trace.append((iteration, change, loglik))
        if not np.all(np.isfinite(beta)) or np.max(np.abs(design @ beta)) > 50.0:
            raise SeparationError("Logistic coefficients diverge; labels are perfectly separated", trace=trace)
        if change < tol:
            return LogisticFit(names, float(beta[0]), beta[1:].copy(), iteration, trace)
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", trace=trace,
                           last_iterate=beta.tolist())


def logistic_training_set(characteristics, returns_wide: pd.DataFrame, features: Sequence[str],
                          end_date, window: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stack (features at s, 1{return at s+1 > 0}) over the window's months s
    whose label month s+1 is no later than ``end_date``.
    """
    end = to_month(end_date)
    months = pd.date_range(end=end - pd.DateOffset(months=1), periods=window - 1, freq="MS")
    rows, labels = [], []
    for month in months:
        nxt = month + pd.DateOffset(months=1)
        if nxt not in returns_wide.index:
            continue
        table = characteristics.table_at(month)
        if table.empty or not set(features) <= set(table.columns):
            continue
        ret = returns_wide.loc[nxt]
        assets = [a for a in table.index if a in ret.index and not pd.isna(ret[a])]
        if not assets:
            continue
        block = table.loc[assets, list(features)].to_numpy(dtype=float)
        keep = np.all(np.isfinite(block), axis=1)
        rows.append(block[keep])
        labels.append((ret[assets].to_numpy(dtype=float)[keep] > 0).astype(float))
    if not rows:
        return np.empty((0, len(features))), np.empty(0)
    return np.vstack(rows), np.concatenate(labels)


def decile_signals(scores: Mapping[str, float], date, source: str) -> SignalSet:
    """Top decile of scores -> Buy, bottom decile -> Sell; ties broken by asset id."""
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    k = len(ordered) // 10
    signals: Dict[str, Signal] = {}
    if k > 0:
        for asset, _ in ordered[:k]:
            signals[asset] = Signal.BUY
        bottom = sorted(scores.items(), key=lambda item: (item[1], item[0]))[:k]
        for asset, _ in bottom:
            signals[asset] = Signal.SELL
    return SignalSet(date, signals, source=source)


def logistic_agent(train_X, train_y, score_rows: Mapping[str, Mapping[str, float]],
                   features: Sequence[str], score_date,
                   fit: Optional[LogisticFit] = None) -> SignalSet:
    """
    Score a cross-section with a logistic model of next-month up moves.

    Args:
        train_X: Stacked standardized features over the training window.
        train_y: Labels 1{next-month return > 0}.
        score_rows: Mapping asset -> feature row at the score date.
        features: Feature names, in column order of train_X.
        score_date: Month being scored.
        fit: Previously fitted model to reuse instead of refitting.

    Raises:
        AgentError: With fewer than 30 labeled observations.
        SeparationError, ConvergenceError: From the fit.
    """
    if fit is None:
        y = np.asarray(train_y)
        if y.size < 30:
            raise AgentError(f"Logistic agent needs at least 30 labeled observations, got {y.size}")
        fit = fit_logistic_irls(train_X, y, features)
    assets = [a for a in sorted(score_rows) if all(f in score_rows[a] for f in features)]
    if not assets:
        return SignalSet(score_date, {}, source="logistic")
    X = np.array([[score_rows[a][f] for f in features] for a in assets], dtype=float)
    prob = fit.predict_proba(X)
    return decile_signals(dict(zip(assets, prob.tolist())), score_date, "logistic")


# ---------------------------------------------------------------------------
# Novy-Marx agent
# ---------------------------------------------------------------------------

NOVY_MARX_SHARE = (3, 10)


def novy_marx_agent(profitability: Mapping[str, float], bm: Mapping[str, float],
                    date=None, universe_size: Optional[int] = None) -> SignalSet:
    """
    Rank on gross profitability plus book-to-market; buy the top 30% and sell
    the bottom 30% (150 of 500). Ties are broken by asset identifier.

    Raises:
        AgentError: If fewer than 2 * ceil(0.3 p) assets carry both metrics.
    """
    assets = sorted(set(profitability) & set(bm))
    p = universe_size if universe_size is not None else len(assets)
    num, den = NOVY_MARX_SHARE
    k = -(-num * p // den)
    if len(assets) < 2 * k or k == 0:
        raise AgentError(f"Novy-Marx screen needs at least {2 * max(k, 1)} ranked assets, got {len(assets)}")
    prof_rank = rankdata([profitability[a] for a in assets])
    bm_rank = rankdata([bm[a] for a in assets])
    combined = prof_rank + bm_rank
    ordered = sorted(zip(assets, combined), key=lambda item: (-item[1], item[0]))
    signals = {a: Signal.BUY for a, _ in ordered[:k]}
    signals.update({a: Signal.SELL for a, _ in ordered[-k:]})
    return SignalSet(to_month(date) if date is not None else pd.Timestamp("1970-01-01"), signals,
                     source="novymarx")


# ---------------------------------------------------------------------------
# Rule agent and consensus
# ---------------------------------------------------------------------------

def rule_agent(schedule: RuleSchedule, cross_section: Mapping[str, Mapping[str, float]], date) -> SignalSet:
    """
    Apply the rule pair effective at a month to its cross-section.

    Raises:
        RuleScheduleError: If no rule, or more than one, covers the month.
    """
    rules = schedule.rules_for(date)
    return apply_rules(rules, cross_section, date)


@dataclass(frozen=True)
class UnionFallback:
    """Union fallback: every non-hold asset of either agent, conflicts dropped."""


@dataclass(frozen=True)
class DesignatedAgent:
    """Fallback to one agent's SignalSet, by position or by source name."""
    agent: Union[int, str]


Fallback = Union[UnionFallback, DesignatedAgent]
UNION = UnionFallback()


@dataclass(frozen=True)
class ConsensusAudit:
    """Per-date diagnostics of the consensus decision."""
    date: pd.Timestamp
    agent_sizes: Tuple[int, ...]
    intersection_size: int
    fallback_used: bool
    conflicts_dropped: int
    screened_size: int

    def to_dict(self) -> Dict:
        return {
            "date": format_month(self.date),
            "agent_sizes": ";".join(str(s) for s in self.agent_sizes),
            "intersection_size": self.intersection_size,
            "fallback_used": self.fallback_used,
            "conflicts_dropped": self.conflicts_dropped,
            "screened_size": self.screened_size,
        }


def _designated(sets: Sequence[SignalSet], agent: Union[int, str]) -> SignalSet:
    if isinstance(agent, int):
        if not 0 <= agent < len(sets):
            raise AgentError(f"Designated agent index {agent} out of range")
        return sets[agent]
    for signal_set in sets:
        if signal_set.source == agent:
            return signal_set
    raise AgentError(f"Designated agent '{agent}' is not among the consensus inputs")


def combine_consensus_with_audit(sets: Sequence[SignalSet],
                                 fallback: Fallback = UNION) -> Tuple[SignalSet, ConsensusAudit]:
    """
    Combine two or three agents and report how the decision was reached.

    Two agents: signed intersection, falling back when it holds at most one
    asset. Three agents: an asset keeps action a when at least two agents
    assign a.

    Raises:
        AgentError: On dates that differ or a list length other than 2 or 3.
    """
    if len(sets) not in (2, 3):
        raise AgentError(f"Consensus needs 2 or 3 signal sets, got {len(sets)}")
    dates = {s.date for s in sets}
    if len(dates) != 1:
        raise AgentError("Consensus inputs have mismatched dates: "
                         + ", ".join(sorted(format_month(d) for d in dates)))
    date = sets[0].date
    sizes = tuple(len(s) for s in sets)
    assets = sorted(set().union(*(s.signals for s in sets)))

    if len(sets) == 3:
        signals: Dict[str, Signal] = {}
        conflicts = 0
        for asset in assets:
            votes = [s.get(asset) for s in sets]
            for action in (Signal.BUY, Signal.SELL):
                if votes.count(action) >= 2:
                    signals[asset] = action
            if Signal.BUY in votes and Signal.SELL in votes and asset not in signals:
                conflicts += 1
        result = SignalSet(date, signals, source="consensus")
        return result, ConsensusAudit(date, sizes, len(result), False, conflicts, len(result))

    first, second = sets
    intersection = {a: first.get(a) for a in assets if first.get(a) is second.get(a)}
    conflicted = [a for a in assets if {first.get(a), second.get(a)} == {Signal.BUY, Signal.SELL}]
    if len(intersection) > 1:
        result = SignalSet(date, intersection, source="consensus")
        return result, ConsensusAudit(date, sizes, len(intersection), False, len(conflicted), len(result))

    if isinstance(fallback, DesignatedAgent):
        chosen = _designated(sets, fallback.agent)
        result = SignalSet(date, chosen.signals, source="consensus")
        dropped = 0
    else:
        union = {}
        for asset in assets:
            actions = {first.get(asset), second.get(asset)} - {Signal.HOLD}
            if len(actions) == 1:
                union[asset] = actions.pop()
        result = SignalSet(date, union, source="consensus")
        dropped = len(conflicted)
    logger.info("Consensus at %s: intersection of %d, fallback to %s (%d assets)",
                format_month(date), len(intersection),
                "union" if isinstance(fallback, UnionFallback) else fallback.agent, len(result))
    return result, ConsensusAudit(date, sizes, len(intersection), True, dropped, len(result))


def combine_consensus(sets: Sequence[SignalSet], fallback: Fallback = UNION) -> SignalSet:
    """Combine two or three SignalSets under the consensus rule."""
    return combine_consensus_with_audit(sets, fallback)[0]


def make_fallback(name: str) -> Fallback:
    """Fallback from its config name: 'union' or an agent name."""
    return UNION if name == "union" else DesignatedAgent(name)


def novy_marx_from_characteristics(characteristics, date, universe: Iterable[str],
                                   profitability_feature: str = "gp", value_feature: str = "bm") -> SignalSet:
    """Run the Novy-Marx screen on a characteristics cross-section."""
    allowed = set(universe)
    profitability = {a: v for a, v in characteristics.feature_at(date, profitability_feature).items()
                     if a in allowed}
    value = {a: v for a, v in characteristics.feature_at(date, value_feature).items() if a in allowed}
    return novy_marx_agent(profitability, value, date)


def signal_hit_rate(signals: Iterable[SignalSet], next_returns: Mapping[pd.Timestamp, Mapping[str, float]]) -> float:
    """
    Share of non-hold signals whose next-month return had the signalled sign.

    Returns:
        Hit rate in [0, 1], or NaN when no signal has a realized return.
    """
    hits = total = 0
    for signal_set in signals:
        realized = next_returns.get(signal_set.date, {})
        for asset, action in signal_set.signals.items():
            if asset not in realized:
                continue
            total += 1
            up = realized[asset] > 0
            hits += int(up if action is Signal.BUY else not up)
    return hits / total if total else math.nan
