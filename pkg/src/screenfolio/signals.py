"""
Screening signals shared by the rule language, the agents and the backtest.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Mapping, Tuple

import pandas as pd

from .data import to_month


class Signal(str, Enum):
    """Action an agent assigns to an asset."""

    BUY = "buy"
    SELL = "sell"
    HOLD = "hold"


@dataclass(frozen=True)
class SignalSet:
    """
    Per-date map asset -> action.

    Only non-hold actions are stored; absent assets are implicitly Hold.
    """

    date: pd.Timestamp
    signals: Dict[str, Signal] = field(default_factory=dict)
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "date", to_month(self.date))
        active = {str(asset): Signal(action) for asset, action in self.signals.items()
                  if Signal(action) is not Signal.HOLD}
        object.__setattr__(self, "signals", dict(sorted(active.items())))

    def __len__(self) -> int:
        return len(self.signals)

    def __contains__(self, asset: str) -> bool:
        return asset in self.signals

    def get(self, asset: str) -> Signal:
        return self.signals.get(asset, Signal.HOLD)

    @property
    def buys(self) -> Tuple[str, ...]:
        return tuple(a for a, s in self.signals.items() if s is Signal.BUY)

    @property
    def sells(self) -> Tuple[str, ...]:
        return tuple(a for a, s in self.signals.items() if s is Signal.SELL)

    @property
    def screened(self) -> Tuple[str, ...]:
        """Assets with a buy or sell signal, sorted."""
        return tuple(self.signals)

    def restrict(self, universe: Iterable[str]) -> "SignalSet":
        allowed = set(universe)
        return SignalSet(self.date, {a: s for a, s in self.signals.items() if a in allowed}, self.source)

    def with_source(self, source: str) -> "SignalSet":
        return SignalSet(self.date, self.signals, source)

    def pairs(self) -> Mapping[str, Signal]:
        return dict(self.signals)

    def to_frame(self) -> pd.DataFrame:
        """Rows of (date, asset, signal) for the non-hold assets."""
        return pd.DataFrame({
            "date": [self.date.strftime("%Y-%m")] * len(self.signals),
            "asset": list(self.signals),
            "signal": [s.value for s in self.signals.values()],
        })
