"""
Portfolio Weights Module

Closed-form weights from a precision estimate:
  - gmv: global minimum variance, G1 / (1'G1)
  - mv: minimum variance at a target monthly return rho
  - msr: maximum Sharpe ratio, Gmu / (1'Gmu)

Weights are unconstrained, so short positions are allowed.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, Tuple

import numpy as np
import pandas as pd

from .data import ReturnsMatrix, format_month
from .errors import PortfolioError
from .precision import PrecisionEstimate

logger = logging.getLogger(__name__)

DENOMINATOR_TOL = 1e-12
BUDGET_TOL = 1e-10
CONSTRAINT_TOL = 1e-8
DEFAULT_RHO = 0.01


class Objective(str, Enum):
    """Portfolio objectives by CLI name."""

    GMV = "gmv"
    MV = "mv"
    MSR = "msr"

    @property
    def label(self) -> str:
        return self.value.upper()


BUDGET = "budget"
DOLLAR_NEUTRAL = "dollar_neutral"


@dataclass(frozen=True)
class WeightVector:
    """
    Portfolio weights over an ordered asset list.

    Budget portfolios sum to one. Dollar-neutral long-short portfolios carry
    leg sums of +0.5 and -0.5 instead.
    """

    assets: Tuple[str, ...]
    weights: np.ndarray
    kind: str = BUDGET

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != len(self.assets):
            raise PortfolioError(f"{weights.shape[0]} weights for {len(self.assets)} assets")
        if not np.all(np.isfinite(weights)):
            raise PortfolioError("Portfolio weights must be finite")
        if self.kind == BUDGET:
            if weights.size and abs(weights.sum() - 1.0) > BUDGET_TOL:
                raise PortfolioError(f"Budget weights sum to {weights.sum():.12g}, not 1")
        elif self.kind == DOLLAR_NEUTRAL:
            if weights.size and abs(weights.sum()) > BUDGET_TOL:
                raise PortfolioError(f"Dollar-neutral weights sum to {weights.sum():.12g}, not 0")
        else:
            raise PortfolioError(f"Unknown weight kind '{self.kind}'")
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.assets)

    def as_series(self) -> pd.Series:
        return pd.Series(self.weights, index=list(self.assets), dtype=float)

    @classmethod
    def empty(cls) -> "WeightVector":
        """All-cash position."""
        return cls((), np.empty(0))


@dataclass(frozen=True)
class MeanEstimate:
    """Monthly mean returns of an ordered asset list."""

    assets: Tuple[str, ...]
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if mu.shape[0] != len(self.assets):
            raise PortfolioError(f"{mu.shape[0]} means for {len(self.assets)} assets")
        if not np.all(np.isfinite(mu)):
            raise PortfolioError("Mean estimates must be finite")
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "mu", mu)


def estimate_mean(R: ReturnsMatrix) -> MeanEstimate:
    """Column means of the training window."""
    if R.n < 1:
        raise PortfolioError("Cannot estimate means from an empty window")
    return MeanEstimate(R.assets, R.values.mean(axis=0))


def _aligned_mean(gamma: PrecisionEstimate, mu: MeanEstimate) -> np.ndarray:
    if tuple(mu.assets) != tuple(gamma.assets):
        raise PortfolioError("Mean and precision estimates cover different assets")
    return mu.mu


def gmv_weights(gamma: PrecisionEstimate) -> WeightVector:
    """
    Global minimum variance weights G1 / (1'G1).

    Raises:
        PortfolioError: If 1'G1 is numerically zero.
    """
    G = gamma.symmetric
    g1 = G.sum(axis=1)
    denominator = float(g1.sum())
    if abs(denominator) <= DENOMINATOR_TOL:
        raise PortfolioError(f"GMV denominator 1'G1 = {denominator:.3g} is numerically zero",
                             objective="gmv")
    return WeightVector(gamma.assets, g1 / denominator)


def mv_weights(gamma: PrecisionEstimate, mu: MeanEstimate, rho: float = DEFAULT_RHO) -> WeightVector:
    """
    Minimum variance weights at target monthly return ``rho``.

    With A = 1'G1, F = 1'Gmu and D = mu'Gmu:
    w = ((D - rho F) G1 + (rho A - F) Gmu) / (AD - F^2).

    Raises:
        PortfolioError: If AD - F^2 is numerically zero (means proportional
            to the unit vector) or the result misses either constraint.
    """
    G = gamma.symmetric
    m = _aligned_mean(gamma, mu)
    g1 = G.sum(axis=1)
    gmu = G @ m
    A = float(g1.sum())
    F = float(gmu.sum())
    D = float(m @ gmu)
    determinant = A * D - F * F
    if abs(determinant) <= DENOMINATOR_TOL:
        raise PortfolioError(f"Mean-variance problem is degenerate (AD - F^2 = {determinant:.3g}); "
                             "means are proportional to the unit vector", objective="mv")
    w = ((D - rho * F) / determinant) * g1 + ((rho * A - F) / determinant) * gmu
    budget_gap = abs(w.sum() - 1.0)
    target_gap = abs(float(w @ m) - rho)
    if budget_gap > CONSTRAINT_TOL or target_gap > CONSTRAINT_TOL:
        raise PortfolioError(f"Mean-variance weights miss their constraints "
                             f"(budget gap {budget_gap:.3g}, target gap {target_gap:.3g})", objective="mv")
    # rescale the float residue so the budget check holds at its tighter tolerance
    return WeightVector(gamma.assets, w / w.sum())


def msr_weights(gamma: PrecisionEstimate, mu: MeanEstimate) -> WeightVector:
    """
    Maximum Sharpe ratio weights Gmu / (1'Gmu).

    Raises:
        PortfolioError: If 1'Gmu is numerically zero.
    """
    G = gamma.symmetric
    gmu = G @ _aligned_mean(gamma, mu)
    denominator = float(gmu.sum())
    if abs(denominator) <= DENOMINATOR_TOL:
        raise PortfolioError(f"MSR denominator 1'Gmu = {denominator:.3g} is numerically zero",
                             objective="msr")
    return WeightVector(gamma.assets, gmu / denominator)


def compute_weights(objective, gamma: PrecisionEstimate, mu: MeanEstimate,
                    rho: float = DEFAULT_RHO) -> WeightVector:
    """Weights for an objective given by enum or CLI name."""
    objective = Objective(objective)
    if objective is Objective.GMV:
        return gmv_weights(gamma)
    if objective is Objective.MV:
        return mv_weights(gamma, mu, rho)
    return msr_weights(gamma, mu)


def weights_frame(rows: Iterable[Tuple[object, WeightVector]]) -> pd.DataFrame:
    """Long ``date,asset,weight`` frame from (date, weights) pairs."""
    records = [(format_month(date), asset, float(weight))
               for date, vector in rows
               for asset, weight in zip(vector.assets, vector.weights)]
    return pd.DataFrame(records, columns=["date", "asset", "weight"])


def write_weights(path, rows: Sequence[Tuple[object, WeightVector]]) -> Path:
    """Write weights as ``date,asset,weight`` text."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights_frame(rows).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    logger.debug("Wrote %d weight vectors to %s", len(rows), path)
    return path
