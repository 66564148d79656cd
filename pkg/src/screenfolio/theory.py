"""
Screening Theory Harness

Monte-Carlo checks of Sharpe-ratio consistency under screening:
  - synthetic factor-model markets with a known covariance, mean and
    optimal asset set
  - sensible screens (recover the optimal set, or stay inside it) and
    random contrast screens
  - the convergence experiment of |SR_hat^2 / SR*^2 - 1| over growing samples
  - descriptive diagnostics of the estimation assumptions
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .data import FactorPanel, ReturnsMatrix
from .errors import EstimationError, ExperimentError
from .portfolio import estimate_mean
from .precision import estimate_precision, symmetrize
from .rng import stream, stream_seed
from .settings import MarketConfig, TheorySpec

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-8


@dataclass(frozen=True)
class SyntheticMarket:
    """Factor-model market with known moments and optimal set."""

    assets: Tuple[str, ...]
    loadings: np.ndarray
    factor_variances: np.ndarray
    error_variances: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    optimal_set: Tuple[str, ...]
    seed: int

    @property
    def p(self) -> int:
        return len(self.assets)

    @property
    def p_star(self) -> int:
        return len(self.optimal_set)

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    def index(self, assets: Iterable[str]) -> np.ndarray:
        position = {a: j for j, a in enumerate(self.assets)}
        return np.array([position[a] for a in assets], dtype=int)

    def restricted(self, assets: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        """True precision and mean of an asset subset, inverted after restriction."""
        idx = self.index(assets)
        block = self.sigma[np.ix_(idx, idx)]
        return linalg.inv(block), self.mu[idx]


@dataclass(frozen=True)
class ScreeningOutcome:
    selected: Tuple[str, ...]
    sensible: bool

    @property
    def p_hat(self) -> int:
        return len(self.selected)


def build_market(p: int, p_star: int, K: int = 3, seed: int = 0,
                 config: Optional[MarketConfig] = None) -> SyntheticMarket:
    """
    Draw a factor-model market.

    Loadings are standard normal, factor and error variances and means come
    from ``config``. The optimal set is the ``p_star`` assets with the
    highest true mu_j / sqrt(Sigma_jj), ties broken by index.

    Raises:
        ExperimentError: If the sizes are inconsistent.
    """
    config = config or MarketConfig()
    if not 1 <= p_star <= p:
        raise ExperimentError(f"Need 1 <= p_star <= p, got p_star={p_star}, p={p}")
    if K < 1:
        raise ExperimentError(f"Need at least one factor, got {K}")
    variances = np.resize(np.asarray(config.factor_variances, dtype=float), K)
    rng = stream(seed, "theory", "market")
    loadings = rng.standard_normal((p, K))
    errors = rng.uniform(config.error_variance_low, config.error_variance_high, size=p)
    mu = rng.uniform(config.mean_low, config.mean_high, size=p)
    sigma = (loadings * variances) @ loadings.T + np.diag(errors)
    sigma = symmetrize(sigma)
    gamma = linalg.inv(sigma)
    gap = float(np.max(np.abs(gamma @ sigma - np.eye(p))))
    if gap > IDENTITY_TOL:
        raise ExperimentError(f"Market precision misses the identity by {gap:.3g}")

    assets = tuple(f"S{j:04d}" for j in range(p))
    sharpe = mu / np.sqrt(np.diag(sigma))
    order = sorted(range(p), key=lambda j: (-sharpe[j], j))
    optimal = tuple(sorted(assets[j] for j in order[:p_star]))
    return SyntheticMarket(assets, loadings, variances, errors, mu, sigma, gamma, optimal, seed)


def draw_returns(market: SyntheticMarket, n: int, seed: int = 0) -> Tuple[ReturnsMatrix, FactorPanel]:
    """Draw n months of Gaussian factor and error returns from a market."""
    rng = stream(seed, "theory", "sample")
    factors = rng.standard_normal((n, market.k)) * np.sqrt(market.factor_variances)
    errors = rng.standard_normal((n, market.p)) * np.sqrt(market.error_variances)
    values = market.mu + factors @ market.loadings.T + errors
    dates = pd.date_range("1990-01-01", periods=n, freq="MS")
    return (ReturnsMatrix.from_array(values, market.assets, dates),
            FactorPanel.from_array(factors, dates))


def simulate_market(p: int, p_star: int, K: int, n: int, seed: int,
                    config: Optional[MarketConfig] = None) -> Tuple[SyntheticMarket, ReturnsMatrix]:
    """Build a market and draw an n x p returns sample from it."""
    market = build_market(p, p_star, K, seed, config)
    returns, _ = draw_returns(market, n, seed)
    return market, returns


def is_sensible(selected: Iterable[str], optimal_set: Iterable[str]) -> bool:
    """
    A screen is sensible if it contains the whole optimal set when it selects
    at least as many assets, and selects only optimal assets otherwise.
    """
    selected, optimal = set(selected), set(optimal_set)
    if len(selected) >= len(optimal):
        return optimal <= selected
    return selected <= optimal


def _check_size(market: SyntheticMarket, p_hat: int) -> None:
    if not 1 <= p_hat <= market.p:
        raise ExperimentError(f"Screen size {p_hat} outside 1..{market.p}")


def sensible_screen(market: SyntheticMarket, p_hat: int, seed: int = 0) -> ScreeningOutcome:
    """
    Sensible screen of size p_hat: the optimal set plus uniform extra assets
    when p_hat >= p*, otherwise a uniform p_hat-subset of the optimal set.
    """
    _check_size(market, p_hat)
    rng = stream(seed, "theory", "screen")
    optimal = list(market.optimal_set)
    if p_hat >= len(optimal):
        others = [a for a in market.assets if a not in set(optimal)]
        extra = rng.choice(len(others), size=p_hat - len(optimal), replace=False)
        selected = optimal + [others[i] for i in extra]
    else:
        picked = rng.choice(len(optimal), size=p_hat, replace=False)
        selected = [optimal[i] for i in picked]
    selected = tuple(sorted(selected))
    return ScreeningOutcome(selected, is_sensible(selected, optimal))


def random_screen(market: SyntheticMarket, p_hat: int, seed: int = 0) -> ScreeningOutcome:
    """Uniform p_hat-subset of the universe, ignoring the optimal set."""
    _check_size(market, p_hat)
    rng = stream(seed, "theory", "screen")
    picked = rng.choice(market.p, size=p_hat, replace=False)
    selected = tuple(sorted(market.assets[i] for i in picked))
    return ScreeningOutcome(selected, is_sensible(selected, market.optimal_set))


def estimated_sr(gamma_hat, mu_hat, p_hat: Optional[int] = None) -> float:
    """
    sqrt(p) (1'G mu / p) (1'G1 / p)^(-1/2) for a precision G and mean mu.

    Raises:
        EstimationError: If 1'G1 is not positive.
    """
    G = symmetrize(gamma_hat)
    mu = np.asarray(mu_hat, dtype=float).reshape(-1)
    p = G.shape[0] if p_hat is None else int(p_hat)
    if mu.shape[0] != G.shape[0] or p != G.shape[0]:
        raise EstimationError(f"Sharpe inputs disagree on size ({G.shape[0]}, {mu.shape[0]}, {p})")
    quadratic = float(G.sum())
    if not quadratic > 0.0:
        raise EstimationError(f"1'G1 = {quadratic:.3g} is not positive; Sharpe ratio undefined")
    return math.sqrt(p) * (float(G.sum(axis=0) @ mu) / p) / math.sqrt(quadratic / p)


def target_sr(market: SyntheticMarket) -> float:
    """Sharpe ratio of the optimal set under the true moments."""
    gamma, mu = market.restricted(market.optimal_set)
    return estimated_sr(gamma, mu)


# ---------------------------------------------------------------------------
# Block decomposition and diagnostics
# ---------------------------------------------------------------------------

Blocks = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


def partition_blocks(matrix, first: Sequence[int], second: Sequence[int]) -> Blocks:
    """Split a square matrix into (11, 12, 21, 22) blocks over two index sets."""
    M = np.asarray(matrix, dtype=float)
    a, b = np.asarray(first, dtype=int), np.asarray(second, dtype=int)
    return M[np.ix_(a, a)], M[np.ix_(a, b)], M[np.ix_(b, a)], M[np.ix_(b, b)]


def assemble_blocks(blocks: Blocks, first: Sequence[int], second: Sequence[int]) -> np.ndarray:
    """Inverse of partition_blocks when the index sets partition 0..p-1."""
    a, b = np.asarray(first, dtype=int), np.asarray(second, dtype=int)
    size = a.size + b.size
    if sorted(np.concatenate([a, b]).tolist()) != list(range(size)):
        raise ExperimentError("Block index sets must partition the matrix")
    M = np.empty((size, size))
    M[np.ix_(a, a)], M[np.ix_(a, b)], M[np.ix_(b, a)], M[np.ix_(b, b)] = blocks
    return M


def linf_norm(matrix) -> float:
    """Maximum absolute row sum; 0 for an empty block."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    return float(np.abs(M).sum(axis=1).max()) if M.size else 0.0


def assumption_diagnostics(market: SyntheticMarket, selected: Sequence[str], gamma_hat,
                           mu_hat) -> Dict[str, float]:
    """
    Descriptive checks of the estimation assumptions on one screened sample.

    Returns:
        precision_error: l-inf norm of G_hat minus the true precision of the
            screened set; off_target_*: l-inf norms of the blocks of G_hat
            touching non-optimal assets (zero when none were selected);
            mean_error: max |mu_hat - mu|; max_abs_mean, min_eigenvalue,
            max_row_sum and scaled_mean (|1'G mu| / p*) of the optimal set.
    """
    selected = list(selected)
    G = symmetrize(gamma_hat)
    mu_hat = np.asarray(mu_hat, dtype=float)
    truth, mu = market.restricted(selected)
    optimal = set(market.optimal_set)
    inside = [i for i, a in enumerate(selected) if a in optimal]
    outside = [i for i, a in enumerate(selected) if a not in optimal]
    _, upper, lower, extra = partition_blocks(G, inside, outside)
    gamma_star, mu_star = market.restricted(market.optimal_set)
    return {
        "p_hat": len(selected),
        "p_star": market.p_star,
        "precision_error": linf_norm(G - truth),
        "off_target_12": linf_norm(upper),
        "off_target_21": linf_norm(lower),
        "off_target_22": linf_norm(extra),
        "mean_error": float(np.max(np.abs(mu_hat - mu))) if mu.size else 0.0,
        "max_abs_mean": float(np.max(np.abs(market.mu))),
        "min_eigenvalue": float(linalg.eigvalsh(symmetrize(gamma_star))[0]),
        "max_row_sum": linf_norm(gamma_star),
        "scaled_mean": abs(float(gamma_star.sum(axis=0) @ mu_star)) / market.p_star,
    }


# ---------------------------------------------------------------------------
# Convergence experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Replication:
    n: int
    index: int
    p_hat: int
    ratio_error: float
    sensible: bool
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    p_star: int
    replications: int
    failures: int
    q10: float
    q50: float
    q90: float

    @property
    def fail_rate(self) -> float:
        return self.failures / self.replications


@dataclass
class ConvergenceTable:
    """Quantiles of |SR_hat^2 / SR*^2 - 1| per sample size."""

    rows: List[ConvergenceRow] = field(default_factory=list)
    screening: str = "sensible"
    estimator: str = "nw"

    @property
    def medians(self) -> List[float]:
        return [row.q50 for row in self.rows]

    @property
    def converged(self) -> bool:
        """Medians weakly decrease along the grid."""
        medians = self.medians
        return all(b <= a for a, b in zip(medians, medians[1:]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            "n": row.n,
            "q10": row.q10,
            "q50": row.q50,
            "q90": row.q90,
            "fail_rate": row.fail_rate,
            "p_star": row.p_star,
            "converged": self.converged,
        } for row in self.rows], columns=["n", "q10", "q50", "q90", "fail_rate", "p_star", "converged"])

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
        return path


def p_star_for(n: int) -> int:
    return max(1, math.isqrt(n))


def _run_replication(spec: TheorySpec, n: int, index: int) -> Replication:
    p_star = p_star_for(n)
    p = spec.universe_multiplier * p_star
    seed = stream_seed(spec.seed, "replication", n, index)
    market = build_market(p, p_star, spec.n_factors, seed, spec.market)
    width = spec.error_width
    offset = int(stream(seed, "theory", "p_hat").integers(-width, width + 1)) if width else 0
    p_hat = min(max(p_star + offset, 1), p)
    screen = sensible_screen if spec.screening == "sensible" else random_screen
    outcome = screen(market, p_hat, seed)
    try:
        if spec.estimator == "oracle":
            gamma_hat, mu_hat = market.restricted(outcome.selected)
        else:
            returns, factors = draw_returns(market, n, seed)
            window = returns.subset(outcome.selected)
            estimate = estimate_precision(spec.estimator, window, factors,
                                          seed=stream_seed(seed, "theory", "estimator"))
            gamma_hat, mu_hat = estimate.gamma, estimate_mean(window).mu
        target = target_sr(market)
        ratio = estimated_sr(gamma_hat, mu_hat) ** 2 / target ** 2
    except EstimationError as e:
        logger.debug("Replication %d at n=%d failed: %s", index, n, e)
        return Replication(n, index, p_hat, math.nan, outcome.sensible, error=e.code)
    return Replication(n, index, p_hat, abs(ratio - 1.0), outcome.sensible)


def _run_chunk(args: Tuple[TheorySpec, int, Sequence[int]]) -> List[Replication]:
    spec, n, indices = args
    return [_run_replication(spec, n, i) for i in indices]


def _replications(spec: TheorySpec, n: int) -> List[Replication]:
    indices = list(range(spec.replications))
    if spec.workers <= 1:
        return _run_chunk((spec, n, indices))
    chunks = [(spec, n, indices[w::spec.workers]) for w in range(spec.workers)]
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        results = [r for chunk in pool.map(_run_chunk, chunks) for r in chunk]
    return sorted(results, key=lambda r: r.index)


def screened_sharpe_experiment(spec: TheorySpec) -> ConvergenceTable:
    """
    Run the screened Sharpe-ratio convergence experiment.

    For each n of the grid, p* = floor(sqrt(n)), the universe holds
    universe_multiplier * p* assets and p_hat = p* + U{-d..d}. Each
    replication draws a market and sample, screens, estimates and records
    |SR_hat^2 / SR*^2 - 1|.

    Raises:
        ExperimentError: If the estimator failure rate exceeds
            ``max_failure_rate`` at any grid point.
    """
    table = ConvergenceTable(screening=spec.screening, estimator=spec.estimator)
    for n in spec.grid:
        results = _replications(spec, n)
        errors = np.array([r.ratio_error for r in results if not r.failed])
        failures = sum(1 for r in results if r.failed)
        rate = failures / len(results)
        if rate > spec.max_failure_rate:
            raise ExperimentError(f"Estimator '{spec.estimator}' failed in {failures} of {len(results)} "
                                  f"replications at n={n}", n=n, failures=failures,
                                  error_codes=sorted({r.error for r in results if r.failed}))
        q10, q50, q90 = (np.quantile(errors, [0.1, 0.5, 0.9]).tolist() if errors.size
                         else [math.nan] * 3)
        table.rows.append(ConvergenceRow(n, p_star_for(n), len(results), failures, q10, q50, q90))
        logger.info("n=%d p*=%d median ratio error %.4g (%d failures)", n, p_star_for(n), q50, failures)
    return table
