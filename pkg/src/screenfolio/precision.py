"""
Precision Matrix Estimation Module

Estimates the precision matrix (inverse covariance) of screened-asset returns
with one of five methods:
  - nw: nodewise Lasso regression, penalty chosen by GIC
  - rnw: nodewise regression on residuals of observable factors, rebuilt
    with the Woodbury identity
  - poet: principal-component factors plus thresholded residual covariance
  - deep: neural-network factor model plus thresholded residual covariance
  - nls: analytical nonlinear shrinkage of the sample eigenvalues
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from sklearn.exceptions import ConvergenceWarning
from sklearn.neural_network import MLPRegressor
from sklearn.preprocessing import StandardScaler

from .data import FactorPanel, ReturnsMatrix
from .errors import (ConvergenceError, DataError, EstimationError, NotPositiveDefiniteError,
                     SingularMatrixError)
from .settings import BacktestConfig, DeepFactorConfig

logger = logging.getLogger(__name__)

LASSO_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000
GIC_GRID_SIZE = 50
GIC_GRID_RATIO = 1e-4
TAU_FLOOR = 1e-12
CONDITION_LIMIT = 1e12
SQRT5 = math.sqrt(5.0)


class Method(str, Enum):
    """Precision estimators by CLI name."""

    NODEWISE = "nw"
    RESIDUAL_NODEWISE = "rnw"
    DEEP = "deep"
    POET = "poet"
    NLS = "nls"

    @property
    def label(self) -> str:
        return METHOD_LABELS[self]


METHOD_LABELS = {
    Method.NODEWISE: "NW",
    Method.RESIDUAL_NODEWISE: "Residual NW",
    Method.DEEP: "Deep learning",
    Method.POET: "POET",
    Method.NLS: "NLS",
}


def symmetrize(gamma) -> np.ndarray:
    """Return (G + G') / 2."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
        raise EstimationError(f"Cannot symmetrize a non-square matrix of shape {gamma.shape}")
    return (gamma + gamma.T) / 2.0


@dataclass(frozen=True)
class PrecisionEstimate:
    """Estimated precision matrix of an ordered asset list."""

    assets: Tuple[str, ...]
    gamma: np.ndarray
    method: Method
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.shape != (len(self.assets), len(self.assets)):
            raise EstimationError(f"Precision shape {gamma.shape} does not match {len(self.assets)} assets")
        if not np.all(np.isfinite(gamma)):
            raise EstimationError(f"{Method(self.method).label} precision estimate has non-finite entries")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "method", Method(self.method))

    @property
    def p(self) -> int:
        return len(self.assets)

    @property
    def symmetric(self) -> np.ndarray:
        """Symmetrized gamma, used wherever symmetry is required."""
        return symmetrize(self.gamma)


def _spectrum_diagnostics(gamma: np.ndarray) -> Dict[str, float]:
    eigenvalues = linalg.eigvalsh(symmetrize(gamma))
    smallest, largest = float(eigenvalues[0]), float(eigenvalues[-1])
    condition = abs(largest / smallest) if smallest != 0 else math.inf
    return {"min_eigenvalue": smallest, "max_eigenvalue": largest, "condition_number": condition}


def _estimate(assets: Sequence[str], gamma: np.ndarray, method: Method, require_pd: bool,
              **extras: Any) -> PrecisionEstimate:
    diagnostics = _spectrum_diagnostics(gamma)
    if require_pd:
        asymmetry = float(np.max(np.abs(gamma - gamma.T))) if gamma.size else 0.0
        if asymmetry > 1e-8 * max(1.0, float(np.max(np.abs(gamma)))):
            raise EstimationError(f"{method.label} precision is not symmetric (max gap {asymmetry:.3g})")
        if diagnostics["min_eigenvalue"] <= 0:
            raise NotPositiveDefiniteError(f"{method.label} precision is not positive definite",
                                           diagnostics["min_eigenvalue"])
    diagnostics.update(extras)
    return PrecisionEstimate(tuple(assets), gamma, method, diagnostics)


def _scalar_estimate(R: ReturnsMatrix, method: Method) -> PrecisionEstimate:
    variance = float(np.var(R.values[:, 0], ddof=1)) if R.n > 1 else 0.0
    if not variance > 0:
        raise EstimationError(f"Asset {R.assets[0]} has zero sample variance", asset=R.assets[0])
    return _estimate(R.assets, np.array([[1.0 / variance]]), method, require_pd=True, single_asset=True)


def _check_condition(matrix: np.ndarray, label: str) -> float:
    condition = float(np.linalg.cond(matrix))
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularMatrixError(f"{label} is numerically singular (condition number {condition:.3g})",
                                  condition)
    return condition


def woodbury_inverse(a_inv: np.ndarray, u: np.ndarray, c_inv: np.ndarray, v: np.ndarray,
                     a_inv_inner: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Inverse of A + U C V given A^-1 and C^-1.

    (A + UCV)^-1 = A^-1 - A^-1 U (C^-1 + V A^-1 U)^-1 V A^-1

    Args:
        a_inv: Inverse of A.
        u, v: Low-rank factors.
        c_inv: Inverse of C.
        a_inv_inner: Replacement for A^-1 inside the bracket (e.g. its
            symmetrized version).

    Raises:
        SingularMatrixError: If the bracket is numerically singular.
    """
    inner = a_inv if a_inv_inner is None else a_inv_inner
    bracket = c_inv + v @ inner @ u
    _check_condition(bracket, "Woodbury bracket")
    return a_inv - a_inv @ u @ linalg.solve(bracket, v @ a_inv)


# ---------------------------------------------------------------------------
# Lasso and GIC
# ---------------------------------------------------------------------------

def _soft(z: float, lam: float) -> float:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def _lasso_gram(G: np.ndarray, c: np.ndarray, lam: float, beta0: Optional[np.ndarray] = None,
                tol: float = LASSO_TOL, max_sweeps: int = LASSO_MAX_SWEEPS) -> Tuple[np.ndarray, int]:
    """
    Coordinate descent on the Gram form of ||y - X b||^2/n + 2 lam ||b||_1,
    with G = X'X/n and c = X'y/n. Sweeps alternate between all coordinates and
    the active set until a full sweep moves no coefficient by tol.
    """
    p = c.shape[0]
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    diag = np.diag(G).copy()
    grad = c - G @ beta
    sweeps = 0

    def sweep(indices) -> float:
        largest = 0.0
        for j in indices:
            a = diag[j]
            if a <= 0.0:
                continue
            old = beta[j]
            new = _soft(grad[j] + a * old, lam) / a
            if new != old:
                delta = new - old
                grad[:] -= delta * G[j]
                beta[j] = new
                if abs(delta) > largest:
                    largest = abs(delta)
        return largest

    everything = range(p)
    while sweeps < max_sweeps:
        change = sweep(everything)
        sweeps += 1
        if change < tol:
            return beta, sweeps
        active = np.flatnonzero(beta).tolist()
        while sweeps < max_sweeps:
            change = sweep(active)
            sweeps += 1
            if change < tol:
                break
    raise ConvergenceError(f"Lasso coordinate descent did not converge in {max_sweeps} sweeps",
                           last_iterate=beta.tolist(), max_change=change)


def _residual_variance(G: np.ndarray, c: np.ndarray, yy: float, beta: np.ndarray) -> float:
    return float(yy - 2.0 * c @ beta + beta @ G @ beta)


def lasso_coordinate_descent(X, y, lam: float, tol: float = LASSO_TOL, max_sweeps: int = LASSO_MAX_SWEEPS,
                             warm_start: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Minimize ||y - X b||^2/n + 2 lam ||b||_1 by cyclic coordinate descent.

    Args:
        X: n x q design.
        y: n-vector response.
        lam: Non-negative penalty.

    Returns:
        Coefficient vector of length q.

    Raises:
        ConvergenceError: Carrying the last iterate and its residual variance.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n < 2:
        raise EstimationError("Lasso needs at least 2 observations")
    if lam < 0:
        raise EstimationError(f"Lasso penalty must be non-negative, got {lam}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise EstimationError("Lasso inputs must be finite")
    G = X.T @ X / n
    c = X.T @ y / n
    try:
        beta, _ = _lasso_gram(G, c, lam, warm_start, tol, max_sweeps)
    except ConvergenceError as e:
        last = np.asarray(e.details["last_iterate"])
        e.details["residual"] = float(np.sum((y - X @ last) ** 2) / n)
        raise
    return beta


def lambda_grid(c: np.ndarray, size: int = GIC_GRID_SIZE, ratio: float = GIC_GRID_RATIO) -> np.ndarray:
    """Log-spaced penalties from lam_max = max|X_j'y|/n down to ratio * lam_max."""
    lam_max = float(np.max(np.abs(c))) if c.size else 0.0
    if lam_max <= 0.0:
        return np.array([0.0])
    return np.geomspace(lam_max, ratio * lam_max, size)


@dataclass(frozen=True)
class GicSelection:
    """Outcome of a GIC search over a penalty grid."""

    lam: float
    coef: np.ndarray
    sigma2: float
    support_size: int
    scores: Tuple[Tuple[float, Optional[float]], ...]


def _gic_path(G: np.ndarray, c: np.ndarray, yy: float, n: int, p: int,
              grid: Sequence[float]) -> GicSelection:
    penalty = math.log(p) / n * math.log(math.log(n))
    ordered = sorted(set(float(lam) for lam in grid), reverse=True)
    best: Optional[GicSelection] = None
    best_score = math.inf
    scores: List[Tuple[float, Optional[float]]] = []
    beta = np.zeros(c.shape[0])
    for lam in ordered:
        beta, _ = _lasso_gram(G, c, lam, beta)
        sigma2 = _residual_variance(G, c, yy, beta)
        if not sigma2 > 1e-300:
            logger.warning("GIC skips lambda=%.3g: zero residual variance", lam)
            scores.append((lam, None))
            continue
        support = int(np.count_nonzero(beta))
        score = math.log(sigma2) + support * penalty
        scores.append((lam, score))
        # Grid runs from large to small, so "<=" keeps the smallest lambda on ties.
        if score <= best_score:
            best_score = score
            best = GicSelection(lam, beta.copy(), sigma2, support, ())
    if best is None:
        raise EstimationError("GIC: every grid point has zero residual variance")
    return GicSelection(best.lam, best.coef, best.sigma2, best.support_size, tuple(scores))


def gic_select(X, y, grid: Optional[Sequence[float]] = None, p: Optional[int] = None) -> GicSelection:
    """
    Choose the Lasso penalty minimizing log(sigma2) + |S| (log p / n) log(log n).

    Args:
        X: n x (p-1) design.
        y: Response.
        grid: Candidate penalties; defaults to the 50-point log grid.
        p: Dimension in the penalty term; defaults to X's column count plus one.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    G = X.T @ X / n
    c = X.T @ y / n
    if grid is None:
        grid = lambda_grid(c)
    if len(grid) == 0 or any(lam < 0 for lam in grid):
        raise EstimationError("GIC grid must be non-empty with non-negative penalties")
    dimension = p if p is not None else X.shape[1] + 1
    return _gic_path(G, c, float(y @ y / n), n, dimension, grid)


def gic_select_lambda(X, y, grid: Optional[Sequence[float]] = None, p: Optional[int] = None) -> float:
    """Selected penalty of gic_select."""
    return gic_select(X, y, grid, p).lam


# ---------------------------------------------------------------------------
# Nodewise
# ---------------------------------------------------------------------------

def nodewise_precision(R: ReturnsMatrix, fixed_lambda: Optional[float] = None,
                       grid_size: int = GIC_GRID_SIZE,
                       method: Method = Method.NODEWISE) -> PrecisionEstimate:
    """
    Nodewise Lasso precision estimate.

    Each asset is regressed on all others with a GIC-selected penalty; row j
    of the estimate is (1, -gamma_j) / tau_j^2. The raw (asymmetric) estimate
    is returned.

    Args:
        R: Returns window; columns are demeaned internally.
        fixed_lambda: Use this penalty for every regression instead of GIC.

    Raises:
        EstimationError: If some tau_j^2 is not above 1e-12; names the asset.
    """
    if R.p == 1:
        return _scalar_estimate(R, method)
    Y = R.values - R.values.mean(axis=0)
    n, p = Y.shape
    S = Y.T @ Y / n
    gamma = np.zeros((p, p))
    lambdas, supports = [], []
    for j in range(p):
        others = np.r_[0:j, j + 1:p]
        G = S[np.ix_(others, others)]
        c = S[others, j]
        yy = float(S[j, j])
        if fixed_lambda is not None:
            lam = float(fixed_lambda)
            beta, _ = _lasso_gram(G, c, lam)
            sigma2 = _residual_variance(G, c, yy, beta)
        else:
            selection = _gic_path(G, c, yy, n, p, lambda_grid(c, grid_size))
            lam, beta, sigma2 = selection.lam, selection.coef, selection.sigma2
        tau2 = sigma2 + lam * float(np.sum(np.abs(beta)))
        if tau2 <= TAU_FLOOR:
            raise EstimationError(f"Nodewise regression for asset {R.assets[j]} is degenerate "
                                  f"(tau^2 = {tau2:.3g})", asset=R.assets[j])
        gamma[j, j] = 1.0 / tau2
        gamma[j, others] = -beta / tau2
        lambdas.append(lam)
        supports.append(int(np.count_nonzero(beta)))
    return _estimate(R.assets, gamma, method, require_pd=False, lambdas=lambdas, support_sizes=supports)


def residual_nodewise_precision(R: ReturnsMatrix, F: FactorPanel, fixed_lambda: Optional[float] = None,
                                grid_size: int = GIC_GRID_SIZE) -> PrecisionEstimate:
    """
    Nodewise estimate on factor residuals, rebuilt into the return precision.

    Loadings come from per-asset OLS on the observable factors; the residual
    precision is estimated nodewise and combined with the factor covariance
    through the Woodbury identity.

    Raises:
        DataError: If the factors do not cover the window.
        SingularMatrixError: With the condition number of the offending matrix.
    """
    X = F.window(R.dates).values
    Y = R.values
    n, k = X.shape
    if n <= k:
        raise EstimationError(f"Residual nodewise needs more months ({n}) than factors ({k})")
    _check_condition(X.T @ X, "Factor cross-product")
    loadings = linalg.solve(X.T @ X, X.T @ Y, assume_a="pos").T
    residuals = Y - X @ loadings.T
    omega = nodewise_precision(ReturnsMatrix(R.assets, R.dates, residuals), fixed_lambda, grid_size).gamma
    if R.p == 1:
        omega = np.atleast_2d(omega)
    centered = X - X.mean(axis=0)
    factor_cov = centered.T @ centered / n
    factor_condition = _check_condition(factor_cov, "Factor covariance")
    gamma = woodbury_inverse(omega, loadings, linalg.inv(factor_cov), loadings.T,
                             a_inv_inner=symmetrize(omega))
    return _estimate(R.assets, gamma, Method.RESIDUAL_NODEWISE, require_pd=False,
                     n_factors=k, factor_condition_number=factor_condition)


# ---------------------------------------------------------------------------
# Factor count and POET
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactorCount:
    k: int
    criteria: Tuple[float, ...]
    floored: Tuple[int, ...]


def bai_ng_criteria(Y, K1: int) -> FactorCount:
    """
    Information criterion for k = 1..K1 principal-component factors.

    IC(k) = log(||Y - Y F_k F_k'/n||_F^2 / (pn)) + k (p+n)/(pn) log(min(p, n))

    Args:
        Y: p x n returns matrix.
        K1: Largest factor count considered.
    """
    Y = np.asarray(Y, dtype=float)
    p, n = Y.shape
    if not 1 <= K1 < min(p, n):
        raise EstimationError(f"Maximum factor count must satisfy 1 <= K1 < min(p, n) = {min(p, n)}, got {K1}")
    energy = linalg.svdvals(Y) ** 2
    total = float(np.sum(energy))
    penalty = (p + n) / (p * n) * math.log(min(p, n))
    floor = np.finfo(float).eps
    criteria, floored = [], []
    for k in range(1, K1 + 1):
        remaining = (total - float(np.sum(energy[:k]))) / (p * n)
        if remaining <= floor:
            logger.warning("Factor count k=%d leaves no residual; using machine-epsilon floor", k)
            remaining = floor
            floored.append(k)
        criteria.append(math.log(remaining) + k * penalty)
    best = int(np.argmin(criteria)) + 1
    return FactorCount(best, tuple(criteria), tuple(floored))


def bai_ng_factor_count(Y, K1: int) -> int:
    """Number of factors minimizing the information criterion."""
    return bai_ng_criteria(Y, K1).k


def _threshold_covariance(sigma: np.ndarray, tau: np.ndarray) -> Tuple[np.ndarray, float]:
    keep = np.abs(sigma) >= tau
    np.fill_diagonal(keep, True)
    off_diagonal = sigma.shape[0] * (sigma.shape[0] - 1)
    zeroed = float(np.sum(~keep)) / off_diagonal if off_diagonal else 0.0
    return np.where(keep, sigma, 0.0), zeroed


def _positive_definite_inverse(matrix: np.ndarray, label: str,
                               diagonal_loading: bool) -> Tuple[np.ndarray, float]:
    """Inverse via Cholesky; returns (inverse, loading applied)."""
    smallest = float(linalg.eigvalsh(matrix)[0])
    loading = 0.0
    if smallest <= 0:
        if not diagonal_loading:
            raise NotPositiveDefiniteError(f"{label} is not positive definite", smallest)
        loading = 1e-8 * float(np.trace(matrix)) / matrix.shape[0]
        matrix = matrix + loading * np.eye(matrix.shape[0])
        smallest = float(linalg.eigvalsh(matrix)[0])
        if smallest <= 0:
            raise NotPositiveDefiniteError(f"{label} is not positive definite after diagonal loading",
                                           smallest, loading=loading)
        logger.info("%s: applied diagonal loading %.3g", label, loading)
    factor = linalg.cho_factor(matrix)
    inverse = linalg.cho_solve(factor, np.eye(matrix.shape[0]))
    return symmetrize(inverse), loading


@dataclass(frozen=True)
class PoetDecomposition:
    """Principal-component loadings and thresholded residual covariance."""

    loadings: np.ndarray
    residual_covariance: np.ndarray
    zeroed_fraction: float


def poet_decomposition(Y, K: int) -> PoetDecomposition:
    """
    Split p x n demeaned returns into K principal-component factors and a
    residual covariance hard-thresholded entrywise off the diagonal.

    The factors are normalized to F'F/n = I, so the systematic covariance is
    B B'.
    """
    Y = np.asarray(Y, dtype=float)
    p, n = Y.shape
    _, _, vt = linalg.svd(Y, full_matrices=False)
    factors = math.sqrt(n) * vt[:K].T
    loadings = Y @ factors / n
    residuals = Y - loadings @ factors.T
    sigma = residuals @ residuals.T / n
    squares = residuals ** 2
    theta = np.maximum(squares @ squares.T / n - sigma ** 2, 0.0)
    tau = 0.5 * (1.0 / math.sqrt(p) + math.sqrt(math.log(p) / n)) * np.sqrt(theta)
    thresholded, zeroed = _threshold_covariance(sigma, tau)
    return PoetDecomposition(loadings, thresholded, zeroed)


def poet_precision(R: ReturnsMatrix, K: Optional[int] = None, max_factors: int = 8,
                   diagonal_loading: bool = False) -> PrecisionEstimate:
    """
    POET precision estimate.

    Factors are the leading principal components of the demeaned returns
    (count from bai_ng_factor_count unless K is given); the residual
    covariance is hard-thresholded entrywise off the diagonal.

    Raises:
        EstimationError: If K < 1 or K >= min(p, n).
        NotPositiveDefiniteError: If the thresholded residual covariance is
            not positive definite and diagonal loading is off.
    """
    if K is not None and K < 1:
        raise EstimationError(f"POET needs at least one factor, got K={K}")
    if R.p == 1:
        return _scalar_estimate(R, Method.POET)
    Y = (R.values - R.values.mean(axis=0)).T
    p, n = Y.shape
    if n < 2:
        raise EstimationError("POET needs at least 2 observations")
    if K is None:
        K1 = min(max_factors, min(p, n) - 1)
        if K1 < 1:
            raise EstimationError(f"POET cannot choose a factor count with p={p}, n={n}")
        K = bai_ng_factor_count(Y, K1)
    if K >= min(p, n):
        raise EstimationError(f"POET factor count K={K} must be below min(p, n) = {min(p, n)}")
    parts = poet_decomposition(Y, K)
    sigma_inv, loading = _positive_definite_inverse(parts.residual_covariance, "POET residual covariance",
                                                    diagonal_loading)
    gamma = symmetrize(woodbury_inverse(sigma_inv, parts.loadings, np.eye(K), parts.loadings.T))
    return _estimate(R.assets, gamma, Method.POET, require_pd=True,
                     n_factors=K, zeroed_fraction=parts.zeroed_fraction, diagonal_loading=loading)


# ---------------------------------------------------------------------------
# Deep factor
# ---------------------------------------------------------------------------

@dataclass
class FactorNetwork:
    """Fitted network mapping factor realizations to expected returns."""

    scaler: StandardScaler
    models: List[MLPRegressor]
    center: np.ndarray
    scale: np.ndarray

    def predict(self, factors) -> np.ndarray:
        X = self.scaler.transform(np.asarray(factors, dtype=float))
        if len(self.models) == 1:
            out = self.models[0].predict(X).reshape(X.shape[0], -1)
        else:
            out = np.column_stack([m.predict(X) for m in self.models])
        return self.center + out * self.scale


def _network(config: DeepFactorConfig, n: int, seed: int) -> MLPRegressor:
    return MLPRegressor(
        hidden_layer_sizes=tuple(config.hidden_layers),
        activation=config.activation,
        solver=config.solver,
        learning_rate_init=config.learning_rate,
        batch_size=min(config.batch_size, n),
        max_iter=config.epochs,
        shuffle=True,
        random_state=seed,
        tol=0.0,
        n_iter_no_change=config.epochs + 1,
    )


def fit_factor_network(factors, returns, config: Optional[DeepFactorConfig] = None,
                       seed: int = 0) -> FactorNetwork:
    """
    Fit g: R^K -> R^p by mini-batch gradient descent on mean squared error.

    Inputs are standardized and targets scaled per asset; one shared network
    with p outputs, or one network per asset when ``config.shared`` is off.

    Raises:
        EstimationError: If training diverges (non-finite loss or predictions).
    """
    config = config or DeepFactorConfig()
    X = np.asarray(factors, dtype=float)
    Y = np.asarray(returns, dtype=float)
    n = X.shape[0]
    scaler = StandardScaler().fit(X)
    Xs = scaler.transform(X)
    center = Y.mean(axis=0)
    scale = Y.std(axis=0)
    scale[scale == 0] = 1.0
    target = (Y - center) / scale
    models: List[MLPRegressor] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=ConvergenceWarning)
        if config.shared:
            fitted = target if target.shape[1] > 1 else target.ravel()
            models.append(_network(config, n, seed).fit(Xs, fitted))
        else:
            for j in range(target.shape[1]):
                models.append(_network(config, n, seed + j).fit(Xs, target[:, j]))
    for model in models:
        if not np.isfinite(model.loss_):
            raise EstimationError("Deep factor network training diverged (non-finite loss)",
                                  loss=str(model.loss_))
    network = FactorNetwork(scaler, models, center, scale)
    if not np.all(np.isfinite(network.predict(X))):
        raise EstimationError("Deep factor network produced non-finite predictions")
    return network


def factor_network_precision(Y, fitted, n_factors: int, threshold_c: float = 0.5, beta: float = 2.0,
                             diagonal_loading: bool = False) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Precision from returns and fitted factor components.

    The fitted components give the systematic covariance; residuals are
    hard-thresholded at C r_n sum_t |u_ti u_tj - s_ij| with
    r_n = (n^(-beta/(2(beta+K))) (log n)^4)^2; the two parts are combined
    with the Woodbury identity.

    Args:
        Y: n x p returns.
        fitted: n x p fitted values g(f_t).
        n_factors: Number of observable factors K.

    Returns:
        (gamma, diagnostics)
    """
    Y = np.asarray(Y, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    n, p = Y.shape
    centered = fitted - fitted.mean(axis=0)
    sigma_g = centered.T @ centered / n
    residuals = Y - fitted
    sigma_u = residuals.T @ residuals / n
    deviation = np.zeros((p, p))
    for start in range(0, n, 256):
        block = residuals[start:start + 256]
        products = block[:, :, None] * block[:, None, :]
        deviation += np.sum(np.abs(products - sigma_u), axis=0)
    root_rate = n ** (-beta / (2.0 * (beta + n_factors))) * math.log(n) ** 4
    tau = threshold_c * root_rate ** 2 * deviation
    thresholded, zeroed = _threshold_covariance(sigma_u, tau)
    sigma_inv, loading = _positive_definite_inverse(thresholded, "Deep factor residual covariance",
                                                    diagonal_loading)
    gamma = symmetrize(woodbury_inverse(sigma_inv, sigma_g, np.eye(p), np.eye(p)))
    return gamma, {"zeroed_fraction": zeroed, "diagonal_loading": loading,
                   "systematic_trace": float(np.trace(sigma_g))}


def deep_factor_precision(R: ReturnsMatrix, F: FactorPanel, config: Optional[DeepFactorConfig] = None,
                          seed: int = 0, diagonal_loading: bool = False) -> PrecisionEstimate:
    """
    Deep-learning factor precision estimate.

    Raises:
        EstimationError: With fewer than ``config.min_observations`` months or
            on training divergence.
        NotPositiveDefiniteError: If the thresholded residual covariance is
            not positive definite.
    """
    config = config or DeepFactorConfig()
    if R.n < config.min_observations:
        raise EstimationError(f"Deep factor estimator needs at least {config.min_observations} months, got {R.n}")
    if R.p == 1:
        return _scalar_estimate(R, Method.DEEP)
    X = F.window(R.dates).values
    network = fit_factor_network(X, R.values, config, seed)
    gamma, extras = factor_network_precision(R.values, network.predict(X), X.shape[1],
                                             config.threshold_c, config.beta, diagonal_loading)
    return _estimate(R.assets, gamma, Method.DEEP, require_pd=True, n_factors=X.shape[1],
                     final_loss=float(np.mean([m.loss_ for m in network.models])), **extras)


# ---------------------------------------------------------------------------
# Nonlinear shrinkage
# ---------------------------------------------------------------------------

def _kernel_estimates(eigenvalues: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Epanechnikov density and its Hilbert transform at each eigenvalue."""
    local = h * eigenvalues[None, :]
    x = (eigenvalues[:, None] - eigenvalues[None, :]) / local
    density = (3.0 / (4.0 * SQRT5)) * np.mean(np.maximum(1.0 - x ** 2 / 5.0, 0.0) / local, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.log(np.abs((SQRT5 - x) / (SQRT5 + x)))
    edge = np.isclose(np.abs(x), SQRT5)
    hilbert = (-3.0 / (10.0 * math.pi)) * x + np.where(
        edge, 0.0, (3.0 / (4.0 * SQRT5 * math.pi)) * (1.0 - x ** 2 / 5.0) * log_term)
    return density, np.mean(hilbert / local, axis=1)


@dataclass(frozen=True)
class ShrinkageResult:
    sample_eigenvalues: np.ndarray
    shrunk_eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def nls_shrinkage(Y) -> ShrinkageResult:
    """
    Analytical nonlinear shrinkage of the eigenvalues of S = Y'Y/n.

    When p > n the kernel estimates run over the n leading eigenvalues and
    are scaled by each of them, so all n must be positive: the sample must
    have full row rank.

    Args:
        Y: n x p returns.

    Raises:
        EstimationError: If n < 12, if S has no positive eigenvalue, if p <= n
            and S is singular, if p > n and fewer than n eigenvalues are
            positive, or if a shrunk eigenvalue is not positive.
    """
    Y = np.asarray(Y, dtype=float)
    n, p = Y.shape
    if n < 12:
        raise EstimationError(f"Nonlinear shrinkage needs n >= 12, got {n}")
    S = Y.T @ Y / n
    eigenvalues, eigenvectors = linalg.eigh(S)
    c = p / n
    h = n ** (-1.0 / 3.0)
    tiny = np.finfo(float).eps * max(float(eigenvalues[-1]), 1.0) * p
    if p <= n:
        if eigenvalues[0] <= tiny:
            raise EstimationError("Sample covariance is singular although p <= n",
                                  eigenvalues=eigenvalues[eigenvalues <= tiny].tolist())
        density, hilbert = _kernel_estimates(eigenvalues, h)
        shrunk = eigenvalues / ((math.pi * c * eigenvalues * density) ** 2
                                + (1.0 - c - math.pi * c * eigenvalues * hilbert) ** 2)
    else:
        positive = eigenvalues[p - n:]
        if positive[-1] <= tiny:
            raise EstimationError("Sample covariance has no positive eigenvalue")
        if positive[0] <= tiny:
            raise EstimationError(f"Sample covariance has fewer than {n} positive eigenvalues",
                                  eigenvalues=positive[positive <= tiny].tolist())
        density, hilbert = _kernel_estimates(positive, h)
        shrunk_positive = positive / (math.pi ** 2 * positive ** 2 * (density ** 2 + hilbert ** 2))
        hilbert_zero = (1.0 / math.pi) * (
            3.0 / (10.0 * h ** 2)
            + 3.0 / (4.0 * SQRT5 * h) * (1.0 - 1.0 / (5.0 * h ** 2))
            * math.log((1.0 + SQRT5 * h) / (1.0 - SQRT5 * h))
        ) * float(np.mean(1.0 / positive))
        shrunk_zero = 1.0 / (math.pi * (c - 1.0) * hilbert_zero)
        shrunk = np.concatenate([np.full(p - n, shrunk_zero), shrunk_positive])
    bad = ~np.isfinite(shrunk) | (shrunk <= 0)
    if np.any(bad):
        raise EstimationError("Nonlinear shrinkage produced non-positive eigenvalues",
                              eigenvalues=eigenvalues[bad].tolist())
    return ShrinkageResult(eigenvalues, shrunk, eigenvectors)


def nls_precision(R: ReturnsMatrix) -> PrecisionEstimate:
    """Precision from the nonlinearly shrunk covariance U diag(phi) U'."""
    if R.p == 1:
        return _scalar_estimate(R, Method.NLS)
    result = nls_shrinkage(R.values)
    U = result.eigenvectors
    gamma = symmetrize((U / result.shrunk_eigenvalues) @ U.T)
    return _estimate(R.assets, gamma, Method.NLS, require_pd=True,
                     sample_eigenvalues=result.sample_eigenvalues.tolist(),
                     shrunk_eigenvalues=result.shrunk_eigenvalues.tolist())


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def estimate_precision(method, R: ReturnsMatrix, factors: Optional[FactorPanel] = None,
                       config: Optional[BacktestConfig] = None, seed: int = 0) -> PrecisionEstimate:
    """
    Run the named estimator.

    Args:
        method: Method or its CLI name.
        R: Returns window of the screened assets.
        factors: Observable factors, required by 'rnw' and 'deep'.
        config: Backtest configuration supplying estimator options.
        seed: Seed for the deep-factor network.

    Raises:
        DataError: If a factor method is requested without factors.
    """
    method = Method(method)
    config = config or BacktestConfig()
    if method is Method.NODEWISE:
        return nodewise_precision(R)
    if method is Method.NLS:
        return nls_precision(R)
    if method is Method.POET:
        return poet_precision(R, max_factors=config.poet_max_factors, diagonal_loading=config.diagonal_loading)
    if factors is None:
        raise DataError(f"Method '{method.value}' needs a factor file")
    if method is Method.RESIDUAL_NODEWISE:
        return residual_nodewise_precision(R, factors)
    return deep_factor_precision(R, factors, config.deep, seed, config.diagonal_loading)
