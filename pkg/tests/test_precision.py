"""
Unit tests for Screenfolio precision module.
"""

import numpy as np
import pytest
from scipy import linalg

# Add src to path for imports
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from screenfolio.data import FactorPanel, ReturnsMatrix
from screenfolio.errors import DataError, EstimationError
from screenfolio.precision import (
    Method,
    bai_ng_factor_count,
    deep_factor_precision,
    estimate_precision,
    factor_network_precision,
    fit_factor_network,
    gic_select,
    gic_select_lambda,
    lasso_coordinate_descent,
    nls_precision,
    nls_shrinkage,
    nodewise_precision,
    poet_decomposition,
    poet_precision,
    residual_nodewise_precision,
    symmetrize,
    woodbury_inverse,
)
from screenfolio.settings import DeepFactorConfig


def _factor_returns(seed, n, p, k, loading_scale=1.0, noise=1.0):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n, k))
    b = loading_scale * rng.standard_normal((p, k))
    u = noise * rng.standard_normal((n, p))
    return f, b, f @ b.T + u


class TestSymmetrize:
    """Tests for symmetrize."""

    def test_examples(self):
        """Test the symmetric, triangular and antisymmetric cases."""
        S = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_array_equal(symmetrize(S), S)
        np.testing.assert_array_equal(symmetrize([[1.0, 2.0], [0.0, 1.0]]), [[1.0, 1.0], [1.0, 1.0]])
        A = np.array([[0.0, 1.0], [-1.0, 0.0]])
        np.testing.assert_array_equal(symmetrize(A), np.zeros((2, 2)))


class TestLasso:
    """Tests for lasso_coordinate_descent."""

    def test_zero_penalty_is_ols(self):
        """Test that lambda = 0 recovers least squares."""
        rng = np.random.default_rng(0)
        X = rng.standard_normal((200, 5))
        y = X @ np.array([1.0, -0.5, 0.0, 0.3, 2.0]) + rng.standard_normal(200)
        ols = linalg.lstsq(X, y)[0]
        np.testing.assert_allclose(lasso_coordinate_descent(X, y, 0.0), ols, atol=1e-5)

    def test_large_penalty_kills_everything(self):
        """Test that lambda >= max|X'y|/n gives all zeros."""
        rng = np.random.default_rng(1)
        X = rng.standard_normal((100, 4))
        y = rng.standard_normal(100)
        lam_max = np.max(np.abs(X.T @ y)) / 100
        assert np.all(lasso_coordinate_descent(X, y, lam_max) == 0.0)

    def test_orthonormal_design(self):
        """Test the closed-form soft-threshold solution under X'X/n = I."""
        rng = np.random.default_rng(2)
        n = 64
        Q, _ = linalg.qr(rng.standard_normal((n, 4)), mode="economic")
        X = np.sqrt(n) * Q
        y = X @ np.array([0.8, -0.05, 0.3, 0.0]) + 0.1 * rng.standard_normal(n)
        lam = 0.1
        z = X.T @ y / n
        expected = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
        np.testing.assert_allclose(lasso_coordinate_descent(X, y, lam), expected, atol=1e-8)

    def test_negative_penalty(self):
        """Test that a negative penalty is rejected."""
        with pytest.raises(EstimationError):
            lasso_coordinate_descent(np.eye(3), np.ones(3), -1.0)


class TestGic:
    """Tests for GIC penalty selection."""

    def test_single_grid_point(self):
        """Test that a one-element grid selects that element."""
        rng = np.random.default_rng(3)
        X = rng.standard_normal((50, 3))
        assert gic_select_lambda(X, rng.standard_normal(50), grid=[0.05]) == 0.05

    def test_strong_predictor_selected(self):
        """Test that a strong single predictor enters the selected model."""
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((500, 49))
            y = X[:, 0] + rng.standard_normal(500)
            assert gic_select(X, y).coef[0] != 0.0

    @pytest.mark.slow
    def test_pure_noise_selects_empty_model(self):
        """Test that pure noise selects the empty model in at least 90 of 100 seeds."""
        empty = 0
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            X = rng.standard_normal((500, 49))
            y = rng.standard_normal(500)
            empty += gic_select(X, y).support_size == 0
        assert empty >= 90


class TestNodewise:
    """Tests for nodewise_precision."""

    def test_diagonal_truth(self):
        """Test that independent assets give small off-diagonal entries."""
        rng = np.random.default_rng(4)
        R = ReturnsMatrix.from_array(rng.standard_normal((2000, 5)) * np.array([1.0, 2.0, 0.5, 1.5, 1.0]))
        gamma = nodewise_precision(R).gamma
        off = gamma[~np.eye(5, dtype=bool)]
        assert np.max(np.abs(off)) < 0.05 * np.max(np.diag(gamma))

    def test_zero_penalty_matches_inverse_covariance(self):
        """Test that lambda = 0 reproduces the inverse sample covariance."""
        rng = np.random.default_rng(5)
        Y = rng.standard_normal((2000, 3)) @ np.array([[1.0, 0.3, 0.0], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]])
        R = ReturnsMatrix.from_array(Y)
        gamma = nodewise_precision(R, fixed_lambda=0.0).gamma
        expected = linalg.inv(np.cov(Y, rowvar=False, bias=True))
        assert linalg.norm(gamma - expected) / linalg.norm(expected) < 1e-5

    def test_bivariate_normal(self):
        """Test correlation 0.5 against the analytic precision."""
        rng = np.random.default_rng(6)
        rho = 0.5
        Y = rng.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]], size=5000)
        gamma = nodewise_precision(ReturnsMatrix.from_array(Y)).gamma
        expected = np.array([[1.0, -rho], [-rho, 1.0]]) / (1 - rho ** 2)
        np.testing.assert_allclose(gamma, expected, rtol=0.1)

    def test_reproducible(self):
        """Test that two runs are bit-identical."""
        R = ReturnsMatrix.from_array(np.random.default_rng(7).standard_normal((60, 4)))
        np.testing.assert_array_equal(nodewise_precision(R).gamma, nodewise_precision(R).gamma)

    def test_degenerate_asset(self):
        """Test that a duplicated column makes tau^2 vanish."""
        x = np.random.default_rng(8).standard_normal(100)
        R = ReturnsMatrix.from_array(np.column_stack([x, x]), assets=["a", "b"])
        with pytest.raises(EstimationError):
            nodewise_precision(R, fixed_lambda=0.0)


class TestResidualNodewise:
    """Tests for residual_nodewise_precision."""

    def test_woodbury_identity(self):
        """Test the Woodbury inverse against direct inversion."""
        rng = np.random.default_rng(9)
        A = np.diag(rng.uniform(1.0, 2.0, 6))
        U = rng.standard_normal((6, 2))
        C = np.array([[2.0, 0.3], [0.3, 1.0]])
        result = woodbury_inverse(linalg.inv(A), U, linalg.inv(C), U.T)
        np.testing.assert_allclose(result, linalg.inv(A + U @ C @ U.T), atol=1e-8)

    def test_single_factor_model(self):
        """Test that the estimate inverts a one-factor covariance."""
        rng = np.random.default_rng(10)
        n = 2000
        b = np.array([0.5, 0.4, 0.3, 0.6, 0.2])
        f = rng.standard_normal((n, 1))
        Y = f @ b[None, :] + rng.standard_normal((n, 5))
        sigma = np.outer(b, b) + np.eye(5)
        gamma = residual_nodewise_precision(ReturnsMatrix.from_array(Y), FactorPanel.from_array(f)).gamma
        assert np.max(np.abs(gamma @ sigma - np.eye(5))) < 0.1

    def test_zero_loadings_match_nodewise(self):
        """Test that irrelevant factors leave the nodewise estimate nearly unchanged."""
        rng = np.random.default_rng(11)
        Y = rng.standard_normal((1000, 4))
        Y -= Y.mean(axis=0)
        f = rng.standard_normal((1000, 1))
        R = ReturnsMatrix.from_array(Y)
        plain = nodewise_precision(R, fixed_lambda=0.0).gamma
        residual = residual_nodewise_precision(R, FactorPanel.from_array(f), fixed_lambda=0.0).gamma
        assert linalg.norm(residual - plain) / linalg.norm(plain) < 0.01

    def test_needs_more_months_than_factors(self):
        """Test that n <= K is rejected."""
        R = ReturnsMatrix.from_array(np.random.default_rng(12).standard_normal((3, 2)))
        with pytest.raises(EstimationError):
            residual_nodewise_precision(R, FactorPanel.from_array(np.eye(3)))


class TestFactorCount:
    """Tests for bai_ng_factor_count."""

    def test_three_strong_factors(self):
        """Test that three strong factors are found in at least 45 of 50 seeds."""
        hits = 0
        for seed in range(50):
            _, _, Y = _factor_returns(seed, 200, 100, 3)
            hits += bai_ng_factor_count(Y.T, 8) == 3
        assert hits >= 45

    def test_pure_noise(self):
        """Test that pure noise selects the smallest count."""
        Y = np.random.default_rng(13).standard_normal((100, 200))
        assert bai_ng_factor_count(Y, 8) == 1

    def test_single_candidate(self):
        """Test that K1 = 1 returns 1."""
        _, _, Y = _factor_returns(14, 50, 20, 3)
        assert bai_ng_factor_count(Y.T, 1) == 1

    def test_out_of_range(self):
        """Test that K1 >= min(p, n) is rejected."""
        with pytest.raises(EstimationError):
            bai_ng_factor_count(np.ones((3, 10)), 3)


class TestPoet:
    """Tests for poet_precision."""

    def test_woodbury_identity(self):
        """Test that gamma inverts B B' plus the thresholded residual covariance."""
        _, _, Y = _factor_returns(30, 400, 20, 3)
        R = ReturnsMatrix.from_array(Y)
        gamma = poet_precision(R, K=3).gamma
        parts = poet_decomposition((Y - Y.mean(axis=0)).T, 3)
        sigma = parts.loadings @ parts.loadings.T + parts.residual_covariance
        np.testing.assert_allclose(gamma @ sigma, np.eye(20), atol=1e-8)

    def test_diagonal_errors_thresholded(self):
        """Test that thresholding zeroes nearly every off-diagonal residual entry."""
        _, _, Y = _factor_returns(15, 400, 50, 3)
        estimate = poet_precision(ReturnsMatrix.from_array(Y), K=3)
        assert estimate.diagnostics["zeroed_fraction"] >= 0.95
        assert estimate.diagnostics["min_eigenvalue"] > 0

    def test_error_shrinks_with_more_data(self):
        """Test that the max-norm error falls when n doubles."""
        errors = {}
        for n in (400, 800):
            total = 0.0
            for seed in range(3):
                rng = np.random.default_rng(100 + seed)
                b = rng.standard_normal((50, 3))
                Y = rng.standard_normal((n, 3)) @ b.T + rng.standard_normal((n, 50))
                gamma = linalg.inv(b @ b.T + np.eye(50))
                estimate = poet_precision(ReturnsMatrix.from_array(Y), K=3).gamma
                total += np.max(np.abs(estimate - gamma))
            errors[n] = total / 3
        assert errors[800] < errors[400]

    def test_bai_ng_count_recorded(self):
        """Test that the chosen factor count is reported."""
        _, _, Y = _factor_returns(16, 200, 30, 2, loading_scale=2.0)
        estimate = poet_precision(ReturnsMatrix.from_array(Y))
        assert estimate.diagnostics["n_factors"] == 2
        assert estimate.method is Method.POET

    def test_zero_factors_rejected(self):
        """Test that K = 0 is rejected."""
        R = ReturnsMatrix.from_array(np.random.default_rng(17).standard_normal((30, 5)))
        with pytest.raises(EstimationError):
            poet_precision(R, K=0)


class TestDeepFactor:
    """Tests for the deep-factor estimator."""

    def test_woodbury_identity_with_linear_fit(self):
        """Test that gamma inverts the systematic plus residual covariance."""
        f, b, Y = _factor_returns(18, 300, 6, 2)
        fitted = f @ b.T
        gamma, _ = factor_network_precision(Y, fitted, 2, threshold_c=0.0)
        centered = fitted - fitted.mean(axis=0)
        sigma_g = centered.T @ centered / 300
        residuals = Y - fitted
        sigma_u = residuals.T @ residuals / 300
        np.testing.assert_allclose(gamma @ (sigma_g + sigma_u), np.eye(6), atol=1e-6)

    def test_constant_predictions(self):
        """Test that constant fitted values leave the residual precision."""
        Y = np.random.default_rng(19).standard_normal((200, 4))
        fitted = np.tile(Y.mean(axis=0), (200, 1))
        gamma, diagnostics = factor_network_precision(Y, fitted, 1, threshold_c=0.0)
        residuals = Y - fitted
        np.testing.assert_allclose(gamma, linalg.inv(residuals.T @ residuals / 200), atol=1e-8)
        assert diagnostics["systematic_trace"] == pytest.approx(0.0, abs=1e-20)

    def test_default_threshold_keeps_diagonal(self):
        """Test that heavy thresholding still leaves a positive definite estimate."""
        f, b, Y = _factor_returns(20, 120, 8, 3)
        gamma, diagnostics = factor_network_precision(Y, f @ b.T, 3)
        assert np.all(np.isfinite(gamma))
        assert np.min(linalg.eigvalsh(gamma)) > 0
        assert 0.0 <= diagnostics["zeroed_fraction"] <= 1.0

    def test_too_few_months(self):
        """Test that fewer than min_observations months are rejected."""
        f, _, Y = _factor_returns(21, 30, 4, 1)
        with pytest.raises(EstimationError):
            deep_factor_precision(ReturnsMatrix.from_array(Y), FactorPanel.from_array(f))

    @pytest.mark.slow
    def test_estimate_is_reproducible(self):
        """Test that a fixed seed gives a bit-identical estimate."""
        f, b, Y = _factor_returns(22, 120, 5, 2, noise=0.5)
        config = DeepFactorConfig(hidden_layers=[8], epochs=50)
        R, F = ReturnsMatrix.from_array(Y), FactorPanel.from_array(f)
        first = deep_factor_precision(R, F, config, seed=3)
        second = deep_factor_precision(R, F, config, seed=3)
        np.testing.assert_array_equal(first.gamma, second.gamma)

    @pytest.mark.slow
    def test_network_beats_linear_on_nonlinear_factor(self):
        """Test out-of-sample MSE against the best linear fit for g(f) = sin(2f)."""
        rng = np.random.default_rng(23)
        n, p = 2000, 10
        f = rng.standard_normal((2 * n, 1))
        a = rng.uniform(0.5, 1.5, p)
        Y = np.sin(2.0 * f) * a + 0.1 * rng.standard_normal((2 * n, p))
        network = fit_factor_network(f[:n], Y[:n], DeepFactorConfig(epochs=200), seed=0)
        design = np.column_stack([np.ones(n), f[:n]])
        coef = linalg.lstsq(design, Y[:n])[0]
        linear = np.column_stack([np.ones(n), f[n:]]) @ coef
        mse_network = np.mean((network.predict(f[n:]) - Y[n:]) ** 2)
        mse_linear = np.mean((linear - Y[n:]) ** 2)
        assert mse_network < mse_linear


class TestNls:
    """Tests for nonlinear shrinkage."""

    def test_identity_truth(self):
        """Test that shrunk eigenvalues of an identity covariance are near 1."""
        Y = np.random.default_rng(24).standard_normal((10_000, 2))
        result = nls_shrinkage(Y)
        np.testing.assert_allclose(result.shrunk_eigenvalues, [1.0, 1.0], rtol=0.05)

    def test_eigenvectors_preserved(self):
        """Test that the precision estimate is diagonal in the sample eigenvectors."""
        Y = np.random.default_rng(25).standard_normal((120, 8))
        R = ReturnsMatrix.from_array(Y)
        U = nls_shrinkage(Y).eigenvectors
        rotated = U.T @ nls_precision(R).gamma @ U
        off = rotated[~np.eye(8, dtype=bool)]
        assert np.max(np.abs(off)) < 1e-10

    def test_more_assets_than_months(self):
        """Test that p = 100 > n = 50 yields a positive definite estimate."""
        Y = np.random.default_rng(26).standard_normal((50, 100)) * 0.05
        estimate = nls_precision(ReturnsMatrix.from_array(Y))
        assert np.all(np.isfinite(estimate.gamma))
        assert estimate.diagnostics["min_eigenvalue"] > 0
        assert np.isfinite(estimate.diagnostics["condition_number"])

    def test_rank_deficient_wide_sample(self):
        """Test that p > n needs all n leading eigenvalues positive."""
        rng = np.random.default_rng(27)
        half = rng.standard_normal((10, 40))
        with pytest.raises(EstimationError, match="fewer than 20 positive"):
            nls_shrinkage(np.vstack([half, half]))
        with pytest.raises(EstimationError, match="no positive eigenvalue"):
            nls_shrinkage(np.zeros((20, 40)))

    def test_too_few_months(self):
        """Test that n < 12 is rejected."""
        with pytest.raises(EstimationError):
            nls_shrinkage(np.random.default_rng(27).standard_normal((10, 3)))


class TestEstimatePrecision:
    """Tests for estimate_precision dispatch."""

    @pytest.mark.parametrize("method", ["nw", "poet", "nls"])
    def test_single_asset(self, method):
        """Test that one asset gives [1 / sample variance]."""
        x = np.random.default_rng(29).normal(0.01, 0.05, 60)
        estimate = estimate_precision(method, ReturnsMatrix.from_array(x))
        assert estimate.gamma.shape == (1, 1)
        assert estimate.gamma[0, 0] == pytest.approx(1.0 / np.var(x, ddof=1))

    def test_factor_method_needs_factors(self):
        """Test that rnw without a factor panel raises DataError."""
        R = ReturnsMatrix.from_array(np.random.default_rng(30).standard_normal((60, 3)))
        with pytest.raises(DataError):
            estimate_precision("rnw", R)

    def test_unknown_method(self):
        """Test that an unknown method name raises ValueError."""
        with pytest.raises(ValueError):
            estimate_precision("glasso", ReturnsMatrix.from_array(np.zeros((5, 2))))
