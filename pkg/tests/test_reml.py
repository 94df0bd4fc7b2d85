"""Unit tests for the variance-component (null model) estimator."""

import numpy as np
import pytest

from pglmm.family import FamilySpec, evaluate_working_state, WorkingState
from pglmm.reml import (
    CollinearityError,
    NullModelFit,
    ThetaVector,
    average_information,
    fit_null,
    gls_update,
    load_null_fit,
    reml_quasi_loglik,
    reml_score,
    save_null_fit,
)

GAUSS = FamilySpec("gaussian")
BINOM = FamilySpec("binomial")


def _random_psd(rng, n, rank=None):
    A = rng.standard_normal((n, rank or n))
    V = A @ A.T / (rank or n)
    return 0.5 * (V + V.T)


def _working(y, weights=None):
    y = np.asarray(y, float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, float)
    return WorkingState(mu=y, eta=y, working_response=y, weight_diagonal=w)


class TestGlsUpdate:
    def test_tau_zero_reduces_to_ols(self):
        rng = np.random.default_rng(10)
        X = np.column_stack([np.ones(12), rng.standard_normal(12)])
        y = rng.standard_normal(12)
        theta = ThetaVector(tau=np.array([0.0]), phi=1.0)
        alpha, b = gls_update(_working(y), X, [_random_psd(rng, 12)], theta)
        ols, *_ = np.linalg.lstsq(X, y, rcond=None)
        np.testing.assert_allclose(alpha, ols, atol=1e-10)
        np.testing.assert_allclose(b, 0.0, atol=1e-12)

    def test_intercept_only_identity_kinship(self):
        # Sigma = I + I = 2I: alpha = mean, b = (y - mean)/2
        y = np.array([1.0, 3.0, -2.0, 0.5, 4.0])
        X = np.ones((5, 1))
        theta = ThetaVector(tau=np.array([1.0]), phi=1.0)
        alpha, b = gls_update(_working(y), X, [np.eye(5)], theta)
        assert alpha[0] == pytest.approx(y.mean(), abs=1e-12)
        np.testing.assert_allclose(b, (y - y.mean()) / 2.0, atol=1e-12)

    def test_matches_bordered_system_oracle(self):
        # Henderson-style mixed model equations solved as one dense system
        rng = np.random.default_rng(11)
        n, m = 8, 2
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        y = rng.standard_normal(n)
        w = rng.uniform(0.5, 2.0, n)
        tau = 0.7
        V = _random_psd(rng, n) + 0.5 * np.eye(n)  # full rank
        theta = ThetaVector(tau=np.array([tau]), phi=1.0)
        alpha, b = gls_update(_working(y, w), X, [V], theta)

        W = np.diag(w)
        G_inv = np.linalg.inv(tau * V)
        top = np.hstack([X.T @ W @ X, X.T @ W])
        bottom = np.hstack([W @ X, W + G_inv])
        rhs = np.concatenate([X.T @ W @ y, W @ y])
        sol = np.linalg.solve(np.vstack([top, bottom]), rhs)
        np.testing.assert_allclose(alpha, sol[:m], atol=1e-10)
        np.testing.assert_allclose(b, sol[m:], atol=1e-10)

    def test_collinear_design_names_columns(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal(10)
        X = np.column_stack([np.ones(10), x, 2.0 * x])
        theta = ThetaVector(tau=np.array([0.5]), phi=1.0)
        with pytest.raises(CollinearityError) as exc:
            gls_update(_working(rng.standard_normal(10)), X, [np.eye(10)], theta,
                       column_names=["intercept", "x1", "x1_copy"])
        assert "x1" in str(exc.value)


class TestScoreAndInformation:
    def test_score_matches_finite_difference(self):
        # binomial-style working state: no dispersion parameter
        rng = np.random.default_rng(13)
        n = 6
        X = np.ones((n, 1))
        ws = _working(rng.standard_normal(n), rng.uniform(0.5, 1.5, n))
        Vs = [_random_psd(rng, n) + np.eye(n), _random_psd(rng, n) + np.eye(n)]
        theta = ThetaVector(tau=np.array([0.4, 0.9]))
        score = reml_score(ws, X, Vs, theta)
        h = 1e-6
        for k in range(2):
            tp, tm = theta.tau.copy(), theta.tau.copy()
            tp[k] += h
            tm[k] -= h
            fd = (
                reml_quasi_loglik(ws, X, Vs, ThetaVector(tau=tp))
                - reml_quasi_loglik(ws, X, Vs, ThetaVector(tau=tm))
            ) / (2.0 * h)
            assert score[k] == pytest.approx(fd, abs=1e-5)

    def test_score_matches_finite_difference_with_dispersion(self):
        rng = np.random.default_rng(14)
        n = 6
        X = np.ones((n, 1))
        y = rng.standard_normal(n)
        V = _random_psd(rng, n) + np.eye(n)
        tau, phi = 0.6, 1.3

        def loglik(phi_, tau_):
            ws = _working(y, np.full(n, 1.0 / phi_))
            return reml_quasi_loglik(ws, X, [V], ThetaVector(tau=np.array([tau_]), phi=phi_))

        ws = _working(y, np.full(n, 1.0 / phi))
        score = reml_score(ws, X, [V], ThetaVector(tau=np.array([tau]), phi=phi))
        h = 1e-6
        fd_phi = (loglik(phi + h, tau) - loglik(phi - h, tau)) / (2.0 * h)
        fd_tau = (loglik(phi, tau + h) - loglik(phi, tau - h)) / (2.0 * h)
        assert score[0] == pytest.approx(fd_phi, abs=1e-5)
        assert score[1] == pytest.approx(fd_tau, abs=1e-5)

    def test_average_information_symmetric_psd(self):
        rng = np.random.default_rng(15)
        n = 10
        for _ in range(100):
            X = np.column_stack([np.ones(n), rng.standard_normal(n)])
            ws = _working(rng.standard_normal(n), rng.uniform(0.3, 2.0, n))
            Vs = [_random_psd(rng, n) + 0.1 * np.eye(n)]
            theta = ThetaVector(tau=rng.uniform(0.1, 1.0, 1))
            AI = average_information(ws, X, Vs, theta)
            assert np.max(np.abs(AI - AI.T)) < 1e-12
            assert np.linalg.eigvalsh(AI)[0] >= -1e-10


class TestFitNull:
    def test_working_residual_identity(self):
        # (Ytilde - eta_hat) must equal W^-1 P Ytilde at the fitted point
        rng = np.random.default_rng(16)
        n = 40
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        V = _random_psd(rng, n) + np.eye(n)
        L = np.linalg.cholesky(V)
        eta = X @ np.array([-0.3, 0.5]) + 0.8 * (L @ rng.standard_normal(n))
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        fit = fit_null(y, X, [V], BINOM)

        w = fit.weight_diagonal
        K = fit.tau[0] * V
        sigma = np.diag(1.0 / w) + K
        si = np.linalg.inv(sigma)
        P = si - si @ X @ np.linalg.solve(X.T @ si @ X, X.T @ si)
        lhs = fit.working_response - fit.eta
        rhs = (1.0 / w) * (P @ fit.working_response)
        assert np.max(np.abs(lhs - rhs)) <= 1e-8 * np.max(np.abs(fit.working_response))

    def test_random_effect_in_kinship_column_space(self):
        rng = np.random.default_rng(17)
        n = 35
        X = np.ones((n, 1))
        V = _random_psd(rng, n, rank=5)  # rank deficient on purpose
        L = np.linalg.cholesky(V + 1e-10 * np.eye(n))
        eta = 1.5 * (L @ rng.standard_normal(n)) - 0.5
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        fit = fit_null(y, X, [V], BINOM)
        if np.linalg.norm(fit.b) > 0:
            # projection of b onto the column space of V leaves ~nothing behind
            proj = V @ np.linalg.lstsq(V, fit.b, rcond=None)[0]
            assert np.linalg.norm(fit.b - proj) <= 1e-6 * np.linalg.norm(fit.b)

    def test_no_components_is_plain_glm(self):
        rng = np.random.default_rng(18)
        n = 60
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        eta = X @ np.array([0.2, -0.8])
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        fit = fit_null(y, X, [], BINOM)
        assert fit.converged
        assert fit.tau.size == 0
        np.testing.assert_array_equal(fit.b, 0.0)
        # IRLS oracle
        alpha = np.zeros(2)
        for _ in range(50):
            ws = evaluate_working_state(BINOM, y, X @ alpha)
            WX = X * ws.weight_diagonal[:, None]
            alpha = np.linalg.solve(X.T @ WX, WX.T @ ws.working_response)
        np.testing.assert_allclose(fit.alpha, alpha, atol=1e-6)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            fit_null(np.zeros(2), np.ones((2, 2)), [np.eye(2)], GAUSS)

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(19)
        n = 30
        X = np.column_stack([np.ones(n), rng.standard_normal(n)])
        y = (rng.random(n) < 0.4).astype(float)
        fit = fit_null(y, X, [np.eye(n)], BINOM)
        save_null_fit(fit, tmp_path / "null.json", tmp_path / "null.bin")
        back = load_null_fit(tmp_path / "null.json", tmp_path / "null.bin")
        assert isinstance(back, NullModelFit)
        np.testing.assert_array_equal(back.alpha, fit.alpha)
        np.testing.assert_array_equal(back.b, fit.b)
        np.testing.assert_array_equal(back.tau, fit.tau)
        np.testing.assert_array_equal(back.working_response, fit.working_response)
        assert back.family_kind == fit.family_kind
        assert back.converged == fit.converged
