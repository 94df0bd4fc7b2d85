"""Unit tests for the response-family machinery."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pglmm.family import (
    MU_EPS,
    FamilySpec,
    evaluate_working_state,
    inverse_link,
    quasi_deviance,
    quasi_loglik,
    sigma_upper_bound_constant,
)

BINOM = FamilySpec("binomial")
GAUSS = FamilySpec("gaussian", dispersion=1.0)


class TestFamilySpec:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            FamilySpec("poisson")

    def test_binomial_requires_unit_dispersion(self):
        with pytest.raises(ValueError):
            FamilySpec("binomial", dispersion=2.0)

    def test_nonpositive_dispersion_rejected(self):
        with pytest.raises(ValueError):
            FamilySpec("gaussian", dispersion=0.0)

    def test_prior_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            FamilySpec("binomial", prior_weights=np.array([1.0, 0.0]))


class TestWorkingState:
    def test_binomial_case_at_zero_eta(self):
        # y=1, eta=0: mu=1/2, working response 0 + (1-1/2)/(1/4) = 2, weight 1/4
        ws = evaluate_working_state(BINOM, np.array([1.0]), np.array([0.0]))
        assert ws.mu[0] == pytest.approx(0.5)
        assert ws.working_response[0] == pytest.approx(2.0)
        assert ws.weight_diagonal[0] == pytest.approx(0.25)

    def test_binomial_control_at_zero_eta(self):
        ws = evaluate_working_state(BINOM, np.array([0.0]), np.array([0.0]))
        assert ws.working_response[0] == pytest.approx(-2.0)

    def test_gaussian_identity_link(self):
        # identity link: working response is just y, weight 1/phi
        ws = evaluate_working_state(GAUSS, np.array([3.0]), np.array([1.0]))
        assert ws.working_response[0] == pytest.approx(3.0)
        assert ws.weight_diagonal[0] == pytest.approx(1.0)

    def test_binomial_rejects_noninteger_response(self):
        with pytest.raises(ValueError):
            evaluate_working_state(BINOM, np.array([0.5]), np.array([0.0]))

    def test_nonfinite_eta_rejected(self):
        with pytest.raises(ValueError):
            evaluate_working_state(BINOM, np.array([1.0]), np.array([np.inf]))

    def test_mu_clamped_away_from_boundary(self):
        ws = evaluate_working_state(BINOM, np.array([1.0, 0.0]), np.array([100.0, -100.0]))
        assert np.all(ws.mu >= MU_EPS)
        assert np.all(ws.mu <= 1.0 - MU_EPS)
        assert np.all(np.isfinite(ws.working_response))


class TestQuasiDeviance:
    def test_binomial_single_point(self):
        # y=1, mu=1/2: deviance 2*log 2
        assert quasi_deviance(BINOM, np.array([1.0]), np.array([0.5])) == pytest.approx(
            2.0 * np.log(2.0)
        )

    def test_binomial_two_points(self):
        val = quasi_deviance(BINOM, np.array([1.0, 0.0]), np.array([0.9, 0.1]))
        assert val == pytest.approx(4.0 * np.log(10.0 / 9.0))
        assert val == pytest.approx(0.4214420626312689)

    def test_gaussian_zero_at_fit(self):
        y = np.array([1.0, -2.0, 0.5])
        assert quasi_deviance(GAUSS, y, y) == 0.0

    def test_deviance_is_minus_twice_loglik_shifted(self):
        rng = np.random.default_rng(0)
        y = (rng.random(20) < 0.5).astype(float)
        mu = rng.uniform(0.05, 0.95, 20)
        dev = quasi_deviance(BINOM, y, mu)
        # deviance = -2*(ll(mu) - ll(saturated)); saturated ll of 0/1 data is 0
        assert dev == pytest.approx(-2.0 * quasi_loglik(BINOM, y, mu), abs=1e-10)


class TestUpperBoundConstant:
    def test_binomial_constant(self):
        assert sigma_upper_bound_constant(BINOM) == 4.0

    def test_gaussian_constant_is_dispersion(self):
        assert sigma_upper_bound_constant(FamilySpec("gaussian", dispersion=2.5)) == 2.5

    @given(st.floats(min_value=-30.0, max_value=30.0))
    def test_weight_times_constant_bounded(self, eta):
        # the scalar bound c must dominate every weight: w * c <= 1 (+eps)
        ws = evaluate_working_state(BINOM, np.array([1.0]), np.array([eta]))
        assert ws.weight_diagonal[0] * sigma_upper_bound_constant(BINOM) <= 1.0 + 1e-12


class TestInverseLink:
    def test_binomial_logistic(self):
        assert inverse_link(BINOM, np.array([0.0]))[0] == pytest.approx(0.5)

    def test_gaussian_identity(self):
        eta = np.array([-1.0, 3.5])
        np.testing.assert_array_equal(inverse_link(GAUSS, eta), eta)
