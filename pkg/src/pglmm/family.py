"""Exponential-family and link machinery for the model fitters.

Supports the binomial family with logit link and the gaussian family with
identity link. All operations here are pure functions over immutable
inputs: given a linear predictor they produce fitted means, iterative
working responses, observation weights and quasi-deviances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# Fitted probabilities are clamped away from {0, 1} before any division by
# mu*(1-mu); prevents blow-ups under separation.
MU_EPS = 1e-5

BINOMIAL = "binomial"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class FamilySpec:
    """Response family: distribution kind, dispersion and prior weights.

    For the binomial family the dispersion is fixed at 1 and only 0/1
    responses are accepted. Prior weights default to 1 for every
    observation.
    """

    kind: str
    dispersion: float = 1.0
    prior_weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in (BINOMIAL, GAUSSIAN):
            raise ValueError(f"unknown family kind: {self.kind!r}")
        if self.dispersion <= 0:
            raise ValueError("dispersion must be positive")
        if self.kind == BINOMIAL and self.dispersion != 1.0:
            raise ValueError("binomial family requires dispersion == 1")
        if self.prior_weights is not None:
            w = np.asarray(self.prior_weights, dtype=float)
            if np.any(w <= 0):
                raise ValueError("prior weights must be strictly positive")
            object.__setattr__(self, "prior_weights", w)

    def weights_for(self, n: int) -> np.ndarray:
        if self.prior_weights is None:
            return np.ones(n)
        if len(self.prior_weights) != n:
            raise ValueError("prior weight length does not match data")
        return self.prior_weights

    def with_dispersion(self, phi: float) -> "FamilySpec":
        return FamilySpec(self.kind, phi, self.prior_weights)


@dataclass(frozen=True)
class WorkingState:
    """Per-observation quantities of one linearization of the model."""

    mu: np.ndarray
    eta: np.ndarray
    working_response: np.ndarray
    weight_diagonal: np.ndarray


def inverse_link(family: FamilySpec, eta: np.ndarray) -> np.ndarray:
    """Map a linear predictor to the mean scale."""
    eta = np.asarray(eta, dtype=float)
    if family.kind == BINOMIAL:
        return np.clip(expit(eta), MU_EPS, 1.0 - MU_EPS)
    return eta


def evaluate_working_state(family: FamilySpec, y: np.ndarray, eta: np.ndarray) -> WorkingState:
    """Compute mean, working response and weights at a linear predictor.

    The working response linearizes the response around the current mean,
    eta + g'(mu) * (y - mu), and the weight diagonal is
    a_i / (phi * nu(mu_i) * g'(mu_i)^2).
    """
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if y.shape != eta.shape:
        raise ValueError("y and eta must have the same length")
    if not np.all(np.isfinite(eta)):
        raise ValueError("non-finite linear predictor")
    a = family.weights_for(len(y))
    if family.kind == BINOMIAL:
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("binomial responses must be 0/1")
        mu = inverse_link(family, eta)
        var = mu * (1.0 - mu)
        ytilde = eta + (y - mu) / var
        w = a * var
    else:
        mu = eta
        ytilde = eta + (y - mu)
        w = a / family.dispersion
    return WorkingState(mu=mu, eta=eta, working_response=ytilde, weight_diagonal=w)


def quasi_loglik(family: FamilySpec, y: np.ndarray, mu: np.ndarray) -> float:
    """Sum of per-observation quasi-likelihood contributions."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ValueError("y and mu must have the same length")
    a = family.weights_for(len(y))
    if family.kind == BINOMIAL:
        mu = np.clip(mu, MU_EPS, 1.0 - MU_EPS)
        return float(np.sum(a * (y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu))))
    return float(-0.5 * np.sum(a * (y - mu) ** 2) / family.dispersion)


def quasi_deviance(family: FamilySpec, y: np.ndarray, mu: np.ndarray) -> float:
    """-2 times the summed quasi-likelihood, up to the saturated-model shift.

    For binomial data this is the usual binomial deviance; for gaussian
    data it is the weighted residual sum of squares over the dispersion.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ValueError("y and mu must have the same length")
    a = family.weights_for(len(y))
    if family.kind == BINOMIAL:
        mu = np.clip(mu, MU_EPS, 1.0 - MU_EPS)
        with np.errstate(divide="ignore", invalid="ignore"):
            term1 = np.where(y > 0, y * np.log(y / mu), 0.0)
            term0 = np.where(y < 1, (1.0 - y) * np.log((1.0 - y) / (1.0 - mu)), 0.0)
        return float(2.0 * np.sum(a * (term1 + term0)))
    return float(np.sum(a * (y - mu) ** 2) / family.dispersion)


def sigma_upper_bound_constant(family: FamilySpec) -> float:
    """Scalar c such that (c*I + K)^-1 bounds (W^-1 + K)^-1 above.

    For binary responses the weight mu*(1-mu) never exceeds 1/4, so c = 4;
    for the gaussian family c equals the dispersion.
    """
    if family.kind == BINOMIAL:
        return 4.0
    return float(family.dispersion)
