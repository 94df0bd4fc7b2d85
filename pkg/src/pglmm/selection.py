"""Model selection along the path, out-of-sample prediction and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .family import FamilySpec, evaluate_working_state, inverse_link
from .path import PathFit


@dataclass(frozen=True)
class SelectionCriterion:
    """Information-criterion or validation-based choice of lambda."""

    kind: str  # "aic", "bic", "gic", "validation"
    a_n: float | None = None  # gic only
    metric: str = "auc"  # validation only

    def penalty_weight(self, n: int) -> float:
        if self.kind == "aic":
            return 2.0
        if self.kind == "bic":
            return float(np.log(n))
        if self.kind == "gic":
            if self.a_n is None or self.a_n <= 0:
                raise ValueError("gic requires a positive a_n")
            return float(self.a_n)
        raise ValueError(f"{self.kind!r} has no information-criterion weight")


def gic(path: PathFit, a_n: float, n_variance_components: int | None = None) -> np.ndarray:
    """-2 * log-quasi-likelihood + a_n * (nonzero coefficients + n components).

    Variance components count toward the degrees of freedom even though
    they were estimated under the null.
    """
    if not path.records:
        raise ValueError("empty path")
    if n_variance_components is None:
        n_variance_components = len(path.tau)
    out = np.empty(len(path.records))
    for i, rec in enumerate(path.records):
        df = rec.df + n_variance_components
        out[i] = -2.0 * rec.pql_loglik + a_n * df
    return out


def select(path: PathFit, criterion: SelectionCriterion, n: int | None = None,
           validation_scores=None) -> int:
    """Chosen lambda index; ties prefer the sparser (larger-lambda) model.

    For information criteria ``n`` is the training sample size. For the
    validation criterion the caller supplies one score vector and label
    vector per lambda via ``validation_scores = (scores_per_lambda, labels)``.
    """
    if criterion.kind == "validation":
        if validation_scores is None:
            raise ValueError("validation criterion requires validation scores")
        scores_per_lambda, labels = validation_scores
        aucs = np.array([metric_auc(s, labels) for s in scores_per_lambda])
        return int(np.argmax(aucs))
    if n is None:
        n = len(path.records[0].eta)
    values = gic(path, criterion.penalty_weight(n))
    return int(np.argmin(values))


def _training_working_state(family: FamilySpec, y_train, eta_hat):
    ws = evaluate_working_state(family, np.asarray(y_train, float), np.asarray(eta_hat, float))
    return ws.working_response, ws.weight_diagonal


def predict_glmm(beta, X_test, X_train, y_train, eta_hat, V11, V12, tau1: float,
                 family: FamilySpec) -> np.ndarray:
    """Mixed-model prediction for new individuals (single kinship only).

    The random-effect contribution is the conditional mean
    tau1 * V12 (W^-1 + tau1 V11)^-1 (Ytilde - X beta), with weights and
    working response taken from the final fitted state ``eta_hat``.
    """
    beta = np.asarray(beta, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    lp = X_test @ beta
    if tau1 == 0.0:
        return inverse_link(family, lp)
    ytilde, w = _training_working_state(family, y_train, eta_hat)
    resid = ytilde - np.asarray(X_train, float) @ beta
    sigma22 = np.diag(1.0 / w) + tau1 * V11
    lp = lp + tau1 * (np.asarray(V12, float) @ np.linalg.solve(sigma22, resid))
    return inverse_link(family, lp)


def predict_glmm_eigen(beta, X_test, X_train, y_train, eta_hat, V11, V12,
                       tau1: float, family: FamilySpec) -> np.ndarray:
    """Same prediction through the eigenbasis of the training kinship.

    Algebraically equal to :func:`predict_glmm`; kept as an independent
    route for cross-validation of the implementation.
    """
    beta = np.asarray(beta, dtype=float)
    X_test = np.asarray(X_test, dtype=float)
    lp = X_test @ beta
    if tau1 == 0.0:
        return inverse_link(family, lp)
    ytilde, w = _training_working_state(family, y_train, eta_hat)
    resid = ytilde - np.asarray(X_train, float) @ beta
    D, U = np.linalg.eigh(np.asarray(V11, float))
    D = np.clip(D, 0.0, None)
    keep = D > 1e-10 * max(float(D[-1]), 1.0)  # null directions contribute 0
    D, U = D[keep], U[:, keep]
    Ut = U * D  # scaled principal components
    inner = np.diag(D / tau1) + Ut.T @ (w[:, None] * Ut)
    coefs = np.linalg.solve(inner, Ut.T @ (w * resid))
    lp = lp + np.asarray(V12, float) @ (U @ coefs)
    return inverse_link(family, lp)


def pc_coefficients(beta, X_train, y_train, eta_hat, U_r, D_r, family: FamilySpec) -> np.ndarray:
    """Weighted least-squares coefficients of the scaled PCs on the
    partial working residual."""
    beta = np.asarray(beta, dtype=float)
    ytilde, w = _training_working_state(family, y_train, eta_hat)
    resid = ytilde - np.asarray(X_train, float) @ beta
    Ut = np.asarray(U_r, float) * np.asarray(D_r, float)
    return np.linalg.solve(Ut.T @ (w[:, None] * Ut), Ut.T @ (w * resid))


def predict_glm_pc(beta, X_test, X_train, y_train, eta_hat, U_r, D_r, V12,
                   family: FamilySpec) -> np.ndarray:
    """PC-adjusted GLM prediction: project training PCs onto the test set.

    ``U_r``/``D_r`` are the leading eigenvectors/eigenvalues of the
    training kinship; the projected PCs for the test set are V12 @ U_r.
    """
    X_test = np.asarray(X_test, dtype=float)
    lp = X_test @ np.asarray(beta, float)
    r = np.asarray(U_r, float).shape[1] if np.ndim(U_r) == 2 else 0
    if r == 0:
        return inverse_link(family, lp)
    delta = pc_coefficients(beta, X_train, y_train, eta_hat, U_r, D_r, family)
    lp = lp + np.asarray(V12, float) @ (np.asarray(U_r, float) @ delta)
    return inverse_link(family, lp)


# ---------------------------------------------------------------------------
# Metrics


def metric_tpr(selected, truth) -> float:
    """Fraction of selected variants that are truly causal.

    Defined as |selected & truth| / |selected|, with an empty selection
    scored 0.
    """
    selected = set(selected)
    if not selected:
        return 0.0
    return len(selected & set(truth)) / len(selected)


def metric_recall(selected, truth) -> float:
    """Fraction of causal variants recovered: |selected & truth| / |truth|."""
    truth = set(truth)
    if not truth:
        return 0.0
    return len(set(selected) & truth) / len(truth)


def metric_rmse(beta_hat, beta_true) -> float:
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta_true = np.asarray(beta_true, dtype=float)
    if beta_hat.shape != beta_true.shape:
        raise ValueError("coefficient vectors must have the same length")
    return float(np.sqrt(np.mean((beta_hat - beta_true) ** 2)))


def metric_auc(scores, labels) -> float:
    """Area under the ROC curve in rank (Mann-Whitney) form.

    P(score_case > score_control) + 0.5 * P(tie) over all case/control
    pairs.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both classes present")
    ranks = rankdata(scores)
    rank_sum = float(np.sum(ranks[labels == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
