"""Variance-component estimation for the null model (no genetic effects).

Fits the mixed model by iterating generalized least squares on the working
response with Newton-type updates of the variance components, where the
update matrix is the average of the observed and expected information.
The dispersion is estimated jointly for gaussian responses and fixed at 1
for binomial responses.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr

from .family import GAUSSIAN, FamilySpec, WorkingState, evaluate_working_state


class CollinearityError(np.linalg.LinAlgError):
    """The covariate cross-product is singular."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"collinear covariate columns: {self.columns}")


@dataclass
class ThetaVector:
    """Variance parameters: optional dispersion plus one scale per kinship.

    ``pinned`` marks components that hit the zero boundary and are excluded
    from further updates.
    """

    tau: np.ndarray
    phi: float | None = None
    pinned: np.ndarray | None = None

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        if self.pinned is None:
            self.pinned = np.zeros(self.n_params, dtype=bool)

    @property
    def has_phi(self) -> bool:
        return self.phi is not None

    @property
    def n_params(self) -> int:
        return len(self.tau) + (1 if self.has_phi else 0)

    def as_array(self) -> np.ndarray:
        if self.has_phi:
            return np.concatenate([[self.phi], self.tau])
        return self.tau.copy()

    def replace_from_array(self, arr: np.ndarray) -> "ThetaVector":
        if self.has_phi:
            return ThetaVector(tau=arr[1:].copy(), phi=float(arr[0]), pinned=self.pinned.copy())
        return ThetaVector(tau=arr.copy(), phi=None, pinned=self.pinned.copy())


@dataclass
class NullModelFit:
    """Converged (or flagged) state of the variance-component fit."""

    alpha: np.ndarray
    b: np.ndarray
    theta: ThetaVector
    working_response: np.ndarray
    weight_diagonal: np.ndarray
    eta: np.ndarray
    converged: bool
    n_iterations: int
    score_at_convergence: np.ndarray
    family_kind: str

    @property
    def tau(self) -> np.ndarray:
        return self.theta.tau

    @property
    def phi(self) -> float:
        return self.theta.phi if self.theta.has_phi else 1.0


class _Projector:
    """Dense working kernel for one value of the variance parameters.

    Holds Sigma = W^-1 + sum_s tau_s V_s, its inverse applied to the
    covariates and response, and the REML projection P.
    """

    def __init__(self, working: WorkingState, X: np.ndarray, Vs, theta: ThetaVector,
                 column_names=None):
        n = len(working.working_response)
        self.X = X
        self.Vs = Vs
        self.theta = theta
        self.K = sum(t * V for t, V in zip(theta.tau, Vs)) if any(theta.tau) else np.zeros((n, n))
        sigma = np.diag(1.0 / working.weight_diagonal) + self.K
        self._cho = cho_factor(sigma, lower=True)
        self.SiX = cho_solve(self._cho, X)
        self.XtSiX = X.T @ self.SiX
        self._check_rank(column_names)
        self.Y = working.working_response
        self.SiY = cho_solve(self._cho, self.Y)
        self.PY = self._apply_P(self.SiY, presolved=True)
        # Diagonal of W^-1/phi used as the dispersion-direction matrix.
        phi = theta.phi if theta.has_phi else 1.0
        self.V0_diag = 1.0 / (phi * working.weight_diagonal)

    def _check_rank(self, column_names):
        cond = np.linalg.cond(self.XtSiX)
        if cond > 1e12:
            _, R, piv = qr(self.XtSiX, pivoting=True)
            diag = np.abs(np.diag(R))
            bad = piv[diag < diag[0] * 1e-10]
            names = column_names if column_names is not None else [str(i) for i in range(self.X.shape[1])]
            raise CollinearityError([names[i] for i in bad])

    def _apply_P(self, v, presolved=False):
        Siv = v if presolved else cho_solve(self._cho, v)
        return Siv - self.SiX @ np.linalg.solve(self.XtSiX, self.X.T @ Siv)

    def gls(self):
        alpha = np.linalg.solve(self.XtSiX, self.SiX.T @ self.Y)
        resid = self.Y - self.X @ alpha
        b = self.K @ cho_solve(self._cho, resid)
        return alpha, b

    def _component_matvec(self, k, v):
        """Apply the k-th variance-direction matrix (active layout)."""
        if self.theta.has_phi and k == 0:
            return self.V0_diag * v
        s = k - 1 if self.theta.has_phi else k
        return self.Vs[s] @ v

    def _component_dense(self, k):
        if self.theta.has_phi and k == 0:
            return np.diag(self.V0_diag)
        s = k - 1 if self.theta.has_phi else k
        return self.Vs[s]

    def active_indices(self):
        return np.where(~self.theta.pinned)[0]

    def score(self) -> np.ndarray:
        """REML score for each unpinned variance parameter."""
        out = []
        Si = cho_solve(self._cho, np.eye(len(self.Y)))
        M = np.linalg.solve(self.XtSiX, self.SiX.T)
        for k in self.active_indices():
            Vk = self._component_dense(k)
            quad = self.PY @ (Vk @ self.PY)
            # tr(P Vk) = tr(Si Vk) - tr((X' Si X)^-1 X' Si Vk Si X)
            tr = np.sum(Si * Vk.T) - np.sum(M * (Vk @ self.SiX).T)
            out.append(0.5 * (quad - tr))
        return np.array(out)

    def average_information(self) -> np.ndarray:
        active = self.active_indices()
        u = [self._component_matvec(k, self.PY) for k in active]
        Pu = [self._apply_P(ui) for ui in u]
        q = len(active)
        AI = np.empty((q, q))
        for a in range(q):
            for b_ in range(a, q):
                AI[a, b_] = AI[b_, a] = 0.5 * (u[a] @ Pu[b_])
        return 0.5 * (AI + AI.T)


def gls_update(working: WorkingState, X: np.ndarray, Vs, theta: ThetaVector,
               column_names=None):
    """Fixed- and random-effect solve at fixed variance parameters."""
    proj = _Projector(working, X, Vs, theta, column_names)
    return proj.gls()


def reml_score(working: WorkingState, X: np.ndarray, Vs, theta: ThetaVector) -> np.ndarray:
    return _Projector(working, X, Vs, theta).score()


def average_information(working: WorkingState, X: np.ndarray, Vs, theta: ThetaVector) -> np.ndarray:
    return _Projector(working, X, Vs, theta).average_information()


def reml_quasi_loglik(working: WorkingState, X: np.ndarray, Vs, theta: ThetaVector) -> float:
    """Profile REML log-quasi-likelihood up to an additive constant."""
    n = len(working.working_response)
    K = sum(t * V for t, V in zip(theta.tau, Vs)) if any(theta.tau) else np.zeros((n, n))
    sigma = np.diag(1.0 / working.weight_diagonal) + K
    cho = cho_factor(sigma, lower=True)
    logdet_sigma = 2.0 * np.sum(np.log(np.diag(cho[0])))
    SiX = cho_solve(cho, X)
    XtSiX = X.T @ SiX
    _, logdet_x = np.linalg.slogdet(XtSiX)
    Y = working.working_response
    SiY = cho_solve(cho, Y)
    PY = SiY - SiX @ np.linalg.solve(XtSiX, X.T @ SiY)
    return float(-0.5 * (logdet_sigma + logdet_x + Y @ PY))


def _glm_initial_fit(y, X, family: FamilySpec, max_iter=25, tol=1e-8):
    """Plain GLM fit (no random effects) used to seed the algorithm."""
    n, m = X.shape
    if family.kind == GAUSSIAN:
        alpha, *_ = np.linalg.lstsq(X, y, rcond=None)
        eta = X @ alpha
        return alpha, eta
    alpha = np.zeros(m)
    ybar = np.clip(np.mean(y), 0.05, 0.95)
    alpha[np.argmax(np.all(X == 1.0, axis=0))] = np.log(ybar / (1.0 - ybar))
    eta = X @ alpha
    for _ in range(max_iter):
        ws = evaluate_working_state(family, y, eta)
        WX = X * ws.weight_diagonal[:, None]
        new_alpha = np.linalg.solve(X.T @ WX, WX.T @ ws.working_response)
        step = np.max(np.abs(new_alpha - alpha))
        alpha = new_alpha
        eta = X @ alpha
        if step < tol:
            break
    return alpha, eta


def fit_null(y, X, Vs, family: FamilySpec, tol: float = 1e-6, max_iter: int = 100,
             column_names=None) -> NullModelFit:
    """Estimate variance components, fixed effects and random effects.

    Follows the average-information Newton scheme: a moment-style start
    from the null GLM working response, one scaled gradient pre-step, then
    Newton iterations with the average-information matrix, refreshing the
    working response after each fixed/random-effect solve.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Vs = [np.asarray(V, dtype=float) for V in Vs]
    n, m = X.shape
    S = len(Vs)
    if n < m + S:
        raise ValueError("not enough samples to estimate the model")

    alpha, eta = _glm_initial_fit(y, X, family)
    has_phi = family.kind == GAUSSIAN
    n_comp = S + (1 if has_phi else 0)
    fam = family

    if n_comp == 0:
        # No variance parameters at all: the null model is a plain GLM.
        ws = evaluate_working_state(fam, y, eta)
        return NullModelFit(
            alpha=alpha,
            b=np.zeros(n),
            theta=ThetaVector(tau=np.array([])),
            working_response=ws.working_response,
            weight_diagonal=ws.weight_diagonal,
            eta=eta,
            converged=True,
            n_iterations=0,
            score_at_convergence=np.array([]),
            family_kind=family.kind,
        )

    ws = evaluate_working_state(fam, y, eta)
    var0 = float(np.var(ws.working_response))
    theta = ThetaVector(
        tau=np.full(S, var0 / n_comp),
        phi=var0 / n_comp if has_phi else None,
    )
    floor_val = 1e-6 * var0
    if has_phi:
        fam = family.with_dispersion(theta.phi)
        ws = evaluate_working_state(fam, y, eta)

    n_projected = np.zeros(n_comp, dtype=int)

    def project(arr):
        """Clamp negative steps; pin components projected twice in a row."""
        for k in range(n_comp):
            if theta.pinned[k]:
                arr[k] = 0.0
                continue
            if arr[k] <= 0.0:
                n_projected[k] += 1
                is_phi = has_phi and k == 0
                if n_projected[k] >= 2 and not is_phi:
                    arr[k] = 0.0
                    theta.pinned[k] = True
                else:
                    arr[k] = floor_val
            else:
                n_projected[k] = 0
        return arr

    # Scaled gradient pre-step from the moment start.
    score0 = _Projector(ws, X, Vs, theta).score()
    arr = theta.as_array()
    active = np.where(~theta.pinned)[0]
    arr[active] = arr[active] + (2.0 / n) * arr[active] ** 2 * score0
    theta = theta.replace_from_array(project(arr))

    converged = False
    it = 0
    b = np.zeros(n)
    for it in range(1, max_iter + 1):
        if has_phi:
            fam = family.with_dispersion(max(theta.phi, floor_val))
            ws = WorkingState(
                mu=ws.mu,
                eta=ws.eta,
                working_response=ws.working_response,
                weight_diagonal=fam.weights_for(n) / fam.dispersion,
            )
        proj = _Projector(ws, X, Vs, theta, column_names)
        score = proj.score()
        AI = proj.average_information()
        active = proj.active_indices()
        step = _solve_information(AI, score)
        arr = theta.as_array()
        arr[active] = arr[active] + step
        new_theta = theta.replace_from_array(project(arr))

        if has_phi:
            fam = family.with_dispersion(max(new_theta.phi, floor_val))
            ws = WorkingState(ws.mu, ws.eta, ws.working_response, fam.weights_for(n) / fam.dispersion)
        proj = _Projector(ws, X, Vs, new_theta, column_names)
        new_alpha, b = proj.gls()
        eta = X @ new_alpha + b

        rel_alpha = _max_rel_change(new_alpha, alpha)
        rel_theta = _max_rel_change(new_theta.as_array(), theta.as_array())
        alpha, theta = new_alpha, new_theta

        ws = evaluate_working_state(fam, y, eta)

        if 2.0 * max(rel_alpha, rel_theta) <= tol:
            converged = True
            break

    if not converged:
        warnings.warn(f"variance-component fit did not converge in {max_iter} iterations")

    final = _Projector(ws, X, Vs, theta, column_names)
    score_final = final.score()
    return NullModelFit(
        alpha=alpha,
        b=b,
        theta=theta,
        working_response=ws.working_response,
        weight_diagonal=ws.weight_diagonal,
        eta=eta,
        converged=converged,
        n_iterations=it,
        score_at_convergence=score_final,
        family_kind=family.kind,
    )


def _max_rel_change(new, old):
    denom = np.abs(new) + np.abs(old)
    num = np.abs(new - old)
    mask = denom > 0
    return float(np.max(num[mask] / denom[mask])) if mask.any() else 0.0


def _solve_information(AI, score):
    """Newton step with a ridge retry and scaled-gradient fallback."""
    q = AI.shape[0]
    try:
        if np.linalg.cond(AI) < 1e12:
            return np.linalg.solve(AI, score)
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-6 * np.trace(AI) / q if np.trace(AI) > 0 else 1e-6
    damped = AI + ridge * np.eye(q)
    try:
        if np.linalg.cond(damped) < 1e14:
            return np.linalg.solve(damped, score)
    except np.linalg.LinAlgError:
        pass
    scale = max(np.trace(AI) / q, 1e-12)
    return score / scale


# ---------------------------------------------------------------------------
# Serialization: JSON document plus a little-endian f64 binary sidecar
# holding the random effects and final weights.


def save_null_fit(fit: NullModelFit, json_path, sidecar_path) -> None:
    doc = {
        "alpha": [float(v) for v in fit.alpha],
        "tau": [float(v) for v in fit.tau],
        "phi": float(fit.phi),
        "pinned": [bool(v) for v in fit.theta.pinned],
        "converged": bool(fit.converged),
        "n_iterations": int(fit.n_iterations),
        "family": fit.family_kind,
        "n": int(len(fit.b)),
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(sidecar_path, "wb") as fh:
        fh.write(struct.pack("<Q", len(fit.b)))
        for arr in (fit.b, fit.weight_diagonal, fit.working_response, fit.eta):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_null_fit(json_path, sidecar_path) -> NullModelFit:
    with open(json_path) as fh:
        doc = json.load(fh)
    with open(sidecar_path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if n != doc["n"] or len(raw) != 4 * n:
        raise ValueError("null-fit sidecar does not match its JSON document")
    b, w, ytilde, eta = raw.reshape(4, n)
    phi = doc["phi"] if doc["family"] == GAUSSIAN else None
    theta = ThetaVector(tau=np.array(doc["tau"]), phi=phi,
                        pinned=np.array(doc["pinned"], dtype=bool))
    return NullModelFit(
        alpha=np.array(doc["alpha"]),
        b=b.copy(),
        theta=theta,
        working_response=ytilde.copy(),
        weight_diagonal=w.copy(),
        eta=eta.copy(),
        converged=doc["converged"],
        n_iterations=doc["n_iterations"],
        score_at_convergence=np.array([]),
        family_kind=doc["family"],
    )
