"""Lasso-regularized path solver for the penalized mixed model.

Works on an eigen-rotated representation of the problem: the random-effect
covariance sum_s tau_s V_s is decomposed once as U diag(Lambda) U^T, the
inverse covariance of the working response is replaced by the fixed upper
bound (c I + U diag(Lambda) U^T)^-1, and coordinate-wise soft-threshold
updates run on the rotated response/design with per-coordinate weights
1 / (c + Lambda_i). Random effects and the linear predictor have closed
forms given the coefficients, and the working response is refreshed once
per outer iteration. Solutions are computed on a decreasing lambda grid
with warm starts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .family import (
    FamilySpec,
    evaluate_working_state,
    quasi_loglik,
    sigma_upper_bound_constant,
)
from .reml import NullModelFit

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _njit = None

_EIG_ZERO = 1e-12


def _cd_cycles(Xw, X, denoms, beta, resid, cols, lam, v, inner_tol, max_cycles):
    """Cyclic coordinate updates over ``cols`` until the largest weighted
    squared change in one cycle falls below ``inner_tol``.

    Mutates ``beta`` and ``resid`` in place; the hot loop of the path
    solver, compiled with numba when available.
    """
    n = resid.shape[0]
    delta = 0.0
    for _ in range(max_cycles):
        delta = 0.0
        for t in range(cols.shape[0]):
            j = cols[t]
            dj = denoms[j]
            if dj <= 0.0:
                if beta[j] != 0.0:
                    old = beta[j]
                    for i in range(n):
                        resid[i] += X[i, j] * old
                    beta[j] = 0.0
                continue
            num = dj * beta[j]
            for i in range(n):
                num += Xw[i, j] * resid[i]
            gamma = lam * v[j]
            if num > gamma:
                new = (num - gamma) / dj
            elif num < -gamma:
                new = (num + gamma) / dj
            else:
                new = 0.0
            if new != 0.0 and abs(new) < 1e-14:
                new = 0.0
            diff = beta[j] - new
            if diff != 0.0:
                for i in range(n):
                    resid[i] += X[i, j] * diff
                beta[j] = new
                change = dj * diff * diff
                if change > delta:
                    delta = change
        if delta <= inner_tol:
            return delta
    return delta


if _njit is not None:
    _cd_cycles = _njit(cache=True)(_cd_cycles)


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0)."""
    if gamma < 0:
        raise ValueError("threshold must be nonnegative")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


@dataclass
class RotatedProblem:
    """Eigen-rotation of the random-effect covariance plus rotated data."""

    U: np.ndarray
    eigenvalues: np.ndarray
    c: float
    Y_star: np.ndarray
    X_star: np.ndarray

    @property
    def coord_weights(self) -> np.ndarray:
        return 1.0 / (self.c + self.eigenvalues)


@dataclass
class PathOptions:
    n_lambda: int = 100
    lambda_min_ratio: float | None = None
    penalty_factors: np.ndarray | None = None
    inner_tol: float | None = None
    outer_tol: float = 1e-6
    max_outer: int = 50
    standardize_design: bool = True

    def resolved_min_ratio(self, n: int, p: int) -> float:
        if self.lambda_min_ratio is not None:
            return self.lambda_min_ratio
        return 1e-4 if n > p else 0.01

    def resolved_inner_tol(self, n: int) -> float:
        return self.inner_tol if self.inner_tol is not None else 1e-7 * n


@dataclass
class PathRecord:
    """Solution at one lambda; coefficients stored sparse (original basis)."""

    lam: float
    beta_idx: np.ndarray
    beta_val: np.ndarray
    b: np.ndarray
    eta: np.ndarray
    eta_work: np.ndarray
    pql_loglik: float
    df: int
    active_set: np.ndarray
    outer_converged: bool

    def beta_dense(self, n_cols: int) -> np.ndarray:
        beta = np.zeros(n_cols)
        beta[self.beta_idx] = self.beta_val
        return beta


@dataclass
class PathFit:
    records: list[PathRecord]
    penalty_factors: np.ndarray
    col_center: np.ndarray
    col_scale: np.ndarray
    tau: np.ndarray
    phi: float
    c: float
    family_kind: str
    column_names: list[str] | None = None
    options: PathOptions = field(default_factory=PathOptions)
    lambda_max: float = 0.0

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])

    @property
    def n_cols(self) -> int:
        return len(self.penalty_factors)

    def coef_matrix(self) -> np.ndarray:
        return np.stack([r.beta_dense(self.n_cols) for r in self.records])


def build_rotation(Vs, tau, family: FamilySpec, design: np.ndarray,
                   working_response: np.ndarray) -> RotatedProblem:
    """One-off eigendecomposition of sum_s tau_s V_s plus data rotation."""
    n = design.shape[0]
    K = np.zeros((n, n))
    for t, V in zip(tau, Vs):
        if t != 0.0:
            K += t * V
    vals, U = np.linalg.eigh(K)
    vals = np.clip(vals, 0.0, None)
    c = sigma_upper_bound_constant(family)
    return RotatedProblem(
        U=U,
        eigenvalues=vals,
        c=c,
        Y_star=U.T @ working_response,
        X_star=U.T @ design,
    )


def coordinate_update(j: int, rotated: RotatedProblem, beta: np.ndarray,
                      residual: np.ndarray, lam: float, penalty_factor: float,
                      denom: float | None = None) -> float:
    """Closed-form update for one coordinate given the current residual.

    ``residual`` is Y_star - X_star @ beta; the caller maintains it
    incrementally. Returns the new value of beta[j] without applying it.
    """
    w = rotated.coord_weights
    xj = rotated.X_star[:, j]
    if denom is None:
        denom = float(np.sum(w * xj * xj))
    if denom <= 0.0:
        warnings.warn(f"zero-variance column {j}; coefficient set to 0")
        return 0.0
    num = float(np.sum(w * xj * residual)) + denom * beta[j]
    return soft_threshold(num, lam * penalty_factor) / denom


def update_b_eta(rotated: RotatedProblem, beta: np.ndarray,
                 working_response: np.ndarray):
    """Closed-form random effects and linear predictor given coefficients.

    Zero-eigenvalue directions contribute nothing to the random effect
    (infinite-ridge limit).
    """
    e = rotated.Y_star - rotated.X_star @ beta
    lam = rotated.eigenvalues
    shrink_b = np.where(lam > _EIG_ZERO, lam / (rotated.c + lam), 0.0)
    shrink_e = 1.0 - shrink_b
    b = rotated.U @ (shrink_b * e)
    eta = working_response - rotated.U @ (shrink_e * e)
    return b, eta


class _CDState:
    """Mutable coordinate-descent state over the rotated design."""

    def __init__(self, rotated: RotatedProblem, beta: np.ndarray):
        self.rot = rotated
        self.w = rotated.coord_weights
        # Fortran order so per-column slices are views, not copies.
        rotated.X_star = np.asfortranarray(rotated.X_star)
        self.Xw = np.asfortranarray(rotated.X_star * self.w[:, None])
        self.denoms = np.einsum("ij,ij->j", self.Xw, rotated.X_star)
        self.beta = beta
        self.resid = rotated.Y_star - rotated.X_star @ beta

    def set_response(self, y_star: np.ndarray):
        self.rot.Y_star = y_star
        self.resid = y_star - self.rot.X_star @ self.beta

    def update_one(self, j: int, lam: float, vj: float) -> float:
        """Update one coordinate in place; returns the weighted change."""
        dj = self.denoms[j]
        if dj <= 0.0:
            if self.beta[j] != 0.0:
                self.resid += self.rot.X_star[:, j] * self.beta[j]
                self.beta[j] = 0.0
            return 0.0
        num = float(self.Xw[:, j] @ self.resid) + dj * self.beta[j]
        new = soft_threshold(num, lam * vj) / dj
        if new != 0.0 and abs(new) < 1e-14:
            new = 0.0
        diff = self.beta[j] - new
        if diff != 0.0:
            self.resid += self.rot.X_star[:, j] * diff
            self.beta[j] = new
        return dj * diff * diff

    def sweep(self, cols, lam: float, v: np.ndarray) -> float:
        delta = 0.0
        for j in cols:
            delta = max(delta, self.update_one(j, lam, v[j]))
        return delta

    def solve(self, cols, lam: float, v: np.ndarray, inner_tol: float,
              max_cycles: int = 10_000) -> None:
        """Active-set coordinate descent to the stated inner tolerance.

        Cycles over the current active set until the weighted squared
        changes fall below tolerance, then scans all columns for
        threshold violators (a vectorized stand-in for the admission
        sweep: coordinates with |gradient| below their threshold would
        not move). Violators are updated in index order and the cycle
        repeats until the scan admits nothing.
        """
        cols = np.asarray(cols, dtype=np.int64)
        for _ in range(max_cycles):
            active = cols[(self.beta[cols] != 0.0) | (v[cols] == 0.0)]
            _cd_cycles(self.Xw, self.rot.X_star, self.denoms, self.beta,
                       self.resid, active, float(lam), v, float(inner_tol),
                       max_cycles)
            grads = self.gradients(cols)
            slack = lam * v[cols] - np.abs(grads)
            is_active = (self.beta[cols] != 0.0) | (v[cols] == 0.0)
            violators = cols[(~is_active) & (slack < 0.0)]
            if violators.size == 0:
                return
            delta = self.sweep(violators, lam, v)
            if delta <= inner_tol:
                return
        warnings.warn("coordinate descent hit the cycle cap before converging")

    def gradients(self, cols=None) -> np.ndarray:
        """Inner products sum_i w_i x_ij r_i for the given columns."""
        if cols is None or len(cols) == self.Xw.shape[1]:
            out = self.resid @ self.Xw
            return out if cols is None else out[cols]
        return self.Xw[:, cols].T @ self.resid


def lambda_grid(rotated: RotatedProblem, penalty_factors: np.ndarray,
                n_lambda: int, lambda_min_ratio: float,
                inner_tol: float = 1e-9) -> np.ndarray:
    """Decreasing log-spaced grid anchored at the smallest all-zero lambda.

    Unpenalized columns are first fit to convergence on the rotated data;
    lambda_max is the largest penalized-coordinate gradient divided by its
    penalty factor.
    """
    v = np.asarray(penalty_factors, dtype=float)
    if np.all(v == 0.0):
        raise ValueError("at least one penalty factor must be positive")
    state = _CDState(rotated, np.zeros(rotated.X_star.shape[1]))
    unpen = np.where(v == 0.0)[0]
    if unpen.size:
        state.solve(unpen, 0.0, v, inner_tol)
    lam_max = _lambda_max_from_state(state, v)
    return _make_grid(lam_max, n_lambda, lambda_min_ratio)


def _lambda_max_from_state(state: _CDState, v: np.ndarray) -> float:
    pen = np.where(v > 0.0)[0]
    grads = np.abs(state.gradients(pen)) / v[pen]
    lam_max = float(np.max(grads))
    if lam_max <= 0.0:
        lam_max = 1.0
    return lam_max


def _make_grid(lam_max: float, n_lambda: int, ratio: float) -> np.ndarray:
    if n_lambda < 1:
        raise ValueError("n_lambda must be at least 1")
    if n_lambda == 1 or ratio >= 1.0:
        return np.full(n_lambda, lam_max)
    return np.geomspace(lam_max, lam_max * ratio, n_lambda)


def _standardize_columns(design: np.ndarray, v: np.ndarray, standardize: bool):
    """Center/scale penalized columns; returns internal design + transforms."""
    K = design.shape[1]
    center = np.zeros(K)
    scale = np.ones(K)
    if not standardize:
        return design, center, scale
    pen = v > 0.0
    has_intercept = bool(np.any((v == 0.0) & np.all(design == 1.0, axis=0)))
    X = design.copy()
    for j in np.where(pen)[0]:
        if has_intercept:
            center[j] = X[:, j].mean()
        sd = X[:, j].std()
        if sd > 0.0:
            scale[j] = sd
        X[:, j] = (X[:, j] - center[j]) / scale[j]
    return X, center, scale


def _beta_to_original(beta_int, center, scale, intercept_col):
    beta = beta_int / scale
    if intercept_col is not None:
        beta[intercept_col] -= np.sum(beta_int * center / scale)
    return beta


def _beta_to_internal(beta_orig, center, scale, intercept_col):
    beta = beta_orig * scale
    if intercept_col is not None:
        beta[intercept_col] += np.sum(beta_orig * center)
    return beta


def _pql_value(family, y, mu, eigenvalues, c, e):
    """Log-quasi-likelihood of the fit minus the random-effect ridge term."""
    lam = eigenvalues
    pos = lam > _EIG_ZERO
    delta = np.where(pos, lam / (c + lam), 0.0) * e
    ridge = float(np.sum(delta[pos] ** 2 / lam[pos]))
    return quasi_loglik(family, y, mu) - 0.5 * ridge


def fit_path(null_fit: NullModelFit, design: np.ndarray, y: np.ndarray, Vs,
             family: FamilySpec, opts: PathOptions | None = None,
             column_names=None, allow_unconverged: bool = False) -> PathFit:
    """Solve the penalized problem over a decreasing lambda grid.

    Starts from the null-model fixed and random effects, builds the
    rotation once, and warm-starts each lambda from the previous solution.
    """
    if opts is None:
        opts = PathOptions()
    if not null_fit.converged and not allow_unconverged:
        raise ValueError("null model did not converge; pass allow_unconverged=True to override")

    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n, K = design.shape
    m = len(null_fit.alpha)
    v = opts.penalty_factors
    if v is None:
        v = np.concatenate([np.zeros(m), np.ones(K - m)])
    v = np.asarray(v, dtype=float)
    if np.any(v < 0.0):
        raise ValueError("penalty factors must be nonnegative")
    if np.all(v == 0.0):
        raise ValueError("at least one penalty factor must be positive")
    unpen = np.where(v == 0.0)[0]
    intercept_candidates = [j for j in unpen if np.all(design[:, j] == 1.0)]
    intercept_col = intercept_candidates[0] if intercept_candidates else None
    if intercept_col is None and opts.standardize_design:
        warnings.warn("no unpenalized intercept column; penalized columns scaled but not centered")

    X_int, center, scale = _standardize_columns(design, v, opts.standardize_design)

    if family.kind == "gaussian":
        family = family.with_dispersion(null_fit.phi)
    rotated = build_rotation(Vs, null_fit.tau, family, X_int, np.zeros(n))
    inner_tol = opts.resolved_inner_tol(n)
    all_cols = np.arange(K)

    # Warm state from the null fit.
    beta_orig = np.zeros(K)
    beta_orig[:m] = null_fit.alpha
    beta = _beta_to_internal(beta_orig, center, scale, intercept_col)
    eta = design @ beta_orig + null_fit.b
    ws = evaluate_working_state(family, y, eta)
    ytilde = ws.working_response
    rotated.Y_star = rotated.U.T @ ytilde
    state = _CDState(rotated, beta)
    eta_lin = eta

    def outer_solve(cols, lam, fixed_point=False, max_outer=None):
        """Inner CD + closed-form effects + working-response refresh.

        With ``fixed_point`` the loop instead runs until the working
        response itself stops moving, used to anchor the lambda grid.
        """
        nonlocal ytilde, eta_lin
        prev_loss = None
        result = None
        converged = False
        best = None
        n_rises = 0
        n_outer = max_outer if max_outer is not None else opts.max_outer
        for it in range(n_outer):
            state.solve(cols, lam, v, inner_tol)
            e = rotated.Y_star - rotated.X_star @ state.beta
            b, eta_hat = update_b_eta(rotated, state.beta, ytilde)
            mu = evaluate_working_state(family, y, eta_hat).mu
            loss = -_pql_value(family, y, mu, rotated.eigenvalues, rotated.c, e)
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite objective")
            result = (b, eta_hat, e)
            new_ytilde = evaluate_working_state(family, y, eta_hat).working_response
            if fixed_point:
                drift = np.max(np.abs(new_ytilde - ytilde))
                if drift <= 1e-10 * (1.0 + np.max(np.abs(ytilde))):
                    converged = True
                    break
            elif prev_loss is not None and abs(loss - prev_loss) <= opts.outer_tol * (abs(prev_loss) + 1e-10):
                converged = True
                break
            if best is None or loss < best[0]:
                best = (loss, state.beta.copy(), result, eta_lin, ytilde)
                n_rises = 0
            else:
                # The working-response refresh is not a descent step; when
                # saturated probabilities push it into a limit cycle, keep
                # the best iterate seen instead of burning the budget.
                n_rises += 1
                if n_rises >= 2 and not fixed_point:
                    break
            prev_loss = loss
            if it == n_outer - 1:
                # keep (eta_lin, ytilde) describing the linearization the
                # final coordinate solve actually used
                break
            eta_lin = eta_hat
            ytilde = new_ytilde
            state.set_response(rotated.U.T @ ytilde)
        if not converged and not fixed_point and best is not None and best[0] < loss:
            _, beta_best, result, eta_lin, ytilde = best
            state.beta = beta_best
            state.set_response(rotated.U.T @ ytilde)
        return result, converged

    # Unpenalized-only solve anchors the top of the grid; run it to a
    # working-response fixed point so the grid top stays an exact solution.
    (b, eta_hat, e), _ = outer_solve(unpen, 0.0, fixed_point=True, max_outer=200)
    lam_max = _lambda_max_from_state(state, v)
    grid = _make_grid(lam_max, opts.n_lambda, opts.resolved_min_ratio(n, K - m))

    records: list[PathRecord] = []
    for lam in grid:
        try:
            (b, eta_hat, e), conv = outer_solve(all_cols, lam)
        except FloatingPointError:
            warnings.warn(f"non-finite objective at lambda={lam:.4g}; path truncated")
            break
        if not conv:
            warnings.warn(f"outer loop not converged at lambda={lam:.4g}")
        beta_out = _beta_to_original(state.beta, center, scale, intercept_col)
        nz = np.where(beta_out != 0.0)[0]
        active = nz[v[nz] > 0.0]
        mu = evaluate_working_state(family, y, eta_hat).mu
        records.append(PathRecord(
            lam=float(lam),
            beta_idx=nz.copy(),
            beta_val=beta_out[nz].copy(),
            b=b.copy(),
            eta=eta_hat.copy(),
            eta_work=eta_lin.copy(),
            pql_loglik=_pql_value(family, y, mu, rotated.eigenvalues, rotated.c, e),
            df=int(len(nz)),
            active_set=active.copy(),
            outer_converged=conv,
        ))

    return PathFit(
        records=records,
        penalty_factors=v,
        col_center=center,
        col_scale=scale,
        tau=null_fit.tau.copy(),
        phi=null_fit.phi,
        c=rotated.c,
        family_kind=family.kind,
        column_names=list(column_names) if column_names is not None else None,
        options=opts,
        lambda_max=float(lam_max),
    )


def kkt_residuals(path: PathFit, design: np.ndarray, y: np.ndarray, Vs,
                  family: FamilySpec):
    """Stationarity diagnostics for every stored solution.

    For each lambda, rebuilds the rotated gradient at the stored
    linearization point and returns (per-column gradient, dense beta in
    the internal basis). Active penalized coordinates should satisfy
    |grad_j| = lambda * v_j; inactive ones |grad_j| <= lambda * v_j;
    unpenalized ones grad_j = 0.
    """
    design = np.asarray(design, dtype=float)
    v = path.penalty_factors
    unpen = np.where(v == 0.0)[0]
    intercept_candidates = [j for j in unpen if np.all(design[:, j] == 1.0)]
    intercept_col = intercept_candidates[0] if intercept_candidates else None
    X_int = (design - path.col_center) / path.col_scale
    if family.kind == "gaussian":
        family = family.with_dispersion(path.phi)
    rot = build_rotation(Vs, path.tau, family, X_int, np.zeros(design.shape[0]))
    w = rot.coord_weights
    out = []
    for rec in path.records:
        beta = _beta_to_internal(rec.beta_dense(path.n_cols), path.col_center,
                                 path.col_scale, intercept_col)
        ytilde = evaluate_working_state(family, y, rec.eta_work).working_response
        resid = rot.U.T @ ytilde - rot.X_star @ beta
        grad = rot.X_star.T @ (w * resid)
        out.append((grad, beta))
    return out
