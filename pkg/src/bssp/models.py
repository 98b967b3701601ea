"""Weighted linear and logistic regression with an optional L1 penalty.

Both objectives are normalized by the total weight so that lambda means the
same thing for unit-weighted and reweighted fits:

    linear:   (1/sum W) sum_i W_i (y_i - b0 - x_i b)^2 + lambda ||b||_1
    logistic: (1/sum W) sum_i W_i nll(y_i, b0 + x_i b) + lambda ||b||_1

The intercept is never penalized.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

FAMILIES = ("linear", "logistic")
CD_TOL = 1e-8
CD_MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class ModelFit:
    coefficients: np.ndarray
    intercept: float
    family: str
    lambda_l1: float
    converged: bool
    iterations: int
    cv: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        coef = np.asarray(self.coefficients, dtype=float)
        if not np.all(np.isfinite(coef)):
            raise ValidationError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coef)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "lambda": float(self.lambda_l1),
            "intercept": float(self.intercept),
            "coefficients": [float(c) for c in self.coefficients],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelFit":
        return cls(np.array(data["coefficients"], dtype=float), float(data["intercept"]),
                   data["family"], float(data["lambda"]), bool(data["converged"]),
                   int(data["iterations"]))


def _prepare(x, y, w):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2:
        raise ValidationError("X must be 2-D")
    n = x.shape[0]
    if n == 0:
        raise ValidationError("need at least one sample")
    if y.shape != (n,):
        raise ValidationError(f"y must have length {n}, got shape {y.shape}")
    if w is None:
        w = np.ones(n)
    else:
        w = np.asarray(w, dtype=float)
        if w.shape != (n,):
            raise ValidationError(f"weights must have length {n}")
        if np.any(w < 0):
            raise ValidationError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValidationError("total weight must be positive")
    return x, y, w / total


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def _cd_lasso(gram, corr, lam, beta, tol=CD_TOL, max_sweeps=CD_MAX_SWEEPS):
    """Covariance-form coordinate descent for
    sum w (y~ - x~ b)^2 + lam ||b||_1 on centered data."""
    d = len(corr)
    diag = np.diag(gram)
    active = diag > 1e-14
    beta = beta.copy()
    beta[~active] = 0.0
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(d):
            if not active[j]:
                continue
            rho = corr[j] - gram[j] @ beta + diag[j] * beta[j]
            new = soft_threshold(rho, lam / 2.0) / diag[j]
            delta = abs(new - beta[j])
            if delta > max_delta:
                max_delta = delta
            beta[j] = new
        if max_delta < tol:
            return beta, True, sweep
    return beta, False, max_sweeps


def _weighted_moments(x, y, w):
    xbar = w @ x
    ybar = w @ y
    xc = x - xbar
    gram = xc.T @ (w[:, None] * xc)
    corr = xc.T @ (w * (y - ybar))
    return xbar, ybar, gram, corr


def fit_linear(x, y, w=None, lambda_l1: float = 0.0, warm_start=None) -> ModelFit:
    """Weighted lasso by cyclic coordinate descent with soft-thresholding."""
    if lambda_l1 < 0:
        raise ValidationError("lambda_l1 must be nonnegative")
    x, y, w = _prepare(x, y, w)
    xbar, ybar, gram, corr = _weighted_moments(x, y, w)
    beta0 = np.zeros(x.shape[1]) if warm_start is None else np.asarray(warm_start, dtype=float)
    beta, converged, sweeps = _cd_lasso(gram, corr, lambda_l1, beta0)
    if not converged:
        log.warning("lasso did not converge in %d sweeps (lambda=%g)", sweeps, lambda_l1)
    intercept = float(ybar - xbar @ beta)
    return ModelFit(beta, intercept, "linear", lambda_l1, converged, sweeps)


def linear_gradient(x, y, w, beta, intercept):
    """Gradient of the normalized weighted squared loss (without the penalty)."""
    x, y, w = _prepare(x, y, w)
    resid = y - intercept - x @ beta
    return -2.0 * (x.T @ (w * resid)), -2.0 * float(w @ resid)


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(x, y, w, beta, intercept) -> float:
    """Normalized weighted negative log-likelihood."""
    x, y, w = _prepare(x, y, w)
    eta = intercept + x @ beta
    # log(1 + e^eta) - y eta, computed stably
    return float(w @ (np.logaddexp(0.0, eta) - y * eta))


def logistic_gradient(x, y, w, beta, intercept):
    x, y, w = _prepare(x, y, w)
    p = _sigmoid(intercept + x @ beta)
    r = w * (p - y)
    return x.T @ r, float(r.sum())


def _logistic_objective(x, y, w, beta, b0, lam):
    eta = b0 + x @ beta
    return float(w @ (np.logaddexp(0.0, eta) - y * eta)) + lam * np.abs(beta).sum()


def fit_logistic(x, y, w=None, lambda_l1: float = 0.0, max_iter: int = 100,
                 tol: float = 1e-10, warm_start=None) -> ModelFit:
    """Weighted L1 logistic regression by proximal Newton steps.

    Each outer step minimizes the quadratic model of the likelihood plus the
    L1 term with coordinate descent, then backtracks on the true objective.
    Separable data without a penalty hits ``max_iter`` and is flagged.
    """
    if lambda_l1 < 0:
        raise ValidationError("lambda_l1 must be nonnegative")
    x, y, w = _prepare(x, y, w)
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("logistic outcome must be 0/1")
    if np.all(y[w > 0] == y[w > 0][0]):
        raise ValidationError("logistic outcome has a single class")
    d = x.shape[1]
    if warm_start is None:
        beta = np.zeros(d)
        ybar = float(w @ y)
        b0 = float(np.log(ybar / (1 - ybar)))
    else:
        beta, b0 = np.asarray(warm_start[0], dtype=float).copy(), float(warm_start[1])
    f = _logistic_objective(x, y, w, beta, b0, lambda_l1)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = b0 + x @ beta
        p = np.clip(_sigmoid(eta), 1e-12, 1 - 1e-12)
        v = w * p * (1 - p)
        vsum = v.sum()
        z = eta + (y - p) / (p * (1 - p))
        vn = v / vsum
        xbar, zbar, gram, corr = _weighted_moments(x, z, vn)
        # quadratic model (1/2) sum v (z - eta)^2 rescaled to the lasso normalization
        lam_q = 2.0 * lambda_l1 / vsum
        new_beta, _, _ = _cd_lasso(gram, corr, lam_q, beta, tol=1e-12)
        new_b0 = float(zbar - xbar @ new_beta)
        step = 1.0
        db, db0 = new_beta - beta, new_b0 - b0
        while True:
            cand_b, cand_b0 = beta + step * db, b0 + step * db0
            fc = _logistic_objective(x, y, w, cand_b, cand_b0, lambda_l1)
            if fc <= f + 1e-15 or step < 1e-8:
                break
            step *= 0.5
        change = max(np.max(np.abs(cand_b - beta), initial=0.0), abs(cand_b0 - b0))
        beta, b0 = cand_b, cand_b0
        f_old, f = f, fc
        if change < tol or (abs(f_old - f) < 1e-16 and change < 1e-7):
            converged = True
            break
    if not converged:
        log.warning("logistic fit hit the iteration cap (lambda=%g)", lambda_l1)
    return ModelFit(beta, b0, "logistic", lambda_l1, converged, it)


def predict(fit: ModelFit, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != len(fit.coefficients):
        raise ValidationError(f"X must have {len(fit.coefficients)} columns")
    eta = fit.intercept + x @ fit.coefficients
    return eta if fit.family == "linear" else _sigmoid(eta)


# -- lambda selection --------------------------------------------------------

def lambda_max(x, y, w=None, family: str = "linear") -> float:
    """Smallest lambda for which all coefficients are zero."""
    x, y, w = _prepare(x, y, w)
    xc = x - w @ x
    resid = y - w @ y
    scale = 2.0 if family == "linear" else 1.0
    return float(scale * np.max(np.abs(xc.T @ (w * resid)), initial=0.0))


def lambda_grid(x, y, w=None, family="linear", n_lambdas=20, ratio=1e-3):
    lmax = lambda_max(x, y, w, family)
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, lmax * ratio, n_lambdas)


def _fit(family, x, y, w, lam, warm=None):
    if family == "linear":
        return fit_linear(x, y, w, lam, warm_start=None if warm is None else warm.coefficients)
    return fit_logistic(x, y, w, lam, warm_start=None if warm is None else (warm.coefficients, warm.intercept))


def _cv_loss(family, fit, x, y, w):
    pred = predict(fit, x)
    if family == "linear":
        per = (y - pred) ** 2
    else:
        p = np.clip(pred, 1e-12, 1 - 1e-12)
        per = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(w @ per / w.sum())


def fit_cv(x, y, w=None, family: str = "linear", n_folds: int = 5, n_lambdas: int = 20,
           seed: int = 0) -> ModelFit:
    """Choose lambda by k-fold cross-validation over a log grid, refit on all data."""
    if family not in FAMILIES:
        raise ValidationError(f"unknown family {family!r}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    grid = lambda_grid(x, y, w, family, n_lambdas)
    if n < 2 * n_folds or len(grid) == 1:
        fit = _fit(family, x, y, w, float(grid[-1]))
        return _with_cv(fit, grid, None, float(grid[-1]))
    folds = np.random.default_rng(seed).permutation(n) % n_folds
    errors = np.zeros((n_folds, len(grid)))
    for k in range(n_folds):
        tr, te = folds != k, folds == k
        if family == "logistic" and len(np.unique(y[tr])) < 2:
            errors[k] = np.nan
            continue
        warm = None
        for i, lam in enumerate(grid):
            warm = _fit(family, x[tr], y[tr], w[tr], float(lam), warm)
            errors[k, i] = _cv_loss(family, warm, x[te], y[te], w[te]) if w[te].sum() > 0 else np.nan
    mean_err = np.nanmean(errors, axis=0)
    best = float(grid[int(np.nanargmin(mean_err))])
    fit = _fit(family, x, y, w, best)
    return _with_cv(fit, grid, mean_err, best)


def _with_cv(fit, grid, errors, best):
    cv = {"grid": [float(g) for g in grid], "best_lambda": best,
          "errors": None if errors is None else [float(e) for e in errors]}
    return ModelFit(fit.coefficients, fit.intercept, fit.family, fit.lambda_l1,
                    fit.converged, fit.iterations, cv)


def fit_model(x, y, w=None, family: str = "linear", lambda_l1: float | None = None,
              cv_seed: int = 0) -> ModelFit:
    """Fixed-lambda fit when ``lambda_l1`` is given, cross-validated otherwise."""
    if lambda_l1 is None:
        return fit_cv(x, y, w, family, seed=cv_seed)
    return _fit(family, x, y, w, lambda_l1)
