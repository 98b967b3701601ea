"""Balancing losses, the confounding measure psi, and global balancing weights."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .design import distance_counts, gwlp_from_counts
from .errors import CapacityError, DegenerateColumnError, OptimizationDivergedError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_TERM_BUDGET = 2_000_000


@dataclass(frozen=True)
class BalanceConfig:
    rho: float = 0.9
    max_order: int = 3
    zero_division_guard: float = 1e-12

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValidationError(f"rho must lie in (0, 1), got {self.rho}")
        if self.max_order < 1:
            raise ValidationError("max_order must be >= 1")


def _as_binary(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValidationError("X must be a 2-D matrix")
    if not np.all((x == 0) | (x == 1)):
        raise ValidationError("X must be a 0/1 matrix")
    return x


def _as_weights(w, n: int) -> np.ndarray:
    if w is None:
        return np.ones(n)
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValidationError(f"weights must have length {n}, got shape {w.shape}")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValidationError("weights must be nonnegative and not all zero")
    return w


def _group_masses(x, w, eps):
    s1 = w @ x
    s0 = w.sum() - s1
    for j in range(x.shape[1]):
        if s1[j] <= eps or s0[j] <= eps:
            raise DegenerateColumnError(j)
    return s1, s0


def _mean_gaps(x, w, eps):
    """Per (j, k): weighted mean of column k given X_j=1 minus given X_j=0."""
    s1, s0 = _group_masses(x, w, eps)
    a1 = x.T @ (w[:, None] * x)
    a0 = (w @ x)[None, :] - a1
    m1 = a1 / s1[:, None]
    m0 = a0 / s0[:, None]
    gap = m1 - m0
    np.fill_diagonal(gap, 0.0)
    return gap, m1, m0, s1, s0


def first_order_loss(x, w=None, eps: float = 1e-12) -> float:
    """Global balancing loss: sum over ordered pairs j != k of the squared
    difference in weighted mean of X_k between the X_j=1 and X_j=0 groups."""
    x = _as_binary(x)
    w = _as_weights(w, x.shape[0])
    gap = _mean_gaps(x, w, eps)[0]
    return float(np.sum(gap ** 2))


def first_order_loss_grad(x, w, eps: float = 1e-12) -> np.ndarray:
    """Gradient of :func:`first_order_loss` with respect to the weights."""
    x = _as_binary(x)
    w = _as_weights(w, x.shape[0])
    gap, m1, m0, s1, s0 = _mean_gaps(x, w, eps)
    g = 2.0 * gap
    proj = x @ g.T  # proj[i, j] = sum_k g[j, k] x[i, k]
    c1 = np.sum(g * m1, axis=1)
    c0 = np.sum(g * m0, axis=1)
    term1 = np.sum(x * (proj - c1) / s1, axis=1)
    term0 = np.sum((1 - x) * (proj - c0) / s0, axis=1)
    return term1 - term0


def generalized_loss(x, w=None, k: int = 1, eps: float = 1e-12,
                     term_budget: int = DEFAULT_TERM_BUDGET) -> float:
    """Order-k generalized balancing loss.

    For every treatment column j and every k-subset I of the other columns,
    the AND-interaction X_I is compared between the weighted X_j=1 and X_j=0
    groups; squared gaps are summed.
    """
    x = _as_binary(x)
    n, d = x.shape
    if not 1 <= k < d:
        raise ValidationError(f"order k must satisfy 1 <= k < d={d}, got {k}")
    terms = d * math.comb(d - 1, k)
    if terms > term_budget:
        raise CapacityError(f"generalized_loss would evaluate {terms} terms (budget {term_budget})")
    w = _as_weights(w, n)
    if k == 1:
        return first_order_loss(x, w, eps)
    s1, s0 = _group_masses(x, w, eps)
    # interactions over all k-subsets, then mask out subsets containing j
    subsets = list(itertools.combinations(range(d), k))
    inter = np.stack([np.prod(x[:, s], axis=1) for s in subsets], axis=1)
    a1 = x.T @ (w[:, None] * inter)
    a0 = (w @ inter)[None, :] - a1
    gap = a1 / s1[:, None] - a0 / s0[:, None]
    contains = np.array([[j in s for s in subsets] for j in range(d)])
    gap[contains] = 0.0
    return float(np.sum(gap ** 2))


def psi_from_gwlp(values, resolution: int, rho: float = 0.9) -> float:
    return float(sum(rho ** j * values[j - 1] for j in range(1, resolution)))


def confounding_measure(x_sub, resolution: int, cfg: BalanceConfig | None = None) -> float:
    """psi = sum_{j=1}^{R-1} rho^j A_j(X_sub); +inf for empty subdata."""
    cfg = cfg or BalanceConfig()
    if resolution < 2:
        raise ValidationError(f"template resolution must be >= 2, got {resolution}")
    x_sub = np.asarray(x_sub)
    if x_sub.ndim != 2 or x_sub.shape[0] == 0:
        return math.inf
    m, d = x_sub.shape
    if resolution - 1 > d:
        raise ValidationError(f"resolution {resolution} exceeds d+1={d + 1}")
    g = gwlp_from_counts(distance_counts(x_sub), m, d)
    return psi_from_gwlp(g.values, resolution, cfg.rho)


@dataclass(frozen=True)
class BalancingWeights:
    values: np.ndarray
    loss: float
    initial_loss: float
    iterations: int


def learn_balancing_weights(x, lambda_norm: float = 1e-6, lambda_l2: float = 1e-8,
                            iterations: int = 2000, seed: int = 0, init_jitter: float = 0.0,
                            tol: float = 1e-12, eps: float = 1e-12) -> BalancingWeights:
    """Global balancing weights W = u**2 found by gradient descent on u.

    Objective: first_order_loss(X, W) + lambda_norm (sum W - n)^2 + lambda_l2 ||W||^2.
    Starts from u = 1 (plus optional seeded jitter); steps are chosen by
    backtracking so the objective never increases.
    """
    x = _as_binary(x)
    n = x.shape[0]
    if n == 1:
        return BalancingWeights(np.ones(1), 0.0, 0.0, 0)
    rng = np.random.default_rng(seed)
    u = np.ones(n)
    if init_jitter > 0:
        u = u + init_jitter * rng.standard_normal(n)

    def objective(u):
        w = u * u
        return first_order_loss(x, w, eps) + lambda_norm * (w.sum() - n) ** 2 + lambda_l2 * (w @ w)

    def gradient(u):
        w = u * u
        gw = first_order_loss_grad(x, w, eps) + 2 * lambda_norm * (w.sum() - n) + 2 * lambda_l2 * w
        return 2 * u * gw

    f = objective(u)
    initial = first_order_loss(x, u * u, eps)
    step = 1.0
    it = 0
    for it in range(1, iterations + 1):
        if not np.isfinite(f):
            raise OptimizationDivergedError(it)
        g = gradient(u)
        gnorm2 = g @ g
        if not np.isfinite(gnorm2):
            raise OptimizationDivergedError(it)
        if gnorm2 <= tol:
            break
        step = min(step * 2.0, 1e6)
        while True:
            cand = u - step * g
            try:
                fc = objective(cand)
            except DegenerateColumnError:
                fc = math.inf
            if fc <= f - 0.5 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-14:
                break
        if step < 1e-14:
            break
        improvement = f - fc
        u, f = cand, fc
        if improvement <= tol * max(1.0, abs(f)):
            break
    w = u * u
    loss = first_order_loss(x, w, eps)
    log.debug("balancing weights: loss %.3g -> %.3g in %d iterations", initial, loss, it)
    return BalancingWeights(w, loss, initial, it)


def _weighted_corr(cols: np.ndarray, w: np.ndarray):
    w = w / w.sum()
    mu = w @ cols
    cen = cols - mu
    cov = cen.T @ (w[:, None] * cen)
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    constant = sd <= 1e-12
    safe = np.where(constant, 1.0, sd)
    corr = cov / np.outer(safe, safe)
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    idx = np.flatnonzero(~constant)
    corr[idx, idx] = 1.0
    return corr, constant


@dataclass(frozen=True)
class CorrelationResult:
    names: list
    matrix: np.ndarray
    constant: list

    def to_csv(self) -> str:
        lines = ["," + ",".join(self.names)]
        for name, row in zip(self.names, self.matrix):
            lines.append(name + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def correlation_diagnostics(x, extras: dict | None = None, w=None, names=None) -> CorrelationResult:
    """(Weighted) Pearson correlations over the columns of X plus named extras."""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    if n < 2:
        raise ValidationError("correlation needs at least 2 rows")
    names = list(names) if names is not None else [f"X{j + 1}" for j in range(d)]
    cols = [x]
    for key, col in (extras or {}).items():
        names.append(key)
        cols.append(np.asarray(col, dtype=float).reshape(n, 1))
    allcols = np.hstack(cols)
    weights = np.ones(n) if w is None else _as_weights(w, n)
    corr, constant = _weighted_corr(allcols, weights)
    return CorrelationResult(names, corr, [nm for nm, c in zip(names, constant) if c])

