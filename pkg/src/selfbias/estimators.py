"""OLS with heteroskedasticity-robust covariance, Wald intervals, and
proportional-odds (cumulative logit) regression with sandwich covariance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, special, stats

from .design import ColumnMeta, DesignMatrix

RANK_TOL = 1e-10
COV_TYPES = ("HC0", "HC1", "cluster")


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("design is rank deficient; dependent columns: " + ", ".join(self.columns))


class SeparationError(RuntimeError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"complete separation: coefficient of {column} diverges")


def _names(columns, idx):
    return [columns[i].name if isinstance(columns[i], ColumnMeta) else str(columns[i]) for i in idx]


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    columns: list
    n: int
    p: int
    cov_type: str
    condition_number: float
    xtx_inv: np.ndarray = field(repr=False)

    @property
    def bse(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def coefficients(self) -> dict:
        return dict(zip(self.columns, self.params))

    def index(self, meta) -> int:
        return self.columns.index(meta)

    def coef(self, meta) -> float:
        return float(self.params[self.index(meta)])

    def se(self, meta) -> float:
        return float(self.bse[self.index(meta)])


def _qr(X: np.ndarray, columns):
    q, r, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        raise RankDeficientError(_names(columns, range(X.shape[1])))
    small = np.flatnonzero(diag <= RANK_TOL * diag[0])
    if small.size:
        raise RankDeficientError(_names(columns, sorted(piv[small[0]:])))
    return q, r, piv


def ols_fit(design: DesignMatrix, cov_type: str = "HC1", cluster_keys=None) -> FitResult:
    """Least squares via column-pivoted QR, with robust covariance.

    No normal-equation inverse is formed for the coefficients; (X'X)^-1 is
    obtained from R^-1 only for the covariance bread.
    """
    X = np.asarray(design.X, dtype=float)
    y = np.asarray(design.y, dtype=float)
    n, p = X.shape
    if n < p:
        raise ValueError(f"need at least as many rows as columns (n={n}, p={p})")
    q, r, piv = _qr(X, design.columns)
    beta = np.empty(p)
    beta[piv] = linalg.solve_triangular(r, q.T @ y)
    resid = y - X @ beta
    rinv = linalg.solve_triangular(r, np.eye(p))
    xtx_inv = np.empty((p, p))
    xtx_inv[np.ix_(piv, piv)] = rinv @ rinv.T
    sv = linalg.svdvals(r)
    cov = robust_covariance(design, resid, cov_type, cluster_keys, xtx_inv=xtx_inv)
    return FitResult(beta, cov, resid, list(design.columns), n, p, cov_type, float(sv[0] / sv[-1]), xtx_inv)


def robust_covariance(design: DesignMatrix, residuals, cov_type: str = "HC1", cluster_keys=None,
                      xtx_inv: np.ndarray | None = None) -> np.ndarray:
    """Sandwich covariance (X'X)^-1 M (X'X)^-1.

    HC0: M = X' diag(e^2) X.  HC1: HC0 * n / (n - p).  cluster: M sums the
    outer products of within-cluster score sums (no small-sample factor).
    """
    X = np.asarray(design.X, dtype=float)
    e = np.asarray(residuals, dtype=float)
    n, p = X.shape
    if e.shape != (n,):
        raise ValueError(f"residuals have length {e.size}, design has {n} rows")
    if cov_type not in COV_TYPES:
        raise ValueError(f"cov_type must be one of {COV_TYPES}")
    if xtx_inv is None:
        _, r, piv = _qr(X, design.columns)
        rinv = linalg.solve_triangular(r, np.eye(p))
        xtx_inv = np.empty((p, p))
        xtx_inv[np.ix_(piv, piv)] = rinv @ rinv.T
    scores = X * e[:, None]
    if cov_type == "cluster":
        if cluster_keys is None:
            raise ValueError("cluster covariance needs cluster_keys")
        keys = np.asarray(cluster_keys)
        if keys.shape[0] != n:
            raise ValueError(f"cluster_keys have length {keys.shape[0]}, design has {n} rows")
        codes, _ = pd.factorize(pd.Series(list(map(str, keys))) if keys.ndim > 1 else pd.Series(keys))
        sums = np.zeros((codes.max() + 1, p))
        np.add.at(sums, codes, scores)
        scores = sums
    cov = xtx_inv @ (scores.T @ scores) @ xtx_inv
    if cov_type == "HC1":
        # an exactly determined system leaves no degrees of freedom
        cov = cov * (n / (n - p)) if n > p else np.full((p, p), np.nan)
    return (cov + cov.T) / 2


def classical_covariance(fit: FitResult) -> np.ndarray:
    """Homoskedastic OLS covariance s^2 (X'X)^-1, for comparison."""
    s2 = fit.residuals @ fit.residuals / (fit.n - fit.p)
    return s2 * fit.xtx_inv


@dataclass(frozen=True)
class WaldInterval:
    estimate: float
    std_error: float
    level: float
    lower: float
    upper: float
    reject_zero: bool
    p_value: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("estimate", "std_error", "level", "lower", "upper",
                                              "reject_zero", "p_value")}


def wald(estimate: float, std_error: float, level: float = 0.90) -> WaldInterval:
    """Two-sided Wald interval estimate +/- z_{1-(1-level)/2} * se."""
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if std_error < 0 or math.isnan(std_error):
        raise ValueError(f"std_error must be >= 0, got {std_error}")
    estimate = float(estimate)
    std_error = float(std_error)
    z = float(stats.norm.ppf(1 - (1 - level) / 2))
    lower, upper = estimate - z * std_error, estimate + z * std_error
    if std_error == 0:
        p = 1.0 if estimate == 0 else 0.0
    else:
        p = float(2 * stats.norm.sf(abs(estimate / std_error)))
    return WaldInterval(estimate, std_error, level, lower, upper, not (lower <= 0 <= upper), p)


# ordinal regression


@dataclass(frozen=True)
class OrdinalFit:
    """Cumulative logit fit, P(Y <= k | x) = logistic(cutpoint_k - x'b).

    ``levels`` lists the observed levels; cutpoints separate consecutive
    observed levels, so there are ``len(levels) - 1`` of them.
    """
    cutpoints: np.ndarray
    params: np.ndarray
    columns: list
    levels: np.ndarray
    sandwich_covariance: np.ndarray
    full_covariance: np.ndarray = field(repr=False)
    log_likelihood: float = math.nan
    iterations: int = 0
    converged: bool = False
    gradient_norm: float = math.nan
    n: int = 0
    log_likelihood_path: tuple = field(default=(), repr=False)

    @property
    def bse(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.sandwich_covariance), 0.0, None))

    @property
    def coefficients(self) -> dict:
        return dict(zip(self.columns, self.params))

    def coef(self, meta) -> float:
        return float(self.params[self.columns.index(meta)])

    def se(self, meta) -> float:
        return float(self.bse[self.columns.index(meta)])

    def predict_proba(self, X) -> np.ndarray:
        eta = self.cutpoints[None, :] - (np.asarray(X, dtype=float) @ self.params)[:, None]
        cdf = np.hstack([special.expit(eta), np.ones((eta.shape[0], 1))])
        return np.diff(cdf, axis=1, prepend=0.0)


def _cutpoints(phi, k1):
    return phi[0] + np.concatenate([[0.0], np.cumsum(np.exp(phi[1:k1]))])


def _ordinal_terms(theta, beta, X, y, need_hessian=True):
    """Log-likelihood, per-row scores and Hessian in (cutpoints, b) space.

    ``y`` holds 0-based category codes in 0..K-1.
    """
    n, p = X.shape
    k1 = theta.size
    xb = X @ beta
    has_up = y < k1
    has_lo = y > 0
    eta_u = np.where(has_up, theta[np.minimum(y, k1 - 1)] - xb, np.inf)
    eta_l = np.where(has_lo, theta[np.maximum(y - 1, 0)] - xb, -np.inf)
    prob = np.where(eta_l > 0,
                    special.expit(-eta_l) - special.expit(-eta_u),
                    special.expit(eta_u) - special.expit(eta_l))
    with np.errstate(divide="ignore"):
        ll = float(np.sum(np.log(prob)))
    if not np.isfinite(ll):
        return -np.inf, None, None
    Fu, Fl = special.expit(eta_u), special.expit(eta_l)
    fu, fl = Fu * (1 - Fu), Fl * (1 - Fl)
    rows = np.arange(n)
    G = np.zeros((n, k1 + p))
    G[rows[has_up], y[has_up]] = fu[has_up] / prob[has_up]
    G[rows[has_lo], y[has_lo] - 1] = -fl[has_lo] / prob[has_lo]
    G[:, k1:] = -X * ((fu - fl) / prob)[:, None]
    if not need_hessian:
        return ll, G, None
    dfu, dfl = fu * (1 - 2 * Fu), fl * (1 - 2 * Fl)
    U = np.zeros((n, k1 + p))
    U[rows[has_up], y[has_up]] = 1.0
    U[:, k1:] = -X
    V = np.zeros((n, k1 + p))
    V[rows[has_lo], y[has_lo] - 1] = 1.0
    V[:, k1:] = -X
    H = (U.T * (dfu / prob)) @ U - (V.T * (dfl / prob)) @ V - G.T @ G
    return ll, G, H


def ordinal_fit(design: DesignMatrix, levels, max_iter: int = 100, tol: float = 1e-6,
                separation_bound: float = 40.0) -> OrdinalFit:
    """Proportional-odds maximum likelihood by damped Newton steps.

    Cutpoints are parameterized as (first cutpoint, log gaps) so they stay
    strictly increasing.  The step direction uses the (cutpoint, b) Hessian
    mapped through the reparameterization Jacobian; steps are halved until
    the log-likelihood does not decrease.  Positive coefficients mean higher
    levels.  Covariance is the sandwich A^-1 B A^-1 with A the observed
    information and B the sum of per-row score outer products.
    """
    X = np.asarray(design.X, dtype=float)
    columns = list(design.columns)
    if any(getattr(c, "kind", None) == "intercept" for c in columns):
        raise ValueError("ordinal design must not contain an intercept column")
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates must be finite")
    raw = np.asarray(levels)
    observed = np.unique(raw)
    if observed.size < 2:
        raise ValueError("need at least two distinct levels")
    y = np.searchsorted(observed, raw)
    n, p = X.shape
    k1 = observed.size - 1

    cum = np.cumsum(np.bincount(y, minlength=k1 + 1))[:-1] / n
    theta0 = special.logit(cum)
    phi = np.concatenate([[theta0[0]], np.log(np.diff(theta0)), np.zeros(p)])

    def unpack(phi):
        return _cutpoints(phi[:k1], k1), phi[k1:]

    def jacobian(phi):
        J = np.eye(k1 + p)
        J[:k1, 0] = 1.0
        gaps = np.exp(phi[1:k1])
        for k in range(1, k1):
            J[k, 1:k + 1] = gaps[:k]
        return J

    theta, beta = unpack(phi)
    ll, G, H = _ordinal_terms(theta, beta, X, y)
    scale = np.max(np.abs(X), axis=0)
    steps = 0
    path = [ll]
    while steps < max_iter:
        grad = G.sum(axis=0)
        if np.max(np.abs(grad)) <= tol:
            break
        J = jacobian(phi)
        info = -(J.T @ H @ J)
        g_phi = J.T @ grad
        try:
            step = linalg.solve(info, g_phi, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            ridge = 1e-8 * abs(np.trace(info)) / info.shape[0]
            step = linalg.lstsq(info + ridge * np.eye(info.shape[0]), g_phi)[0]
        t = 1.0
        for _ in range(40):
            cand = phi + t * step
            th, be = unpack(cand)
            ll_new, G_new, H_new = _ordinal_terms(th, be, X, y)
            if ll_new >= ll:
                break
            t /= 2
        else:
            break  # no non-decreasing step left
        phi, ll, G, H = cand, ll_new, G_new, H_new
        theta, beta = th, be
        steps += 1
        path.append(ll)
        big = np.flatnonzero(np.abs(beta) * scale > separation_bound)
        if big.size:
            raise SeparationError(_names(columns, big[:1])[0])
    grad = G.sum(axis=0)
    gnorm = float(np.max(np.abs(grad)))
    converged = gnorm <= tol

    A = -H
    # saturated fitted probabilities leave (almost) no information per unit of covariate mass
    mass = np.sum(X * X, axis=0)
    ratio = np.divide(np.diag(A)[k1:], mass, out=np.ones(p), where=mass > 0)
    flat = np.flatnonzero(ratio < 1e-6)
    if flat.size:
        raise SeparationError(_names(columns, flat[:1])[0])
    try:
        A_inv = linalg.inv(A)
    except linalg.LinAlgError:
        A_inv = linalg.pinv(A)
    cov = A_inv @ (G.T @ G) @ A_inv
    cov = (cov + cov.T) / 2
    return OrdinalFit(
        cutpoints=theta, params=beta, columns=columns, levels=observed,
        sandwich_covariance=cov[k1:, k1:], full_covariance=cov,
        log_likelihood=ll, iterations=steps, converged=converged, gradient_norm=gnorm, n=n,
        log_likelihood_path=tuple(path),
    )
