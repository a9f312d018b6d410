"""OLS, Poisson GLM (IRLS), LASSO (coordinate descent) and ridge regression.

Penalized fits use the objective ``0.5 * ||y - b0 - X b||^2 / n + penalty``
with an unpenalized intercept; LASSO's penalty is ``lam * ||b||_1`` and ridge's
``0.5 * lam * ||b||_2^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .dataset import Dataset, SchemaError, is_standardized

logger = logging.getLogger(__name__)

POISSON_TOL = 1e-8
POISSON_MAX_ITER = 100
LASSO_TOL = 1e-7
KKT_TOL = 1e-10


class RankDeficientError(ValueError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design is rank deficient; dependent columns: {self.columns}")


class ConvergenceError(RuntimeError):
    def __init__(self, msg, trace):
        self.trace = trace
        super().__init__(f"{msg}; trace (iteration, max coef change, deviance): {trace[-5:]}")


@dataclass(eq=False)
class LinearModel:
    family: str  # gaussian_ols | gaussian_lasso | gaussian_ridge | poisson
    schema: tuple[str, ...]
    intercept: float
    coef: np.ndarray
    lam: float = 0.0
    se: np.ndarray | None = None
    intercept_se: float | None = None
    diagnostics: dict = field(default_factory=dict)
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise SchemaError(f"expected {len(self.schema)} columns {list(self.schema)}, got shape {X.shape}")
        if self.mean is not None:
            X = (X - self.mean) / self.scale
        return self.intercept + X @ self.coef

    def predict(self, X: np.ndarray) -> np.ndarray:
        eta = self.linear_predictor(X)
        return np.exp(eta) if self.family == "poisson" else eta

    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.schema, self.coef.tolist()))


def dependent_columns(X: np.ndarray, schema) -> list[str]:
    """Columns that are linear combinations of the intercept and earlier columns."""
    n = X.shape[0]
    kept = [np.ones(n)]
    rank = 1
    out = []
    for c, name in enumerate(schema):
        trial = np.column_stack(kept + [X[:, c]])
        r = np.linalg.matrix_rank(trial)
        if r > rank:
            kept.append(X[:, c])
            rank = r
        else:
            out.append(name)
    return out


def drop_aliased(d: Dataset) -> tuple[Dataset, list[str]]:
    """Drop columns that are exact linear combinations of earlier ones (and the intercept)."""
    dropped = dependent_columns(d.X, d.schema)
    if not dropped:
        return d, []
    return d.select([c for c in d.schema if c not in dropped]), dropped


def _design(d: Dataset) -> np.ndarray:
    return np.column_stack([np.ones(d.n), d.X])


def _check_rank(d: Dataset, A: np.ndarray) -> None:
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise RankDeficientError(dependent_columns(d.X, d.schema))


def _ols_coef(d: Dataset) -> np.ndarray:
    beta, *_ = np.linalg.lstsq(_design(d), d.y.astype(float), rcond=None)
    return beta[1:]


def fit_ols(d: Dataset) -> LinearModel:
    n, p = d.n, d.p
    if p + 1 > n:
        raise ValueError(f"{p} predictors plus intercept need more than {n} rows")
    A = _design(d)
    _check_rank(d, A)
    y = d.y.astype(float)
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ beta
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    dof = n - p - 1
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    adj = 1.0 - (1.0 - r2) * (n - 1) / dof if dof > 0 else float("nan")
    se = None
    if dof > 0:
        sigma2 = rss / dof
        cov = sigma2 * np.linalg.inv(A.T @ A)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
    return LinearModel(
        "gaussian_ols", d.schema, float(beta[0]), beta[1:].copy(),
        se=None if se is None else se[1:], intercept_se=None if se is None else float(se[0]),
        diagnostics={"n": n, "r2": r2, "adj_r2": adj, "rss": rss, "sigma2": rss / dof if dof > 0 else None},
        mean=d.mean, scale=d.scale,
    )


def _poisson_deviance(y, mu):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(t - (y - mu)))


def fit_poisson(d: Dataset, tol: float = POISSON_TOL, max_iter: int = POISSON_MAX_ITER) -> LinearModel:
    """Log-link Poisson regression by iteratively reweighted least squares."""
    y = np.asarray(d.y, dtype=float)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("Poisson response must be nonnegative integers")
    if y.sum() == 0:
        raise ValueError("Poisson response is identically zero; the MLE does not exist")
    A = _design(d)
    _check_rank(d, A)
    beta = np.zeros(A.shape[1])
    beta[0] = np.log(y.mean())
    eta = A @ beta
    mu = np.exp(eta)
    dev = _poisson_deviance(y, mu)
    trace = []
    converged = False
    for it in range(1, max_iter + 1):
        z = eta + (y - mu) / mu
        sw = np.sqrt(mu)
        new, *_ = np.linalg.lstsq(A * sw[:, None], z * sw, rcond=None)
        step = new - beta
        # step halving guards against overshoot from poor starting points
        for _ in range(30):
            cand = beta + step
            eta_c = A @ cand
            if np.all(np.isfinite(eta_c)) and eta_c.max() < 700:
                dev_c = _poisson_deviance(y, np.exp(eta_c))
                if np.isfinite(dev_c) and dev_c <= dev * (1 + 1e-12) + 1e-12:
                    break
            step /= 2.0
        else:
            trace.append((it, float(np.max(np.abs(step))), dev))
            raise ConvergenceError("Poisson IRLS diverged", trace)
        change = float(np.max(np.abs(step)))
        beta, eta, mu, dev = cand, eta_c, np.exp(eta_c), dev_c
        trace.append((it, change, dev))
        if change < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Poisson IRLS did not converge in {max_iter} iterations", trace)
    info = A.T @ (A * mu[:, None])
    se = np.sqrt(np.clip(np.diag(np.linalg.inv(info)), 0, None))
    null_dev = _poisson_deviance(y, np.full_like(y, y.mean()))
    grad = A.T @ (y - mu)
    return LinearModel(
        "poisson", d.schema, float(beta[0]), beta[1:].copy(), se=se[1:], intercept_se=float(se[0]),
        diagnostics={"n": d.n, "deviance": dev, "null_deviance": null_dev, "iterations": len(trace),
                     "max_abs_score": float(np.max(np.abs(grad)))},
        mean=d.mean, scale=d.scale,
    )


@numba.njit(cache=True)
def _lasso_cd(G, c, lam, beta, tol, max_sweeps):
    # coordinate descent on the Gram form: minimize 0.5 b'Gb - c'b + lam |b|_1
    p = c.size
    grad = c - G @ beta
    for sweep in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            rho = grad[j] + gjj * old
            if rho > lam:
                new = (rho - lam) / gjj
            elif rho < -lam:
                new = (rho + lam) / gjj
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                beta[j] = new
                for k in range(p):
                    grad[k] -= G[k, j] * d
                ad = abs(d) * np.sqrt(gjj)
                if ad > delta:
                    delta = ad
        if delta < tol and _kkt_violation(grad, beta, lam) < KKT_TOL:
            return sweep + 1
    return -1


@numba.njit(cache=True)
def _kkt_violation(grad, beta, lam):
    # small steps alone can stall on ill-conditioned designs; also require optimality
    worst = 0.0
    for j in range(beta.size):
        if beta[j] > 0.0:
            v = abs(grad[j] - lam)
        elif beta[j] < 0.0:
            v = abs(grad[j] + lam)
        else:
            v = max(abs(grad[j]) - lam, 0.0)
        if v > worst:
            worst = v
    return worst


def _require_standardized(d: Dataset) -> None:
    if not is_standardized(d.X):
        raise ValueError("penalized fits need standardized predictors; call standardize() first")


def _shrinkage(beta, d: Dataset, order) -> float | None:
    ols = _ols_coef(d)
    denom = np.linalg.norm(ols, order)
    return float(np.linalg.norm(beta, order) / denom) if denom > 0 else None


def fit_lasso(d: Dataset, lam: float, *, init: np.ndarray | None = None,
              tol: float = LASSO_TOL, max_sweeps: int = 100_000, shrinkage: bool = True) -> LinearModel:
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    _require_standardized(d)
    n = d.n
    y = d.y.astype(float)
    ybar = y.mean()
    G = d.X.T @ d.X / n
    c = d.X.T @ (y - ybar) / n
    beta = np.zeros(d.p) if init is None else np.array(init, dtype=float)
    sweeps = _lasso_cd(G, c, float(lam), beta, tol, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(f"LASSO did not converge at lambda={lam}", [(max_sweeps, None, None)])
    xbar = d.X.mean(axis=0)
    diag = {"n": n, "sweeps": int(sweeps), "lambda_max": float(np.max(np.abs(c))) if d.p else 0.0}
    diag.update(_fit_stats(d, ybar - xbar @ beta, beta))
    if shrinkage:
        diag["shrinkage_l1"] = _shrinkage(beta, d, 1)
    return LinearModel("gaussian_lasso", d.schema, float(ybar - xbar @ beta), beta, lam=float(lam),
                       diagnostics=diag, mean=d.mean, scale=d.scale)


def fit_ridge(d: Dataset, lam: float, *, shrinkage: bool = True) -> LinearModel:
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    n = d.n
    y = d.y.astype(float)
    xbar = d.X.mean(axis=0)
    Xc = d.X - xbar
    ybar = y.mean()
    beta = np.linalg.solve(Xc.T @ Xc + n * lam * np.eye(d.p), Xc.T @ (y - ybar))
    diag = {"n": n}
    diag.update(_fit_stats(d, ybar - xbar @ beta, beta))
    if shrinkage:
        diag["shrinkage_l2"] = _shrinkage(beta, d, 2)
    return LinearModel("gaussian_ridge", d.schema, float(ybar - xbar @ beta), beta, lam=float(lam),
                       diagnostics=diag, mean=d.mean, scale=d.scale)


def _fit_stats(d: Dataset, b0, beta) -> dict:
    y = d.y.astype(float)
    resid = y - b0 - d.X @ beta
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    k = int(np.count_nonzero(beta))
    dof = d.n - k - 1
    return {"r2": r2, "adj_r2": 1.0 - (1.0 - r2) * (d.n - 1) / dof if dof > 0 else float("nan"),
            "nonzero": k}


def lambda_max(d: Dataset) -> float:
    """Smallest LASSO penalty at which every coefficient is zero."""
    y = d.y.astype(float)
    return float(np.max(np.abs(d.X.T @ (y - y.mean())) / d.n))
