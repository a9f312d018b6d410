"""K-fold cross-validation over a penalty grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, standardize
from .linear import fit_lasso, fit_ridge

N_LAMBDA = 100


def lasso_grid(n: int = N_LAMBDA) -> np.ndarray:
    return np.logspace(-4, 1, n)


def ridge_grid(n: int = N_LAMBDA) -> np.ndarray:
    return np.logspace(-4, 3, n)


@dataclass(eq=False)
class CVResult:
    family: str
    lambdas: np.ndarray
    mean_loss: np.ndarray
    sd_loss: np.ndarray
    fold_loss: np.ndarray  # (k, len(lambdas))
    folds: np.ndarray  # fold id per row
    chosen: float

    def as_dict(self) -> dict:
        return {"family": self.family, "lambdas": self.lambdas.tolist(), "mean_loss": self.mean_loss.tolist(),
                "sd_loss": self.sd_loss.tolist(), "chosen": self.chosen}


def fold_ids(n: int, k: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % k
    return out


def _path(train: Dataset, family: str, lams_desc: np.ndarray):
    """Fit every penalty, largest first, warm-starting LASSO from the previous solution."""
    models = []
    init = None
    for lam in lams_desc:
        if family == "lasso":
            m = fit_lasso(train, lam, init=init, shrinkage=False)
            init = m.coef
        else:
            m = fit_ridge(train, lam, shrinkage=False)
        models.append(m)
    return models


def cross_validate(d: Dataset, family: str, lambdas, k: int = 10, seed: int = 0) -> CVResult:
    """Mean squared validation error per penalty over ``k`` seeded folds.

    Predictors are re-standardized inside each training fold. The chosen
    penalty minimizes mean loss; among exact ties the largest penalty wins.
    """
    if family not in ("lasso", "ridge"):
        raise ValueError(f"family must be 'lasso' or 'ridge', got {family!r}")
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size == 0:
        raise ValueError("empty lambda grid")
    if d.n < k:
        raise ValueError(f"{d.n} rows cannot be split into {k} folds")
    uniq = np.unique(lambdas)[::-1]
    folds = fold_ids(d.n, k, seed)
    raw = Dataset(d.X, d.y, d.schema)
    loss_u = np.zeros((k, uniq.size))
    for f in range(k):
        tr = standardize(raw.take(folds != f))
        va = raw.take(folds == f)
        for col, m in enumerate(_path(tr, family, uniq)):
            resid = va.y.astype(float) - m.predict(va.X)
            loss_u[f, col] = float(np.mean(resid ** 2))
    pos = {lam: c for c, lam in enumerate(uniq)}
    fold_loss = loss_u[:, [pos[lam] for lam in lambdas]]
    mean = fold_loss.mean(axis=0)
    sd = fold_loss.std(axis=0, ddof=1) if k > 1 else np.zeros_like(mean)
    best = mean.min()
    chosen = float(lambdas[mean == best].max())
    return CVResult(family, lambdas, mean, sd, fold_loss, folds, chosen)
