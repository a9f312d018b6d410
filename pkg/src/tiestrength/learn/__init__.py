"""Estimators: CART forests, OLS, Poisson GLM, LASSO, ridge and cross-validation."""

import numpy as np

from .cv import CVResult, cross_validate, fold_ids, lasso_grid, ridge_grid
from .dataset import Dataset, SchemaError, is_standardized, standardize
from .forest import ForestModel, fit_forest
from .linear import (
    ConvergenceError, LinearModel, RankDeficientError, dependent_columns, drop_aliased,
    fit_lasso, fit_ols, fit_poisson, fit_ridge, lambda_max,
)
from .serialize import load_model, save_model


def predict(model, X, schema=None) -> np.ndarray:
    """Predict with any fitted model; ``schema`` (column names of X) is checked if given."""
    if schema is not None and tuple(schema) != tuple(model.schema):
        missing = [c for c in model.schema if c not in schema]
        extra = [c for c in schema if c not in model.schema]
        raise SchemaError(f"schema mismatch: missing {missing}, unexpected {extra}")
    return model.predict(X)


__all__ = [
    "CVResult", "ConvergenceError", "Dataset", "ForestModel", "LinearModel", "RankDeficientError",
    "SchemaError", "cross_validate", "dependent_columns", "drop_aliased", "fit_forest", "fit_lasso",
    "fit_ols", "fit_poisson", "fit_ridge", "fold_ids", "is_standardized", "lambda_max", "lasso_grid",
    "load_model", "predict", "ridge_grid", "save_model", "standardize",
]
