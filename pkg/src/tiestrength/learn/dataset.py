"""Design matrices with a named schema and optional standardization state."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class SchemaError(ValueError):
    """Columns do not match what a model was trained on."""


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    schema: tuple[str, ...]
    categorical: tuple[str, ...] = ()
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    levels: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", np.asarray(self.y))
        object.__setattr__(self, "schema", tuple(self.schema))
        if X.shape[1] != len(self.schema):
            raise SchemaError(f"{X.shape[1]} columns but schema lists {len(self.schema)}")
        if X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{X.shape[0]} rows in X but {self.y.shape[0]} targets")
        if np.isnan(X).any():
            col = self.schema[int(np.flatnonzero(np.isnan(X).any(axis=0))[0])]
            raise ValueError(f"missing values in column {col!r}; impute or drop rows first")
        if self.y.dtype.kind == "f" and np.isnan(self.y).any():
            raise ValueError("missing target values")
        unknown = set(self.categorical) - set(self.schema)
        if unknown:
            raise SchemaError(f"categorical columns {sorted(unknown)} not in schema")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def standardized(self) -> bool:
        return self.mean is not None

    def category_counts(self) -> np.ndarray:
        out = np.zeros(self.p, dtype=np.int64)
        for name in self.categorical:
            c = self.schema.index(name)
            col = self.X[:, c]
            if np.any(col < 0) or np.any(col != np.round(col)):
                raise ValueError(f"categorical column {name!r} must hold codes 0, 1, 2, ...")
            out[c] = self.levels.get(name, int(col.max()) + 1 if col.size else 1)
        return out

    def take(self, rows) -> "Dataset":
        return replace(self, X=self.X[rows], y=self.y[rows])

    def select(self, names) -> "Dataset":
        names = tuple(names)
        missing = [c for c in names if c not in self.schema]
        if missing:
            raise SchemaError(f"unknown columns {missing}")
        idx = [self.schema.index(c) for c in names]
        return replace(
            self, X=self.X[:, idx], schema=names,
            categorical=tuple(c for c in self.categorical if c in names),
            mean=None if self.mean is None else self.mean[idx],
            scale=None if self.scale is None else self.scale[idx],
        )

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Apply this dataset's standardization to raw rows."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise SchemaError(f"expected {self.p} columns {list(self.schema)}, got shape {X.shape}")
        if self.mean is None:
            return X
        return (X - self.mean) / self.scale


def standardize(d: Dataset) -> Dataset:
    """Center each column and scale it to unit (population) variance.

    Constant columns are centered only. The state is kept so new rows can be
    mapped the same way.
    """
    if d.standardized:
        return d
    mean = d.X.mean(axis=0)
    sd = d.X.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    return replace(d, X=(d.X - mean) / scale, mean=mean, scale=scale)


def is_standardized(X: np.ndarray, atol: float = 1e-8) -> bool:
    if X.shape[0] == 0:
        return True
    m = X.mean(axis=0)
    sd = X.std(axis=0)
    return bool(np.all(np.abs(m) <= atol) and np.all((np.abs(sd - 1) <= 1e-6) | (sd <= atol)))
