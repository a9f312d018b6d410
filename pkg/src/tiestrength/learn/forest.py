"""Bagged CART forests for regression and classification."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, SchemaError
from .tree import Tree, grow_tree

N_TREES = 200


@dataclass(eq=False)
class ForestModel:
    task: str  # "regression" | "classification"
    schema: tuple[str, ...]
    categorical: tuple[str, ...]
    n_cats: np.ndarray
    max_features_rule: str
    max_features: int
    seed: int
    trees: list[Tree]
    importance: np.ndarray
    classes: np.ndarray | None = None  # classification labels, index = code
    y_range: tuple[float, float] | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def importances(self) -> dict[str, float]:
        return dict(zip(self.schema, self.importance.tolist()))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise SchemaError(f"expected {len(self.schema)} columns {list(self.schema)}, got shape {X.shape}")
        if self.task == "regression":
            total = np.zeros(X.shape[0])
            for t in self.trees:
                total += t.value[t.apply(X, self.n_cats), 0]
            return total / len(self.trees)
        votes = np.zeros((X.shape[0], self.classes.size), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for t in self.trees:
            leaf_counts = t.value[t.apply(X, self.n_cats)]
            votes[rows, np.argmax(leaf_counts, axis=1)] += 1
        # argmax picks the lowest class code on tied votes
        return self.classes[np.argmax(votes, axis=1)]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if self.task != "classification":
            raise ValueError("predict_proba needs a classification forest")
        X = np.ascontiguousarray(X, dtype=np.float64)
        total = np.zeros((X.shape[0], self.classes.size))
        for t in self.trees:
            v = t.value[t.apply(X, self.n_cats)]
            total += v / v.sum(axis=1, keepdims=True)
        return total / len(self.trees)


def _max_features(rule: str, p: int) -> int:
    if rule == "sqrt":
        return max(1, int(math.floor(math.sqrt(p))))
    if rule == "all":
        return p
    raise ValueError(f"max_features rule must be 'sqrt' or 'all', got {rule!r}")


def tree_seeds(seed: int, n_trees: int) -> list[np.random.SeedSequence]:
    return [np.random.SeedSequence([seed, t]) for t in range(n_trees)]


def fit_forest(d: Dataset, task: str = "regression", seed: int = 0, *, n_trees: int = N_TREES,
               max_features: str | None = None, n_jobs: int = 1) -> ForestModel:
    """Fit a forest of CART trees, each on its own bootstrap resample.

    ``max_features`` defaults to ``"sqrt"`` for classification and ``"all"`` for
    regression. Tree ``t`` draws its randomness from ``(seed, t)`` only, so any
    ``n_jobs`` produces the same forest.
    """
    if task not in ("regression", "classification"):
        raise ValueError(f"unknown task {task!r}")
    X = np.ascontiguousarray(d.X, dtype=np.float64)
    n, p = X.shape
    if n == 0:
        raise ValueError("cannot fit a forest on zero rows")
    rule = max_features or ("sqrt" if task == "classification" else "all")
    mf = _max_features(rule, p)
    n_cats = d.category_counts()
    classes = None
    if task == "classification":
        classes, y = np.unique(d.y, return_inverse=True)
        if classes.size < 2:
            raise ValueError(f"classification target has a single class {classes.tolist()}")
        y = y.astype(np.float64)
        n_classes = classes.size
    else:
        y = np.asarray(d.y, dtype=np.float64)
        n_classes = 1

    def one(ss: np.random.SeedSequence):
        rng = np.random.default_rng(ss)
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
        rows = np.flatnonzero(counts)
        tree_seed = int(rng.integers(1, 2**63 - 1))
        tree, imp = grow_tree(X[rows], y[rows], counts[rows], is_clf=task == "classification",
                              n_classes=n_classes, n_cats=n_cats, max_features=mf, seed=tree_seed)
        return tree, imp

    seeds = tree_seeds(seed, n_trees)
    if n_jobs == 1:
        results = [one(ss) for ss in seeds]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as ex:
            results = list(ex.map(one, seeds))

    per_tree = []
    for _, imp in results:
        tot = imp.sum()
        per_tree.append(imp / tot if tot > 0 else np.zeros(p))
    importance = np.mean(per_tree, axis=0)
    total = importance.sum()
    # a forest with no splits at all (constant target) spreads importance evenly
    importance = importance / total if total > 0 else np.full(p, 1.0 / p)
    return ForestModel(
        task=task, schema=tuple(d.schema), categorical=tuple(d.categorical), n_cats=n_cats,
        max_features_rule=rule, max_features=mf, seed=seed, trees=[t for t, _ in results],
        importance=importance, classes=classes,
        y_range=(float(np.min(d.y)), float(np.max(d.y))) if task == "regression" else None,
    )
