"""Accuracy curves, edge sampling, feature-set configurations and summaries."""

from __future__ import annotations

import numpy as np

from .bowtie import FEATURE_COLUMNS, STRUCTURAL_COLUMNS
from .graph import WeightedGraph

NAMED_THRESHOLDS = (0.05, 0.1, 1.0)
GRID_STEPS = 200

# columns removed from the full set by each feature configuration
MODEL_DROPS = {1: (), 2: ("weighted_overlap",), 3: ("overlap",)}


def accuracy_curve(residuals, thresholds) -> np.ndarray:
    """Fraction of ``|residual| <= t`` for each threshold (ascending)."""
    r = np.sort(np.abs(np.asarray(residuals, dtype=float)))
    t = np.asarray(thresholds, dtype=float)
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be sorted ascending")
    if r.size == 0:
        return np.full(t.size, np.nan)
    return np.searchsorted(r, t, side="right") / r.size


def threshold_grid(max_residual: float, steps: int = GRID_STEPS, named=NAMED_THRESHOLDS) -> np.ndarray:
    """0 to ``max_residual`` in ``steps`` intervals, plus the named thresholds."""
    top = float(max_residual) if max_residual > 0 else 1.0
    return np.unique(np.concatenate([np.linspace(0.0, top, steps + 1), np.asarray(named, dtype=float)]))


def sample_edges(g: WeightedGraph, n: int, seed: int) -> np.ndarray:
    """Sorted positions (in ``g.edges()`` order) of ``n`` edges drawn uniformly without replacement."""
    E = g.edge_count
    if n < 0 or n > E:
        raise ValueError(f"cannot sample {n} of {E} edges")
    if n == E:
        return np.arange(E)
    rng = np.random.default_rng([seed, 0x5A])
    return np.sort(rng.choice(E, size=n, replace=False))


def model_columns(model: int, attr_fields=("age", "sex", "zip"), learner: str = "forest") -> tuple[str, ...]:
    """Predictor names for feature configuration ``model`` (1 = all, 2 = no weighted overlap, 3 = no overlap).

    Attribute predictors appear only for attributes the dataset carries. Forests
    take sex as the 3-level ``sex_pair``; linear models take ``is_ff`` and
    ``is_fm`` with male-male as the reference level.
    """
    if model not in MODEL_DROPS:
        raise ValueError(f"feature model must be 1, 2 or 3, got {model}")
    wanted = set(STRUCTURAL_COLUMNS)
    if "age" in attr_fields:
        wanted |= {"age_sum", "age_diff"}
    if "sex" in attr_fields:
        wanted |= {"sex_pair"} if learner == "forest" else {"is_ff", "is_fm"}
    if "zip" in attr_fields:
        wanted.add("same_zip")
    wanted -= set(MODEL_DROPS[model])
    return tuple(c for c in FEATURE_COLUMNS if c in wanted)


def null_importance(p: int) -> float:
    return 1.0 / p


def confusion_summary(truth, pred, labels=None) -> dict:
    """Counts matrix (rows truth, columns prediction) plus exact and within-one accuracy."""
    truth = np.asarray(truth).astype(int)
    pred = np.asarray(pred).astype(int)
    labels = np.asarray(labels if labels is not None else np.union1d(truth, pred)).astype(int)
    pos = {v: k for k, v in enumerate(labels.tolist())}
    m = np.zeros((labels.size, labels.size), dtype=np.int64)
    for t, p in zip(truth.tolist(), pred.tolist()):
        m[pos[t], pos[p]] += 1
    return {
        "labels": labels.tolist(),
        "matrix": m.tolist(),
        "exact_accuracy": float(np.mean(truth == pred)) if truth.size else None,
        "within_one_accuracy": float(np.mean(np.abs(truth - pred) <= 1)) if truth.size else None,
    }


def split_edges(n_edges: int, test_fraction: float, seed: int) -> np.ndarray:
    """Boolean test mask over ``n_edges`` rows; exactly ``round(f * n)`` test rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng([seed, 0x7E57])
    mask = np.zeros(n_edges, dtype=bool)
    mask[rng.permutation(n_edges)[: int(round(test_fraction * n_edges))]] = True
    return mask
