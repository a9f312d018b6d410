import numpy as np
import pytest

from tiestrength.bowtie import FEATURE_COLUMNS
from tiestrength.evaluate import (
    accuracy_curve, confusion_summary, model_columns, null_importance, sample_edges, split_edges, threshold_grid,
)
from tiestrength.synthetic import gnm_graph


def test_accuracy_curve_examples():
    assert accuracy_curve([0, 1, 2], [1])[0] == pytest.approx(2 / 3)
    assert accuracy_curve([0.3, -1.7, 2.2], [2.2])[0] == 1.0
    r = np.random.default_rng(0).normal(size=100)
    r[:7] = 0.0
    assert accuracy_curve(r, [0.0])[0] == 0.07


def test_accuracy_curve_monotone_and_sorted_only():
    r = np.random.default_rng(1).exponential(size=500)
    grid = threshold_grid(r.max())
    f = accuracy_curve(r, grid)
    assert np.all(np.diff(f) >= 0) and f[-1] == 1.0
    with pytest.raises(ValueError, match="sorted"):
        accuracy_curve(r, [1.0, 0.5])


def test_threshold_grid_contains_named():
    g = threshold_grid(0.5)
    for t in (0.0, 0.05, 0.1, 1.0, 0.5):
        assert t in g
    assert np.all(np.diff(g) > 0)
    assert threshold_grid(3.0).size == 201 + 3  # step 0.015 misses all three named thresholds
    assert threshold_grid(2.0).size == 201  # step 0.01 already holds all three


def test_sample_edges():
    g = gnm_graph(200, 1000, seed=0)
    np.testing.assert_array_equal(sample_edges(g, 1000, 3), np.arange(1000))
    assert sample_edges(g, 0, 3).size == 0
    s = sample_edges(g, 300, 3)
    assert s.size == 300 and np.unique(s).size == 300
    np.testing.assert_array_equal(s, sample_edges(g, 300, 3))
    with pytest.raises(ValueError):
        sample_edges(g, 1001, 0)


def test_sample_overlap_matches_hypergeometric():
    g = gnm_graph(300, 2000, seed=1)
    n = 400
    overlaps = [np.intersect1d(sample_edges(g, n, 2 * k), sample_edges(g, n, 2 * k + 1)).size for k in range(60)]
    expected = n * n / 2000
    # hypergeometric sd here is about 7; the mean of 60 draws sits within 1 of expectation
    assert abs(np.mean(overlaps) - expected) < 4


def test_model_columns_differ_by_named_column():
    m1 = model_columns(1)
    assert set(m1) - set(model_columns(2)) == {"weighted_overlap"}
    assert set(m1) - set(model_columns(3)) == {"overlap"}
    assert "sex_pair" in m1 and "is_ff" not in m1
    lin = model_columns(1, learner="linear")
    assert {"is_ff", "is_fm"} <= set(lin) and "is_mm" not in lin and "sex_pair" not in lin
    assert "same_zip" not in model_columns(1, ("age", "sex"))
    assert list(m1) == [c for c in FEATURE_COLUMNS if c in m1]
    with pytest.raises(ValueError):
        model_columns(4)


def test_null_importance_and_confusion():
    assert null_importance(19) == 1 / 19
    c = confusion_summary([1, 2, 3, 12], [1, 3, 3, 10], labels=range(1, 13))
    assert np.array(c["matrix"]).shape == (12, 12)
    assert c["exact_accuracy"] == 0.5 and c["within_one_accuracy"] == 0.75
    assert np.array(c["matrix"]).sum() == 4


def test_split_edges_exact_fraction():
    m = split_edges(101, 0.2, 5)
    assert m.sum() == 20
    np.testing.assert_array_equal(m, split_edges(101, 0.2, 5))
    assert not np.array_equal(m, split_edges(101, 0.2, 6))
