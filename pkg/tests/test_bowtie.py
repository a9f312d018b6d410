import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tiestrength.bowtie import (
    FEATURE_COLUMNS, STRUCTURAL_COLUMNS, FeatureTable, edge_features, extract_bowtie,
    feature_table, nonshared_clustering, nonshared_weighted_clustering, overlap, weighted_overlap,
)
from tiestrength.graph import AttributeTable, GraphError, build_graph
from oracle import dense_edges, oracle_features, random_weighted_graph

TRIANGLE = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]


def test_triangle_bowtie():
    bt = extract_bowtie(build_graph(TRIANGLE), 0, 1)
    assert bt.g_i == bt.g_j == frozenset()
    assert bt.g_ij == {2}
    assert bt.induced_edges == ()


def test_path_bowtie():
    # a=0 - i=1 - j=2 - b=3
    g = build_graph([(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)])
    bt = extract_bowtie(g, 1, 2)
    assert (bt.g_i, bt.g_j, bt.g_ij) == ({0}, {3}, frozenset())
    assert overlap(g, 1, 2) == 0.0
    assert weighted_overlap(g, 1, 2) == 0.0


def test_induced_edges_include_inter_group_ties():
    # i=0, j=1; a=2 in g_i, b=3 in g_j, c=4 shared; ties a-b and a-c cross groups
    g = build_graph([(0, 1, 1), (0, 2, 1), (1, 3, 1), (0, 4, 1), (1, 4, 1), (2, 3, 2), (2, 4, 3)])
    bt = extract_bowtie(g, 0, 1)
    assert bt.induced_edges == ((2, 3, 2.0), (2, 4, 3.0))
    assert bt.group_edges(bt.g_i) == []


def test_not_an_edge():
    g = build_graph([(0, 1, 1.0), (1, 2, 1.0)])
    for fn in (extract_bowtie, overlap, weighted_overlap):
        with pytest.raises(GraphError, match="not an edge"):
            fn(g, 0, 2)
    with pytest.raises(GraphError, match="not an edge"):
        feature_table(g, src=np.array([0]), dst=np.array([2]))


def test_overlap_examples():
    assert overlap(build_graph(TRIANGLE), 0, 1) == 1.0  # 1 / (2 + 2 - 2 - 1)
    assert overlap(build_graph([(0, 1, 1.0)]), 0, 1) == 0.0


def test_weighted_overlap_examples():
    g = build_graph([(0, 1, 1.0), (0, 2, 2.0), (1, 2, 3.0)])
    assert weighted_overlap(g, 0, 1) == pytest.approx(1.0)  # (2 + 3) / (3 + 4 - 2)
    assert weighted_overlap(build_graph([(0, 1, 4.0)]), 0, 1) == 0.0
    g = build_graph([(0, 1, 2.0), (1, 2, 5.0), (2, 3, 7.0)])
    assert weighted_overlap(g, 1, 2) == 0.0


def test_nonshared_clustering_examples():
    # i=0, j=1, g_i = {2, 3}
    g = build_graph([(0, 1, 1), (0, 2, 1), (0, 3, 1), (2, 3, 1)])
    assert nonshared_clustering(g, 0, 1, "i") == 1.0
    assert nonshared_clustering(g, 0, 1, "j") == 0.0
    g = build_graph([(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1), (2, 3, 1)])
    assert nonshared_clustering(g, 0, 1, "i") == pytest.approx(1 / 3)


def test_nonshared_weighted_clustering_examples():
    full = build_graph([(0, 1, 8), (0, 2, 8), (0, 3, 8), (2, 3, 8)])
    assert nonshared_weighted_clustering(full, 0, 1, "i", w_max=8.0) == pytest.approx(1.0)
    small = build_graph([(0, 1, 1), (0, 2, 1), (0, 3, 1), (2, 3, 1)])
    assert nonshared_weighted_clustering(small, 0, 1, "i", w_max=8.0) == pytest.approx(1 / 8)
    assert nonshared_weighted_clustering(small, 0, 1, "j", w_max=8.0) == 0.0
    with pytest.raises(ValueError):
        nonshared_weighted_clustering(small, 0, 1, "i", w_max=0.0)


def test_triangle_features():
    fv = edge_features(build_graph(TRIANGLE), None, 0, 1)
    assert (fv.n_shared, fv.e_shared, fv.k_sum, fv.k_diff, fv.overlap, fv.cc_sum) == (1, 0, 4, 0, 1.0, 0.0)


def test_symmetric_configuration_has_zero_differences():
    # 4-cycle with a chord: swapping 0 and 1 is an automorphism
    g = build_graph([(0, 1, 2), (0, 2, 1), (1, 3, 1), (2, 3, 5), (0, 4, 3), (1, 4, 3)])
    fv = edge_features(g, None, 0, 1)
    for name in ("k_diff", "s_diff", "cc_diff", "wcc_diff", "n_diff", "e_diff"):
        assert getattr(fv, name) == 0


def test_attribute_fields():
    attrs = AttributeTable.from_columns(3, age=[30, 50, None], sex=["F", "M", "M"], zip=["a", "a", None])
    g = build_graph(TRIANGLE)
    fv = edge_features(g, attrs, 0, 1)
    assert (fv.age_sum, fv.age_diff, fv.sex_pair, fv.same_zip) == (80.0, 20.0, "FM", 1)
    fv = edge_features(g, attrs, 1, 2)
    assert (fv.age_sum, fv.sex_pair, fv.same_zip) == (None, "MM", None)
    assert edge_features(g, attrs, 1, 0) == edge_features(g, attrs, 0, 1)


def _check_against_oracle(a, ft, tol=1e-12):
    for r in range(len(ft)):
        i, j = int(ft.src[r]), int(ft.dst[r])
        want = oracle_features(a, i, j)
        for col in STRUCTURAL_COLUMNS:
            got = ft[col][r]
            if isinstance(want[col], int):
                assert got == want[col], (i, j, col)
            else:
                assert abs(got - want[col]) <= tol, (i, j, col, got, want[col])


@pytest.mark.parametrize("seed, n, p", [(1, 40, 0.1), (2, 40, 0.3), (3, 35, 0.6), (4, 12, 0.9)])
def test_batch_and_single_paths_match_oracle(seed, n, p):
    rng = np.random.default_rng(seed)
    a = random_weighted_graph(rng, n, p)
    g = build_graph(dense_edges(a), node_count=n)
    ft = feature_table(g)
    _check_against_oracle(a, ft)
    for r in range(0, len(ft), 7):
        i, j = int(ft.src[r]), int(ft.dst[r])
        want = oracle_features(a, i, j)
        bt = extract_bowtie(g, i, j)
        assert (set(bt.g_i), set(bt.g_j), set(bt.g_ij)) == want["groups"]
        fv = edge_features(g, None, i, j)
        for col in STRUCTURAL_COLUMNS:
            assert getattr(fv, col) == pytest.approx(want[col], abs=1e-12)


def test_output_order_independent_of_chunking():
    rng = np.random.default_rng(11)
    a = random_weighted_graph(rng, 40, 0.3)
    g = build_graph(dense_edges(a))
    src, dst, _ = g.edges()
    perm = rng.permutation(src.size)
    one = feature_table(g, src=src[perm], dst=dst[perm], n_chunks=1)
    many = feature_table(g, src=src[perm], dst=dst[perm], n_chunks=13)
    for c in FEATURE_COLUMNS:
        np.testing.assert_array_equal(one[c], many[c])
    np.testing.assert_array_equal(one.src, src[perm])


graphs = st.tuples(st.integers(0, 2**32 - 1), st.integers(3, 25), st.sampled_from([0.1, 0.3, 0.6]))


@given(graphs, st.floats(0.01, 100.0))
@settings(max_examples=40, deadline=None)
def test_properties(params, scale):
    seed, n, p = params
    rng = np.random.default_rng(seed)
    a = random_weighted_graph(rng, n, p)
    if not a.any():
        return
    g = build_graph(dense_edges(a), node_count=n)
    ft = feature_table(g)
    # swap symmetry
    rev = feature_table(g, src=ft.dst, dst=ft.src)
    for c in STRUCTURAL_COLUMNS:
        np.testing.assert_array_equal(ft[c], rev[c])
    # bounds
    for c in ("overlap", "weighted_overlap"):
        assert np.all((ft[c] >= 0) & (ft[c] <= 1 + 1e-12))
    for c in ("cc_sum", "wcc_sum"):
        assert np.all((ft[c] >= 0) & (ft[c] <= 2 + 1e-12))
    assert np.all(ft["wcc_sum"] <= ft["cc_sum"] + 1e-12)
    # partition identity: k - 1 = |g| + n_shared per endpoint
    np.testing.assert_array_equal(ft["k_sum"] - 2, ft["n_sum"] + 2 * ft["n_shared"])
    np.testing.assert_array_equal(ft["k_diff"], ft["n_diff"])
    # weight-scaling invariance
    gs = build_graph([(u, v, w * scale) for u, v, w in dense_edges(a)], node_count=n)
    fs = feature_table(gs)
    for c in STRUCTURAL_COLUMNS:
        if c in ("s_sum", "s_diff"):
            np.testing.assert_allclose(fs[c], ft[c] * scale, rtol=1e-12, atol=1e-12)
        else:
            np.testing.assert_allclose(fs[c], ft[c], rtol=1e-9, atol=1e-12)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    a = random_weighted_graph(rng, 20, 0.3)
    g = build_graph(dense_edges(a), node_count=20)
    attrs = AttributeTable.from_columns(
        20, age=[None if k % 4 == 0 else 20 + k for k in range(20)],
        sex=[("M", "F", None)[k % 3] for k in range(20)],
        zip=[str(k % 3) if k % 5 else None for k in range(20)])
    ft = feature_table(g, attrs)
    ft.to_csv(tmp_path / "f.csv", tmp_path / "schema.json")
    back = FeatureTable.from_csv(tmp_path / "f.csv")
    for c in FEATURE_COLUMNS:
        np.testing.assert_array_equal(back[c], ft[c])
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header.startswith("src,dst,k_sum,k_diff")
    v = ft.vector(0)
    assert v == edge_features(g, attrs, int(ft.src[0]), int(ft.dst[0]))
