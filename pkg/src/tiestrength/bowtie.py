"""Bow-tie decomposition of a focal tie and the structural predictors built on it.

For a tie (i, j) the neighbors of i and j split into three disjoint groups:
``g_i`` (friends of i only), ``g_j`` (friends of j only) and ``g_ij`` (shared
friends). Predictors are symmetric in i and j: sums and absolute differences
of per-endpoint quantities, plus the overlap of the two neighborhoods.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, fields
from typing import Iterable

import numba
import numpy as np

from .graph import AttributeTable, GraphError, WeightedGraph

SEX_PAIRS = ("MM", "FF", "FM")

# Column order of the feature matrix; mirrors the predictor table.
FEATURE_COLUMNS = (
    "k_sum", "k_diff", "s_sum", "s_diff",
    "cc_sum", "cc_diff", "wcc_sum", "wcc_diff",
    "age_sum", "age_diff", "sex_pair", "is_mm", "is_ff", "is_fm", "same_zip",
    "overlap", "weighted_overlap",
    "n_shared", "e_shared", "n_sum", "n_diff", "e_sum", "e_diff",
)
STRUCTURAL_COLUMNS = (
    "k_sum", "k_diff", "s_sum", "s_diff", "cc_sum", "cc_diff", "wcc_sum", "wcc_diff",
    "overlap", "weighted_overlap", "n_shared", "e_shared", "n_sum", "n_diff", "e_sum", "e_diff",
)
ATTRIBUTE_COLUMNS = ("age_sum", "age_diff", "sex_pair", "is_mm", "is_ff", "is_fm", "same_zip")
COUNT_COLUMNS = ("k_sum", "k_diff", "n_shared", "e_shared", "n_sum", "n_diff", "e_sum", "e_diff")
COLUMN_TYPES = {
    **{c: "float" for c in FEATURE_COLUMNS},
    **{c: "int" for c in COUNT_COLUMNS},
    "sex_pair": "category[MM,FF,FM]",
    "is_mm": "binary", "is_ff": "binary", "is_fm": "binary", "same_zip": "binary",
}


@dataclass(frozen=True)
class BowTie:
    focal: tuple[int, int]
    g_i: frozenset
    g_j: frozenset
    g_ij: frozenset
    induced_edges: tuple  # (u, v, w) with u < v, sorted

    @property
    def nodes(self) -> frozenset:
        return self.g_i | self.g_j | self.g_ij

    def group_edges(self, group: frozenset) -> list[tuple[int, int, float]]:
        return [e for e in self.induced_edges if e[0] in group and e[1] in group]


@dataclass(frozen=True)
class FeatureVector:
    k_sum: int
    k_diff: int
    s_sum: float
    s_diff: float
    cc_sum: float
    cc_diff: float
    wcc_sum: float
    wcc_diff: float
    age_sum: float | None
    age_diff: float | None
    sex_pair: str | None
    same_zip: int | None
    overlap: float
    weighted_overlap: float
    n_shared: int
    e_shared: int
    n_sum: int
    n_diff: int
    e_sum: int
    e_diff: int

    def as_dict(self) -> dict:
        return asdict(self)


def _require_edge(g: WeightedGraph, i: int, j: int) -> float:
    w = g.weight(i, j)
    if w <= 0:
        raise GraphError(f"({i}, {j}) is not an edge")
    return w


def extract_bowtie(g: WeightedGraph, i: int, j: int) -> BowTie:
    _require_edge(g, i, j)
    ni = set(g.neighbors(i).tolist()) - {j}
    nj = set(g.neighbors(j).tolist()) - {i}
    shared = ni & nj
    members = ni | nj
    induced = []
    for u in sorted(members):
        for v, w in g.adjacency(u):
            if v > u and v in members:
                induced.append((u, v, w))
    return BowTie((i, j), frozenset(ni - shared), frozenset(nj - shared),
                  frozenset(shared), tuple(induced))


def overlap(g: WeightedGraph, i: int, j: int) -> float:
    """Fraction of the joint neighborhood of i and j that is shared."""
    _require_edge(g, i, j)
    n_ij = np.intersect1d(g.neighbors(i), g.neighbors(j), assume_unique=True).size
    denom = g.degree[i] + g.degree[j] - 2 - n_ij
    return n_ij / denom if denom > 0 else 0.0


def weighted_overlap(g: WeightedGraph, i: int, j: int) -> float:
    """Strength-weighted overlap: weight i and j send into shared friends over their
    total strength excluding the focal tie."""
    w_ij = _require_edge(g, i, j)
    shared, pi, pj = np.intersect1d(g.neighbors(i), g.neighbors(j),
                                    assume_unique=True, return_indices=True)
    num = g.neighbor_weights(i)[pi].sum() + g.neighbor_weights(j)[pj].sum()
    denom = g.strength[i] + g.strength[j] - 2.0 * w_ij
    return float(num / denom) if denom > 0 else 0.0


def _group(bt: BowTie, which) -> tuple[int, frozenset]:
    i, j = bt.focal
    if which in ("i", i):
        return i, bt.g_i
    if which in ("j", j):
        return j, bt.g_j
    raise ValueError(f"which must be 'i' or 'j', got {which!r}")


def nonshared_clustering(g: WeightedGraph, i: int, j: int, which="i") -> float:
    """Clustering coefficient of one focal node over its non-shared friends only."""
    bt = extract_bowtie(g, i, j)
    _, grp = _group(bt, which)
    m = len(grp)
    if m < 2:
        return 0.0
    return len(bt.group_edges(grp)) / (m * (m - 1) / 2)


def nonshared_weighted_clustering(g: WeightedGraph, i: int, j: int, which="i",
                                  w_max: float | None = None) -> float:
    """Weighted clustering (geometric mean of normalized triangle weights) of one
    focal node over its non-shared friends; weights are scaled by ``w_max``."""
    if w_max is None:
        w_max = g.max_weight
    if not w_max > 0:
        raise ValueError(f"w_max must be positive, got {w_max}")
    bt = extract_bowtie(g, i, j)
    focal, grp = _group(bt, which)
    m = len(grp)
    if m < 2:
        return 0.0
    total = 0.0
    for u, v, w_uv in bt.group_edges(grp):
        total += ((g.weight(focal, u) / w_max) * (w_uv / w_max) * (g.weight(focal, v) / w_max)) ** (1.0 / 3.0)
    return 2.0 * total / (m * (m - 1))


def _pair_sex(si: int, sj: int) -> str | None:
    if si < 0 or sj < 0:
        return None
    if si == sj:
        return "MM" if si == 0 else "FF"
    return "FM"


def edge_features(g: WeightedGraph, attrs: AttributeTable | None, i: int, j: int) -> FeatureVector:
    """Full predictor vector for one tie, computed from its bow tie."""
    bt = extract_bowtie(g, i, j)
    ki, kj = int(g.degree[i]), int(g.degree[j])
    si, sj = float(g.strength[i]), float(g.strength[j])
    mi, mj = len(bt.g_i), len(bt.g_j)
    ei, ej = len(bt.group_edges(bt.g_i)), len(bt.group_edges(bt.g_j))
    cci = nonshared_clustering(g, i, j, "i")
    ccj = nonshared_clustering(g, i, j, "j")
    wcci = nonshared_weighted_clustering(g, i, j, "i")
    wccj = nonshared_weighted_clustering(g, i, j, "j")
    age_sum = age_diff = sex_pair = same_zip = None
    if attrs is not None:
        ai, aj = attrs.age[i], attrs.age[j]
        if not (np.isnan(ai) or np.isnan(aj)):
            age_sum, age_diff = float(ai + aj), float(abs(ai - aj))
        sex_pair = _pair_sex(int(attrs.sex[i]), int(attrs.sex[j]))
        zi, zj = attrs.zip[i], attrs.zip[j]
        if zi is not None and zj is not None:
            same_zip = int(zi == zj)
    return FeatureVector(
        k_sum=ki + kj, k_diff=abs(ki - kj),
        s_sum=si + sj, s_diff=abs(si - sj),
        cc_sum=cci + ccj, cc_diff=abs(cci - ccj),
        wcc_sum=wcci + wccj, wcc_diff=abs(wcci - wccj),
        age_sum=age_sum, age_diff=age_diff, sex_pair=sex_pair, same_zip=same_zip,
        overlap=overlap(g, i, j), weighted_overlap=weighted_overlap(g, i, j),
        n_shared=len(bt.g_ij), e_shared=len(bt.group_edges(bt.g_ij)),
        n_sum=mi + mj, n_diff=abs(mi - mj), e_sum=ei + ej, e_diff=abs(ei - ej),
    )


# --- batch kernel -----------------------------------------------------------

# per-edge raw outputs, one column each
_RAW = ("k_i", "k_j", "s_i", "s_j", "m_i", "m_j", "e_i", "e_j", "n_shared", "e_shared",
        "wcc_i", "wcc_j", "shared_weight", "w_ij")


@numba.njit(cache=True, nogil=True)
def _bowtie_chunk(indptr, indices, weights, strength, src, dst, w_max, out, lab, wi, wj):
    inv_w3 = 1.0 / (w_max * w_max * w_max)
    for e in range(src.size):
        i = src[e]
        j = dst[e]
        wi[j] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            u = indices[p]
            lab[u] |= 1
            wi[u] = weights[p]
        for p in range(indptr[j], indptr[j + 1]):
            u = indices[p]
            lab[u] |= 2
            wj[u] = weights[p]
        w_ij = wi[j]
        lab[i] = 0
        lab[j] = 0
        m_i = 0
        m_j = 0
        n_sh = 0
        sh_w = 0.0
        e_i = 0
        e_j = 0
        e_sh = 0
        t_i = 0.0
        t_j = 0.0
        for side in range(2):
            a = i if side == 0 else j
            for p in range(indptr[a], indptr[a + 1]):
                u = indices[p]
                gu = lab[u]
                if gu == 0 or (side == 1 and gu == 3):
                    continue
                if gu == 1:
                    m_i += 1
                elif gu == 2:
                    m_j += 1
                else:
                    n_sh += 1
                    sh_w += wi[u] + wj[u]
                for q in range(indptr[u], indptr[u + 1]):
                    v = indices[q]
                    if v <= u or lab[v] != gu:
                        continue
                    if gu == 1:
                        e_i += 1
                        t_i += np.cbrt(wi[u] * weights[q] * wi[v] * inv_w3)
                    elif gu == 2:
                        e_j += 1
                        t_j += np.cbrt(wj[u] * weights[q] * wj[v] * inv_w3)
                    else:
                        e_sh += 1
        for p in range(indptr[i], indptr[i + 1]):
            lab[indices[p]] = 0
        for p in range(indptr[j], indptr[j + 1]):
            lab[indices[p]] = 0
        out[e, 0] = indptr[i + 1] - indptr[i]
        out[e, 1] = indptr[j + 1] - indptr[j]
        out[e, 2] = strength[i]
        out[e, 3] = strength[j]
        out[e, 4] = m_i
        out[e, 5] = m_j
        out[e, 6] = e_i
        out[e, 7] = e_j
        out[e, 8] = n_sh
        out[e, 9] = e_sh
        out[e, 10] = 2.0 * t_i / (m_i * (m_i - 1)) if m_i > 1 else 0.0
        out[e, 11] = 2.0 * t_j / (m_j * (m_j - 1)) if m_j > 1 else 0.0
        out[e, 12] = sh_w
        out[e, 13] = w_ij


@numba.njit(cache=True, parallel=True)
def _bowtie_sweep(indptr, indices, weights, strength, src, dst, w_max, out, n_chunks):
    n = strength.size
    bounds = np.linspace(0, src.size, n_chunks + 1).astype(np.int64)
    for c in numba.prange(n_chunks):
        lo = bounds[c]
        hi = bounds[c + 1]
        lab = np.zeros(n, dtype=np.int8)
        wi = np.zeros(n)
        wj = np.zeros(n)
        _bowtie_chunk(indptr, indices, weights, strength, src[lo:hi], dst[lo:hi],
                      w_max, out[lo:hi], lab, wi, wj)


def bowtie_raw(g: WeightedGraph, src: np.ndarray, dst: np.ndarray,
               n_chunks: int | None = None) -> dict[str, np.ndarray]:
    """Per-endpoint bow-tie quantities for many edges at once.

    Output order follows the input edge order regardless of chunking.
    """
    src = np.ascontiguousarray(src, dtype=np.int64)
    dst = np.ascontiguousarray(dst, dtype=np.int64)
    out = np.zeros((src.size, len(_RAW)))
    if src.size:
        w_max = g.max_weight
        if n_chunks is None:
            n_chunks = max(1, min(numba.get_num_threads() * 4, src.size // 1024 or 1))
        _bowtie_sweep(g.indptr, g.indices, g.weights, np.ascontiguousarray(g.strength),
                      src, dst, w_max, out, int(n_chunks))
        missing = out[:, 13] <= 0
        if missing.any():
            k = int(np.flatnonzero(missing)[0])
            raise GraphError(f"({src[k]}, {dst[k]}) is not an edge")
    return {name: out[:, c] for c, name in enumerate(_RAW)}


def _sum_diff(a, b):
    return a + b, np.abs(a - b)


class FeatureTable:
    """Feature matrix: one row per tie, columns in ``FEATURE_COLUMNS`` order.

    Missing attribute cells are NaN. ``sex_pair`` is coded 0=MM, 1=FF, 2=FM.
    """

    def __init__(self, src: np.ndarray, dst: np.ndarray, columns: dict[str, np.ndarray]):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.columns = {c: np.asarray(columns[c], dtype=np.float64) for c in FEATURE_COLUMNS}

    def __len__(self):
        return self.src.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def matrix(self, names: Iterable[str]) -> np.ndarray:
        names = list(names)
        if not names:
            return np.zeros((len(self), 0))
        return np.column_stack([self.columns[c] for c in names])

    def take(self, rows: np.ndarray) -> "FeatureTable":
        return FeatureTable(self.src[rows], self.dst[rows], {c: v[rows] for c, v in self.columns.items()})

    def with_column(self, name: str, values: np.ndarray) -> "FeatureTable":
        cols = dict(self.columns)
        cols[name] = np.asarray(values, dtype=np.float64)
        return FeatureTable(self.src, self.dst, cols)

    def complete_rows(self) -> np.ndarray:
        return ~np.isnan(self.matrix(ATTRIBUTE_COLUMNS)).any(axis=1)

    def vector(self, k: int) -> FeatureVector:
        vals = {}
        for f in fields(FeatureVector):
            x = self.columns[f.name][k]
            if f.name == "sex_pair":
                vals[f.name] = None if np.isnan(x) else SEX_PAIRS[int(x)]
            elif np.isnan(x):
                vals[f.name] = None
            elif f.name in COUNT_COLUMNS or f.name == "same_zip":
                vals[f.name] = int(x)
            else:
                vals[f.name] = float(x)
        return FeatureVector(**vals)

    def to_csv(self, path: str | os.PathLike, schema_path: str | os.PathLike | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("src", "dst") + FEATURE_COLUMNS)
            for k in range(len(self)):
                row = [str(self.src[k]), str(self.dst[k])]
                for c in FEATURE_COLUMNS:
                    x = self.columns[c][k]
                    if np.isnan(x):
                        row.append("")
                    elif c == "sex_pair":
                        row.append(SEX_PAIRS[int(x)])
                    elif COLUMN_TYPES[c] in ("int", "binary"):
                        row.append(str(int(x)))
                    else:
                        row.append(repr(float(x)))
                wr.writerow(row)
        if schema_path is not None:
            schema = {"columns": [{"name": "src", "type": "node"}, {"name": "dst", "type": "node"}]
                      + [{"name": c, "type": COLUMN_TYPES[c]} for c in FEATURE_COLUMNS]}
            with open(schema_path, "w", encoding="utf-8") as fh:
                json.dump(schema, fh, indent=2)
                fh.write("\n")

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "FeatureTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if tuple(header) != ("src", "dst") + FEATURE_COLUMNS:
                raise ValueError(f"{path}: unexpected feature header {header}")
            rows = list(rd)
        src = np.array([int(r[0]) for r in rows], dtype=np.int64)
        dst = np.array([int(r[1]) for r in rows], dtype=np.int64)
        cols = {}
        for c_idx, c in enumerate(FEATURE_COLUMNS, start=2):
            if c == "sex_pair":
                cols[c] = np.array([SEX_PAIRS.index(r[c_idx]) if r[c_idx] else np.nan for r in rows], dtype=float)
            else:
                cols[c] = np.array([float(r[c_idx]) if r[c_idx] else np.nan for r in rows], dtype=float)
        return cls(src, dst, cols)


def feature_table(g: WeightedGraph, attrs: AttributeTable | None = None,
                  src: np.ndarray | None = None, dst: np.ndarray | None = None,
                  n_chunks: int | None = None) -> FeatureTable:
    """Compute every predictor for the given ties (default: all edges of ``g``)."""
    if src is None:
        src, dst, _ = g.edges()
    raw = bowtie_raw(g, src, dst, n_chunks=n_chunks)
    n = raw["k_i"].size
    cols = {}
    cols["k_sum"], cols["k_diff"] = _sum_diff(raw["k_i"], raw["k_j"])
    cols["s_sum"], cols["s_diff"] = _sum_diff(raw["s_i"], raw["s_j"])
    mi, mj = raw["m_i"], raw["m_j"]
    with np.errstate(divide="ignore", invalid="ignore"):
        cc_i = np.where(mi > 1, raw["e_i"] / (mi * (mi - 1) / 2), 0.0)
        cc_j = np.where(mj > 1, raw["e_j"] / (mj * (mj - 1) / 2), 0.0)
        denom_o = raw["k_i"] + raw["k_j"] - 2 - raw["n_shared"]
        cols["overlap"] = np.where(denom_o > 0, raw["n_shared"] / denom_o, 0.0)
        denom_w = raw["s_i"] + raw["s_j"] - 2.0 * raw["w_ij"]
        cols["weighted_overlap"] = np.where(denom_w > 0, raw["shared_weight"] / denom_w, 0.0)
    cols["cc_sum"], cols["cc_diff"] = _sum_diff(cc_i, cc_j)
    cols["wcc_sum"], cols["wcc_diff"] = _sum_diff(raw["wcc_i"], raw["wcc_j"])
    cols["n_shared"] = raw["n_shared"]
    cols["e_shared"] = raw["e_shared"]
    cols["n_sum"], cols["n_diff"] = _sum_diff(mi, mj)
    cols["e_sum"], cols["e_diff"] = _sum_diff(raw["e_i"], raw["e_j"])
    cols.update(attribute_columns(attrs, src, dst) if attrs is not None
                else {c: np.full(n, np.nan) for c in ATTRIBUTE_COLUMNS})
    return FeatureTable(src, dst, cols)


def attribute_columns(attrs: AttributeTable, src: np.ndarray, dst: np.ndarray) -> dict[str, np.ndarray]:
    ai, aj = attrs.age[src], attrs.age[dst]
    out = {}
    out["age_sum"], out["age_diff"] = _sum_diff(ai, aj)
    si, sj = attrs.sex[src].astype(int), attrs.sex[dst].astype(int)
    known = (si >= 0) & (sj >= 0)
    pair = np.where(si == sj, np.where(si == 0, 0.0, 1.0), 2.0)
    pair[~known] = np.nan
    out["sex_pair"] = pair
    for name, code in (("is_mm", 0), ("is_ff", 1), ("is_fm", 2)):
        out[name] = np.where(known, (pair == code).astype(float), np.nan)
    zi, zj = attrs.zip[src], attrs.zip[dst]
    out["same_zip"] = np.array([np.nan if a is None or b is None else float(a == b)
                                for a, b in zip(zi, zj)], dtype=float)
    return out
