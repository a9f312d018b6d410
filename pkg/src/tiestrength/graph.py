"""Undirected weighted graph in CSR form, plus nodal attributes and preprocessing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

N_LAYERS = 12
SEX_CODES = {"M": 0, "F": 1}
SEX_LABELS = ("M", "F")


class GraphError(ValueError):
    """Invalid graph input (self-loop, bad weight, unknown node...)."""


class NodeStats(NamedTuple):
    degree: int
    strength: float


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Immutable undirected weighted graph.

    Adjacency is stored as CSR arrays with each neighbor list strictly sorted,
    so ``indices[indptr[i]:indptr[i+1]]`` are the neighbors of ``i`` in
    ascending order and ``weights`` holds the matching edge weights. Each
    undirected edge appears twice (once per endpoint).
    """

    node_count: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    degree: np.ndarray = field(init=False, repr=False)
    strength: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("indptr", "indices", "weights"):
            getattr(self, name).setflags(write=False)
        deg = np.diff(self.indptr)
        strength = np.zeros(self.node_count)
        if self.weights.size:
            rows = np.repeat(np.arange(self.node_count), deg)
            strength = np.bincount(rows, weights=self.weights, minlength=self.node_count)
        deg.setflags(write=False)
        strength.setflags(write=False)
        object.__setattr__(self, "degree", deg)
        object.__setattr__(self, "strength", strength)

    @property
    def edge_count(self) -> int:
        return int(self.indices.size // 2)

    @property
    def max_weight(self) -> float:
        return float(self.weights.max()) if self.weights.size else 0.0

    def neighbors(self, i: int) -> np.ndarray:
        self._check_node(i)
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def neighbor_weights(self, i: int) -> np.ndarray:
        self._check_node(i)
        return self.weights[self.indptr[i]:self.indptr[i + 1]]

    def adjacency(self, i: int) -> list[tuple[int, float]]:
        return list(zip(self.neighbors(i).tolist(), self.neighbor_weights(i).tolist()))

    def weight(self, i: int, j: int) -> float:
        """Weight of edge (i, j), or 0.0 if absent."""
        nbrs = self.neighbors(i)
        self._check_node(j)
        pos = np.searchsorted(nbrs, j)
        if pos < nbrs.size and nbrs[pos] == j:
            return float(self.weights[self.indptr[i] + pos])
        return 0.0

    def has_edge(self, i: int, j: int) -> bool:
        return self.weight(i, j) > 0.0

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Canonical edge arrays ``(src, dst, weight)`` with ``src < dst``, sorted."""
        rows = np.repeat(np.arange(self.node_count, dtype=np.int64), np.diff(self.indptr))
        keep = rows < self.indices
        return rows[keep], self.indices[keep].astype(np.int64), self.weights[keep]

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.node_count, self.node_count))
        rows = np.repeat(np.arange(self.node_count), np.diff(self.indptr))
        a[rows, self.indices] = self.weights
        return a

    def _check_node(self, i: int) -> None:
        if not 0 <= i < self.node_count:
            raise GraphError(f"node {i} out of range [0, {self.node_count})")

    def __eq__(self, other):
        if not isinstance(other, WeightedGraph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


def _from_canonical(u: np.ndarray, v: np.ndarray, w: np.ndarray, n: int) -> WeightedGraph:
    # u < v, no duplicates
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    ws = np.concatenate([w, w]).astype(np.float64)
    order = np.lexsort((cols, rows))
    rows, cols, ws = rows[order], cols[order], ws[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return WeightedGraph(n, indptr, cols.astype(np.int64), ws)


def build_graph(edges, node_count: int | None = None) -> WeightedGraph:
    """Build a graph from ``(i, j, weight)`` triples.

    Repeated pairs, in either orientation, are summed into one edge.
    ``node_count`` defaults to ``max id + 1``.
    """
    arr = np.asarray(edges, dtype=np.float64).reshape(-1, 3) if len(edges) else np.zeros((0, 3))
    src, dst, w = arr[:, 0], arr[:, 1], arr[:, 2]
    if np.any(src != np.floor(src)) or np.any(dst != np.floor(dst)) or np.any(src < 0) or np.any(dst < 0):
        raise GraphError("node ids must be nonnegative integers")
    src = src.astype(np.int64)
    dst = dst.astype(np.int64)
    loops = np.flatnonzero(src == dst)
    if loops.size:
        k = loops[0]
        raise GraphError(f"self-loop at ({src[k]}, {dst[k]})")
    bad = np.flatnonzero(~(w > 0) | ~np.isfinite(w))
    if bad.size:
        k = bad[0]
        raise GraphError(f"nonpositive weight {w[k]} on ({src[k]}, {dst[k]})")
    n = int(max(src.max(), dst.max()) + 1) if src.size else 0
    if node_count is not None:
        if node_count < n:
            raise GraphError(f"node_count={node_count} but ids reach {n - 1}")
        n = node_count
    u = np.minimum(src, dst)
    v = np.maximum(src, dst)
    key = u * max(n, 1) + v
    uniq, inv = np.unique(key, return_inverse=True)
    wsum = np.bincount(inv.ravel(), weights=w, minlength=uniq.size)
    return _from_canonical(uniq // max(n, 1), uniq % max(n, 1), wsum, n)


@dataclass(frozen=True)
class MultiplexRecord:
    src: int
    dst: int
    layer: int


def union_multiplex(records: Iterable, node_count: int | None = None,
                    n_layers: int = N_LAYERS) -> WeightedGraph:
    """Collapse directed layered ties to an undirected graph.

    The weight of (i, j) is the number of distinct layers on which i and j
    are tied in either direction.
    """
    recs = [(r.src, r.dst, r.layer) if isinstance(r, MultiplexRecord) else tuple(r) for r in records]
    arr = np.asarray(recs, dtype=np.int64).reshape(-1, 3)
    if arr.size and (arr[:, 2].min() < 0 or arr[:, 2].max() >= n_layers):
        k = int(np.flatnonzero((arr[:, 2] < 0) | (arr[:, 2] >= n_layers))[0])
        raise GraphError(f"layer {arr[k, 2]} outside 0..{n_layers - 1} on record {tuple(arr[k])}")
    if arr.size and np.any(arr[:, 0] == arr[:, 1]):
        k = int(np.flatnonzero(arr[:, 0] == arr[:, 1])[0])
        raise GraphError(f"self-loop at ({arr[k, 0]}, {arr[k, 1]})")
    u = np.minimum(arr[:, 0], arr[:, 1])
    v = np.maximum(arr[:, 0], arr[:, 1])
    triples = np.unique(np.stack([u, v, arr[:, 2]], axis=1), axis=0) if arr.size else arr
    edges = np.column_stack([triples[:, 0], triples[:, 1], np.ones(len(triples))]) if len(triples) else []
    return build_graph(edges, node_count=node_count)


@dataclass(frozen=True, eq=False)
class AttributeTable:
    """Per-node optional attributes; missing values are NaN / -1 / None."""

    age: np.ndarray
    sex: np.ndarray
    zip: np.ndarray
    household: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "AttributeTable":
        return cls(
            age=np.full(n, np.nan),
            sex=np.full(n, -1, dtype=np.int8),
            zip=np.full(n, None, dtype=object),
            household=np.full(n, None, dtype=object),
        )

    @classmethod
    def from_columns(cls, n: int, age=None, sex=None, zip=None, household=None) -> "AttributeTable":
        t = cls.empty(n)
        if age is not None:
            t.age[:] = [np.nan if a is None else float(a) for a in age]
        if sex is not None:
            codes = []
            for s in sex:
                if s is None or s == "" or s == -1:
                    codes.append(-1)
                elif s in SEX_CODES:
                    codes.append(SEX_CODES[s])
                elif s in (0, 1):
                    codes.append(int(s))
                else:
                    raise ValueError(f"sex must be M or F, got {s!r}")
            t.sex[:] = codes
        if zip is not None:
            t.zip[:] = [None if z in (None, "") else str(z) for z in zip]
        if household is not None:
            t.household[:] = [None if h in (None, "") else str(h) for h in household]
        return t

    def __len__(self):
        return self.age.size

    def replace(self, **cols) -> "AttributeTable":
        d = {k: getattr(self, k).copy() for k in ("age", "sex", "zip", "household")}
        d.update(cols)
        return AttributeTable(**d)

    def complete_mask(self, fields=("age", "sex", "zip")) -> np.ndarray:
        """Nodes with every listed attribute observed."""
        out = np.ones(len(self), dtype=bool)
        for f in fields:
            if f == "age":
                out &= ~np.isnan(self.age)
            elif f == "sex":
                out &= self.sex >= 0
            elif f in ("zip", "household"):
                out &= np.array([z is not None for z in getattr(self, f)], dtype=bool)
            else:
                raise ValueError(f"unknown attribute {f!r}")
        return out

    def observed_fields(self) -> tuple[str, ...]:
        """Modeling attributes (age, sex, zip) with at least one observed value."""
        has = {"age": bool((~np.isnan(self.age)).any()), "sex": bool((self.sex >= 0).any()),
               "zip": any(z is not None for z in self.zip)}
        return tuple(f for f in ("age", "sex", "zip") if has[f])

    def __eq__(self, other):
        if not isinstance(other, AttributeTable):
            return NotImplemented
        return (
            np.array_equal(self.age, other.age, equal_nan=True)
            and np.array_equal(self.sex, other.sex)
            and list(self.zip) == list(other.zip)
            and list(self.household) == list(other.household)
        )

    __hash__ = None


def _subgraph_edges(g: WeightedGraph, keep: np.ndarray) -> WeightedGraph:
    src, dst, w = g.edges()
    return _from_canonical(src[keep], dst[keep], w[keep], g.node_count)


def household_masks(g: WeightedGraph, attrs: AttributeTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per canonical edge: (cross-household, same-household, endpoint missing a household)."""
    if len(attrs) != g.node_count:
        raise GraphError(f"attribute table has {len(attrs)} rows for {g.node_count} nodes")
    src, dst, _ = g.edges()
    hs, hd = attrs.household[src], attrs.household[dst]
    missing = np.array([a is None or b is None for a, b in zip(hs, hd)], dtype=bool)
    same = np.array([a is not None and a == b for a, b in zip(hs, hd)], dtype=bool)
    return ~missing & ~same, same, missing


def filter_same_household(g: WeightedGraph, attrs: AttributeTable,
                          stats: dict | None = None) -> WeightedGraph:
    """Drop ties within a household, and ties with an endpoint lacking one.

    If ``stats`` is given it receives counts of removed edges by reason.
    """
    keep, same, missing = household_masks(g, attrs)
    if missing.any():
        logger.warning("dropped %d edges with an endpoint missing its household code", int(missing.sum()))
    if stats is not None:
        stats["same_household"] = int(same.sum())
        stats["missing_household"] = int(missing.sum())
        stats["retained"] = int(keep.sum())
    return _subgraph_edges(g, keep)


def remove_isolated_ties(g: WeightedGraph) -> WeightedGraph:
    """Remove disconnected dyads (edges whose endpoints both have degree 1)."""
    while True:
        src, dst, _ = g.edges()
        isolated = (g.degree[src] == 1) & (g.degree[dst] == 1)
        if not isolated.any():
            return g
        g = _subgraph_edges(g, ~isolated)


def restrict_edges(g: WeightedGraph, keep: np.ndarray) -> WeightedGraph:
    """Subgraph keeping the canonical edges selected by boolean mask ``keep``."""
    keep = np.asarray(keep, dtype=bool)
    if keep.size != g.edge_count:
        raise GraphError(f"mask has {keep.size} entries for {g.edge_count} edges")
    return _subgraph_edges(g, keep)


def node_stats(g: WeightedGraph, i: int) -> NodeStats:
    g._check_node(i)
    return NodeStats(int(g.degree[i]), float(g.strength[i]))


def edge_index(g: WeightedGraph, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """Position of each (i, j) pair in ``g.edges()`` order; raises if absent."""
    src, dst, _ = g.edges()
    n = max(g.node_count, 1)
    keys = src * n + dst
    p = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    q = np.minimum(p[:, 0], p[:, 1]) * n + np.maximum(p[:, 0], p[:, 1])
    pos = np.searchsorted(keys, q)
    pos_c = np.minimum(pos, max(keys.size - 1, 0))
    ok = (pos < keys.size) & (keys[pos_c] == q) if keys.size else np.zeros(len(q), bool)
    if not ok.all():
        k = int(np.flatnonzero(~ok)[0])
        raise GraphError(f"({p[k, 0]}, {p[k, 1]}) is not an edge")
    return pos
