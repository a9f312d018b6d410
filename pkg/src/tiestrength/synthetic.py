"""Seeded synthetic networks and dataset fixtures.

Everything here is a deterministic function of its seed. The fixtures mimic
the shape of the two motivating datasets (a 12-layer village survey with
households, and daily call records with billing zips) without reproducing
either.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .bowtie import feature_table
from .graph import AttributeTable, N_LAYERS, WeightedGraph, build_graph, union_multiplex

LAYER_NAMES = (
    "borrow_money", "lend_money", "borrow_goods", "lend_goods", "advice_given", "advice_sought",
    "medical_help", "visit_come", "visit_go", "relatives", "temple", "nonrelatives",
)


def _canonical_unique(u, v, n):
    a, b = np.minimum(u, v), np.maximum(u, v)
    ok = a != b
    keys = a[ok].astype(np.int64) * n + b[ok]
    _, first = np.unique(keys, return_index=True)
    return keys[np.sort(first)]


def random_pairs(n: int, m: int, rng: np.random.Generator, exclude: np.ndarray | None = None) -> np.ndarray:
    """``m`` distinct unordered node pairs as keys ``a * n + b`` (a < b), in draw order."""
    if m > n * (n - 1) // 2:
        raise ValueError(f"cannot place {m} edges on {n} nodes")
    keys = np.empty(0, dtype=np.int64)
    taken = np.unique(exclude) if exclude is not None else np.empty(0, dtype=np.int64)
    while keys.size < m:
        need = int((m - keys.size) * 1.1) + 16
        new = _canonical_unique(rng.integers(0, n, need), rng.integers(0, n, need), n)
        new = new[~np.isin(new, taken)]
        keys = np.concatenate([keys, new])
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
        taken = np.union1d(taken, new)
    return keys[:m]


def gnm_graph(n: int, m: int, seed: int, weights: str = "lognormal") -> WeightedGraph:
    """Uniform random graph with exactly ``m`` edges; weights lognormal, integer or unit."""
    rng = np.random.default_rng(seed)
    keys = random_pairs(n, m, rng)
    u, v = keys // n, keys % n
    if weights == "lognormal":
        w = rng.lognormal(0.0, 1.0, m)
    elif weights == "integer":
        w = rng.integers(1, 13, m).astype(float)
    elif weights == "unit":
        w = np.ones(m)
    else:
        raise ValueError(f"unknown weight scheme {weights!r}")
    return build_graph(np.column_stack([u, v, w]), node_count=n)


def community_graph(sizes, p_in, n_cross: int, seed: int) -> tuple[WeightedGraph, np.ndarray]:
    """Unit-weight planted-partition graph.

    Group ``g`` is an Erdos-Renyi block with density ``p_in[g]`` (or a shared
    scalar); ``n_cross`` extra edges join uniformly chosen nodes of different groups.
    Returns the graph and each node's group label.
    """
    rng = np.random.default_rng(seed)
    sizes = np.asarray(sizes, dtype=np.int64)
    p_in = np.broadcast_to(np.asarray(p_in, dtype=float), sizes.shape)
    n = int(sizes.sum())
    label = np.repeat(np.arange(sizes.size), sizes)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    us, vs = [], []
    for g, (s0, sz) in enumerate(zip(starts, sizes)):
        iu, ju = np.triu_indices(int(sz), 1)
        keep = rng.random(iu.size) < p_in[g]
        us.append(iu[keep] + s0)
        vs.append(ju[keep] + s0)
    u = np.concatenate(us) if us else np.empty(0, np.int64)
    v = np.concatenate(vs) if vs else np.empty(0, np.int64)
    inside = u.astype(np.int64) * n + v
    cross = []
    got = 0
    while got < n_cross:
        k = random_pairs(n, min(n_cross - got, n * (n - 1) // 2 - inside.size), rng, exclude=inside)
        k = k[label[k // n] != label[k % n]]
        cross.append(k)
        inside = np.concatenate([inside, k])
        got += k.size
    ck = np.concatenate(cross)[:n_cross] if cross else np.empty(0, np.int64)
    u = np.concatenate([u, ck // n])
    v = np.concatenate([v, ck % n])
    g = build_graph(np.column_stack([u, v, np.ones(u.size)]) if u.size else [], node_count=n)
    return g, label


def _caveman(n_groups: int, rng: np.random.Generator, cross_per_node: float):
    sizes = rng.integers(4, 13, n_groups)
    p_in = rng.uniform(0.25, 0.95, n_groups)
    n_cross = int(cross_per_node * sizes.sum())
    return sizes, p_in, n_cross


def planted_strength_graph(n_groups: int, seed: int, coef=(0.3, 2.0, -1.0),
                           cross_per_node: float = 1.0) -> WeightedGraph:
    """Integer-weighted graph where ``E[w - 1] = exp(b0 + b_o * overlap + b_c * cc_sum)``.

    Topology is a relaxed caveman graph (dense groups of random density plus
    random bridges), which spreads both overlap and non-shared clustering.
    """
    rng = np.random.default_rng(seed)
    sizes, p_in, n_cross = _caveman(n_groups, rng, cross_per_node)
    g0, _ = community_graph(sizes, p_in, n_cross, seed=int(rng.integers(2**62)))
    ft = feature_table(g0)
    b0, bo, bc = coef
    lam = np.exp(b0 + bo * ft["overlap"] + bc * ft["cc_sum"])
    w = 1.0 + rng.poisson(lam)
    return build_graph(np.column_stack([ft.src, ft.dst, w]), node_count=g0.node_count)


@dataclass
class MultiplexFixture:
    records: list[tuple[int, int, int]]
    attrs: AttributeTable
    node_count: int

    def graph(self) -> WeightedGraph:
        return union_multiplex(self.records, node_count=self.node_count)

    def write(self, directory: str | os.PathLike) -> dict[str, str]:
        """Write ``multiplex.csv``, ``layers.csv`` and ``attributes.csv``; returns their paths."""
        os.makedirs(directory, exist_ok=True)
        paths = {k: os.path.join(directory, f) for k, f in
                 (("multiplex", "multiplex.csv"), ("layers", "layers.csv"), ("attributes", "attributes.csv"))}
        with open(paths["multiplex"], "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("src", "dst", "layer"))
            for s, d, k in self.records:
                wr.writerow((s, d, LAYER_NAMES[k]))
        with open(paths["layers"], "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("layer", "name"))
            wr.writerows(enumerate(LAYER_NAMES))
        _write_attrs(paths["attributes"], self.attrs)
        return paths


def _write_attrs(path, attrs: AttributeTable) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("node", "age", "sex", "zip", "household"))
        for k in range(len(attrs)):
            a, s = attrs.age[k], int(attrs.sex[k])
            wr.writerow((k, "" if np.isnan(a) else int(a), "" if s < 0 else "MF"[s],
                         attrs.zip[k] or "", attrs.household[k] or ""))


def multiplex_fixture(seed: int, n_households: int = 240, p_missing_age: float = 0.15,
                      p_missing_sex: float = 0.1) -> MultiplexFixture:
    """Village-style 12-layer survey.

    Households of 2-6 members are fully tied, almost always on all 12 layers.
    Cross-household ties cluster within neighborhoods of about eight
    households; their layer count is Poisson with a log-mean that rises with
    overlap, falls with non-shared clustering and is lower for mixed-sex pairs.
    A few isolated dyads and tie-less respondents are added.
    """
    rng = np.random.default_rng(seed)
    hh_size = rng.integers(2, 7, n_households)
    n_core = int(hh_size.sum())
    hh = np.repeat(np.arange(n_households), hh_size)
    hood = hh // 8
    sex = rng.integers(0, 2, n_core)
    age = rng.integers(18, 81, n_core).astype(float)

    pairs = []
    for h0 in np.unique(hood):
        members = np.flatnonzero(hood == h0)
        iu, ju = np.triu_indices(members.size, 1)
        a, b = members[iu], members[ju]
        same = hh[a] == hh[b]
        keep = same | (rng.random(a.size) < 0.12)
        pairs.append(np.column_stack([a[keep], b[keep]]))
    local = np.concatenate(pairs)
    far = random_pairs(n_core, n_core // 3, rng, exclude=local[:, 0].astype(np.int64) * n_core + local[:, 1])
    allp = np.concatenate([local, np.column_stack([far // n_core, far % n_core])])
    g0 = build_graph(np.column_stack([allp, np.ones(len(allp))]), node_count=n_core)
    ft = feature_table(g0)
    same_hh = hh[ft.src] == hh[ft.dst]
    fm = sex[ft.src] != sex[ft.dst]
    lam = np.exp(0.9 + 1.5 * ft["overlap"] - 0.8 * ft["cc_sum"] - 0.2 * fm)
    w = np.clip(1 + rng.poisson(lam), 1, N_LAYERS)
    w_hh = np.where(rng.random(same_hh.sum()) < 0.96, N_LAYERS, rng.integers(6, 12, same_hh.sum()))
    w[same_hh] = w_hh

    records = []
    for s, d, k in zip(ft.src.tolist(), ft.dst.tolist(), w.astype(int).tolist()):
        for lay in np.sort(rng.choice(N_LAYERS, size=k, replace=False)).tolist():
            records.append((s, d, lay))

    # isolated dyads and respondents without ties
    n_dyads, n_alone = 5, 7
    extra = n_core + np.arange(2 * n_dyads + n_alone)
    for t in range(n_dyads):
        records.append((int(extra[2 * t]), int(extra[2 * t + 1]), int(rng.integers(N_LAYERS))))
    n = n_core + extra.size
    all_age = np.concatenate([age, rng.integers(18, 81, extra.size).astype(float)])
    all_sex = np.concatenate([sex, rng.integers(0, 2, extra.size)])
    all_hh = np.concatenate([hh, n_households + np.arange(extra.size)])
    all_age[rng.random(n) < p_missing_age] = np.nan
    sex_obj = ["MF"[s] for s in all_sex]
    for k in np.flatnonzero(rng.random(n) < p_missing_sex):
        sex_obj[k] = None
    attrs = AttributeTable.from_columns(
        n, age=[None if np.isnan(a) else a for a in all_age], sex=sex_obj,
        household=[f"h{h}" for h in all_hh],
    )
    return MultiplexFixture(records, attrs, n)


@dataclass
class CDRFixture:
    records: list[tuple]
    attrs: AttributeTable
    node_count: int

    def write(self, directory: str | os.PathLike) -> dict[str, str]:
        """Write ``cdr.csv`` and ``attributes.csv``; returns their paths."""
        os.makedirs(directory, exist_ok=True)
        paths = {"cdr": os.path.join(directory, "cdr.csv"), "attributes": os.path.join(directory, "attributes.csv")}
        with open(paths["cdr"], "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("date", "caller", "callee", "duration_min", "calls", "sms", "mms"))
            wr.writerows(self.records)
        _write_attrs(paths["attributes"], self.attrs)
        return paths


def cdr_fixture(seed: int, n_groups: int = 150, n_days: int = 28, p_missing=(0.2, 0.1, 0.25)) -> CDRFixture:
    """Daily call records on a caveman graph whose groups share billing zips.

    Expected total talk time on a tie grows with its overlap. Some pairs only
    exchange texts and therefore never become edges. ``p_missing`` gives the
    missing rates for age, sex and zip.
    """
    rng = np.random.default_rng(seed)
    sizes, p_in, n_cross = _caveman(n_groups, rng, 0.8)
    g0, group = community_graph(sizes, p_in, n_cross, seed=int(rng.integers(2**62)))
    n = g0.node_count
    zip_of_group = rng.integers(0, max(2, n_groups // 3), n_groups)
    zips = zip_of_group[group]
    age = np.clip(np.round(rng.normal(40, 12, n)), 16, 90)
    sex = rng.integers(0, 2, n)
    ft = feature_table(g0)
    activity = rng.lognormal(0.0, 0.5, n)
    mean_days = np.exp(0.5 + 1.5 * ft["overlap"]) * np.sqrt(activity[ft.src] * activity[ft.dst])
    records = []
    for s, d, mu in zip(ft.src.tolist(), ft.dst.tolist(), mean_days.tolist()):
        for day in np.sort(rng.integers(1, n_days + 1, 1 + rng.poisson(mu))).tolist():
            calls = int(1 + rng.poisson(0.5))
            dur = round(float(rng.exponential(3.0 * calls)), 2) + 0.01
            a, b = (s, d) if rng.random() < 0.5 else (d, s)
            records.append((f"2015-02-{day:02d}", a, b, dur, calls, int(rng.poisson(1.0)), 0))
    sms_only = random_pairs(n, n // 10, rng, exclude=ft.src * n + ft.dst)
    for key in sms_only.tolist():
        records.append((f"2015-02-{int(rng.integers(1, n_days + 1)):02d}", key // n, key % n, 0.0, 0, 1, 0))
    records.sort(key=lambda r: (r[0], r[1], r[2]))
    miss_age, miss_sex, miss_zip = (rng.random(n) < p for p in p_missing)
    attrs = AttributeTable.from_columns(
        n,
        age=[None if m else a for a, m in zip(age, miss_age)],
        sex=[None if m else "MF"[s] for s, m in zip(sex, miss_sex)],
        zip=[None if m else f"z{z:03d}" for z, m in zip(zips, miss_zip)],
    )
    return CDRFixture(records, attrs, n)
