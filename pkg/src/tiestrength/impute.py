"""Forest imputation of node age and sex and of the paired-zip edge indicator.

Node models use structural covariates plus what is observed about a node's
neighbors. Validation scores always come from a seeded 20% of the *observed*
values held out from a first fit; the values actually filled in come from a
second forest trained on every observed value.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .bowtie import STRUCTURAL_COLUMNS, FeatureTable, feature_table
from .graph import AttributeTable, WeightedGraph
from .learn import Dataset, fit_forest

logger = logging.getLogger(__name__)

MIN_OBSERVED = 100
HOLDOUT = 0.2
_STREAM = {"age": 0, "sex": 1, "paired_zip": 2}

NODE_COVARIATES = (
    "degree", "strength", "clustering", "neighbor_age_mean", "neighbor_female_share", "neighbor_sex_observed_share",
)
COVARIATE_NOTE = (
    "Imputation covariates are an implementation choice: node degree, strength, unweighted local clustering, "
    "mean observed neighbor age and observed neighbor sex shares for age/sex; structural bow-tie features for "
    "paired zip. Attribute-only covariates are not used."
)


class ImputationError(ValueError):
    """Too few observed values to train or validate an imputation model."""


@dataclass
class AttributeImputation:
    attribute: str
    total: int
    observed: int
    imputed: int
    metric: str | None = None  # "mae" | "accuracy"
    validation_score: float | None = None
    validation_rows: int = 0
    baseline: float | None = None  # sd of observed ages, or majority-class share


@dataclass
class ImputationReport:
    seed: int
    attributes: list[AttributeImputation] = field(default_factory=list)
    covariates: dict = field(default_factory=dict)
    note: str = COVARIATE_NOTE

    def get(self, name: str) -> AttributeImputation:
        for a in self.attributes:
            if a.attribute == name:
                return a
        raise KeyError(name)

    def merge(self, other: "ImputationReport") -> "ImputationReport":
        return ImputationReport(self.seed, self.attributes + other.attributes,
                                {**self.covariates, **other.covariates}, self.note)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "attributes": [asdict(a) for a in self.attributes],
                "covariates": self.covariates, "note": self.note}

    def to_json(self, path: str | os.PathLike, extra: dict | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({**(extra or {}), **self.to_dict()}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _adjacency(g: WeightedGraph) -> sp.csr_matrix:
    n = g.node_count
    return sp.csr_matrix((np.ones(g.indices.size), g.indices, g.indptr), shape=(n, n))


def local_clustering(g: WeightedGraph) -> np.ndarray:
    """Unweighted local clustering coefficient of every node (0 below degree 2)."""
    A = _adjacency(g)
    tri = np.asarray((A @ A).multiply(A).sum(axis=1)).ravel() / 2.0
    k = g.degree.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(k > 1, tri / (k * (k - 1) / 2.0), 0.0)


def node_covariates(g: WeightedGraph, attrs: AttributeTable) -> np.ndarray:
    """Matrix with columns ``NODE_COVARIATES``; neighbor summaries use observed values only.

    Nodes with no observed neighbor age get the global observed mean.
    """
    A = _adjacency(g)
    age_obs = ~np.isnan(attrs.age)
    sex_obs = attrs.sex >= 0
    n_age = A @ age_obs.astype(float)
    sum_age = A @ np.where(age_obs, attrs.age, 0.0)
    fill = float(np.nanmean(attrs.age)) if age_obs.any() else 0.0
    n_sex = A @ sex_obs.astype(float)
    n_f = A @ (attrs.sex == 1).astype(float)
    k = g.degree.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        nb_age = np.where(n_age > 0, sum_age / n_age, fill)
        f_share = np.where(n_sex > 0, n_f / n_sex, 0.5)
        obs_share = np.where(k > 0, n_sex / k, 0.0)
    return np.column_stack([k, g.strength, local_clustering(g), nb_age, f_share, obs_share])


def _holdout(n: int, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[: max(1, int(round(HOLDOUT * n)))]] = True
    return mask


def _impute_column(X, y, observed, task, name, seed, n_trees, schema, metric):
    n_obs = int(observed.sum())
    total = observed.size
    rec = AttributeImputation(name, total, n_obs, total - n_obs, metric)
    if n_obs == total:
        return y, rec
    if n_obs < MIN_OBSERVED:
        raise ImputationError(f"{name}: only {n_obs} observed values, need at least {MIN_OBSERVED}")
    rng = np.random.default_rng([seed, _STREAM[name]])
    Xo, yo = X[observed], y[observed]
    if task == "classification" and np.unique(yo).size < 2:
        # a single observed class leaves nothing to learn
        out = y.copy()
        out[~observed] = yo[0]
        rec.validation_score, rec.baseline = 1.0, 1.0
        return out, rec
    test = _holdout(n_obs, rng)
    d_tr = Dataset(Xo[~test], yo[~test], schema)
    m = fit_forest(d_tr, task, seed, n_trees=n_trees)
    pred = m.predict(Xo[test])
    if metric == "mae":
        rec.validation_score = float(np.mean(np.abs(pred - yo[test])))
        rec.baseline = float(np.std(yo))
    else:
        rec.validation_score = float(np.mean(pred == yo[test]))
        rec.baseline = float(np.max(np.bincount(yo.astype(int))) / yo.size)
    rec.validation_rows = int(test.sum())
    full = fit_forest(Dataset(Xo, yo, schema), task, seed, n_trees=n_trees)
    out = y.copy()
    out[~observed] = full.predict(X[~observed])
    return out, rec


def impute_attributes(g: WeightedGraph, attrs: AttributeTable, seed: int, n_trees: int = 200,
                      fields: tuple[str, ...] | None = None) -> tuple[AttributeTable, ImputationReport]:
    """Fill missing age (forest regression) and sex (forest classification).

    ``fields`` defaults to whichever of age and sex have any observed value;
    an attribute absent from the whole dataset is left alone. Observed cells
    are never changed. Zip and household codes pass through.
    """
    if len(attrs) != g.node_count:
        raise ImputationError(f"attribute table has {len(attrs)} rows for {g.node_count} nodes")
    if fields is None:
        fields = tuple(f for f in attrs.observed_fields() if f in ("age", "sex"))
    unknown = set(fields) - {"age", "sex"}
    if unknown:
        raise ValueError(f"cannot impute {sorted(unknown)}; node imputation covers age and sex")
    X = node_covariates(g, attrs)
    report = ImputationReport(seed, covariates={f: list(NODE_COVARIATES) for f in fields})
    out = {}
    if "age" in fields:
        out["age"], rec = _impute_column(X, attrs.age, ~np.isnan(attrs.age), "regression", "age", seed,
                                         n_trees, NODE_COVARIATES, "mae")
        report.attributes.append(rec)
    if "sex" in fields:
        sex, rec = _impute_column(X, attrs.sex.astype(float), attrs.sex >= 0, "classification", "sex", seed,
                                  n_trees, NODE_COVARIATES, "accuracy")
        out["sex"] = sex.astype(np.int8)
        report.attributes.append(rec)
    for rec in report.attributes:
        logger.info("imputed %d of %d %s values", rec.imputed, rec.total, rec.attribute)
    return attrs.replace(**out), report


def paired_zip_observed(attrs: AttributeTable, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """1/0 where both zips are known, NaN otherwise."""
    zi, zj = attrs.zip[src], attrs.zip[dst]
    return np.array([np.nan if a is None or b is None else float(a == b) for a, b in zip(zi, zj)], dtype=float)


def impute_paired_zip(g: WeightedGraph, attrs: AttributeTable, seed: int, features: FeatureTable | None = None,
                      n_trees: int = 200) -> tuple[np.ndarray, ImputationReport]:
    """Same-zip indicator per edge of ``features`` (default: every edge of ``g``).

    Observed where both endpoints have a zip; otherwise predicted by a
    forest classifier on the structural bow-tie features.
    """
    ft = features if features is not None else feature_table(g)
    z = paired_zip_observed(attrs, ft.src, ft.dst)
    observed = ~np.isnan(z)
    X = ft.matrix(STRUCTURAL_COLUMNS)
    filled, rec = _impute_column(X, z, observed, "classification", "paired_zip", seed, n_trees,
                                 STRUCTURAL_COLUMNS, "accuracy")
    return filled, ImputationReport(seed, [rec], covariates={"paired_zip": list(STRUCTURAL_COLUMNS)})
