"""Staged, deterministic pipeline: ingest, features, impute, fit, evaluate, report.

Each stage reads its inputs from the working directory and writes its
artifacts back there, so stages can run one at a time from the command line
or all at once through :func:`run_pipeline`. Every JSON artifact carries the
config hash and seed; ``manifest.json`` records the hash, seed and SHA-256 of
every artifact, CSVs included. Wall-clock timings go to ``timing.json``,
which is kept out of the manifest so that reruns are byte-identical.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import ingest as io
from .bowtie import FeatureTable, attribute_columns, feature_table
from .evaluate import (
    NAMED_THRESHOLDS, accuracy_curve, confusion_summary, model_columns, null_importance, sample_edges,
    split_edges, threshold_grid,
)
from .graph import AttributeTable, WeightedGraph, household_masks, remove_isolated_ties
from .impute import impute_attributes, impute_paired_zip
from .learn import (
    Dataset, cross_validate, drop_aliased, fit_forest, fit_lasso, fit_ols, fit_poisson, fit_ridge, lasso_grid,
    load_model, ridge_grid, save_model, standardize,
)
from .plots import emit_plots
from .strength import TieStrengthTarget, averaged_strength, edge_weight, multiplex_strength, normalized_strengths

logger = logging.getLogger(__name__)

DATASET_KINDS = ("multiplex", "cdr", "generic")
LEARNERS = ("forest_reg", "forest_clf", "ols", "poisson", "lasso", "ridge")
TARGETS = ("w", "y", "z")
EVAL_MODES = ("heldout", "insample")
Y_ORIENTATIONS = ("both", "ij")
MAX_CLASSES = 20
INPUT_FIELDS = ("edges", "multiplex", "layers", "cdr", "attributes")
_REQUIRED_INPUT = {"multiplex": "multiplex", "cdr": "cdr", "generic": "edges"}
STAGES = ("ingest", "features", "impute", "fit", "evaluate", "report")


class ConfigError(ValueError):
    """Inconsistent run configuration."""


class LockError(RuntimeError):
    """Another pipeline holds the working directory."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


@dataclass
class RunConfig:
    kind: str = "generic"
    workdir: str = "."
    edges: str | None = None
    multiplex: str | None = None
    layers: str | None = None
    cdr: str | None = None
    attributes: str | None = None
    learners: tuple[str, ...] = ("forest_reg",)
    models: tuple[int, ...] = (1,)
    targets: tuple[str, ...] = ("w",)
    seed: int = 0
    test_fraction: float = 0.2
    eval_mode: str = "heldout"
    y_orientation: str = "both"
    sample_edges: int | None = None
    complete_case_only: bool = False
    n_trees: int = 200
    cv_folds: int = 10
    n_jobs: int = 1
    _digests: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.learners = tuple(self.learners)
        self.models = tuple(int(m) for m in self.models)
        self.targets = tuple(self.targets)

    def validate(self) -> "RunConfig":
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        need = _REQUIRED_INPUT[self.kind]
        if getattr(self, need) is None:
            raise ConfigError(f"a {self.kind} run needs --{need}")
        for name, allowed, vals in (("learner", LEARNERS, self.learners), ("target", TARGETS, self.targets),
                                    ("feature model", (1, 2, 3), self.models)):
            bad = [v for v in vals if v not in allowed]
            if bad or not vals:
                raise ConfigError(f"{name} must be among {allowed}, got {list(vals)}")
            if len(set(vals)) != len(vals):
                raise ConfigError(f"duplicate {name} in {list(vals)}")
        if self.kind == "multiplex" and set(self.targets) != {"w"}:
            raise ConfigError("multiplex runs model the layer count; use --target w")
        # integer-valued targets only: layer counts, or weights checked again at fit time
        if {"poisson", "forest_clf"} & set(self.learners) and set(self.targets) - {"w"}:
            raise ConfigError("poisson and forest_clf need the integer target w")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test fraction must be in (0, 1), got {self.test_fraction}")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"evaluation mode must be one of {EVAL_MODES}, got {self.eval_mode!r}")
        if self.y_orientation not in Y_ORIENTATIONS:
            raise ConfigError(f"y orientation must be one of {Y_ORIENTATIONS}, got {self.y_orientation!r}")
        if self.sample_edges is not None and self.sample_edges < 0:
            raise ConfigError("--sample-edges must be nonnegative")
        if self.n_trees < 1 or self.cv_folds < 2:
            raise ConfigError("need at least one tree and two CV folds")
        return self

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if not f.name.startswith("_")}
        for k in ("learners", "models", "targets"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls) if not f.name.startswith("_")}
        unknown = set(d) - names - {"config_hash"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})

    def _digest(self, path: str) -> str:
        if path not in self._digests:
            h = hashlib.sha256()
            with open(path, "rb") as fh:
                for block in iter(lambda: fh.read(1 << 20), b""):
                    h.update(block)
            self._digests[path] = h.hexdigest()
        return self._digests[path]

    def hash_payload(self) -> dict:
        """Everything that can change results: inputs by content, not path; no workdir or thread count."""
        d = self.to_dict()
        d.pop("workdir")
        d.pop("n_jobs")
        for k in INPUT_FIELDS:
            if d[k] is not None:
                d[k] = self._digest(d[k]) if os.path.exists(d[k]) else f"missing:{os.path.basename(d[k])}"
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.hash_payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


class Workdir:
    """Paths, JSON/CSV writers and the artifact manifest for one run directory."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = cfg.workdir
        os.makedirs(self.root, exist_ok=True)
        self._hash = cfg.config_hash()

    def path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    def exists(self, *parts) -> bool:
        return os.path.exists(self.path(*parts))

    def stamp(self) -> dict:
        return {"config_hash": self._hash, "seed": self.cfg.seed}

    def write_json(self, rel: str, obj: dict) -> str:
        p = self.path(rel)
        os.makedirs(os.path.dirname(p) or ".", exist_ok=True)
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(_clean({**obj, **self.stamp()}), fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
        return p

    def read_json(self, rel: str) -> dict:
        p = self.path(rel)
        if not os.path.exists(p):
            raise FileNotFoundError(f"{p} not found; run the stage that produces it first")
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)

    def record(self, stage: str, paths) -> None:
        """Add artifacts to ``manifest.json`` with their digests."""
        man = self.read_json("manifest.json") if self.exists("manifest.json") else {"artifacts": {}}
        for p in paths:
            rel = os.path.relpath(p, self.root).replace(os.sep, "/")
            with open(p, "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
            man["artifacts"][rel] = {"sha256": digest, "stage": stage, **self.stamp()}
        man.pop("config_hash", None)
        man.pop("seed", None)
        self.write_json("manifest.json", man)

    @contextlib.contextmanager
    def lock(self):
        p = self.path(".tiestrength.lock")
        try:
            fd = os.open(p, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(f"{self.root} is in use by another pipeline (remove {p} if that run died)") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            with contextlib.suppress(FileNotFoundError):
                os.remove(p)


# ---------------------------------------------------------------- loading


def _load_graph(wd: Workdir) -> tuple[WeightedGraph, AttributeTable, dict]:
    info = wd.read_json("ingest.json")
    n = info["stats"]["nodes"]
    g = io.read_graph(wd.path("graph.csv"), n)
    attrs = io.read_dense_attributes(wd.path("attributes.csv"), n)
    return g, attrs, info


def _analysis_features(wd: Workdir) -> tuple[FeatureTable, bool]:
    """Imputed features when imputation ran and the run is not complete-case only."""
    imputed = False
    if not wd.cfg.complete_case_only and wd.exists("imputation_report.json"):
        imputed = bool(wd.read_json("imputation_report.json").get("applied"))
    name = "features_imputed.csv" if imputed else "features.csv"
    if not wd.exists(name):
        raise FileNotFoundError(f"{wd.path(name)} not found; run the features stage first")
    return FeatureTable.from_csv(wd.path(name)), imputed


# ---------------------------------------------------------------- stages


def stage_ingest(cfg: RunConfig, wd: Workdir) -> dict:
    if cfg.kind == "multiplex":
        g, labels = io.read_multiplex(cfg.multiplex, cfg.layers, cfg.attributes)
    elif cfg.kind == "cdr":
        g, labels = io.read_cdr(cfg.cdr, cfg.attributes)
    else:
        g, labels = io.read_edge_list(cfg.edges, cfg.attributes)
    attrs = io.read_attributes(cfg.attributes, labels) if cfg.attributes else AttributeTable.empty(len(labels))
    stats = {"nodes": g.node_count, "edges_raw": g.edge_count}
    if cfg.kind == "multiplex":
        w = g.edges()[2]
        stats["share_strength_12"] = float(np.mean(w == 12)) if w.size else None
    g = remove_isolated_ties(g)
    stats["edges"] = g.edge_count
    stats["isolated_ties_removed"] = stats["edges_raw"] - g.edge_count
    fields = attrs.observed_fields()
    node_ok = attrs.complete_mask(fields)
    src, dst, _ = g.edges()
    edge_ok = node_ok[src] & node_ok[dst]
    stats["complete_attribute_nodes"] = int(node_ok.sum())
    stats["complete_attribute_edges"] = int(edge_ok.sum())
    if any(h is not None for h in attrs.household):
        cross, same, missing = household_masks(g, attrs)
        stats["same_household_edges"] = int(same.sum())
        stats["missing_household_edges"] = int(missing.sum())
        stats["cross_household_edges"] = int(cross.sum())
        stats["cross_household_complete_edges"] = int((cross & edge_ok).sum())
    io.write_graph(wd.path("graph.csv"), g)
    io.write_nodemap(wd.path("nodemap.csv"), labels)
    io.write_attributes(wd.path("attributes.csv"), attrs)
    out = wd.write_json("ingest.json", {"kind": cfg.kind, "attribute_fields": list(fields), "stats": stats})
    wd.record("ingest", [wd.path("graph.csv"), wd.path("nodemap.csv"), wd.path("attributes.csv"), out])
    logger.info("ingested %d nodes, %d edges", g.node_count, g.edge_count)
    return stats


def _stamp_schema(wd: Workdir, rel: str) -> str:
    with open(wd.path(rel), encoding="utf-8") as fh:
        schema = json.load(fh)
    return wd.write_json(rel, schema)


def stage_features(cfg: RunConfig, wd: Workdir) -> FeatureTable:
    g, attrs, _ = _load_graph(wd)
    ft = feature_table(g, attrs)
    ft.to_csv(wd.path("features.csv"), wd.path("features.schema.json"))
    wd.record("features", [wd.path("features.csv"), _stamp_schema(wd, "features.schema.json")])
    return ft


def stage_impute(cfg: RunConfig, wd: Workdir) -> dict:
    g, attrs, info = _load_graph(wd)
    fields = tuple(info["attribute_fields"])
    node_fields = tuple(f for f in fields if f in ("age", "sex"))
    incomplete = int((~attrs.complete_mask(fields)).sum()) if fields else 0
    if cfg.complete_case_only or not fields or incomplete == 0:
        reason = ("complete-case run" if cfg.complete_case_only else
                  "no attributes" if not fields else "no missing values")
        p = wd.write_json("imputation_report.json", {"applied": False, "reason": reason})
        wd.record("impute", [p])
        return {"applied": False, "reason": reason}
    ft = FeatureTable.from_csv(wd.path("features.csv"))
    attrs_imp, report = impute_attributes(g, attrs, cfg.seed, n_trees=cfg.n_trees, fields=node_fields)
    cols = attribute_columns(attrs_imp, ft.src, ft.dst)
    if "zip" in fields:
        z, rz = impute_paired_zip(g, attrs, cfg.seed, features=ft, n_trees=cfg.n_trees)
        report = report.merge(rz)
        cols["same_zip"] = z
    for name, vals in cols.items():
        ft = ft.with_column(name, vals)
    io.write_attributes(wd.path("attributes_imputed.csv"), attrs_imp)
    ft.to_csv(wd.path("features_imputed.csv"))
    p = wd.write_json("imputation_report.json", {"applied": True, **report.to_dict()})
    wd.record("impute", [wd.path("attributes_imputed.csv"), wd.path("features_imputed.csv"), p])
    return {"applied": True, **report.to_dict()}


def _target(cfg: RunConfig, t: str, g: WeightedGraph) -> TieStrengthTarget:
    if t == "w":
        return multiplex_strength(g) if cfg.kind == "multiplex" else edge_weight(g)
    if t == "y":
        return normalized_strengths(g, cfg.y_orientation)
    return averaged_strength(g)


def _uses_log(t: str) -> bool:
    # skewed duration shares are modeled on the log scale by the linear learners
    return t in ("y", "z")


@dataclass
class _Frame:
    g: WeightedGraph
    ft: FeatureTable
    fields: tuple[str, ...]
    rows: np.ndarray  # edge positions used for modeling
    test: np.ndarray  # bool per edge position; True = held out
    stats: dict


def _frame(cfg: RunConfig, wd: Workdir) -> _Frame:
    g, attrs, info = _load_graph(wd)
    ft, imputed = _analysis_features(wd)
    if len(ft) != g.edge_count:
        raise ValueError(f"feature table has {len(ft)} rows for {g.edge_count} edges; rerun features")
    fields = tuple(info["attribute_fields"])
    E = g.edge_count
    keep = np.ones(E, dtype=bool)
    stats = {"edges": E, "imputed_features": imputed}
    if cfg.sample_edges is not None:
        keep[:] = False
        keep[sample_edges(g, min(cfg.sample_edges, E), cfg.seed)] = True
        stats["sampled_edges"] = int(keep.sum())
    if cfg.kind == "multiplex" and any(h is not None for h in attrs.household):
        keep &= household_masks(g, attrs)[0]
        stats["cross_household_edges"] = int(keep.sum())
    needed = sorted({c for m in cfg.models for L in cfg.learners
                     for c in model_columns(m, fields, "forest" if L.startswith("forest") else "linear")})
    complete = ~np.isnan(ft.matrix(needed)).any(axis=1)
    stats["dropped_incomplete"] = int((keep & ~complete).sum())
    keep &= complete
    rows = np.flatnonzero(keep)
    if rows.size < 10:
        raise ValueError(f"only {rows.size} modeling edges remain after filtering ({stats})")
    test = np.zeros(E, dtype=bool)
    test[rows[split_edges(rows.size, cfg.test_fraction, cfg.seed)]] = True
    stats["modeling_edges"] = int(rows.size)
    stats["test_edges"] = int(test.sum())
    return _Frame(g, ft, fields, rows, test, stats)


def _model_id(learner: str, target: str, model: int) -> str:
    return f"{learner}-{target}-m{model}"


def _fit_one(cfg, frame: _Frame, learner, t, m, tgt: TieStrengthTarget, train_rows):
    kind = "forest" if learner.startswith("forest") else "linear"
    cols = model_columns(m, frame.fields, kind)
    X = frame.ft.matrix(cols)[tgt.edge[train_rows]]
    y = tgt.values[train_rows]
    info = {"columns": list(cols), "n_train": int(train_rows.size), "transform": "none", "center": None}
    if kind == "forest":
        cat = ("sex_pair",) if "sex_pair" in cols else ()
        d = Dataset(X, y, cols, categorical=cat, levels={"sex_pair": 3} if cat else {})
        if learner == "forest_clf":
            if np.any(y != np.round(y)):
                raise ValueError("forest_clf needs an integer target")
            n_cls = np.unique(y).size
            if n_cls > MAX_CLASSES:
                raise ValueError(f"forest_clf supports at most {MAX_CLASSES} classes, target has {n_cls}")
            d = dataclasses.replace(d, y=y.astype(np.int64))
        model = fit_forest(d, "classification" if learner == "forest_clf" else "regression", cfg.seed,
                           n_trees=cfg.n_trees, n_jobs=cfg.n_jobs)
        return model, info
    if learner != "poisson" and _uses_log(t):
        logs = np.log(y)
        info["transform"], info["center"] = "log_then_center", float(logs.mean())
        y = logs - info["center"]
    d, dropped = drop_aliased(Dataset(X, y, cols))
    info["dropped_aliased"] = dropped
    info["columns"] = list(d.schema)
    if dropped:
        logger.info("%s: dropped aliased columns %s", _model_id(learner, t, m), dropped)
    if learner == "poisson":
        if np.any(y != np.round(y)) or np.any(y < 0):
            raise ValueError("poisson needs a nonnegative integer target")
        return fit_poisson(d), info
    if learner == "ols":
        return fit_ols(standardize(d)), info
    family = learner
    grid = lasso_grid() if family == "lasso" else ridge_grid()
    cv = cross_validate(d, family, grid, k=cfg.cv_folds, seed=cfg.seed)
    info["cv"] = cv.as_dict()
    fit = fit_lasso if family == "lasso" else fit_ridge
    return fit(standardize(d), cv.chosen), info


def stage_fit(cfg: RunConfig, wd: Workdir) -> dict:
    frame = _frame(cfg, wd)
    written = []
    with open(wd.path("rows.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("src", "dst", "split"))
        for e in frame.rows.tolist():
            wr.writerow((int(frame.ft.src[e]), int(frame.ft.dst[e]), "test" if frame.test[e] else "train"))
    written.append(wd.path("rows.csv"))
    entries = []
    os.makedirs(wd.path("models"), exist_ok=True)
    for t in cfg.targets:
        tgt = _target(cfg, t, frame.g)
        in_rows = np.isin(tgt.edge, frame.rows)
        sel = np.flatnonzero(in_rows)
        _write_target(wd.path(f"targets_{t}.csv"), tgt, sel)
        written.append(wd.path(f"targets_{t}.csv"))
        train = sel if cfg.eval_mode == "insample" else sel[~frame.test[tgt.edge[sel]]]
        for m in cfg.models:
            for learner in cfg.learners:
                mid = _model_id(learner, t, m)
                model, info = _fit_one(cfg, frame, learner, t, m, tgt, train)
                meta = {**wd.stamp(), "id": mid, "learner": learner, "target": t, "feature_model": m,
                        "transform": info["transform"], "center": info["center"]}
                path = wd.path("models", f"{mid}.json")
                save_model(model, path, meta)
                written.append(path)
                entries.append({"id": mid, "learner": learner, "target": t, "feature_model": m, **info})
    p = wd.write_json("fit.json", {"frame": frame.stats, "eval_mode": cfg.eval_mode, "models": entries})
    wd.record("fit", written + [p])
    return {"frame": frame.stats, "models": entries}


def _write_target(path, tgt: TieStrengthTarget, sel: np.ndarray) -> None:
    sub = dataclasses.replace(tgt, src=tgt.src[sel], dst=tgt.dst[sel], edge=tgt.edge[sel],
                              orientation=tgt.orientation[sel], values=tgt.values[sel])
    sub.to_csv(path)


def _linear_summary(model) -> dict:
    rows = []
    for k, name in enumerate(model.schema):
        row = {"name": name, "coef": float(model.coef[k])}
        if model.se is not None:
            se = float(model.se[k])
            row["se"] = se
            row["z"] = row["coef"] / se if se > 0 else None
            row["significant"] = bool(se > 0 and abs(row["coef"] / se) > 1.96)
        rows.append(row)
    out = {"intercept": model.intercept, "coefficients": rows, "lambda": model.lam,
           "adj_r2": model.diagnostics.get("adj_r2"), "r2": model.diagnostics.get("r2")}
    for k in ("shrinkage_l1", "shrinkage_l2", "deviance", "null_deviance", "iterations"):
        if k in model.diagnostics:
            out[k] = model.diagnostics[k]
    return out


def stage_evaluate(cfg: RunConfig, wd: Workdir) -> dict:
    frame = _frame(cfg, wd)
    fitted = wd.read_json("fit.json")
    results, residuals = [], {}
    pred_rows = []
    for entry in fitted["models"]:
        model = load_model(wd.path("models", f"{entry['id']}.json"))
        tgt = _target(cfg, entry["target"], frame.g)
        sel = np.flatnonzero(np.isin(tgt.edge, frame.rows))
        ev = sel if cfg.eval_mode == "insample" else sel[frame.test[tgt.edge[sel]]]
        X = frame.ft.matrix(model.schema)[tgt.edge[ev]]
        pred = model.predict(X).astype(float)
        if entry["transform"] == "log_then_center":
            pred = np.exp(pred + entry["center"])
        truth = tgt.values[ev]
        r = np.abs(truth - pred)
        residuals[entry["id"]] = r
        res = {"id": entry["id"], "learner": entry["learner"], "target": entry["target"],
               "feature_model": entry["feature_model"], "n_eval": int(ev.size), "eval_mode": cfg.eval_mode,
               "residual": {"max": float(r.max()) if r.size else None, "mean": float(r.mean()) if r.size else None,
                            "median": float(np.median(r)) if r.size else None}}
        if entry["learner"].startswith("forest"):
            res["importance"] = {"features": list(model.schema), "values": model.importance.tolist(),
                                 "null": null_importance(len(model.schema))}
        else:
            res["linear"] = _linear_summary(model)
            res["linear"]["dropped_aliased"] = entry.get("dropped_aliased", [])
            if "cv" in entry:
                res["linear"]["cv_chosen"] = entry["cv"]["chosen"]
        if entry["learner"] == "forest_clf":
            labels = list(range(1, 13)) if cfg.kind == "multiplex" else None
            res["confusion"] = confusion_summary(truth, pred, labels)
        results.append(res)
        for k in range(ev.size):
            pred_rows.append((entry["id"], int(tgt.src[ev[k]]), int(tgt.dst[ev[k]]), tgt.orientation[ev[k]],
                              repr(float(truth[k])), repr(float(pred[k]))))
    top = max((float(r.max()) for r in residuals.values() if r.size), default=1.0)
    grid = threshold_grid(top)
    for res in results:
        r = residuals[res["id"]]
        res["accuracy"] = {"thresholds": grid.tolist(), "fraction": accuracy_curve(r, grid).tolist()}
        res["named_accuracy"] = {repr(t): float(accuracy_curve(r, [t])[0]) for t in NAMED_THRESHOLDS}
    with open(wd.path("predictions.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("model", "src", "dst", "orientation", "observed", "predicted"))
        wr.writerows(pred_rows)
    p = wd.write_json("evaluation.json", {"eval_mode": cfg.eval_mode, "models": results})
    wd.record("evaluate", [wd.path("predictions.csv"), p])
    return {"models": results}


def _imputation_summary(wd: Workdir) -> dict | None:
    if not wd.exists("imputation_report.json"):
        return None
    rep = wd.read_json("imputation_report.json")
    if not rep.get("applied") or wd.cfg.complete_case_only:
        return {"applied": False, "reason": rep.get("reason", "complete-case run")}
    keep = ("attribute", "observed", "imputed", "total", "metric", "validation_score", "baseline")
    # covariate lists stay in imputation_report.json so that a feature-subset
    # report never names a column its models exclude
    return {"applied": True, "attributes": [{k: a[k] for k in keep} for a in rep["attributes"]],
            "details": "imputation_report.json"}


def stage_report(cfg: RunConfig, wd: Workdir) -> dict:
    ingest = wd.read_json("ingest.json")
    fitted = wd.read_json("fit.json")
    ev = wd.read_json("evaluation.json")
    report = {
        **wd.stamp(),
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("workdir", "n_jobs") + INPUT_FIELDS},
        "inputs": {k: os.path.basename(v) for k, v in cfg.to_dict().items() if k in INPUT_FIELDS and v},
        "ingest": ingest["stats"],
        "imputation": _imputation_summary(wd),
        "sample": fitted["frame"],
        "eval_mode": ev["eval_mode"],
        "models": ev["models"],
        "runtime": "timing.json",
    }
    p = wd.write_json("report.json", report)
    md = wd.path("report.md")
    with open(md, "w", encoding="utf-8") as fh:
        fh.write(render_markdown(report))
    plots = emit_plots(report, wd.path("plots"))
    if not plots:
        print("notice: no models in report; no plots written")
    wd.record("report", [p, md] + plots)
    return report


def _fmt(x, nd=4):
    return "NA" if x is None else f"{x:.{nd}f}" if isinstance(x, float) else str(x)


def render_markdown(report: dict) -> str:
    lines = [f"# Tie-strength run {report['config_hash']}", "",
             f"seed {report['seed']}; evaluation on {report['eval_mode']} rows", "", "## Data", ""]
    for k, v in sorted(report["ingest"].items()):
        lines.append(f"- {k}: {_fmt(v)}")
    for k, v in sorted(report["sample"].items()):
        lines.append(f"- sample {k}: {_fmt(v)}")
    imp = report.get("imputation")
    if imp and imp.get("applied"):
        lines += ["", "## Imputation", "", "| attribute | observed | imputed | metric | validation | baseline |",
                  "|---|---|---|---|---|---|"]
        for a in imp["attributes"]:
            lines.append(f"| {a['attribute']} | {a['observed']} | {a['imputed']} | {a['metric']} | "
                         f"{_fmt(a['validation_score'])} | {_fmt(a['baseline'])} |")
    for m in report["models"]:
        lines += ["", f"## {m['id']}", "", f"evaluated on {m['n_eval']} rows", ""]
        acc = ", ".join(f"within {t}: {_fmt(v, 3)}" for t, v in sorted(m["named_accuracy"].items(),
                                                                        key=lambda kv: float(kv[0])))
        lines.append(f"accuracy {acc}")
        if "importance" in m:
            imp_m = m["importance"]
            lines += ["", f"| feature | importance | (null {_fmt(imp_m['null'])}) |", "|---|---|---|"]
            for f, v in sorted(zip(imp_m["features"], imp_m["values"]), key=lambda fv: -fv[1]):
                lines.append(f"| {f} | {_fmt(v)} | {'above' if v > imp_m['null'] else ''} |")
        if "linear" in m:
            lin = m["linear"]
            lines += ["", f"intercept {_fmt(lin['intercept'])}; adjusted R2 {_fmt(lin['adj_r2'])}; "
                          f"lambda {_fmt(lin['lambda'], 6)}", "", "| predictor | coef | se |", "|---|---|---|"]
            for row in lin["coefficients"]:
                lines.append(f"| {row['name']} | {_fmt(row['coef'])} | {_fmt(row.get('se'))} |")
        if "confusion" in m:
            c = m["confusion"]
            lines += ["", f"exact accuracy {_fmt(c['exact_accuracy'], 3)}; "
                          f"within one {_fmt(c['within_one_accuracy'], 3)}"]
    lines.append("")
    return "\n".join(lines)


STAGE_FUNCS = {"ingest": stage_ingest, "features": stage_features, "impute": stage_impute,
               "fit": stage_fit, "evaluate": stage_evaluate, "report": stage_report}


def run_stage(cfg: RunConfig, stage: str, wd: Workdir | None = None, timing: dict | None = None):
    """Run one stage, wrapping failures in :class:`StageError` with the stage name."""
    wd = wd or Workdir(cfg)
    t0 = time.perf_counter()
    try:
        out = STAGE_FUNCS[stage](cfg, wd)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    if timing is not None:
        timing[stage] = round(time.perf_counter() - t0, 3)
    return out


def save_config(cfg: RunConfig, wd: Workdir) -> None:
    d = cfg.to_dict()
    d.pop("workdir")
    wd.write_json("config.json", d)


def run_pipeline(cfg: RunConfig) -> dict:
    """Run every stage in order and return the report."""
    cfg.validate()
    wd = Workdir(cfg)
    timing = {}
    with wd.lock():
        save_config(cfg, wd)
        for stage in STAGES:
            out = run_stage(cfg, stage, wd, timing)
        with open(wd.path("timing.json"), "w", encoding="utf-8") as fh:
            json.dump({"seconds": timing, "total": round(sum(timing.values()), 3), **wd.stamp()}, fh, indent=2)
            fh.write("\n")
    return out
