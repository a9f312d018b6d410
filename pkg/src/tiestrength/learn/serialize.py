"""Self-describing JSON model files.

Floats are written with ``repr`` precision by the json module, so a
load/predict round trip reproduces predictions bit for bit.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .forest import ForestModel
from .linear import LinearModel
from .tree import Tree

FORMAT = "tiestrength-model"
VERSION = 1


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def model_to_dict(model, meta: dict | None = None) -> dict:
    out = {"format": FORMAT, "version": VERSION, "meta": meta or {}}
    if isinstance(model, ForestModel):
        out.update({
            "kind": "forest", "task": model.task, "schema": list(model.schema),
            "categorical": list(model.categorical), "n_cats": _arr(model.n_cats),
            "hyperparameters": {"n_trees": model.n_trees, "max_features_rule": model.max_features_rule,
                                "max_features": model.max_features, "min_leaf": 1, "bootstrap": True},
            "seed": model.seed, "importance": _arr(model.importance),
            "classes": _arr(model.classes), "y_range": model.y_range,
            "trees": [t.to_dict() for t in model.trees],
        })
    elif isinstance(model, LinearModel):
        out.update({
            "kind": "linear", "family": model.family, "schema": list(model.schema),
            "standardization": None if model.mean is None else {"mean": _arr(model.mean), "scale": _arr(model.scale)},
            "hyperparameters": {"lambda": model.lam},
            "intercept": model.intercept, "coef": _arr(model.coef),
            "se": _arr(model.se), "intercept_se": model.intercept_se,
            "diagnostics": model.diagnostics,
        })
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return out


def model_from_dict(d: dict):
    if d.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} file")
    if d.get("version") != VERSION:
        raise ValueError(f"unsupported model file version {d.get('version')}")
    if d["kind"] == "forest":
        hp = d["hyperparameters"]
        classes = None if d["classes"] is None else np.asarray(d["classes"])
        return ForestModel(
            task=d["task"], schema=tuple(d["schema"]), categorical=tuple(d["categorical"]),
            n_cats=np.asarray(d["n_cats"], dtype=np.int64), max_features_rule=hp["max_features_rule"],
            max_features=hp["max_features"], seed=d["seed"], trees=[Tree.from_dict(t) for t in d["trees"]],
            importance=np.asarray(d["importance"]), classes=classes,
            y_range=None if d["y_range"] is None else tuple(d["y_range"]),
        )
    if d["kind"] == "linear":
        st = d["standardization"]
        return LinearModel(
            family=d["family"], schema=tuple(d["schema"]), intercept=d["intercept"],
            coef=np.asarray(d["coef"], dtype=float), lam=d["hyperparameters"]["lambda"],
            se=None if d["se"] is None else np.asarray(d["se"]), intercept_se=d["intercept_se"],
            diagnostics=d["diagnostics"],
            mean=None if st is None else np.asarray(st["mean"]),
            scale=None if st is None else np.asarray(st["scale"]),
        )
    raise ValueError(f"unknown model kind {d['kind']!r}")


def save_model(model, path: str | os.PathLike, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, meta), fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_model(path: str | os.PathLike):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
