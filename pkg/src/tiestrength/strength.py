"""Tie-strength response variables and their modeling transform."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from .graph import WeightedGraph

KINDS = ("multiplex_w", "edge_weight", "normalized_y", "averaged_z")
ORIENTATIONS = ("ij", "ji", "sym")


@dataclass(frozen=True, eq=False)
class TieStrengthTarget:
    """Per-row tie strength.

    ``src``/``dst`` give the orientation of each row: for ``normalized_y`` a
    row (i, j) holds ``w_ij / s_i``, i.e. the tie seen from ``src``.
    ``edge`` maps each row back to its canonical edge position in ``g.edges()``.
    """

    kind: str
    src: np.ndarray
    dst: np.ndarray
    edge: np.ndarray
    orientation: np.ndarray
    values: np.ndarray
    transform: str = "none"
    center: float | None = None

    def __len__(self):
        return self.values.size

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("src", "dst", "orientation", "value"))
            for s, d, o, v in zip(self.src, self.dst, self.orientation, self.values):
                wr.writerow((int(s), int(d), o, repr(float(v))))

    @classmethod
    def from_csv(cls, path: str | os.PathLike, kind: str, g: WeightedGraph | None = None) -> "TieStrengthTarget":
        from .graph import edge_index

        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        src = np.array([int(r["src"]) for r in rows], dtype=np.int64)
        dst = np.array([int(r["dst"]) for r in rows], dtype=np.int64)
        orient = np.array([r["orientation"] for r in rows], dtype=object)
        bad = [o for o in orient if o not in ORIENTATIONS]
        if bad:
            raise ValueError(f"{path}: unknown orientation {bad[0]!r}")
        edge = edge_index(g, np.column_stack([src, dst])) if g is not None else np.arange(src.size)
        return cls(kind, src, dst, edge, orient, np.array([float(r["value"]) for r in rows]))


def _edge_rows(g: WeightedGraph):
    src, dst, w = g.edges()
    return src, dst, w, np.arange(src.size)


def multiplex_strength(g: WeightedGraph) -> TieStrengthTarget:
    """Count of distinct relationship layers on each tie (1..12)."""
    src, dst, w, idx = _edge_rows(g)
    if np.any(w != np.round(w)) or (w.size and (w.min() < 1 or w.max() > 12)):
        raise ValueError("multiplex strength needs integer weights in 1..12; was the graph built by union_multiplex?")
    return TieStrengthTarget("multiplex_w", src, dst, idx, np.full(src.size, "sym", dtype=object), w.copy())


def edge_weight(g: WeightedGraph) -> TieStrengthTarget:
    """The edge weight itself, for generic weighted networks."""
    src, dst, w, idx = _edge_rows(g)
    return TieStrengthTarget("edge_weight", src, dst, idx, np.full(src.size, "sym", dtype=object), w.copy())


def _normalized(g: WeightedGraph):
    src, dst, w, idx = _edge_rows(g)
    s = g.strength
    if w.size and (s[src].min() <= 0 or s[dst].min() <= 0):
        raise ValueError("every endpoint needs positive strength")
    return src, dst, w, idx, w / s[src], w / s[dst]


def normalized_strengths(g: WeightedGraph, orientation: str = "both") -> TieStrengthTarget:
    """Share of each endpoint's total weight spent on the tie.

    With ``orientation="both"`` each edge yields two rows, ``y_ij`` then ``y_ji``;
    ``"ij"`` keeps only the row seen from the lower-numbered endpoint.
    """
    src, dst, _, idx, y_ij, y_ji = _normalized(g)
    if orientation == "ij":
        return TieStrengthTarget("normalized_y", src, dst, idx, np.full(src.size, "ij", dtype=object), y_ij)
    if orientation != "both":
        raise ValueError(f"orientation must be 'both' or 'ij', got {orientation!r}")
    n = src.size
    rows_src = np.empty(2 * n, dtype=np.int64)
    rows_dst = np.empty(2 * n, dtype=np.int64)
    rows_src[0::2], rows_src[1::2] = src, dst
    rows_dst[0::2], rows_dst[1::2] = dst, src
    vals = np.empty(2 * n)
    vals[0::2], vals[1::2] = y_ij, y_ji
    orient = np.empty(2 * n, dtype=object)
    orient[0::2], orient[1::2] = "ij", "ji"
    return TieStrengthTarget("normalized_y", rows_src, rows_dst, np.repeat(idx, 2), orient, vals)


def averaged_strength(g: WeightedGraph) -> TieStrengthTarget:
    src, dst, _, idx, y_ij, y_ji = _normalized(g)
    return TieStrengthTarget("averaged_z", src, dst, idx, np.full(src.size, "sym", dtype=object),
                             (y_ij + y_ji) / 2.0)


def apply_transform(t: TieStrengthTarget) -> TieStrengthTarget:
    """Log-transform then center the values; the center is kept for inversion."""
    if t.transform != "none":
        raise ValueError(f"target already transformed ({t.transform})")
    if np.any(~(t.values > 0)):
        raise ValueError("log transform needs strictly positive values")
    logs = np.log(t.values)
    center = float(logs.mean())
    return replace(t, values=logs - center, transform="log_then_center", center=center)


def invert_transform(t: TieStrengthTarget, values: np.ndarray | None = None) -> np.ndarray:
    """Map values (default: the target's own) back to the original scale."""
    v = t.values if values is None else np.asarray(values, dtype=float)
    if t.transform == "none":
        return v.copy()
    return np.exp(v + t.center)
