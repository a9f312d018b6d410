"""CSV readers and writers for edge lists, multiplex surveys, attributes and call records.

External node labels are remapped to dense ids ``0..N-1``. Labels are sorted
numerically when they all parse as integers, lexicographically otherwise;
``nodemap.csv`` records the mapping.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict

import numpy as np

from .graph import AttributeTable, N_LAYERS, WeightedGraph, build_graph, union_multiplex

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed input file."""


def _rows(path, required: tuple[str, ...]):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    with fh:
        rd = csv.DictReader(fh)
        header = rd.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"{path}: missing columns {missing} (header: {header})")
        for lineno, row in enumerate(rd, start=2):
            if None in row.values() or None in row:
                raise ParseError(f"{path}:{lineno}: wrong number of fields")
            yield lineno, row


def sort_labels(labels) -> list[str]:
    labels = set(labels)
    try:
        return sorted(labels, key=int)
    except ValueError:
        return sorted(labels)


def _remap(labels: list[str]) -> dict[str, int]:
    return {lab: k for k, lab in enumerate(labels)}


def _float(path, lineno, name, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: {name} {text!r} is not a number") from None


def _attribute_labels(path) -> list[str]:
    return [row["node"].strip() for _, row in _rows(path, ("node",))]


def read_edge_list(path, attributes_path=None) -> tuple[WeightedGraph, list[str]]:
    """``src,dst,weight`` CSV; repeated pairs are summed."""
    raw = []
    for lineno, row in _rows(path, ("src", "dst", "weight")):
        raw.append((row["src"].strip(), row["dst"].strip(), _float(path, lineno, "weight", row["weight"]), lineno))
    labels = {s for s, *_ in raw} | {d for _, d, *_ in raw}
    if attributes_path is not None:
        labels |= set(_attribute_labels(attributes_path))
    labels = sort_labels(labels)
    ids = _remap(labels)
    for s, d, w, lineno in raw:
        if s == d:
            raise ParseError(f"{path}:{lineno}: self-loop on {s!r}")
        if not w > 0:
            raise ParseError(f"{path}:{lineno}: nonpositive weight {w}")
    edges = [(ids[s], ids[d], w) for s, d, w, _ in raw]
    return build_graph(edges, node_count=len(labels)), labels


def read_layer_manifest(path) -> dict[str, int]:
    """``layer,name`` CSV mapping layer names to indices 0..11."""
    out = {}
    for lineno, row in _rows(path, ("layer", "name")):
        try:
            k = int(row["layer"])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: layer {row['layer']!r} is not an integer") from None
        if not 0 <= k < N_LAYERS:
            raise ParseError(f"{path}:{lineno}: layer {k} outside 0..{N_LAYERS - 1}")
        out[row["name"].strip()] = k
    return out


def read_multiplex(path, manifest_path=None, attributes_path=None) -> tuple[WeightedGraph, list[str]]:
    """``src,dst,layer`` CSV; ``layer`` is an index or a name from the manifest."""
    manifest = read_layer_manifest(manifest_path) if manifest_path else {}
    raw = []
    for lineno, row in _rows(path, ("src", "dst", "layer")):
        lay = row["layer"].strip()
        if lay in manifest:
            k = manifest[lay]
        else:
            try:
                k = int(lay)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: unknown layer {lay!r}") from None
        if not 0 <= k < N_LAYERS:
            raise ParseError(f"{path}:{lineno}: layer {k} outside 0..{N_LAYERS - 1}")
        s, d = row["src"].strip(), row["dst"].strip()
        if s == d:
            raise ParseError(f"{path}:{lineno}: self-loop on {s!r}")
        raw.append((s, d, k))
    labels = {s for s, _, _ in raw} | {d for _, d, _ in raw}
    if attributes_path is not None:
        labels |= set(_attribute_labels(attributes_path))
    labels = sort_labels(labels)
    ids = _remap(labels)
    return union_multiplex([(ids[s], ids[d], k) for s, d, k in raw], node_count=len(labels)), labels


def read_cdr(path, attributes_path=None) -> tuple[WeightedGraph, list[str]]:
    """Daily call records ``date,caller,callee,duration_min,calls,sms,mms``.

    Call duration is summed per unordered pair; pairs with zero total
    duration (text-only contact) do not become edges.
    """
    totals = defaultdict(float)
    seen = set()
    cols = ("date", "caller", "callee", "duration_min", "calls", "sms", "mms")
    for lineno, row in _rows(path, cols):
        a, b = row["caller"].strip(), row["callee"].strip()
        dur = _float(path, lineno, "duration_min", row["duration_min"])
        if dur < 0:
            raise ParseError(f"{path}:{lineno}: negative duration {dur}")
        if a == b:
            raise ParseError(f"{path}:{lineno}: caller equals callee {a!r}")
        seen.update((a, b))
        totals[(a, b) if a < b else (b, a)] += dur
    labels = set(seen)
    if attributes_path is not None:
        labels |= set(_attribute_labels(attributes_path))
    labels = sort_labels(labels)
    ids = _remap(labels)
    edges = [(ids[a], ids[b], w) for (a, b), w in sorted(totals.items()) if w > 0]
    return build_graph(edges, node_count=len(labels)), labels


def read_attributes(path, labels: list[str]) -> AttributeTable:
    """``node,age,sex,zip,household`` CSV; empty cells are missing.

    Rows for nodes not in ``labels`` are ignored.
    """
    ids = _remap(labels)
    n = len(labels)
    age = [None] * n
    sex = [None] * n
    zips = [None] * n
    hh = [None] * n
    unknown = 0
    for lineno, row in _rows(path, ("node",)):
        k = ids.get(row["node"].strip())
        if k is None:
            unknown += 1
            continue
        a = (row.get("age") or "").strip()
        age[k] = _float(path, lineno, "age", a) if a else None
        s = (row.get("sex") or "").strip()
        if s and s not in ("M", "F"):
            raise ParseError(f"{path}:{lineno}: sex must be M or F, got {s!r}")
        sex[k] = s or None
        zips[k] = (row.get("zip") or "").strip() or None
        hh[k] = (row.get("household") or "").strip() or None
    if unknown:
        logger.info("%s: ignored %d attribute rows for nodes outside the graph", path, unknown)
    return AttributeTable.from_columns(n, age=age, sex=sex, zip=zips, household=hh)


def write_nodemap(path, labels: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("node", "label"))
        wr.writerows(enumerate(labels))


def read_nodemap(path) -> list[str]:
    rows = list(_rows(path, ("node", "label")))
    labels = [row["label"] for _, row in rows]
    if [int(row["node"]) for _, row in rows] != list(range(len(labels))):
        raise ParseError(f"{path}: node ids must be 0..N-1 in order")
    return labels


def write_graph(path, g: WeightedGraph) -> None:
    src, dst, w = g.edges()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("src", "dst", "weight"))
        for s, d, x in zip(src.tolist(), dst.tolist(), w.tolist()):
            wr.writerow((s, d, repr(x)))


def read_graph(path, node_count: int) -> WeightedGraph:
    """Read a dense-id edge list written by :func:`write_graph`."""
    edges = [(int(r["src"]), int(r["dst"]), _float(path, ln, "weight", r["weight"]))
             for ln, r in _rows(path, ("src", "dst", "weight"))]
    return build_graph(edges, node_count=node_count)


def write_attributes(path, attrs: AttributeTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("node", "age", "sex", "zip", "household"))
        for k in range(len(attrs)):
            a = attrs.age[k]
            s = int(attrs.sex[k])
            wr.writerow((k, "" if np.isnan(a) else repr(float(a)), "" if s < 0 else "MF"[s],
                         attrs.zip[k] or "", attrs.household[k] or ""))


def read_dense_attributes(path, node_count: int) -> AttributeTable:
    return read_attributes(path, [str(k) for k in range(node_count)])
