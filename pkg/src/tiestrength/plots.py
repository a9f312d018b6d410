"""SVG accuracy curves and importance bar charts, each with its data as CSV.

Output is byte-stable: the SVG id salt is fixed and no creation date is written.
"""

from __future__ import annotations

import csv
import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

_RC = {"svg.hashsalt": "tiestrength", "svg.fonttype": "path", "font.size": 9}


def _meta(report: dict) -> dict:
    return {"Date": None, "Creator": "tiestrength",
            "Description": f"config_hash={report.get('config_hash', '')} seed={report.get('seed', '')}"}


def _save(fig, path, report):
    fig.savefig(path, format="svg", metadata=_meta(report))
    plt.close(fig)


def plot_accuracy(report: dict, path: str) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 4))
        for m in report["models"]:
            acc = m["accuracy"]
            ax.plot(acc["thresholds"], acc["fraction"], label=m["id"], linewidth=1.2)
        ax.set_xlabel("absolute difference from observed tie strength")
        ax.set_ylabel("fraction of ties within")
        ax.set_ylim(0, 1.02)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7, loc="lower right")
        fig.tight_layout()
        _save(fig, path, report)


def plot_importance(report: dict, model: dict, path: str) -> None:
    imp = model["importance"]
    names, vals = imp["features"], imp["values"]
    order = sorted(range(len(vals)), key=lambda k: vals[k])
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 0.22 * len(names) + 1.2))
        ax.barh([names[k] for k in order], [vals[k] for k in order], color="0.55")
        ax.axvline(imp["null"], color="black", linewidth=1.0)
        ax.set_xlabel("importance")
        ax.set_title(model["id"], fontsize=9)
        fig.tight_layout()
        _save(fig, path, report)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def emit_plots(report: dict, outdir: str | os.PathLike) -> list[str]:
    """Write ``accuracy.svg``/``.csv`` and one ``importance_<model>.svg``/``.csv`` per model with importances.

    Returns the paths written; an empty model set writes nothing and logs a notice.
    """
    models = report.get("models") or []
    if not models:
        logger.warning("report has no models; no plots written")
        return []
    os.makedirs(outdir, exist_ok=True)
    out = []
    acc_csv = os.path.join(outdir, "accuracy.csv")
    _write_csv(acc_csv, ("model", "threshold", "fraction"),
               [(m["id"], repr(t), repr(f)) for m in models
                for t, f in zip(m["accuracy"]["thresholds"], m["accuracy"]["fraction"])])
    acc_svg = os.path.join(outdir, "accuracy.svg")
    plot_accuracy(report, acc_svg)
    out += [acc_svg, acc_csv]
    for m in models:
        if not m.get("importance"):
            continue
        imp = m["importance"]
        csv_path = os.path.join(outdir, f"importance_{m['id']}.csv")
        _write_csv(csv_path, ("feature", "importance", "null_importance"),
                   [(f, repr(v), repr(imp["null"])) for f, v in zip(imp["features"], imp["values"])])
        svg_path = os.path.join(outdir, f"importance_{m['id']}.svg")
        plot_importance(report, m, svg_path)
        out += [svg_path, csv_path]
    return out
