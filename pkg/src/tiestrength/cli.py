"""Command-line interface.

Every subcommand works on a run directory (``--workdir``). ``ingest`` creates
its ``config.json``; later subcommands reuse it, overridden by any flags given.
``pipeline`` runs every stage in one go.

Exit codes: 0 success, 2 parse/usage error, 3 validation error,
4 numerical failure, 5 working directory locked, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .graph import GraphError
from .impute import ImputationError
from .ingest import ParseError
from .learn import ConvergenceError, RankDeficientError, SchemaError
from .pipeline import (
    DATASET_KINDS, EVAL_MODES, LEARNERS, STAGES, TARGETS, Y_ORIENTATIONS, ConfigError, LockError, RunConfig,
    StageError, Workdir, run_pipeline, run_stage, save_config,
)

EXIT_OK, EXIT_OTHER, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_LOCKED = 0, 1, 2, 3, 4, 5


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ParseError):
        return EXIT_PARSE
    if isinstance(exc, (ConvergenceError, RankDeficientError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(exc, LockError):
        return EXIT_LOCKED
    if isinstance(exc, (ValueError, GraphError, SchemaError, ConfigError, ImputationError, OSError, KeyError)):
        return EXIT_VALIDATION
    return EXIT_OTHER


def _add_input_flags(p):
    g = p.add_argument_group("inputs")
    g.add_argument("--kind", choices=DATASET_KINDS, help="dataset kind")
    g.add_argument("--edges", help="edge list CSV: src,dst,weight")
    g.add_argument("--multiplex", help="multiplex CSV: src,dst,layer")
    g.add_argument("--layers", help="layer manifest CSV: layer,name")
    g.add_argument("--cdr", help="call records CSV: date,caller,callee,duration_min,calls,sms,mms")
    g.add_argument("--attributes", help="attributes CSV: node,age,sex,zip,household")


def _add_fit_flags(p):
    g = p.add_argument_group("modeling")
    g.add_argument("--learners", nargs="+", choices=LEARNERS)
    g.add_argument("--model", dest="models", nargs="+", type=int, choices=(1, 2, 3),
                   help="feature set: 1 all, 2 without weighted overlap, 3 without overlap")
    g.add_argument("--target", dest="targets", nargs="+", choices=TARGETS)
    g.add_argument("--sample-edges", type=int, metavar="N", help="model a uniform sample of N edges")
    g.add_argument("--test-fraction", type=float)
    g.add_argument("--cv-folds", type=int)
    g.add_argument("--eval-mode", choices=EVAL_MODES, help="evaluate on held-out rows (default) or training rows")
    g.add_argument("--y-orientation", choices=Y_ORIENTATIONS,
                   help="target y: both rows per edge (default) or only y_ij with src < dst")


def _add_common(p):
    p.add_argument("--workdir", default=".", help="run directory (default: current)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-trees", type=int)
    p.add_argument("--n-jobs", type=int, help="threads for forest fitting; results do not depend on it")
    p.add_argument("--complete-case-only", action="store_const", const=True, default=None,
                   help="skip imputation and keep only edges with complete attributes")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tiestrength", description="Bow-tie tie-strength features and models.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("ingest", "read inputs, remove isolated ties, write graph.csv, nodemap.csv, attributes.csv"),
        ("features", "compute bow-tie features for every edge"),
        ("impute", "fill missing age, sex and paired zip with forests"),
        ("fit", "fit the selected learners"),
        ("evaluate", "residuals, accuracy curves, importances, coefficients"),
        ("report", "write report.json, report.md and plots"),
        ("pipeline", "run every stage"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name in ("ingest", "pipeline"):
            _add_input_flags(p)
        if name in ("fit", "evaluate", "pipeline"):
            _add_fit_flags(p)
    return ap


def _config(args) -> RunConfig:
    base = {}
    path = os.path.join(args.workdir, "config.json")
    if args.command not in ("ingest", "pipeline") and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            base = json.load(fh)
    elif args.command not in ("ingest", "pipeline"):
        raise ConfigError(f"{path} not found; run 'tiestrength ingest' first")
    base.pop("config_hash", None)
    for k, v in vars(args).items():
        if k in ("command", "verbose") or v is None:
            continue
        base[k] = v
    base["workdir"] = args.workdir
    return RunConfig.from_dict(base).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "pipeline":
            report = run_pipeline(cfg)
            print(f"report: {os.path.join(cfg.workdir, 'report.json')} ({len(report['models'])} models, "
                  f"config {report['config_hash']})")
            return EXIT_OK
        wd = Workdir(cfg)
        with wd.lock():
            save_config(cfg, wd)
            run_stage(cfg, args.command, wd)
        print(f"{args.command}: done ({cfg.workdir})")
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        if code == EXIT_OTHER:
            raise
        return code


if __name__ == "__main__":
    sys.exit(main())
