"""Command-line entry point: ``python -m mtst <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as C
from . import runner
from .checkpoint import CheckpointError
from .data import DataError, FieldMap, LabelSchema, RejectBudgetExceeded
from .metrics import MAIN_KEYS, MULTI_KEYS, write_csv
from .tokenizer import TokenizerError

log = logging.getLogger("mtst")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
USER_ERRORS = (C.ConfigError, DataError, FileNotFoundError, runner.ReportError,
               CheckpointError, TokenizerError)

# dedicated flags and the config key each one sets
FLAG_KEYS = {
    "seed": "seed",
    "iterations": "selftrain.iterations",
    "tau_init": "selftrain.tau_init",
    "tau_min": "selftrain.tau_min",
    "alpha": "selftrain.alpha",
    "rule": "selftrain.acceptance_rule",
}


class UsageError(C.ConfigError):
    pass


def _config_args(p, selftrain=False):
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--preset", choices=C.PRESETS, help="named base config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. train.lr=1e-3 (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="run directory")
    if selftrain:
        p.add_argument("--iterations", type=int)
        p.add_argument("--tau-init", type=float)
        p.add_argument("--tau-min", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--rule", choices=("main_confidence", "joint_confidence"))


def build_parser():
    parser = argparse.ArgumentParser(prog="mtst", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean and validate dataset files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", required=True, help="comma-separated multi-label names")
    p.add_argument("--main-labels", default="hate,offensive,normal")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--field-map", help="JSON object mapping FieldMap attributes to columns")
    p.add_argument("--reject-budget", type=float, default=0.01)

    p = sub.add_parser("train", help="train on the labeled split")
    _config_args(p)
    p.add_argument("--resume", action="store_true", help="continue from last.npz in --out")

    p = sub.add_parser("selftrain", help="initial training plus pseudo-label iterations")
    _config_args(p, selftrain=True)

    p = sub.add_parser("evaluate", help="score a run directory")
    p.add_argument("run_dir")
    p.add_argument("--split", choices=("test", "validation"), default="test")
    p.add_argument("--threshold", default=None,
                   help="decision threshold in (0, 1), or 'sweep'")
    p.add_argument("--sweep", action="store_true", help="also write a threshold sweep CSV")
    p.add_argument("--out", help="report path (default: <run_dir>/eval_<split>.json)")

    p = sub.add_parser("baseline", help="TF-IDF + logistic regression")
    _config_args(p)

    p = sub.add_parser("ablate", help="three ablations plus the full model")
    _config_args(p, selftrain=True)

    p = sub.add_parser("report", help="aggregate MetricsReports across run directories")
    p.add_argument("run_dirs", nargs="*")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--json", help="also write rows as JSON")
    return parser


def resolve_config(args):
    if args.config and args.preset:
        raise UsageError("conflicting flags: --config and --preset")
    cfg = C.load(args.config) if args.config else C.preset(args.preset or "default")
    set_keys = {item.split("=", 1)[0].strip() for item in args.set}
    flags = {}
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if key in set_keys:
            raise UsageError(f"conflicting flags: --{attr.replace('_', '-')} and --set {key}")
        flags[key] = value
    cfg = C.apply_overrides(cfg, args.set)
    return C.with_values(cfg, **flags) if flags else cfg


# --- commands ----------------------------------------------------------------

def cmd_preprocess(args):
    schema = LabelSchema(tuple(args.labels.split(",")), tuple(args.main_labels.split(",")))
    fm = FieldMap(**json.loads(args.field_map)) if args.field_map else None
    for path in args.inputs:
        if not Path(path).is_file():
            raise FileNotFoundError(f"input not found: {path}")
    reports = runner.run_preprocess(args.inputs, args.out, schema, fm, args.format,
                                    args.reject_budget)
    print(json.dumps(reports, indent=2, sort_keys=True))


def _print_report(rep):
    print(rep.to_json())


def cmd_train(args):
    res = runner.run_train(resolve_config(args), args.out, resume=args.resume)
    if "test" in res["reports"]:
        _print_report(res["reports"]["test"])


def cmd_selftrain(args):
    res = runner.run_selftrain(resolve_config(args), args.out)
    print(json.dumps(res["summary"], indent=2))


def cmd_evaluate(args):
    threshold, sweep = args.threshold, args.sweep
    if threshold == "sweep":
        threshold, sweep = None, True
    elif threshold is not None:
        try:
            threshold = float(threshold)
        except ValueError:
            raise UsageError(f"--threshold must be a number or 'sweep', got {threshold!r}")
        if not 0.0 < threshold < 1.0:
            raise UsageError("--threshold must be in (0, 1)")
    if not Path(args.run_dir, "resolved_config.json").is_file():
        raise FileNotFoundError(f"not a run directory: {args.run_dir}")
    rep, rows = runner.run_evaluate(args.run_dir, args.split, threshold, sweep, args.out)
    _print_report(rep)
    if rows is not None:
        write_csv(sys.stdout, rows, ["threshold", "precision", "recall", "f1"])


def cmd_baseline(args):
    res = runner.run_baseline(resolve_config(args), args.out)
    if "test" in res["reports"]:
        _print_report(res["reports"]["test"])


def cmd_ablate(args):
    rows, _ = runner.run_ablate(resolve_config(args), args.out)
    write_csv(sys.stdout, rows, ["setting", "iterations_run", "n_samples", *MAIN_KEYS, *MULTI_KEYS])


def cmd_report(args):
    rows, missing = runner.collect_reports(args.run_dirs)
    for m in missing:
        print(f"missing report: {m}", file=sys.stderr)
    if args.out:
        write_csv(args.out, rows, runner.CSV_FIELDS)
    else:
        write_csv(sys.stdout, rows, runner.CSV_FIELDS)
    if args.json:
        Path(args.json).write_text(json.dumps({"rows": rows, "missing": missing}, indent=2))


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "selftrain": cmd_selftrain,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except RejectBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
