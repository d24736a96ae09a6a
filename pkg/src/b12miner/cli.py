"""Command-line interface.

Subcommands mirror the pipeline stages (synth, classify, profiles, validate,
fit, report), plus `run` for the whole flow and `stats` for ad-hoc checks on
CSV columns.  Flags override config-file values.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .errors import B12MinerError, PipelineError
from .pipeline import (
    PipelineConfig,
    load_pipeline_config,
    run_pipeline,
    stage_classify,
    stage_fit,
    stage_profiles,
    stage_report,
    stage_synth,
    stage_validate,
)


def _add_data_flags(p: argparse.ArgumentParser, names) -> None:
    for name in names:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None,
                       help=f"{name} data file (default: packaged)")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="b12miner",
                                description="Recipe-search B12 intake mining pipeline")
    p.add_argument("--version", action="version", version=f"b12miner {__version__}")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--threads", type=int, default=None, help="worker threads")
    p.add_argument("--seed", type=int, default=None, help="override synth seed")
    p.add_argument("--out-dir", dest="out_dir", default=None, help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic log with ground truth")
    sp.add_argument("--out-log", default=None, help="log output (default out/log.jsonl)")
    sp.add_argument("--out-truth", default=None, help="truth output (default out/truth.jsonl)")
    _add_data_flags(sp, ["recipes", "nutrients", "synonyms"])

    cp = sub.add_parser("classify", help="classify query logs")
    cp.add_argument("--log", action="append", dest="logs", default=None,
                    help="input log (repeatable)")
    cp.add_argument("--format", dest="log_format", choices=("jsonl", "tsv"), default=None)
    cp.add_argument("--theta", type=float, default=None, help="title containment threshold")
    cp.add_argument("--labeled", default=None,
                    help="labelled (query,title) CSV: run the precision harness instead")
    _add_data_flags(cp, ["recipes", "targets", "controls", "synonyms"])

    pp = sub.add_parser("profiles", help="aggregate classified records per user")
    pp.add_argument("--in", dest="classified", default=None, help="classified JSONL")
    pp.add_argument("--out", dest="profiles_out", default=None)
    pp.add_argument("--estimate-mode", dest="estimate_mode",
                    choices=("mean", "sum"), default=None)

    vp = sub.add_parser("validate", help="regional expenditure validation")
    vp.add_argument("--profiles", default=None, help="profiles JSONL")
    _add_data_flags(vp, ["expenditure", "costs", "consumption", "food_groups"])

    fp = sub.add_parser("fit", help="fit per-term models")
    fp.add_argument("--profiles", default=None, help="profiles JSONL")
    fp.add_argument("--threshold", type=int, default=None, help="min askers per term")
    fp.add_argument("--cohort-filter", dest="cohort_filter",
                    choices=("unaware", "all"), default=None)
    fp.add_argument("--cob12", dest="cob12_method",
                    choices=("pearson", "spearman"), default=None)
    _add_data_flags(fp, ["targets", "controls", "nutrients"])

    rp = sub.add_parser("report", help="render report bundle from results")
    rp.add_argument("--results", default=None, help="results CSV")
    rp.add_argument("--profiles", default=None, help="profiles JSONL")
    _add_data_flags(rp, ["nutrients", "indications"])

    sub.add_parser("run", help="run every stage from the config")

    tp = sub.add_parser("stats", help="ad-hoc statistics on CSV columns")
    tp.add_argument("statistic", choices=("spearman", "pearson", "ranksum"))
    tp.add_argument("--csv", required=True)
    tp.add_argument("--x", required=True, help="column name")
    tp.add_argument("--y", required=True, help="column name (second sample for ranksum)")
    return p


def _overrides_from_args(args) -> dict:
    keys = ("out_dir", "logs", "log_format", "recipes", "targets", "controls",
            "nutrients", "expenditure", "costs", "consumption", "indications",
            "food_groups", "synonyms", "theta", "estimate_mode", "threshold",
            "cohort_filter", "cob12_method", "threads", "seed")
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _cmd_stats(args) -> int:
    from .stats import pearson, ranksum, spearman

    xs, ys = [], []
    with Path(args.csv).open(newline="") as f:
        rows = [line for line in f if not line.startswith("#")]
    for row in csv.DictReader(rows):
        if row.get(args.x, "") != "":
            xs.append(float(row[args.x]))
        if row.get(args.y, "") != "":
            ys.append(float(row[args.y]))
    if args.statistic == "ranksum":
        r = ranksum(xs, ys)
        print(json.dumps({"statistic": r.statistic, "p": r.p_value,
                          "n_a": r.n_a, "n_b": r.n_b, "exact": r.exact}))
    else:
        fn = spearman if args.statistic == "spearman" else pearson
        if len(xs) != len(ys):
            print("error: x and y must have equal length", file=sys.stderr)
            return 2
        r = fn(xs, ys)
        print(json.dumps({"coefficient": r.coefficient, "p": r.p_value, "n": r.n}))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "stats":
            return _cmd_stats(args)

        cfg = load_pipeline_config(args.config, _overrides_from_args(args))

        if args.command == "run":
            bundle = run_pipeline(cfg)
            for name, path in bundle.items():
                print(f"{name}: {path}")
            return 0

        if args.command == "synth":
            log_path, truth_path = stage_synth(cfg)
            dest_log = Path(args.out_log) if args.out_log else log_path
            dest_truth = Path(args.out_truth) if args.out_truth else truth_path
            if dest_log != log_path:
                dest_log.write_bytes(log_path.read_bytes())
            if dest_truth != truth_path:
                dest_truth.write_bytes(truth_path.read_bytes())
            print(f"log: {dest_log}\ntruth: {dest_truth}")
            return 0

        if args.command == "classify":
            if args.labeled:
                from .classify import evaluate_matcher_precision
                from .corpus import load_recipe_corpus, load_synonyms

                corpus = load_recipe_corpus(cfg.recipes, load_synonyms(cfg.synonyms))
                report = evaluate_matcher_precision(args.labeled, corpus,
                                                    cfg.matcher_config())
                print(json.dumps({
                    "precision": report.precision, "recall": report.recall,
                    "labeled": report.n_labeled, "emitted": report.n_emitted,
                    "correct": report.n_correct,
                }))
                return 0
            path = stage_classify(cfg)
            print(f"classified: {path}")
            return 0

        if args.command == "profiles":
            src = Path(args.classified) if args.classified else None
            path = stage_profiles(cfg, src)
            if args.profiles_out and Path(args.profiles_out) != path:
                Path(args.profiles_out).write_bytes(path.read_bytes())
                path = Path(args.profiles_out)
            print(f"profiles: {path}")
            return 0

        if args.command == "validate":
            src = Path(args.profiles) if args.profiles else None
            path = stage_validate(cfg, src)
            print(f"validation: {path}")
            return 0

        if args.command == "fit":
            src = Path(args.profiles) if args.profiles else None
            path = stage_fit(cfg, src)
            print(f"results: {path}")
            return 0

        if args.command == "report":
            results = Path(args.results) if args.results else None
            prof = Path(args.profiles) if args.profiles else None
            for path in stage_report(cfg, results, prof):
                print(f"report: {path}")
            return 0

        raise B12MinerError(f"unknown command {args.command}")
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except B12MinerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
