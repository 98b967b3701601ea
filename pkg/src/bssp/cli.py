"""Command-line entry point: ``bssp design|subsample|experiment|generate|fit``.

Failures print one line ``error: <CODE>: <message>`` to stderr and exit
nonzero. The resolved configuration of every run goes to stderr as JSON so
stdout stays machine-readable.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .balancing import BalanceConfig, learn_balancing_weights
from .datagen import (ClassificationGenConfig, RegressionGenConfig, gen_classification, gen_regression,
                      read_dataset_csv)
from .design import (format_design, full_factorial, gwlp, orthogonal_strength, read_design, regular_ffd,
                     template_design)
from .errors import BsspError
from .evaluation import (PRESET_CLASSIFICATION_GRID, PRESET_REGRESSION_GRID, ExperimentConfig,
                         run_experiment)
from .models import fit_model
from .subsampling import STRATEGIES, SearchConfig, ffd_subsample

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    code = "E_USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def write_atomic(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _echo_config(cmd: str, config: dict) -> None:
    print(json.dumps({"command": cmd, "version": __version__, **config}, sort_keys=True, default=str),
          file=sys.stderr)


def _parse_words(raw):
    try:
        return [[int(c) for c in w.split(",")] for w in raw]
    except ValueError:
        raise UsageError(f"words must be comma-separated column numbers, got {raw}") from None


# -- design -----------------------------------------------------------------

def cmd_design_gen(args) -> int:
    if args.full is not None:
        if args.base is not None or args.words:
            raise UsageError("--full excludes --base/--words")
        design = full_factorial(args.full)
    elif args.base is not None:
        design = regular_ffd(args.base, _parse_words(args.words or []))
    else:
        raise UsageError("design gen needs --full D or --base K [--words ...]")
    _echo_config("design gen", {"full": args.full, "base": args.base, "words": args.words,
                                "encoding": args.encoding, "out": args.out})
    text = format_design(design, args.encoding)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_design_analyze(args) -> int:
    design = read_design(args.file) if args.file else template_design()
    _echo_config("design analyze", {"file": args.file or "<bundled template>"})
    g = gwlp(design)
    out = {"m": design.m, "d": design.d, "gwlp": g.as_list(), "resolution": g.resolution,
           "strength": orthogonal_strength(design), "version": __version__}
    print(json.dumps(out, indent=2))
    return 0


# -- subsample --------------------------------------------------------------

def cmd_subsample(args) -> int:
    ds = read_dataset_csv(args.data, outcome=args.outcome)
    design = read_design(args.design) if args.design else template_design()
    search = SearchConfig(args.strategy, args.budget, args.seed)
    cfg = BalanceConfig(rho=args.rho)
    _echo_config("subsample", {"data": args.data, "design": args.design or "<bundled template>",
                               **asdict(search), "rho": args.rho, "out": args.out})
    res = ffd_subsample(ds.X, ds.y, design, search, cfg)
    out = Path(args.out)
    sub = ds.subset(res.selected_indices)
    write_atomic(out / "subdata.csv", sub.to_frame().to_csv(index=False, float_format="%.17g",
                                                            lineterminator="\n"))
    write_atomic(out / "subsample.json", res.to_json(seed=args.seed, version=__version__,
                                                    strategy=args.strategy, budget=args.budget, rho=args.rho) + "\n")
    print(json.dumps({"psi": res.psi, "matched_count": res.matched_count,
                      "evaluated": res.evaluated, "permutation": list(res.permutation)}))
    return 0


# -- experiment -------------------------------------------------------------

def _experiment_config(args) -> ExperimentConfig:
    if args.paper_regression and args.paper_classification:
        raise UsageError("choose one of --paper-regression / --paper-classification")
    task = args.task
    if args.paper_regression:
        task = "regression"
    elif args.paper_classification:
        task = "classification"
    if task is None:
        raise UsageError("experiment needs --paper-regression, --paper-classification or --task")
    grid = PRESET_REGRESSION_GRID if task == "regression" else PRESET_CLASSIFICATION_GRID
    r_test = tuple(args.r_test) if args.r_test else grid
    r_train = args.r_train if args.r_train is not None else (2.0 if task == "regression" else 0.85)
    methods = tuple(m.strip() for m in args.methods.split(",")) if args.methods else None
    kwargs = dict(task=task, r_train=r_train, r_test=r_test, replications=args.reps, seed=args.seed,
                  template=args.template, lambda_l1=args.lambda_l1, budget=args.budget,
                  strategy=args.strategy, rho=args.rho, n_train=args.n_train, n_test=args.n_test,
                  classification_error=args.classification_error)
    if methods:
        kwargs["methods"] = methods
    return ExperimentConfig(**kwargs)


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    if cfg.template is not None:
        cfg.load_template()  # surface a missing or malformed file before any work
    _echo_config("experiment", {**asdict(cfg), "out": args.out})
    report = run_experiment(cfg)
    out = Path(args.out)
    write_atomic(out / "report.csv", report.to_long_csv())
    write_atomic(out / "summary.json", report.to_json() + "\n")
    for m in cfg.methods:
        entry = report.summary()["methods"][m]
        print(f"{m}: average_error={entry['average_error']} stability_error={entry['stability_error']} "
              f"failed={entry['failed_replications']}")
    return 0


# -- generate / fit ---------------------------------------------------------

def cmd_generate(args) -> int:
    if args.task == "regression":
        cfg = RegressionGenConfig(bias_rate=args.rate if args.rate is not None else 2.0, n=args.n, seed=args.seed)
        ds = gen_regression(cfg)
    else:
        cfg = ClassificationGenConfig(bias_rate=args.rate if args.rate is not None else 0.85, n=args.n,
                                      seed=args.seed)
        ds = gen_classification(cfg)
    _echo_config("generate", {"task": args.task, **asdict(cfg), "out": args.out})
    out = Path(args.out)
    write_atomic(out, ds.to_frame().to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    write_atomic(out.with_suffix(".json"), ds.sidecar() + "\n")
    return 0


def cmd_fit(args) -> int:
    ds = read_dataset_csv(args.data, outcome=args.outcome)
    family = args.family
    _echo_config("fit", {"data": args.data, "family": family, "lambda": args.lambda_l1,
                         "weights": args.weights, "seed": args.seed})
    w = None
    if args.weights == "gbr":
        w = learn_balancing_weights(ds.X, seed=args.seed).values
    fit = fit_model(ds.X, ds.y, w, family, args.lambda_l1, args.seed)
    data = fit.to_dict()
    data.update(features=ds.feature_names, seed=args.seed, version=__version__)
    text = json.dumps(data, indent=2) + "\n"
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# -- parser -----------------------------------------------------------------

def _add_search_flags(p):
    p.add_argument("--budget", type=int, default=10_000, help="max permutations evaluated (default 10000)")
    p.add_argument("--strategy", choices=STRATEGIES, default="random-shuffle")
    p.add_argument("--rho", type=float, default=0.9, help="confounding weight decay (default 0.9)")
    p.add_argument("--seed", type=int, default=0)


def _add_lambda_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lambda_l1", type=float, default=None, help="fixed L1 penalty")
    g.add_argument("--cv", dest="lambda_l1", action="store_const", const=None,
                   help="choose the penalty by 5-fold cross-validation (default)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bssp", description="Balance-subsampled stable prediction.")
    parser.add_argument("--version", action="version", version=f"bssp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    design = sub.add_parser("design", help="generate or analyze two-level designs")
    dsub = design.add_subparsers(dest="action", required=True, parser_class=_Parser)
    gen = dsub.add_parser("gen", help="write a full factorial or regular fractional design")
    gen.add_argument("--full", type=int, metavar="D", help="2^D full factorial")
    gen.add_argument("--base", type=int, metavar="K", help="number of base factors")
    gen.add_argument("--words", nargs="*", metavar="I,J,...",
                     help="one generated column per word, 1-based base-factor indices")
    gen.add_argument("--encoding", choices=("pm1", "zeroone"), default="pm1")
    gen.add_argument("--out", help="output file (default stdout)")
    gen.set_defaults(func=cmd_design_gen)
    ana = dsub.add_parser("analyze", help="print m, d, GWLP, resolution and strength as JSON")
    ana.add_argument("file", nargs="?", help="design file (default: bundled 128-run template)")
    ana.set_defaults(func=cmd_design_analyze)

    ss = sub.add_parser("subsample", help="select design-matched subdata from a binary CSV")
    ss.add_argument("data", help="CSV with 0/1 features, outcome last (or --outcome)")
    ss.add_argument("--design", help="design file (default: bundled template)")
    ss.add_argument("--outcome", help="outcome column name")
    _add_search_flags(ss)
    ss.add_argument("--out", required=True, help="output directory")
    ss.set_defaults(func=cmd_subsample)

    ex = sub.add_parser("experiment", help="multi-environment replication study")
    preset = ex.add_mutually_exclusive_group()
    preset.add_argument("--paper-regression", action="store_true",
                        help="regression, r_train=2, the 10-point test grid")
    preset.add_argument("--paper-classification", action="store_true",
                        help="classification, r_train=0.85, test grid 0.1..1.0")
    ex.add_argument("--task", choices=("regression", "classification"))
    ex.add_argument("--r-train", type=float)
    ex.add_argument("--r-test", type=float, nargs="+")
    ex.add_argument("--reps", type=int, default=50)
    ex.add_argument("--methods", help="comma-separated subset of baseline,gbr,bssp")
    ex.add_argument("--template", help="design file for bssp (default: bundled template)")
    ex.add_argument("--n-train", type=int, default=2000)
    ex.add_argument("--n-test", type=int, default=2000)
    ex.add_argument("--classification-error", choices=("probability", "label"), default="probability")
    _add_lambda_flags(ex)
    _add_search_flags(ex)
    ex.add_argument("--out", required=True, help="output directory for report.csv and summary.json")
    ex.set_defaults(func=cmd_experiment)

    gn = sub.add_parser("generate", help="draw one synthetic environment")
    gn.add_argument("--task", choices=("regression", "classification"), default="regression")
    gn.add_argument("--rate", type=float, help="bias rate r")
    gn.add_argument("--n", type=int, default=2000)
    gn.add_argument("--seed", type=int, default=0)
    gn.add_argument("--out", required=True, help="output CSV (a .json sidecar is written next to it)")
    gn.set_defaults(func=cmd_generate)

    ft = sub.add_parser("fit", help="fit a penalized linear or logistic model")
    ft.add_argument("data")
    ft.add_argument("--outcome")
    ft.add_argument("--family", choices=("linear", "logistic"), default="linear")
    ft.add_argument("--weights", choices=("none", "gbr"), default="none")
    ft.add_argument("--seed", type=int, default=0)
    _add_lambda_flags(ft)
    ft.add_argument("--out", help="model JSON (default stdout)")
    ft.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {UsageError.code}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BsspError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error: E_IO: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
