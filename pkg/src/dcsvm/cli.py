"""dcsvm command line: train, predict, bench, bound-check, sv-report.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 guard refusal.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .clustering import GuardError
from .data_io import ModelFormatError, ParseError, load_libsvm, load_model, save_model
from .dcsvm import DCConfig, predict_early, predict_exact, train, write_trace_csv
from .diagnostics import (BOUND_GUARD, bound_sweep, sv_identification, write_bound_csv, write_sv_csv)
from .kernel import KernelSpec
from .solver import SolverConfig

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_GUARD = 0, 1, 2, 3

def warn(msg: str):
    print(f"dcsvm: warning: {msg}", file=sys.stderr)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_kernel_flags(p):
    p.add_argument("--kernel", default="rbf", help="rbf, poly or linear (default rbf)")
    p.add_argument("--gamma", type=float, help="kernel width; required for rbf and poly")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--coef0", type=float, default=0.0)
    p.add_argument("--cost", type=float, default=1.0, help="box constraint C")
    p.add_argument("--epsilon", type=float, default=1e-3, help="KKT tolerance")


def _add_dc_flags(p):
    p.add_argument("--levels", type=int, default=5, help="number of levels including the top (l_max + 1)")
    p.add_argument("--branch", type=int, default=4, help="clusters per split k")
    p.add_argument("--sample", type=int, default=1000, help="kmeans sample size m")
    p.add_argument("--workers", type=int, help="parallel subproblem solves (env DCSVM_WORKERS)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cache-mb", type=float, default=100.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcsvm", description="Divide-and-conquer kernel SVM.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    _add_kernel_flags(p)
    _add_dc_flags(p)
    p.add_argument("--early", action="store_true",
                   help="stop before the global solve and store an early-prediction model")
    p.add_argument("--early-level", type=int,
                   help="level to stop at with --early (default: the level with 64 clusters)")
    p.add_argument("--trace", help="write the training trace CSV here")
    p.add_argument("data")
    p.add_argument("-o", "--output", required=True, help="model file")

    p = sub.add_parser("predict", help="label a test file")
    p.add_argument("--early-predict", action="store_true", help="use the stored nearest-cluster model")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("-o", "--output", required=True, help="one predicted label per line")

    p = sub.add_parser("bench", help="train and write the trace CSV")
    _add_kernel_flags(p)
    _add_dc_flags(p)
    p.add_argument("data")
    p.add_argument("-o", "--output", required=True, help="trace CSV")

    p = sub.add_parser("bound-check", help="gap vs. cross-cluster kernel mass bound")
    _add_kernel_flags(p)
    p.add_argument("--k", default="1,2,4,8,16", help="comma-separated cluster counts")
    p.add_argument("--sample", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--guard", type=int, default=BOUND_GUARD)
    p.add_argument("data")
    p.add_argument("-o", "--output", required=True, help="bound CSV")

    p = sub.add_parser("sv-report", help="support-vector precision/recall per level")
    _add_kernel_flags(p)
    _add_dc_flags(p)
    p.add_argument("--guard", type=int, default=BOUND_GUARD)
    p.add_argument("data")
    p.add_argument("-o", "--output", required=True, help="SV report CSV")
    return parser


def _kernel(args) -> KernelSpec:
    family = args.kernel.lower()
    if family in ("rbf", "poly", "polynomial") and args.gamma is None:
        raise UsageError(f"--gamma is required for the {family} kernel (e.g. --gamma 2)")
    try:
        return KernelSpec(family, args.gamma if args.gamma is not None else 1.0, args.degree, args.coef0)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _workers(args) -> int:
    if args.workers is not None:
        w = args.workers
    else:
        env = os.environ.get("DCSVM_WORKERS", "1")
        try:
            w = int(env)
        except ValueError:
            raise UsageError(f"DCSVM_WORKERS must be an integer, got {env!r}") from None
    if w < 1:
        raise UsageError("--workers must be >= 1")
    return w


def _solver(args) -> SolverConfig:
    try:
        return SolverConfig(C=args.cost, tol=args.epsilon, cache_bytes=int(args.cache_mb * 2**20))
    except ValueError as e:
        raise UsageError(str(e)) from None


def _dc_config(args, early=None) -> DCConfig:
    if args.levels < 1:
        raise UsageError("--levels must be >= 1")
    l_max = args.levels - 1
    if early == -1:
        if l_max < 1:
            raise UsageError("--early needs --levels >= 2")
        early = min(DCConfig.early_level_for(args.branch), l_max)
    try:
        return DCConfig(_solver(args), k=args.branch, l_max=l_max, m=args.sample, early_stop_level=early,
                        seed=args.seed, workers=_workers(args))
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_train(args) -> int:
    spec = _kernel(args)
    early = None
    if args.early:
        early = args.early_level if args.early_level is not None else -1
    elif args.early_level is not None:
        raise UsageError("--early-level requires --early")
    config = _dc_config(args, early)
    ds = load_libsvm(args.data)
    result = train(ds, spec, config)
    save_model(result.model, args.output)
    if args.trace:
        write_trace_csv(result.trace, args.trace)
    last = result.trace[-1]
    msg = (f"objective = {last.objective:.10g}, nSV = {result.model.n_sv}, "
           f"time = {result.train_time:.3f}s")
    if result.stopped_level is not None:
        msg += f", early stop at level {result.stopped_level} ({last.clusters} clusters)"
    print(msg)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    ds = load_libsvm(args.data)
    if ds.n and ds.d > model.n_features:
        warn(f"test data has {ds.d} features but the model was trained on {model.n_features}")
    if args.early_predict and model.early is None:
        warn("model has no early-prediction block; using exact prediction")
    if not args.early_predict and model.early is not None:
        warn("early model used without --early-predict; predicting with all stored support vectors")
    if args.early_predict and model.early is not None:
        labels, _ = predict_early(model, ds.X)
    else:
        labels, _ = predict_exact(model, ds.X)
    with open(args.output, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)
    if ds.n:
        correct = int(np.sum(labels == ds.y))
        print(f"Accuracy: {100.0 * correct / ds.n:.2f}% ({correct}/{ds.n})")
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = _kernel(args)
    config = _dc_config(args)
    ds = load_libsvm(args.data)
    result = train(ds, spec, config)
    write_trace_csv(result.trace, args.output)
    return EXIT_OK


def _k_list(text: str) -> list[int]:
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--k must be comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise UsageError("--k needs at least one value >= 1")
    return ks


def cmd_bound_check(args) -> int:
    spec = _kernel(args)
    ks = _k_list(args.k)
    workers = _workers(args)
    if args.cost <= 0:
        raise UsageError("--cost must be > 0")
    ds = load_libsvm(args.data)
    if ds.n > args.guard:
        raise GuardError(f"bound-check needs the exact optimum; n={ds.n} exceeds guard {args.guard}")
    if max(ks) > ds.n:
        raise UsageError(f"k={max(ks)} exceeds the {ds.n} samples")
    reports = bound_sweep(ds, spec, args.cost, ks, seed=args.seed, m=args.sample, guard=args.guard,
                          workers=workers)
    write_bound_csv(reports, args.output)
    bad = 0
    for r in reports:
        for v in r.violations():
            print(f"dcsvm: k={r.k}: invariant {v} violated", file=sys.stderr)
            bad += 1
    return EXIT_RUNTIME if bad else EXIT_OK


def cmd_sv_report(args) -> int:
    spec = _kernel(args)
    config = _dc_config(args)
    ds = load_libsvm(args.data)
    reports = sv_identification(ds, spec, args.cost, config, guard=args.guard)
    write_sv_csv(reports, args.output)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "bench": cmd_bench,
            "bound-check": cmd_bound_check, "sv-report": cmd_sv_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("dcsvm: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"{e}\nRun 'dcsvm --help' or 'dcsvm <command> --help' for usage.", file=sys.stderr)
        return EXIT_USAGE
    except GuardError as e:
        print(f"dcsvm: refused: {e}", file=sys.stderr)
        return EXIT_GUARD
    except (OSError, ParseError, ModelFormatError, ValueError, RuntimeError) as e:
        print(f"dcsvm: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
