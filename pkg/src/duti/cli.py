"""Command-line interface: debug, baseline, simulate, eval."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import bench
from .baselines import influence_rank, lnd_oracle, nn_rank
from .core import CLASSIFICATION, REGRESSION, Dataset, DomainError, DutiError
from .driver import DriverConfig, run_duti
from .evaluation import average_pr, fix_curve_from, pr_area, pr_curve
from .io import (
    InputError,
    dump_json,
    load_json,
    ranking_to_json,
    read_trusted_csv,
    read_training_csv,
    report_to_json,
    truth_to_json,
    write_rows_csv,
    write_trusted_csv,
    write_training_csv,
)
from .kernel import KernelConfig
from .learners import DEFAULT_LAMBDA_GRID, LearnerConfig, cross_validate, default_sigma_grid
from .rng import RNG_ALGORITHM

log = logging.getLogger("duti")

EXIT_OK, EXIT_NONCONVERGED, EXIT_INPUT = 0, 1, 2


def _threads(value) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be at least 1")
    return n


def _load_inputs(args):
    """Training and trusted sets with a class count covering both files."""
    task = args.task
    train = read_training_csv(args.train, task, args.n_classes)
    trusted = read_trusted_csv(args.trusted, task, args.n_classes)
    if task == CLASSIFICATION:
        k = args.n_classes or int(max(train.labels.max(), trusted.labels.max())) + 1
        train = Dataset(train.features, train.labels, task, max(k, 2))
    trusted.check_against(train)
    return train, trusted


def _learner(args, dataset: Dataset):
    """Fixed hyperparameters when both are given, else cross-validate the missing ones."""
    if args.lam is not None and args.bandwidth is not None:
        return LearnerConfig(lam=args.lam, kernel=KernelConfig(args.bandwidth)), False
    lam_grid = DEFAULT_LAMBDA_GRID if args.lam is None else (args.lam,)
    sigma_grid = default_sigma_grid(dataset.features) if args.bandwidth is None else (args.bandwidth,)
    cfg = cross_validate(dataset, lam_grid, sigma_grid, folds=args.folds, seed=args.seed)
    return cfg, True


def _config_doc(args, cfg: LearnerConfig, cv: bool) -> dict:
    return {"lambda": cfg.lam, "bandwidth": cfg.kernel.bandwidth, "cross_validated": cv,
            "folds": args.folds if cv else None, "seed": args.seed}


def _label(v, task) -> str:
    return f"{int(v)}" if task == CLASSIFICATION else f"{v:.4g}"


def cmd_debug(args) -> int:
    train, trusted = _load_inputs(args)
    cfg, cv = _learner(args, train)
    drv = DriverConfig(budget=args.budget, gamma_floor=args.gamma_floor, max_rounds=args.max_rounds)
    report = run_duti(train, trusted, cfg, drv)
    dump_json(args.out, report_to_json(report, train, _config_doc(args, cfg, cv)))
    print(f"lambda={cfg.lam:.4g} bandwidth={cfg.kernel.bandwidth:.4g} gamma0={report.gamma0:.6g} "
          f"rounds={len(report.trajectory)} stop={report.stop_reason}")
    print(f"{'index':>6} {'rank':>5} {'first_gamma':>12} {'original':>9} {'fix':>9} {'deviation':>10}")
    for r in report.ranking:
        print(f"{r.index:>6} {r.rank:>5} {r.first_gamma:>12.5g} {_label(r.original_label, train.task):>9} "
              f"{_label(r.fix, train.task):>9} {r.deviation:>10.4g}")
    if not report.converged:
        print("warning: some rounds did not converge; see the report", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_baseline(args) -> int:
    if args.method == "lnd" and (args.n_pos is None or args.n_neg is None):
        raise _UsageError("lnd needs the oracle flip counts --n-pos and --n-neg")
    train, trusted = _load_inputs(args)
    config = {"seed": args.seed}
    if args.method == "inf":
        cfg, cv = _learner(args, train)
        ranking = influence_rank(train, trusted, cfg)
        config = _config_doc(args, cfg, cv)
    elif args.method == "nn":
        ranking = nn_rank(train, trusted)
    else:
        ranking = lnd_oracle(train, trusted, (args.n_pos, args.n_neg), args.bandwidth,
                             restarts=args.restarts, seed=args.seed)
        config.update(n_pos=args.n_pos, n_neg=args.n_neg, restarts=args.restarts,
                      bandwidth=args.bandwidth)
    doc = ranking_to_json(ranking, train, args.method, config)
    dump_json(args.out, doc)
    print(f"{'index':>6} {'rank':>5} {'score':>12} {'original':>9} {'fix':>9}")
    for row in doc["ranking"]:
        fix = row.get("fix")
        fix_s = "" if fix is None else _label(fix, train.task)
        print(f"{row['index']:>6} {row['rank']:>5} {row['score']:>12.5g} "
              f"{_label(row['original_label'], train.task):>9} {fix_s:>9}")
    return EXIT_OK


def _simulate(args):
    if args.generator == "harry_potter":
        return bench.gen_harry_potter(args.seed, args.n or 100)
    if args.generator == "sine":
        return bench.gen_sine_regression(args.seed, args.n or 100)
    if args.generator == "multiclass":
        return bench.gen_noisy_relabel_multiclass(args.seed, k=args.k, n=args.n or 120,
                                                  noise_level=args.noise_level)
    if args.csv is None:
        table = bench.synthetic_loan_table(args.seed)
    else:
        if args.protected_column is None:
            raise _UsageError("--csv needs --protected-column")
        table = bench.read_tabular_csv(args.csv, args.label_column, args.protected_column,
                                       args.protected_threshold, args.protected_value)
    return bench.gen_fairness_bias(table, seed=args.seed)


def cmd_simulate(args) -> int:
    corpus = _simulate(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_training_csv(out / "train.csv", corpus.dataset)
    write_trusted_csv(out / "trusted.csv", corpus.trusted)
    dump_json(out / "truth.json", truth_to_json(corpus))
    ds = corpus.dataset
    print(f"{corpus.provenance['generator']}: n={ds.n} d={ds.d} trusted={corpus.trusted.m} "
          f"bugs={len(corpus.bug_indices)} rng={RNG_ALGORITHM} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = load_json(args.report, ("debug_report", "baseline_ranking"))
    truth = load_json(args.truth, "truth")
    if report["n"] != truth["n"] or report["task"] != truth["task"]:
        raise InputError(f"{args.truth}: truth describes a {truth['task']} set of n={truth['n']}, "
                         f"report has a {report['task']} set of n={report['n']}")
    ranking = [row["index"] for row in report["ranking"]]
    bugs = set(truth["bug_indices"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve = pr_curve(ranking, bugs)
    write_rows_csv(out / "pr.csv", ["examined", "recall", "precision"],
                   [(j, r, p) for j, (r, p) in enumerate(curve, start=1)])
    area = pr_area(average_pr([curve]))
    print(f"flags={len(ranking)} bugs={len(bugs)} found={sum(i in bugs for i in ranking)} "
          f"interpolated_pr_area={area:.4f}")
    if report.get("fix_kind") == "label":
        tol = 0.0 if report["task"] == CLASSIFICATION else args.fix_tol
        fixes = {row["index"]: row["fix"] for row in report["ranking"]}
        fc = fix_curve_from(ranking, fixes, truth["true_labels"], bugs, tol)
        write_rows_csv(out / "fixes.csv", ["flags_examined", "correct_fixes"], fc)
        print(f"correct_fixes={fc[-1][1] if fc else 0}")
    return EXIT_OK


class _UsageError(Exception):
    pass


def _add_common(p, learner=True):
    p.add_argument("--train", required=True, help="training CSV (feature_0.., label)")
    p.add_argument("--trusted", required=True, help="trusted CSV (feature_0.., label[, confidence])")
    p.add_argument("--task", choices=[REGRESSION, CLASSIFICATION], required=True)
    p.add_argument("--n-classes", type=int, default=None, help="number of classes (default: inferred)")
    p.add_argument("--out", required=True, help="output JSON path")
    if learner:
        p.add_argument("--lam", type=float, default=None, help="ridge weight (default: cross-validated)")
        p.add_argument("--bandwidth", type=float, default=None,
                       help="RBF bandwidth (default: cross-validated)")
        p.add_argument("--folds", type=int, default=10, help="cross-validation folds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duti", description="Debug training labels with trusted items")
    parser.add_argument("--seed", type=int, default=0, help="seed for folds, restarts and generators")
    parser.add_argument("--threads", type=_threads, default=None,
                        help="BLAS thread cap (default: $DUTI_THREADS or 1)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("debug", help="rank suspicious training labels and suggest fixes")
    _add_common(p)
    p.add_argument("--budget", type=int, required=True, help="examination budget b")
    p.add_argument("--gamma-floor", type=float, default=None)
    p.add_argument("--max-rounds", type=int, default=40)
    p.set_defaults(func=cmd_debug)

    p = sub.add_parser("baseline", help="rank with a comparison method")
    p.add_argument("method", choices=["inf", "nn", "lnd"])
    _add_common(p)
    p.add_argument("--n-pos", type=int, default=None, help="lnd: true bugs among positive labels")
    p.add_argument("--n-neg", type=int, default=None, help="lnd: true bugs among negative labels")
    p.add_argument("--restarts", type=int, default=10, help="lnd: local-search restarts")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("simulate", help="write a corpus with known bugs")
    p.add_argument("generator", choices=["harry_potter", "sine", "fairness", "multiclass"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=None, help="training set size")
    p.add_argument("--k", type=int, default=4, help="multiclass: number of classes")
    p.add_argument("--noise-level", type=float, default=1.0, help="multiclass: feature corruption")
    p.add_argument("--csv", default=None, help="fairness: source table (default: synthetic)")
    p.add_argument("--label-column", default="label")
    p.add_argument("--protected-column", default=None)
    p.add_argument("--protected-threshold", type=float, default=None)
    p.add_argument("--protected-value", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="PR and fix curves of a report against ground truth")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fix-tol", type=float, default=0.25,
                   help="regression: a fix is correct within this distance of the truth")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None:
        try:
            threads = _threads(os.environ.get("DUTI_THREADS", "1"))
        except (ValueError, argparse.ArgumentTypeError):
            parser.error("DUTI_THREADS must be a positive integer")
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except _UsageError as exc:
        parser.error(str(exc))
    except (DomainError, OSError) as exc:
        print(f"duti: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DutiError as exc:
        print(f"duti: error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
