"""Command-line interface: ``mmbn {gen-data,train,eval,experiment,report}``.

Exit codes: 0 success, 1 validation error (bad arguments, files or data),
2 runtime error (solver or other failure).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import barrier
from .dataset import read_csv, write_csv
from .errors import (BadBeta, BadName, BadSize, DataError, InvalidAssignment, InvalidLabelVector,
                     MissingEvidence, MMBNError, NotNormalized, NotRenormalizable, NotSubnormalized,
                     StructureError)
from .experiment import (COLUMNS, TRAINERS, ExperimentPlan, PlanError, evaluate, run_experiment, summarize,
                         train, write_results)
from .io import load_structure, metadata_path, read_params, write_metadata, write_params
from .synth import GENERATOR_ID, ancestral_sample, make_rng, skewed_params

log = logging.getLogger("mmbn")

VALIDATION_ERRORS = (StructureError, DataError, InvalidAssignment, InvalidLabelVector, MissingEvidence,
                     BadBeta, BadName, BadSize, PlanError, NotNormalized, NotSubnormalized, NotRenormalizable,
                     FileNotFoundError, IsADirectoryError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def parse_reg(text: str | None, trainers) -> dict[str, float]:
    """``1.0`` sets B and C; ``m2bn=1,m3n=0.5,mcl=0.001`` sets each trainer."""
    if text is None:
        return {}
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            k, v = part.split("=", 1)
            if k.strip() not in TRAINERS:
                raise PlanError(f"unknown trainer {k!r} in --reg")
            out[k.strip()] = float(v)
        else:
            for t in ("m2bn", "m3n"):
                out[t] = float(part)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmbn", description="Max-margin Bayesian network training and experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="sample a dataset from a skewed generative model")
    g.add_argument("--structure", required=True, help="built-in name or network file")
    g.add_argument("--beta", type=float, default=0.9)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train-size", type=int, required=True, help="rows written to --out")
    g.add_argument("--test-size", type=int, default=0, help="rows written to a separate .test.csv file")
    g.add_argument("--params", help="where to write the generative parameters")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="fit parameters on a CSV dataset")
    t.add_argument("--structure", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--trainer", choices=TRAINERS, default="m2bn")
    t.add_argument("--reg", type=float, help="B for m2bn, C for m3n, ridge strength for mcl")
    t.add_argument("--mode", choices=("auto", "univariate", "multivariate"), default="auto")
    t.add_argument("--out", required=True, help="parameter file to write")

    e = sub.add_parser("eval", help="test error of a parameter file on a dataset")
    e.add_argument("--structure", required=True)
    e.add_argument("--params", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--mode", choices=("auto", "univariate", "multivariate"), default="auto")

    x = sub.add_parser("experiment", help="repeated train/test comparison of trainers")
    x.add_argument("--structure", required=True)
    x.add_argument("--data", help="CSV pool of real data instead of synthetic sampling")
    x.add_argument("--beta", type=float, default=0.9)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--trainer", action="append", help="trainer name(s); repeat or comma-separate")
    x.add_argument("--reg", help="a number (B and C) or trainer=value pairs")
    x.add_argument("--train-size", type=_ints, default=(50,), help="comma-separated sizes")
    x.add_argument("--test-size", type=int, default=1000)
    x.add_argument("--reps", type=int, default=20)
    x.add_argument("--mode", choices=("auto", "univariate", "multivariate"), default="auto")
    x.add_argument("--tune-grid", type=_floats, help="comma-separated values tried on repetition 0")
    x.add_argument("--workers", type=int, default=1)
    x.add_argument("--timing", action="store_true", help="fill wall_ms (breaks byte-identical reruns)")
    x.add_argument("--out", required=True, help="results CSV")

    r = sub.add_parser("report", help="summarize a results CSV")
    r.add_argument("--data", required=True, help="results CSV from 'experiment'")
    r.add_argument("--out", help="write the summary as CSV instead of printing")
    return p


def _gen_data(a) -> int:
    s = load_structure(a.structure)
    if a.train_size < 1 or a.test_size < 0:
        raise BadSize("sizes must be positive")
    w = skewed_params(s, a.beta, a.seed)
    rng = make_rng(a.seed)
    data = ancestral_sample(s, w, a.train_size, rng)
    write_csv(a.out, data)
    meta = dict(seed=a.seed, beta=a.beta, structure=a.structure, generator=GENERATOR_ID, rows=a.train_size)
    write_metadata(metadata_path(a.out), **meta)
    if a.test_size:
        out = Path(a.out)
        test_path = out.with_name(out.stem + ".test" + out.suffix)
        write_csv(test_path, ancestral_sample(s, w, a.test_size, rng))
        write_metadata(metadata_path(test_path), **{**meta, "rows": a.test_size, "split": "test"})
    if a.params:
        write_params(a.params, s, w)
    print(f"wrote {a.train_size} rows to {a.out}")
    return 0


def _train(a) -> int:
    s = load_structure(a.structure)
    data = read_csv(a.data, s)
    reg = a.reg if a.reg is not None else {"m2bn": 1.0, "m3n": 1.0, "mcl": 0.0}[a.trainer]
    res = train(a.trainer, s, data, reg, a.mode)
    write_params(a.out, s, res.w, log_weights=res.log_weights)
    if isinstance(res.detail, barrier.Solution):
        print(barrier.format_report(res.detail))
    print(f"trainer={a.trainer} reg={reg!r} converged={res.converged} "
          f"train_error={evaluate(s, res.w, data, a.mode)!r}")
    if res.max_decision_deviation is not None:
        print(f"max_decision_deviation={res.max_decision_deviation!r}")
    if res.log_weights:
        print("note: parameters are unnormalized log-weights, not CPTs")
    return 0


def _eval(a) -> int:
    s = load_structure(a.structure)
    w, _ = read_params(a.params, s)
    print(repr(evaluate(s, w, read_csv(a.data, s), a.mode)))
    return 0


def _experiment(a) -> int:
    trainers = TRAINERS if not a.trainer else tuple(t.strip() for arg in a.trainer for t in arg.split(",")
                                                     if t.strip())
    plan = ExperimentPlan(structure=a.structure, beta=None if a.data else a.beta, seed=a.seed,
                          trainers=trainers, train_sizes=a.train_size, reps=a.reps, test_size=a.test_size,
                          reg=parse_reg(a.reg, trainers), tune_grid=a.tune_grid, mode=a.mode, data=a.data,
                          workers=a.workers, timing=a.timing)
    rows = run_experiment(plan)
    write_results(a.out, rows)
    failed = sum(r["test_error"] == "" for r in rows)
    print(f"wrote {len(rows)} rows to {a.out}" + (f" ({failed} failed)" if failed else ""))
    return 0


def _report(a) -> int:
    with open(a.data, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise DataError(f"{a.data}: not a results file")
        rows = list(reader)
    summary = summarize(rows)
    fields = ["trainer", "train_size", "reps", "failed", "mean_test_error", "std_test_error"]
    if a.out:
        with open(a.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(summary)
    else:
        print(f"{'trainer':8} {'n':>6} {'reps':>5} {'failed':>6} {'mean':>8} {'std':>8}")
        for r in summary:
            print(f"{r['trainer']:8} {r['train_size']:>6} {r['reps']:5d} {r['failed']:6d} "
                  f"{r['mean_test_error']:8.4f} {r['std_test_error']:8.4f}")
    return 0


COMMANDS = {"gen-data": _gen_data, "train": _train, "eval": _eval, "experiment": _experiment, "report": _report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"mmbn: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except VALIDATION_ERRORS as exc:
        print(f"mmbn: error: {exc}", file=sys.stderr)
        return 1
    except (MMBNError, np.linalg.LinAlgError, OSError, ArithmeticError) as exc:
        print(f"mmbn: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
