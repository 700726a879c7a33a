"""Repetition protocol: sample, train, evaluate and tabulate.

For synthetic runs the generative model is drawn once from the plan seed.
Repetition ``r`` uses its own stream seeded with ``seed + r``: the test set
is sampled first, then one training pool of the largest size whose prefixes
give the smaller training sets.  For user-supplied data the rows are shuffled
once with the plan seed, the first ``test_size`` rows form the test set, and
repetitions take disjoint consecutive blocks of the remainder, wrapping only
when it runs out.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from . import barrier
from .baselines import MclConfig, solve_m3n, solve_mcl
from .barrier import BarrierConfig
from .dataset import DiscreteDataset, read_csv
from .errors import MMBNError, NotAChain, SchemaMismatch
from .io import load_structure
from .margin import build_delta, mclr
from .multivariate import ChainLabelModel, CuttingPlaneConfig, cutting_plane_solve, map_labels
from .network import NetworkStructure, predict_batch
from .renormalize import renormalize_report
from .synth import ancestral_sample, make_rng, skewed_params

log = logging.getLogger(__name__)

TRAINERS = ("m2bn", "m3n", "mcl")
COLUMNS = ("trainer", "structure", "beta", "train_size", "rep", "reg", "test_error", "train_error", "mclr",
           "converged", "max_decision_deviation", "wall_ms")
DEFAULT_REG = {"m2bn": 1.0, "m3n": 1.0, "mcl": 0.0}
Mode = Literal["auto", "univariate", "multivariate"]


class PlanError(MMBNError, ValueError):
    """An experiment plan failed validation."""


@dataclass(frozen=True)
class ExperimentPlan:
    structure: str
    beta: float | None = 0.9
    seed: int = 0
    trainers: tuple[str, ...] = TRAINERS
    train_sizes: tuple[int, ...] = (50,)
    reps: int = 20
    test_size: int = 1000
    reg: dict = field(default_factory=lambda: dict(DEFAULT_REG))
    tune_grid: tuple[float, ...] | None = None
    mode: Mode = "auto"
    data: str | None = None
    workers: int = 1
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "trainers", tuple(self.trainers))
        object.__setattr__(self, "train_sizes", tuple(int(n) for n in self.train_sizes))
        if self.tune_grid is not None:
            object.__setattr__(self, "tune_grid", tuple(float(v) for v in self.tune_grid))
        object.__setattr__(self, "reg", {**DEFAULT_REG, **dict(self.reg)})
        self.validate()

    def validate(self) -> None:
        if self.reps < 1:
            raise PlanError("repetitions must be at least 1")
        if not self.trainers:
            raise PlanError("at least one trainer is required")
        bad = [t for t in self.trainers if t not in TRAINERS]
        if bad:
            raise PlanError(f"unknown trainer(s) {bad}; choose from {list(TRAINERS)}")
        if len(set(self.trainers)) != len(self.trainers):
            raise PlanError("duplicate trainer")
        if not self.train_sizes or any(n < 1 for n in self.train_sizes):
            raise PlanError("sample sizes must be positive")
        if self.test_size < 1:
            raise PlanError("test size must be positive")
        if self.data is None and (self.beta is None or not 0.5 <= self.beta <= 1.0):
            raise PlanError("synthetic runs need beta in [0.5, 1]")
        for t in ("m2bn", "m3n"):
            if not self.reg[t] > 0:
                raise PlanError(f"regularization for {t} must be positive")
        if self.reg["mcl"] < 0:
            raise PlanError("mcl ridge strength must be nonnegative")
        if self.tune_grid is not None and (not self.tune_grid or any(v <= 0 for v in self.tune_grid)):
            raise PlanError("tuning grid values must be positive")
        if self.mode not in ("auto", "univariate", "multivariate"):
            raise PlanError(f"unknown mode {self.mode!r}")
        if self.workers < 1:
            raise PlanError("workers must be at least 1")


# ---------------------------------------------------------------- evaluation


def resolve_mode(structure: NetworkStructure, mode: Mode) -> str:
    if mode == "auto":
        return "multivariate" if len(structure.class_vars) > 1 else "univariate"
    return mode


def decode(structure: NetworkStructure, w: np.ndarray, x: np.ndarray, mode: str) -> np.ndarray:
    """Predicted (N, L) labels; chains decode with Viterbi in multivariate mode."""
    if mode == "multivariate":
        try:
            return map_labels(ChainLabelModel.from_structure(structure), w, x)
        except NotAChain:
            pass
    return predict_batch(structure, w, x)


def evaluate(structure: NetworkStructure, params: np.ndarray, test: DiscreteDataset,
             mode: Mode = "univariate") -> float:
    """0/1 error (univariate) or per-position error rate (multivariate)."""
    if test.structure != structure:
        raise SchemaMismatch("test data belongs to a different structure")
    mode = resolve_mode(structure, mode)
    pred = decode(structure, params, test.rows, mode)
    wrong = pred != test.labels
    if mode == "multivariate":
        return float(wrong.mean())
    return float(wrong.any(axis=1).mean())


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    w: np.ndarray
    converged: bool
    max_decision_deviation: float | None = None
    log_weights: bool = False
    detail: object = None


def train(trainer: str, structure: NetworkStructure, data: DiscreteDataset, reg: float, mode: Mode = "auto",
          config: BarrierConfig | None = None) -> TrainResult:
    """Fit one trainer; ``reg`` is B (m2bn), C (m3n) or the ridge strength (mcl)."""
    mode = resolve_mode(structure, mode)
    if trainer == "m2bn":
        cfg = config or BarrierConfig()
        if mode == "multivariate":
            res = cutting_plane_solve(structure, data, reg, cfg, CuttingPlaneConfig())
            sol, ok = res.solution, res.converged and res.solution.converged
        else:
            sol = barrier.solve(build_delta(structure, data, "multiclass", reg), structure, cfg)
            ok = sol.converged
        rep = renormalize_report(structure, sol.w)
        if rep.renormalizable:
            return TrainResult(rep.normalized_params, ok, rep.max_decision_deviation, False, sol)
        return TrainResult(sol.w, ok, None, False, sol)
    if trainer == "m3n":
        kind = "hamming" if mode == "multivariate" else "multiclass"
        problem = build_delta(structure, data, kind, 1.0)
        res = solve_m3n(problem, structure, reg) if config is None else solve_m3n(problem, structure, reg, config)
        return TrainResult(res.w, res.converged, None, True, res)
    if trainer == "mcl":
        res = solve_mcl(structure, data, MclConfig(l2_strength=reg))
        return TrainResult(res.w, res.converged, None, False, res)
    raise PlanError(f"unknown trainer {trainer!r}")


# ---------------------------------------------------------------- protocol


@dataclass
class _Context:
    structure: NetworkStructure
    plan: ExperimentPlan
    mode: str
    true_w: np.ndarray | None
    pool: DiscreteDataset | None
    test: DiscreteDataset | None


def _setup(plan: ExperimentPlan) -> _Context:
    structure = load_structure(plan.structure)
    mode = resolve_mode(structure, plan.mode)
    if plan.data is None:
        return _Context(structure, plan, mode, skewed_params(structure, plan.beta, plan.seed), None, None)
    data = read_csv(plan.data, structure)
    if len(data) <= plan.test_size:
        raise PlanError(f"{plan.data} has {len(data)} rows; need more than test size {plan.test_size}")
    perm = make_rng(plan.seed).permutation(len(data))
    return _Context(structure, plan, mode, None, data.subset(perm[plan.test_size:]),
                    data.subset(perm[:plan.test_size]))


def _split(ctx: _Context, rep: int) -> tuple[DiscreteDataset, dict[int, DiscreteDataset]]:
    plan, s = ctx.plan, ctx.structure
    if ctx.pool is None:
        rng = make_rng(plan.seed + rep)
        test = ancestral_sample(s, ctx.true_w, plan.test_size, rng)
        pool = ancestral_sample(s, ctx.true_w, max(plan.train_sizes), rng)
        return test, {n: pool.subset(np.arange(n)) for n in plan.train_sizes}
    m = len(ctx.pool)
    sets = {n: ctx.pool.subset((rep * n + np.arange(n)) % m) for n in plan.train_sizes}
    return ctx.test, sets


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _row(ctx, trainer, n, rep, reg, train_set, test, timing) -> dict:
    base = {"trainer": trainer, "structure": ctx.plan.structure,
            "beta": ctx.plan.beta if ctx.plan.data is None else None, "train_size": n, "rep": rep, "reg": reg}
    t0 = time.perf_counter()
    try:
        res = train(trainer, ctx.structure, train_set, reg, ctx.mode)
        row = {**base,
               "test_error": evaluate(ctx.structure, res.w, test, ctx.mode),
               "train_error": evaluate(ctx.structure, res.w, train_set, ctx.mode),
               "mclr": mclr(ctx.structure, res.w, train_set),
               "converged": res.converged,
               "max_decision_deviation": res.max_decision_deviation}
    except MMBNError as exc:  # solver failures become error rows
        log.warning("%s n=%d rep=%d failed: %s", trainer, n, rep, exc)
        row = {**base, "converged": f"error:{type(exc).__name__}"}
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        log.warning("%s n=%d rep=%d failed: %s", trainer, n, rep, exc)
        row = {**base, "converged": f"error:{type(exc).__name__}"}
    row["wall_ms"] = round(1000.0 * (time.perf_counter() - t0), 3) if timing else None
    return {c: _fmt(row.get(c)) for c in COLUMNS}


def _tune(ctx: _Context) -> dict[tuple[str, int], float]:
    """Pick each max-margin trainer's constant on repetition 0's split."""
    plan = ctx.plan
    chosen = {}
    test, sets = _split(ctx, 0)
    for trainer in plan.trainers:
        for n in plan.train_sizes:
            if plan.tune_grid is None or trainer == "mcl":
                chosen[trainer, n] = plan.reg[trainer]
                continue
            best, best_err = None, np.inf
            for v in plan.tune_grid:
                try:
                    err = evaluate(ctx.structure, train(trainer, ctx.structure, sets[n], v, ctx.mode).w, test,
                                   ctx.mode)
                except MMBNError as exc:
                    log.warning("tuning %s at %g failed: %s", trainer, v, exc)
                    continue
                if err < best_err:
                    best, best_err = v, err
            chosen[trainer, n] = best if best is not None else plan.reg[trainer]
            log.info("tuned %s n=%d: reg=%g (error %.4f)", trainer, n, chosen[trainer, n], best_err)
    return chosen


def _run_rep(ctx: _Context, rep: int, regs: dict) -> list[dict]:
    test, sets = _split(ctx, rep)
    out = []
    for trainer in ctx.plan.trainers:
        for n in ctx.plan.train_sizes:
            out.append(_row(ctx, trainer, n, rep, regs[trainer, n], sets[n], test, ctx.plan.timing))
    return out


def _run_rep_task(args) -> list[dict]:
    plan, rep, regs = args
    return _run_rep(_setup(plan), rep, regs)


def run_experiment(plan: ExperimentPlan) -> list[dict]:
    """Results rows ordered by trainer, training size and repetition."""
    plan.validate()
    ctx = _setup(plan)
    regs = _tune(ctx)
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as ex:
            per_rep = list(ex.map(_run_rep_task, [(plan, r, regs) for r in range(plan.reps)]))
    else:
        per_rep = [_run_rep(ctx, r, regs) for r in range(plan.reps)]
    rows = [row for rep_rows in per_rep for row in rep_rows]
    t_order = {t: k for k, t in enumerate(plan.trainers)}
    n_order = {n: k for k, n in enumerate(plan.train_sizes)}
    rows.sort(key=lambda r: (t_order[r["trainer"]], n_order[int(r["train_size"])], int(r["rep"])))
    return rows


def results_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_results(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(results_csv(rows))


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and standard deviation of test error per (trainer, train size)."""
    groups: dict[tuple[str, str], list[float]] = {}
    failed: dict[tuple[str, str], int] = {}
    for r in rows:
        key = (r["trainer"], r["train_size"])
        groups.setdefault(key, [])
        failed.setdefault(key, 0)
        if r["test_error"] == "":
            failed[key] += 1
        else:
            groups[key].append(float(r["test_error"]))
    out = []
    for (trainer, n), errs in groups.items():
        e = np.array(errs)
        out.append({"trainer": trainer, "train_size": n, "reps": len(e), "failed": failed[trainer, n],
                    "mean_test_error": float(e.mean()) if len(e) else np.nan,
                    "std_test_error": float(e.std(ddof=1)) if len(e) > 1 else 0.0})
    return out
