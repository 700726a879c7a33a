"""Vector-valued labels: Hamming margins and cutting-plane training.

The constraint set has one row per (example, label vector), exponentially
many in the chain length.  Training alternates between solving the barrier
problem on a pool of rows and adding, for each example, the label vector
that maximizes ``gamma * hamming(y_i, y) - eps_i - Delta(i, y) w``.  When the
class variables form a chain that maximization is a Viterbi pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from . import barrier
from .barrier import BarrierConfig, Solution, SolverState
from .dataset import DiscreteDataset
from .errors import DimensionMismatch, InvalidLabelVector, NotAChain
from .margin import hamming, problem_from_pairs
from .network import NetworkStructure, class_assignments, class_scores, feature_indices, log_prob

log = logging.getLogger(__name__)

EXHAUSTIVE_CAP = 2**20


def hamming_margin(y_true, y) -> int:
    y_true, y = np.asarray(y_true), np.asarray(y)
    if y_true.shape != y.shape:
        raise DimensionMismatch("label vectors differ in length")
    return int(hamming(y_true, y))


@dataclass(frozen=True)
class ChainLabelModel:
    """Class variables y_1 -> ... -> y_L with per-position local functions.

    ``chain`` lists class-variable node indices in chain order; ``slot[k]``
    is the position of ``chain[k]`` inside ``structure.class_vars`` (label
    vectors always use the ``class_vars`` order).  ``unary[k]`` holds nodes
    whose CPT touches only ``chain[k]`` among class variables; ``pairwise[k]``
    those touching ``chain[k]`` and ``chain[k+1]``.
    """

    structure: NetworkStructure
    chain: tuple[int, ...]
    slot: tuple[int, ...]
    unary: tuple[tuple[int, ...], ...]
    pairwise: tuple[tuple[int, ...], ...]

    @classmethod
    def from_structure(cls, structure: NetworkStructure) -> "ChainLabelModel":
        cv = structure.class_vars
        cset = set(cv)
        class_parents = {c: [p for p in structure.parents[c] if p in cset] for c in cv}
        heads = [c for c in cv if not class_parents[c]]
        if len(heads) != 1 or any(len(ps) > 1 for ps in class_parents.values()):
            raise NotAChain("class variables do not form a simple directed chain")
        nxt = {ps[0]: c for c, ps in class_parents.items() if ps}
        if len(nxt) != len(cv) - 1:
            raise NotAChain("class variables branch")
        chain = [heads[0]]
        while chain[-1] in nxt:
            chain.append(nxt[chain[-1]])
        if len(chain) != len(cv):
            raise NotAChain("class variables do not form a single chain")
        pos = {c: k for k, c in enumerate(chain)}
        unary = [[] for _ in chain]
        pairwise = [[] for _ in chain[:-1]]
        for j in structure.class_families:
            ks = sorted(pos[c] for c in structure.family(j) if c in cset)
            if len(ks) == 1:
                unary[ks[0]].append(j)
            elif len(ks) == 2 and ks[1] == ks[0] + 1:
                pairwise[ks[0]].append(j)
            else:
                raise NotAChain(f"CPT of {structure.names[j]!r} couples non-adjacent class variables")
        return cls(structure, tuple(chain), tuple(cv.index(c) for c in chain),
                   tuple(map(tuple, unary)), tuple(map(tuple, pairwise)))

    def tables(self, x: np.ndarray, w: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Unary (K_k,) and pairwise (K_k, K_k+1) score tables for assignment x."""
        s, w = self.structure, np.asarray(w)
        unary, pair = [], []
        for k, c in enumerate(self.chain):
            kk = s.arities[c]
            xx = np.repeat(np.asarray(x, np.int64)[None, :], kk, axis=0)
            xx[:, c] = np.arange(kk)
            unary.append(w[feature_indices(s, xx, self.unary[k])].sum(axis=-1) if self.unary[k] else np.zeros(kk))
        for k in range(len(self.chain) - 1):
            c, d = self.chain[k], self.chain[k + 1]
            ka, kb = s.arities[c], s.arities[d]
            xx = np.repeat(np.asarray(x, np.int64)[None, None, :], ka, axis=0).repeat(kb, axis=1)
            xx[:, :, c] = np.arange(ka)[:, None]
            xx[:, :, d] = np.arange(kb)[None, :]
            pair.append(w[feature_indices(s, xx, self.pairwise[k])].sum(axis=-1) if self.pairwise[k] else np.zeros((ka, kb)))
        return unary, pair


def viterbi(unary: list[np.ndarray], pair: list[np.ndarray]) -> tuple[np.ndarray, float]:
    """Max-sum decoding of a chain; ties go to the smaller label, left to right.

    Scores-to-go are accumulated right to left, so the left-to-right decode
    picking the first maximizer yields the lexicographically smallest
    optimal sequence.
    """
    n = len(unary)
    togo = [None] * n
    togo[-1] = np.asarray(unary[-1], float)
    for k in range(n - 2, -1, -1):
        togo[k] = unary[k] + np.max(pair[k] + togo[k + 1][None, :], axis=1)
    path = np.zeros(n, dtype=np.int64)
    path[0] = int(np.argmax(togo[0]))
    best = float(togo[0][path[0]])
    for k in range(1, n):
        path[k] = int(np.argmax(pair[k - 1][path[k - 1]] + togo[k]))
    return path, best


def _check_labels(structure: NetworkStructure, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    card = np.array([structure.arities[c] for c in structure.class_vars])
    if y.shape != card.shape or np.any(y < 0) or np.any(y >= card):
        raise InvalidLabelVector(f"invalid label vector {y.tolist()}")
    return y


def violation_score(i: int, y, w: np.ndarray, gamma: float, eps_i: float,
                    structure: NetworkStructure, data: DiscreteDataset) -> float:
    """gamma * hamming(y_i, y) - eps_i - Delta(i, y) w; positive means violated."""
    y = _check_labels(structure, y)
    x = data.rows[i]
    alt = x.copy()
    alt[list(structure.class_vars)] = y
    y_true = x[list(structure.class_vars)]
    return float(gamma * hamming_margin(y_true, y) - eps_i - (log_prob(structure, w, x) - log_prob(structure, w, alt)))


def generate_constraint(model: ChainLabelModel | NetworkStructure, data: DiscreteDataset, i: int,
                        w: np.ndarray, gamma: float,
                        method: Literal["viterbi", "exhaustive"] = "viterbi") -> np.ndarray:
    """Label vector maximizing gamma * hamming(y_i, y) + phi(x_i, y) w.

    The exhaustive method only needs a structure; viterbi builds the chain
    model from a structure when given one.
    """
    s = model if isinstance(model, NetworkStructure) else model.structure
    x = data.rows[i]
    y_true = x[list(s.class_vars)]
    if method == "exhaustive":
        grid = class_assignments(s, cap=EXHAUSTIVE_CAP)
        scores = class_scores(s, w, x[None, :], grid)[0] + gamma * hamming(y_true[None, :], grid)
        return grid[int(np.argmax(scores))].copy()
    if method != "viterbi":
        raise ValueError(f"unknown method {method!r}")
    if isinstance(model, NetworkStructure):
        model = ChainLabelModel.from_structure(model)
    unary, pair = model.tables(x, w)
    for k, c in enumerate(model.chain):
        unary[k] = unary[k] + gamma * (np.arange(s.arities[c]) != y_true[model.slot[k]])
    path, _ = viterbi(unary, pair)
    y = np.zeros(len(s.class_vars), dtype=np.int64)
    y[list(model.slot)] = path
    return y


def map_labels(model: ChainLabelModel, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Joint MAP labels for each row of ``x`` (Viterbi with no margin term)."""
    out = np.zeros((len(x), len(model.chain)), dtype=np.int64)
    for r, row in enumerate(np.asarray(x)):
        unary, pair = model.tables(row, w)
        path, _ = viterbi(unary, pair)
        out[r, list(model.slot)] = path
    return out


@dataclass
class PoolEntry:
    violation: float
    round_added: int


@dataclass
class ConstraintPool:
    entries: dict[tuple[int, tuple[int, ...]], PoolEntry] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, i: int, y, violation: float, rnd: int) -> None:
        key = (int(i), tuple(int(v) for v in y))
        if key in self.entries:
            raise ValueError(f"duplicate pool row {key}")
        self.entries[key] = PoolEntry(float(violation), rnd)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        keys = sorted(self.entries)
        return (np.array([k[0] for k in keys], dtype=np.int64),
                np.array([k[1] for k in keys], dtype=np.int64))

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for (i, y), e in sorted(self.entries.items()):
                fh.write(f"{i} {','.join(map(str, y))} {e.violation:.17g} {e.round_added}\n")


@dataclass(frozen=True)
class CuttingPlaneConfig:
    tol: float = 1e-6
    max_rounds: int = 60
    per_example: int = 1
    method: Literal["viterbi", "exhaustive"] = "viterbi"
    # Start each round from the previous iterate instead of a fresh point.
    warm_start: bool = False
    warm_padding: float = 1e-3


@dataclass
class CuttingPlaneResult:
    solution: Solution
    pool: ConstraintPool
    rounds: int
    converged: bool


def structure_of(model) -> NetworkStructure:
    return model if isinstance(model, NetworkStructure) else model.structure


def _top_labelings(model, data, i, w, gamma, eps_i, cp: CuttingPlaneConfig):
    best = generate_constraint(model, data, i, w, gamma, cp.method)
    out = [best]
    if cp.per_example > 1:
        s = structure_of(model)
        grid = class_assignments(s, cap=EXHAUSTIVE_CAP)
        x = data.rows[i]
        scores = class_scores(s, w, x[None, :], grid)[0] + gamma * hamming(x[list(s.class_vars)][None, :], grid)
        for r in np.argsort(-scores, kind="stable")[: cp.per_example]:
            if not np.array_equal(grid[r], best):
                out.append(grid[r].copy())
        out = out[: cp.per_example]
    return out


def _warm(sol: Solution, problem, padding: float, gamma_cap: float = 1e3) -> SolverState:
    # The first pool holds only zero rows, where gamma is unbounded; lowering
    # gamma only loosens margin rows.
    gamma = min(sol.gamma, gamma_cap)
    slack = problem.delta @ sol.w - gamma * problem.margin + sol.eps[problem.example]
    short = np.zeros(problem.n_examples)
    np.maximum.at(short, problem.example, padding - slack)
    return SolverState(sol.w.copy(), gamma, sol.eps + short, sol.mu)


def cutting_plane_solve(structure: NetworkStructure, data: DiscreteDataset, reg: float,
                        config: BarrierConfig = BarrierConfig(),
                        cp_config: CuttingPlaneConfig = CuttingPlaneConfig()) -> CuttingPlaneResult:
    """Constraint generation around the barrier solver with Hamming margins."""
    model = ChainLabelModel.from_structure(structure) if cp_config.method == "viterbi" else structure
    pool = ConstraintPool()
    for i, y in enumerate(data.labels):
        pool.add(i, y, 0.0, 0)
    sol, converged, rnd = None, False, 0
    for rnd in range(1, cp_config.max_rounds + 1):
        ex, labels = pool.pairs()
        problem = problem_from_pairs(structure, data, ex, labels, "hamming", reg)
        start = _warm(sol, problem, cp_config.warm_padding) if (cp_config.warm_start and sol is not None) else None
        sol = barrier.solve(problem, structure, config, "subnormalization", start)
        added = 0
        for i in range(len(data)):
            for y in _top_labelings(model, data, i, sol.w, sol.gamma, sol.eps[i], cp_config):
                v = violation_score(i, y, sol.w, sol.gamma, sol.eps[i], structure, data)
                if v > cp_config.tol:
                    pool.add(i, y, v, rnd)
                    added += 1
        pool.history.append({"round": rnd, "rows": problem.n_rows, "added": added,
                             "objective": sol.objective, "n_constraints":
                             barrier.BarrierFunction(problem, structure, sol.mu, "subnormalization",
                                                     config.w_floor).n_constraints})
        log.debug("cutting plane round %d: %d rows, %d added, objective %.6g", rnd, problem.n_rows, added,
                  sol.objective)
        if added == 0:
            converged = True
            break
    if not converged:
        log.warning("cutting plane stopped after %d rounds with violated constraints", rnd)
    return CuttingPlaneResult(sol, pool, rnd, converged)


def max_violation(structure: NetworkStructure, data: DiscreteDataset, w: np.ndarray, gamma: float,
                  eps: np.ndarray) -> float:
    """Largest violation over every (example, label vector), by enumeration."""
    grid = class_assignments(structure, cap=EXHAUSTIVE_CAP)
    scores = class_scores(structure, w, data.rows, grid)
    y_true = data.labels
    true_pos = np.array([np.flatnonzero((grid == y).all(axis=1))[0] for y in y_true])
    true_score = scores[np.arange(len(data)), true_pos]
    dist = hamming(y_true[:, None, :], grid[None, :, :])
    viol = gamma * dist - np.asarray(eps)[:, None] - (true_score[:, None] - scores)
    return float(viol.max())
