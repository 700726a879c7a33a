"""Turning subnormalized local functions into proper CPTs.

A column of ``f(x, z)`` can be rescaled by ``1/rho_z`` without changing
``P(y | evidence)`` as long as some other, not yet normalized, local function
contains every variable of ``z`` and absorbs ``rho_z``.  Columns whose
parent configuration mentions no class variable are simply normalized: their
factor cancels in the conditional.  Processing nodes in reverse topological
order leaves every CPT normalized at the end.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EvidenceSpaceTooLarge, NotRenormalizable, NotSubnormalized
from .network import NORM_TOL, NetworkStructure, feature_indices, normalization_residuals

EVIDENCE_CAP = 2**16


def _targets(structure: NetworkStructure, target) -> tuple[int, ...]:
    if target is None:
        return structure.class_vars
    if isinstance(target, (int, np.integer)):
        return (int(target),)
    return tuple(int(t) for t in target)


def check_renormalizable(structure: NetworkStructure, target: int | Sequence[int] | None = None
                         ) -> tuple[bool, list[tuple[int, tuple[int, int]]]]:
    """Whether every child of the target(s) has pairwise adjacent parents.

    Returns the flag and the violating ``(child, (parent, parent))`` pairs.
    """
    targets = set(_targets(structure, target))
    bad = []
    for c in range(structure.n_nodes):
        ps = structure.parents[c]
        if not targets.intersection(ps):
            continue
        for p, q in itertools.combinations(ps, 2):
            if not structure.adjacent(p, q):
                bad.append((c, (p, q)))
    return not bad, bad


def _cover(structure: NetworkStructure, c: int, position: dict[int, int]) -> int | None:
    """Earliest (in topological order) unprocessed node whose family holds pi(c)."""
    z = set(structure.parents[c])
    cands = [k for k in range(structure.n_nodes)
             if position[k] < position[c] and z.issubset(structure.family(k))]
    return min(cands, key=position.__getitem__) if cands else None


def _cover_cells(structure: NetworkStructure, k: int, c: int, b: int) -> np.ndarray:
    """Cells of node k's CPT consistent with parent configuration b of node c."""
    zvals = dict(zip(structure.parents[c], structure.config_values(c, b)))
    cells = []
    for bk in range(structure.n_configs[k]):
        vals = dict(zip(structure.parents[k], structure.config_values(k, bk)))
        for a in range(structure.arities[k]):
            vals[k] = a
            if all(vals[p] == v for p, v in zvals.items()):
                cells.append(structure.cell(k, a, bk))
    return np.array(cells, dtype=np.int64)


def renormalize(structure: NetworkStructure, w: np.ndarray, target: int | Sequence[int] | None = None,
                require_subnormalized: bool = True) -> np.ndarray:
    """Normalized log-weights with the same conditional P(y | evidence).

    ``target`` defaults to all class variables.  Weights from other trainers
    can be passed with ``require_subnormalized=False``.
    """
    ok, bad = check_renormalizable(structure, target)
    if not ok:
        names = [(structure.names[c], (structure.names[p], structure.names[q])) for c, (p, q) in bad]
        raise NotRenormalizable(f"unmoralized co-parents: {names}")
    w = np.array(w, dtype=float)
    if require_subnormalized and np.any(normalization_residuals(structure, w) > NORM_TOL):
        raise NotSubnormalized("weights are not subnormalized")
    targets = set(_targets(structure, target))
    position = {j: i for i, j in enumerate(structure.order)}
    for c in reversed(structure.order):
        k = structure.arities[c]
        needs_cover = bool(targets.intersection(structure.parents[c]))
        cover = _cover(structure, c, position) if needs_cover else None
        if needs_cover and cover is None:
            raise NotRenormalizable(f"no covering function for parents of {structure.names[c]!r}")
        for b in range(structure.n_configs[c]):
            sl = slice(structure.cell(c, 0, b), structure.cell(c, 0, b) + k)
            log_rho = logsumexp(w[sl])
            w[sl] -= log_rho
            if cover is not None:
                w[_cover_cells(structure, cover, c, b)] += log_rho
    return w


def _conditionals(structure: NetworkStructure, w: np.ndarray, targets: tuple[int, ...],
                  cap: int) -> np.ndarray:
    """P(targets | all other variables) for every configuration, by enumeration."""
    others = [j for j in range(structure.n_nodes) if j not in targets]
    n_ev = int(np.prod([structure.arities[j] for j in others], dtype=np.int64))
    if n_ev > cap:
        raise EvidenceSpaceTooLarge(f"{n_ev} evidence configurations exceed cap {cap}")
    ev = np.array(list(itertools.product(*(range(structure.arities[j]) for j in others))), dtype=np.int64)
    ys = np.array(list(itertools.product(*(range(structure.arities[t]) for t in targets))), dtype=np.int64)
    x = np.zeros((len(ev), len(ys), structure.n_nodes), dtype=np.int64)
    x[:, :, others] = ev[:, None, :]
    x[:, :, list(targets)] = ys[None, :, :]
    logp = np.asarray(w)[feature_indices(structure, x)].sum(axis=-1)
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


def verify_decision_preserved(structure: NetworkStructure, w_before: np.ndarray, w_after: np.ndarray,
                              target: int | Sequence[int] | None = None, cap: int = EVIDENCE_CAP) -> float:
    """max |P(y|x, before) - P(y|x, after)| over all x and y."""
    targets = _targets(structure, target)
    return float(np.max(np.abs(_conditionals(structure, w_before, targets, cap)
                               - _conditionals(structure, w_after, targets, cap))))


@dataclass
class RenormReport:
    renormalizable: bool
    violating_children: list[tuple[int, tuple[int, int]]] = field(default_factory=list)
    normalized_params: np.ndarray | None = None
    max_decision_deviation: float | None = None
    # Set when the input weights did not come from the subnormalized problem,
    # in which case the result carries no optimality guarantee.
    foreign_params: bool = False


def renormalize_report(structure: NetworkStructure, w: np.ndarray, target=None,
                       foreign_params: bool = False, cap: int = EVIDENCE_CAP) -> RenormReport:
    ok, bad = check_renormalizable(structure, target)
    if not ok:
        return RenormReport(False, bad, foreign_params=foreign_params)
    w_new = renormalize(structure, w, target, require_subnormalized=not foreign_params)
    try:
        dev = verify_decision_preserved(structure, w, w_new, target, cap)
    except EvidenceSpaceTooLarge:
        dev = None
    return RenormReport(True, [], w_new, dev, foreign_params)
