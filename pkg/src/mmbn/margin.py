"""Margin-constraint assembly and margin diagnostics.

Every training example ``i`` and candidate labeling ``y`` yields one
constraint row ``Delta(i, y) = phi(x_i, y_i) - phi(x_i, y)`` with required
margin ``delta(i, y)``.  The rows with ``y == y_i`` are all-zero and are kept:
they are what forces the per-example slack to stay nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .dataset import DiscreteDataset
from .errors import DimensionMismatch, NonpositiveGamma, StructureError
from .network import NetworkStructure, class_assignments, class_grid_positions, class_scores, feature_indices

MarginKind = Literal["multiclass", "hamming"]

#: Maximum number of explicitly enumerated rows per example.
ROW_CAP = 4096


@dataclass(frozen=True)
class MarginProblem:
    """Sparse constraint matrix with its margin vector and example map.

    ``example[r]`` is the training example owning row ``r`` (a compact
    stand-in for the 0/1 matrix that sums slacks into rows).
    """

    delta: sp.csr_matrix
    margin: np.ndarray
    example: np.ndarray
    labels: np.ndarray
    reg: float
    n_examples: int

    def __post_init__(self):
        if not self.reg > 0:
            raise ValueError("regularization constant must be positive")
        m = self.delta.shape[0]
        if not (len(self.margin) == len(self.example) == len(self.labels) == m):
            raise DimensionMismatch("row metadata does not match delta rows")

    @property
    def n_rows(self) -> int:
        return self.delta.shape[0]

    @property
    def n_features(self) -> int:
        return self.delta.shape[1]

    def with_reg(self, reg: float) -> "MarginProblem":
        return MarginProblem(self.delta, self.margin, self.example, self.labels, float(reg), self.n_examples)


def hamming(y_true, y) -> np.ndarray:
    return np.count_nonzero(np.asarray(y_true) != np.asarray(y), axis=-1)


def delta_rows(structure: NetworkStructure, x: np.ndarray, y_alt: np.ndarray) -> sp.csr_matrix:
    """Delta rows for assignments ``x`` (R, n) against alternative labels (R, L)."""
    x = np.asarray(x, dtype=np.int64)
    alt = x.copy()
    alt[:, list(structure.class_vars)] = y_alt
    fam = structure.class_families
    pos = feature_indices(structure, x, fam)
    neg = feature_indices(structure, alt, fam)
    r, k = pos.shape
    rows = np.repeat(np.arange(r), k)
    mat = sp.coo_matrix(
        (np.concatenate([np.ones(r * k), -np.ones(r * k)]),
         (np.concatenate([rows, rows]), np.concatenate([pos.ravel(), neg.ravel()]))),
        shape=(r, structure.n_features),
    ).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def problem_from_pairs(structure: NetworkStructure, data: DiscreteDataset, example: np.ndarray,
                       labels: np.ndarray, margin_kind: MarginKind = "multiclass",
                       reg: float = 1.0) -> MarginProblem:
    """Assemble the rows for explicit (example, labeling) pairs.

    Pairs are sorted lexicographically by (i, y) so the row order is
    independent of how the pairs were collected.
    """
    example = np.asarray(example, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64).reshape(len(example), len(structure.class_vars))
    order = np.lexsort(tuple(labels[:, k] for k in reversed(range(labels.shape[1]))) + (example,))
    example, labels = example[order], labels[order]
    x = data.rows[example]
    y_true = x[:, list(structure.class_vars)]
    dist = hamming(y_true, labels)
    margin = dist.astype(float) if margin_kind == "hamming" else (dist > 0).astype(float)
    delta = delta_rows(structure, x, labels)
    return MarginProblem(delta, margin, example, labels, float(reg), len(data))


def build_delta(structure: NetworkStructure, data: DiscreteDataset, margin_kind: MarginKind = "multiclass",
                reg: float = 1.0, row_cap: int = ROW_CAP) -> MarginProblem:
    """Enumerate every (example, class assignment) row."""
    if margin_kind == "multiclass" and len(structure.class_vars) != 1:
        raise StructureError("multiclass margins need a single class variable; use 'hamming'")
    if margin_kind not in ("multiclass", "hamming"):
        raise ValueError(f"unknown margin kind {margin_kind!r}")
    grid = class_assignments(structure, cap=row_cap)
    t, m = len(data), len(grid)
    example = np.repeat(np.arange(t), m)
    labels = np.tile(grid, (t, 1))
    return problem_from_pairs(structure, data, example, labels, margin_kind, reg)


def mclr(structure: NetworkStructure, w: np.ndarray, data: DiscreteDataset, row_cap: int = ROW_CAP) -> float:
    """Log minimum conditional likelihood ratio over the training set."""
    class_assignments(structure, cap=row_cap)
    scores = class_scores(structure, w, data.rows)
    true_pos = class_grid_positions(structure, data.labels)
    true_score = scores[np.arange(len(data)), true_pos]
    scores[np.arange(len(data)), true_pos] = -np.inf
    return float(np.min(true_score - scores.max(axis=1)))


def slack_convert(gamma: float, slacks, constant: float,
                  direction: Literal["xi_to_eps", "eps_to_xi"]) -> tuple[np.ndarray, float]:
    """Map (xi, C) <-> (eps, B) via eps = gamma * xi and B = C / gamma."""
    if not gamma > 0:
        raise NonpositiveGamma(f"gamma must be positive, got {gamma}")
    slacks = np.asarray(slacks, dtype=float)
    if direction == "xi_to_eps":
        return gamma * slacks, constant / gamma
    if direction == "eps_to_xi":
        return slacks / gamma, constant * gamma
    raise ValueError(f"unknown direction {direction!r}")


def margin_slacks(problem: MarginProblem, w: np.ndarray, gamma: float, eps: np.ndarray) -> np.ndarray:
    """Per-row Delta w - gamma delta + eps_i (positive means strictly satisfied)."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (problem.n_examples,):
        raise DimensionMismatch(f"eps has shape {eps.shape}, expected ({problem.n_examples},)")
    if len(w) != problem.n_features:
        raise DimensionMismatch("weight vector length does not match problem features")
    return problem.delta @ w - gamma * problem.margin + eps[problem.example]


def margin_feasibility(problem: MarginProblem, w: np.ndarray, gamma: float, eps: np.ndarray) -> float:
    """Largest violation gamma delta - eps_i - Delta w over all rows."""
    return float(np.max(-margin_slacks(problem, w, gamma, eps)))
