"""Discrete Bayesian networks in log-space (exponential-family) form.

A network over ``n`` nodes is parameterized by one weight per CPT cell
``(j, a, b)``: node ``j``, child value ``a``, parent configuration ``b``.
Cells are laid out contiguously per CPT column, so the flat feature index is
``offset[j] + b * arity[j] + a``.  Parent configurations are numbered
row-major over the declared parent order (last parent varies fastest).
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    BadArity,
    BadParentIndex,
    CycleDetected,
    InvalidAssignment,
    LabelSpaceTooLarge,
    MissingEvidence,
    StructureError,
)

#: Log-weight used for zero probabilities; e^-30 ~ 9.4e-14.
LOG_FLOOR = -30.0
#: Tolerance used by the normalized / subnormalized status checks.
NORM_TOL = 1e-10


@dataclass(frozen=True)
class NetworkStructure:
    """A DAG over discrete variables with designated class variable(s).

    Instances are validated on construction and immutable afterwards.
    """

    names: tuple[str, ...]
    arities: tuple[int, ...]
    parents: tuple[tuple[int, ...], ...]
    class_vars: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(s) for s in self.names))
        object.__setattr__(self, "arities", tuple(int(a) for a in self.arities))
        object.__setattr__(self, "parents", tuple(tuple(int(p) for p in ps) for ps in self.parents))
        object.__setattr__(self, "class_vars", tuple(int(c) for c in self.class_vars))
        object.__setattr__(self, "_order", validate_structure(self))

    @classmethod
    def from_nodes(cls, nodes: Sequence[tuple[str, int, Sequence[str]]],
                   class_names: Sequence[str]) -> "NetworkStructure":
        """Build from ``(name, arity, parent_names)`` triples."""
        names = [n[0] for n in nodes]
        if len(set(names)) != len(names):
            raise StructureError("duplicate node names")
        pos = {name: i for i, name in enumerate(names)}
        try:
            parents = [[pos[p] for p in n[2]] for n in nodes]
            class_vars = [pos[c] for c in class_names]
        except KeyError as exc:
            raise BadParentIndex(f"unknown node name {exc.args[0]!r}") from None
        return cls(names, [n[1] for n in nodes], parents, class_vars)

    # -- graph helpers -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    @property
    def order(self) -> tuple[int, ...]:
        """Topological order (smallest available index first)."""
        return self._order

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids = [[] for _ in self.names]
        for j, ps in enumerate(self.parents):
            for p in ps:
                kids[p].append(j)
        return tuple(tuple(k) for k in kids)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise BadParentIndex(f"unknown node {name!r}") from None

    def adjacent(self, u: int, v: int) -> bool:
        return u in self.parents[v] or v in self.parents[u]

    def family(self, j: int) -> tuple[int, ...]:
        return (j,) + self.parents[j]

    @cached_property
    def class_families(self) -> tuple[int, ...]:
        """Nodes whose CPT mentions at least one class variable."""
        cls_set = set(self.class_vars)
        return tuple(j for j in range(self.n_nodes) if cls_set.intersection(self.family(j)))

    # -- parameter layout ----------------------------------------------

    @cached_property
    def n_configs(self) -> tuple[int, ...]:
        return tuple(int(np.prod([self.arities[p] for p in ps], dtype=np.int64)) for ps in self.parents)

    @cached_property
    def strides(self) -> tuple[tuple[int, ...], ...]:
        out = []
        for ps in self.parents:
            s, acc = [], 1
            for p in reversed(ps):
                s.append(acc)
                acc *= self.arities[p]
            out.append(tuple(reversed(s)))
        return tuple(out)

    @cached_property
    def offsets(self) -> np.ndarray:
        sizes = [a * c for a, c in zip(self.arities, self.n_configs)]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    @property
    def n_features(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def column_starts(self) -> np.ndarray:
        """Flat start index of every CPT column, ordered by (j, b)."""
        return np.concatenate([
            self.offsets[j] + self.arities[j] * np.arange(self.n_configs[j])
            for j in range(self.n_nodes)
        ]).astype(np.int64)

    @cached_property
    def column_node(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_nodes), self.n_configs)

    @cached_property
    def feature_column(self) -> np.ndarray:
        """Column id of every flat feature."""
        return np.repeat(np.arange(len(self.column_starts)), np.repeat(self.arities, self.n_configs))

    @property
    def n_columns(self) -> int:
        return len(self.column_starts)

    def cell(self, j: int, a: int, b: int) -> int:
        """Flat feature index of CPT cell (j, a, b)."""
        return int(self.offsets[j] + b * self.arities[j] + a)

    def config_index(self, j: int, values: Sequence[int]) -> int:
        """Parent configuration index of node ``j`` for a full assignment."""
        return int(sum(values[p] * s for p, s in zip(self.parents[j], self.strides[j])))

    def config_values(self, j: int, b: int) -> tuple[int, ...]:
        """Inverse of :meth:`config_index`: parent values for configuration ``b``."""
        return tuple((b // s) % self.arities[p] for p, s in zip(self.parents[j], self.strides[j]))

    @cached_property
    def class_grid(self) -> np.ndarray:
        """All joint class assignments in lexicographic order."""
        return class_assignments(self)


def validate_structure(structure: NetworkStructure) -> tuple[int, ...]:
    """Check a structure and return its topological order.

    Kahn's algorithm with a min-heap, so among valid orders the one that
    prefers smaller indices is returned.
    """
    n = len(structure.names)
    if len(structure.arities) != n or len(structure.parents) != n:
        raise StructureError("names, arities and parents must have equal length")
    for j, a in enumerate(structure.arities):
        if a < 2:
            raise BadArity(f"node {structure.names[j]!r} has arity {a} < 2")
    indeg = [0] * n
    kids = [[] for _ in range(n)]
    for j, ps in enumerate(structure.parents):
        if len(set(ps)) != len(ps):
            raise BadParentIndex(f"duplicate parent for node {j}")
        for p in ps:
            if not 0 <= p < n:
                raise BadParentIndex(f"parent index {p} of node {j} out of range")
            if p == j:
                raise BadParentIndex(f"node {j} is its own parent")
            indeg[j] += 1
            kids[p].append(j)
    cv = structure.class_vars
    if not cv or len(set(cv)) != len(cv) or any(not 0 <= c < n for c in cv):
        raise StructureError("class_vars must be a non-empty set of distinct node indices")

    heap = [j for j in range(n) if indeg[j] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        j = heapq.heappop(heap)
        order.append(j)
        for k in kids[j]:
            indeg[k] -= 1
            if indeg[k] == 0:
                heapq.heappush(heap, k)
    if len(order) != n:
        raise CycleDetected("parent relation contains a directed cycle")
    return tuple(order)


def class_assignments(structure: NetworkStructure, cap: int | None = None) -> np.ndarray:
    card = [structure.arities[c] for c in structure.class_vars]
    total = int(np.prod(card, dtype=np.int64))
    if cap is not None and total > cap:
        raise LabelSpaceTooLarge(f"{total} joint class assignments exceed cap {cap}")
    return np.array(list(itertools.product(*map(range, card))), dtype=np.int64).reshape(total, len(card))


def class_grid_positions(structure: NetworkStructure, labels) -> np.ndarray:
    """Row index into ``class_grid`` of each (N, L) label vector."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, len(structure.class_vars))
    pos = np.zeros(len(labels), dtype=np.int64)
    for k, c in enumerate(structure.class_vars):
        pos = pos * structure.arities[c] + labels[:, k]
    return pos


def check_assignment(structure: NetworkStructure, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1:] != (structure.n_nodes,) or not np.issubdtype(x.dtype, np.integer):
        raise InvalidAssignment(f"expected integer assignment(s) of length {structure.n_nodes}")
    if np.any(x < 0) or np.any(x >= np.asarray(structure.arities)):
        raise InvalidAssignment("assignment value outside node arity")
    return x


def feature_indices(structure: NetworkStructure, x, nodes: Sequence[int] | None = None) -> np.ndarray:
    """Active flat indices of phi(x), one per node (or per node in ``nodes``).

    Accepts a single assignment or a batch with the node axis last.
    """
    x = np.asarray(x, dtype=np.int64)
    nodes = range(structure.n_nodes) if nodes is None else nodes
    cols = []
    for j in nodes:
        b = np.zeros(x.shape[:-1], dtype=np.int64)
        for p, s in zip(structure.parents[j], structure.strides[j]):
            b = b + x[..., p] * s
        cols.append(structure.offsets[j] + b * structure.arities[j] + x[..., j])
    return np.stack(cols, axis=-1)


def feature_vector(structure: NetworkStructure, x) -> np.ndarray:
    """Indicator vector phi(x) of length D with one active cell per node."""
    x = check_assignment(structure, x)
    if x.ndim != 1:
        raise InvalidAssignment("feature_vector takes a single assignment")
    phi = np.zeros(structure.n_features)
    phi[feature_indices(structure, x)] = 1.0
    return phi


def log_prob(structure: NetworkStructure, w: np.ndarray, x) -> np.ndarray | float:
    """phi(x) . w; the log joint probability when ``w`` is normalized."""
    x = check_assignment(structure, x)
    out = np.asarray(w)[feature_indices(structure, x)].sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def normalization_residuals(structure: NetworkStructure, w: np.ndarray) -> np.ndarray:
    """Per-column sum_a exp(w_jab) - 1, ordered by (j, b)."""
    return np.add.reduceat(np.exp(np.asarray(w, dtype=float)), structure.column_starts) - 1.0


def is_normalized(structure: NetworkStructure, w: np.ndarray, tol: float = NORM_TOL) -> bool:
    return bool(np.all(np.abs(normalization_residuals(structure, w)) <= tol))


def is_subnormalized(structure: NetworkStructure, w: np.ndarray, tol: float = NORM_TOL) -> bool:
    return bool(np.all(normalization_residuals(structure, w) <= tol))


def params_from_cpts(structure: NetworkStructure, cpts: Sequence[np.ndarray]) -> np.ndarray:
    """Log-weights from per-node tables of shape (n_configs, arity).

    Zero probabilities are clamped to :data:`LOG_FLOOR`.
    """
    parts = []
    for j, table in enumerate(cpts):
        table = np.asarray(table, dtype=float)
        if table.shape != (structure.n_configs[j], structure.arities[j]):
            raise ValueError(f"CPT for node {structure.names[j]!r} has shape {table.shape}")
        with np.errstate(divide="ignore"):
            parts.append(np.maximum(np.log(table), LOG_FLOOR).ravel())
    return np.concatenate(parts)


def cpts_from_params(structure: NetworkStructure, w: np.ndarray) -> list[np.ndarray]:
    theta = np.exp(np.asarray(w, dtype=float))
    return [theta[structure.offsets[j]:structure.offsets[j + 1]].reshape(structure.n_configs[j], structure.arities[j])
            for j in range(structure.n_nodes)]


def uniform_params(structure: NetworkStructure) -> np.ndarray:
    return -np.log(np.repeat(np.asarray(structure.arities, dtype=float),
                             np.asarray(structure.arities) * np.asarray(structure.n_configs)))


def markov_blanket(structure: NetworkStructure, target: int) -> frozenset[int]:
    """Parents, children and co-parents of ``target``."""
    blanket = set(structure.parents[target])
    for c in structure.children[target]:
        blanket.add(c)
        blanket.update(structure.parents[c])
    blanket.discard(target)
    return frozenset(blanket)


def evidence_blanket(structure: NetworkStructure) -> frozenset[int]:
    """Non-class variables needed to score the class variable(s)."""
    need = set()
    for c in structure.class_vars:
        need |= markov_blanket(structure, c)
    return frozenset(need - set(structure.class_vars))


def class_scores(structure: NetworkStructure, w: np.ndarray, x: np.ndarray,
                 grid: np.ndarray | None = None) -> np.ndarray:
    """Scores phi(x, y) . w restricted to class-bearing CPTs.

    ``x`` is a batch (N, n) of full assignments whose class entries are
    ignored; returns an (N, M) array over the rows of ``grid`` (default: all
    joint class assignments in lexicographic order).
    """
    x = np.asarray(x, dtype=np.int64)
    grid = structure.class_grid if grid is None else grid
    xx = np.repeat(x[:, None, :], len(grid), axis=1)
    xx[:, :, list(structure.class_vars)] = grid[None, :, :]
    idx = feature_indices(structure, xx, structure.class_families)
    return np.asarray(w)[idx].sum(axis=-1)


def _evidence_array(structure: NetworkStructure, evidence) -> np.ndarray:
    x = np.full(structure.n_nodes, -1, dtype=np.int64)
    if isinstance(evidence, Mapping):
        for k, v in evidence.items():
            x[structure.index(k) if isinstance(k, str) else int(k)] = int(v)
    else:
        ev = np.asarray(evidence, dtype=np.int64)
        if ev.shape != (structure.n_nodes,):
            raise InvalidAssignment(f"evidence must have length {structure.n_nodes}")
        x[:] = ev
    missing = [structure.names[j] for j in evidence_blanket(structure) if x[j] < 0]
    if missing:
        raise MissingEvidence(f"no evidence for blanket variable(s) {missing}")
    x[list(structure.class_vars)] = 0
    x[x < 0] = 0  # outside the blanket: accepted and ignored
    return check_assignment(structure, x)


def predict(structure: NetworkStructure, w: np.ndarray, evidence) -> tuple[int, ...]:
    """argmax_y phi(x, y) . w, ties going to the lexicographically smallest y.

    ``evidence`` is either a mapping node -> value or a length-n sequence in
    which class entries are ignored and negative entries mean unobserved.
    """
    x = _evidence_array(structure, evidence)
    scores = class_scores(structure, w, x[None, :])[0]
    return tuple(int(v) for v in structure.class_grid[int(np.argmax(scores))])


def predict_batch(structure: NetworkStructure, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`predict` over full assignments; returns (N, L) labels."""
    scores = class_scores(structure, w, x)
    return structure.class_grid[np.argmax(scores, axis=1)]
