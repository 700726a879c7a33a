"""Skewed generative models, ancestral sampling and built-in structures.

Random streams use numpy's PCG64 bit generator seeded directly with the
integer seed (``numpy.random.Generator(PCG64(seed))``).  Independent streams
for repetitions use ``seed + rep``.
"""

from __future__ import annotations

import re

import numpy as np

from .dataset import DiscreteDataset
from .errors import BadBeta, BadName, BadSize, NotNormalized
from .network import NetworkStructure, is_normalized, params_from_cpts

GENERATOR_ID = "numpy.PCG64"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def dominant_mass(arity: int, beta: float) -> float:
    """Mass of the dominant value; equals beta for binary variables.

    Linear in beta, mapping 0.5 to the uniform mass 1/arity and 1 to 1.
    """
    if not 0.5 <= beta <= 1.0:
        raise BadBeta(f"beta must lie in [0.5, 1], got {beta}")
    if arity == 2:
        return float(beta)
    return 1.0 / arity + (beta - 0.5) * 2.0 * (1.0 - 1.0 / arity)


def skewed_cpt(arity: int, n_configs: int, beta: float, rng: np.random.Generator) -> np.ndarray:
    """(n_configs, arity) table; each column puts the dominant mass on a random value."""
    if arity < 2:
        raise ValueError("arity must be at least 2")
    top = dominant_mass(arity, beta)
    rest = (1.0 - top) / (arity - 1)
    table = np.full((n_configs, arity), rest)
    hot = rng.integers(0, arity, size=n_configs)
    table[np.arange(n_configs), hot] = top
    # Columns then sum to top + (1 - top) up to one rounding of the share.
    return table


def skewed_params(structure: NetworkStructure, beta: float, seed: int) -> np.ndarray:
    """Log-weights of a skewed generative model (every node, roots included)."""
    rng = make_rng(seed)
    cpts = [skewed_cpt(structure.arities[j], structure.n_configs[j], beta, rng) for j in range(structure.n_nodes)]
    return params_from_cpts(structure, cpts)


def ancestral_sample(structure: NetworkStructure, w: np.ndarray, n: int,
                     seed: int | np.random.Generator) -> DiscreteDataset:
    """``n`` independent draws, nodes sampled in topological order."""
    if not is_normalized(structure, w, tol=1e-8):
        raise NotNormalized("ancestral sampling needs normalized parameters")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    theta = np.exp(np.asarray(w, float))
    x = np.zeros((n, structure.n_nodes), dtype=np.int64)
    u = rng.random((n, structure.n_nodes))
    for j in structure.order:
        b = np.zeros(n, dtype=np.int64)
        for p, s in zip(structure.parents[j], structure.strides[j]):
            b += x[:, p] * s
        k = structure.arities[j]
        start = structure.offsets[j] + b * k
        cdf = np.cumsum(theta[start[:, None] + np.arange(k)], axis=1)
        cdf /= cdf[:, -1:]
        x[:, j] = np.minimum((u[:, j:j + 1] > cdf).sum(axis=1), k - 1)
    return DiscreteDataset(structure, x)


def prop2_sat() -> NetworkStructure:
    """Class ``y`` with a root parent, three plain children, and a child
    ``c`` whose co-parent ``z`` is itself a child of ``y`` (moralized)."""
    return NetworkStructure.from_nodes([
        ("p", 2, []),
        ("y", 2, ["p"]),
        ("x1", 2, ["y"]),
        ("x2", 2, ["y"]),
        ("x3", 2, ["y"]),
        ("z", 2, ["y"]),
        ("c", 2, ["y", "z"]),
    ], ["y"])


def prop2_unsat() -> NetworkStructure:
    """Like :func:`prop2_sat` but ``c``'s co-parent ``z`` is a root not
    adjacent to ``y``."""
    return NetworkStructure.from_nodes([
        ("p", 2, []),
        ("y", 2, ["p"]),
        ("x1", 2, ["y"]),
        ("x2", 2, ["y"]),
        ("x3", 2, ["y"]),
        ("z", 2, []),
        ("c", 2, ["y", "z"]),
    ], ["y"])


def hmm_chain(length: int, children_per_state: int, arity: int = 2, obs_arity: int = 2) -> NetworkStructure:
    """Class chain y1 -> ... -> yL, each state with its own observation children."""
    if length < 1 or children_per_state < 1:
        raise BadSize("hmm_chain needs length >= 1 and children_per_state >= 1")
    nodes = []
    for k in range(1, length + 1):
        nodes.append((f"y{k}", arity, [f"y{k - 1}"] if k > 1 else []))
    for k in range(1, length + 1):
        for m in range(1, children_per_state + 1):
            nodes.append((f"x{k}_{m}", obs_arity, [f"y{k}"]))
    return NetworkStructure.from_nodes(nodes, [f"y{k}" for k in range(1, length + 1)])


_HMM = re.compile(r"hmm_chain\((\d+),\s*(\d+)\)$")


def builtin_structures(name: str) -> NetworkStructure:
    """Look up ``prop2_sat``, ``prop2_unsat`` or ``hmm_chain(L, m)``."""
    name = name.strip()
    if name == "prop2_sat":
        return prop2_sat()
    if name == "prop2_unsat":
        return prop2_unsat()
    m = _HMM.match(name)
    if m:
        return hmm_chain(int(m.group(1)), int(m.group(2)))
    raise BadName(f"unknown built-in structure {name!r}")
