"""Text formats: network files, parameter files and dataset metadata.

Network file::

    nodes 3
    y 2 -
    x1 2 y
    x2 3 y x1
    class y

Parameter file, one line per CPT column ``node b theta_0 ... theta_{k-1}``.
A file starting with ``# format: log-weights`` stores unnormalized
log-weights ``w`` instead of probabilities; such files come from the
Markov-network trainer and are not valid CPTs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError, StructureError
from .network import LOG_FLOOR, NetworkStructure

LOG_WEIGHTS_TAG = "# format: log-weights"


def _lines(path: str | Path) -> list[tuple[int, list[str]]]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].split()
            if body:
                out.append((lineno, body))
    return out


def read_network(path: str | Path) -> NetworkStructure:
    lines = _lines(path)
    if not lines or lines[0][1][0] != "nodes" or len(lines[0][1]) != 2:
        raise StructureError(f"{path}: expected a 'nodes N' header")
    try:
        n = int(lines[0][1][1])
    except ValueError:
        raise StructureError(f"{path}: node count is not an integer") from None
    if len(lines) != n + 2:
        raise StructureError(f"{path}: expected {n} node lines and a class line")
    nodes = []
    for lineno, tok in lines[1:n + 1]:
        if len(tok) < 3:
            raise StructureError(f"{path}:{lineno}: expected 'name arity parents'")
        try:
            arity = int(tok[1])
        except ValueError:
            raise StructureError(f"{path}:{lineno}: arity is not an integer") from None
        parents = [] if tok[2:] == ["-"] else tok[2:]
        nodes.append((tok[0], arity, parents))
    lineno, tok = lines[n + 1]
    if tok[0] != "class" or len(tok) < 2:
        raise StructureError(f"{path}:{lineno}: expected 'class name ...'")
    return NetworkStructure.from_nodes(nodes, tok[1:])


def write_network(path: str | Path, structure: NetworkStructure) -> None:
    with open(path, "w") as fh:
        fh.write(f"nodes {structure.n_nodes}\n")
        for j, name in enumerate(structure.names):
            parents = " ".join(structure.names[p] for p in structure.parents[j]) or "-"
            fh.write(f"{name} {structure.arities[j]} {parents}\n")
        fh.write("class " + " ".join(structure.names[c] for c in structure.class_vars) + "\n")


def load_structure(name: str) -> NetworkStructure:
    """A built-in name or a path to a network file."""
    from .synth import builtin_structures

    if Path(name).is_file():
        return read_network(name)
    return builtin_structures(name)


def write_params(path: str | Path, structure: NetworkStructure, w: np.ndarray, log_weights: bool = False) -> None:
    """Write one line per CPT column; probabilities unless ``log_weights``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (structure.n_features,):
        raise DataError("parameter vector does not match the structure")
    vals = w if log_weights else np.exp(w)
    with open(path, "w") as fh:
        if log_weights:
            fh.write(LOG_WEIGHTS_TAG + "\n")
        for j, name in enumerate(structure.names):
            k = structure.arities[j]
            for b in range(structure.n_configs[j]):
                start = structure.cell(j, 0, b)
                fh.write(f"{name} {b} " + " ".join(repr(float(v)) for v in vals[start:start + k]) + "\n")


def read_params(path: str | Path, structure: NetworkStructure) -> tuple[np.ndarray, bool]:
    """Log-weights and whether the file held unnormalized log-weights."""
    with open(path) as fh:
        log_weights = fh.readline().strip() == LOG_WEIGHTS_TAG
    w = np.full(structure.n_features, np.nan)
    for lineno, tok in _lines(path):
        try:
            j = structure.index(tok[0])
        except (KeyError, StructureError):
            raise DataError(f"{path}:{lineno}: unknown node {tok[0]!r}") from None
        k = structure.arities[j]
        if len(tok) != k + 2:
            raise DataError(f"{path}:{lineno}: expected {k} values for {tok[0]!r}")
        try:
            b = int(tok[1])
            vals = np.array([float(v) for v in tok[2:]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed number") from None
        if not 0 <= b < structure.n_configs[j]:
            raise DataError(f"{path}:{lineno}: parent configuration {b} out of range")
        if not log_weights:
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: probabilities must be finite and nonnegative")
            with np.errstate(divide="ignore"):
                vals = np.maximum(np.log(vals), LOG_FLOOR)
        start = structure.cell(j, 0, b)
        w[start:start + k] = vals
    if np.any(np.isnan(w)):
        raise DataError(f"{path}: missing CPT columns")
    return w, log_weights


def write_metadata(path: str | Path, **fields) -> None:
    with open(path, "w") as fh:
        json.dump(fields, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_metadata(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def metadata_path(data_path: str | Path) -> Path:
    p = Path(data_path)
    return p.with_name(p.name + ".meta.json")
