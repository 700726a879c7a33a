"""Complete discrete datasets bound to a network structure."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidAssignment, SchemaMismatch
from .network import NetworkStructure, check_assignment


@dataclass(frozen=True)
class DiscreteDataset:
    """Rows of complete assignments, columns in the structure's node order."""

    structure: NetworkStructure
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2:
            raise DataError("dataset rows must be a 2-D array")
        try:
            check_assignment(self.structure, rows)
        except InvalidAssignment as exc:
            raise DataError(str(exc)) from None
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def columns(self) -> tuple[str, ...]:
        return self.structure.names

    @property
    def labels(self) -> np.ndarray:
        """(T, L) class values."""
        return self.rows[:, list(self.structure.class_vars)]

    def subset(self, idx) -> "DiscreteDataset":
        return DiscreteDataset(self.structure, self.rows[np.asarray(idx)])


def read_csv(path: str | Path, structure: NetworkStructure) -> DiscreteDataset:
    """Load a CSV whose header names the structure's variables (any order)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if sorted(header) != sorted(structure.names):
            raise SchemaMismatch(f"{path}: header {header} does not match network nodes {list(structure.names)}")
        perm = [header.index(name) for name in structure.names]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(rec)}")
            try:
                vals = [int(rec[k]) for k in perm]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer cell") from None
            for j, v in enumerate(vals):
                if not 0 <= v < structure.arities[j]:
                    raise DataError(f"{path}:{lineno}: value {v} out of range for {structure.names[j]!r}")
            rows.append(vals)
    return DiscreteDataset(structure, np.array(rows, dtype=np.int64).reshape(len(rows), structure.n_nodes))


def write_csv(path: str | Path, data: DiscreteDataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(data.columns)
        writer.writerows(data.rows.tolist())
