"""Label matrices: the scenarios x heuristics grid of candidate labels."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import CandidateLabel, Dataset
from .dsl import HeuristicSpec, check_schema, columns_of, evaluate_columns


@dataclass(frozen=True)
class LabelMatrix:
    """N x M grid with +1 (First), -1 (Second), 0 (Abstain)."""

    cells: np.ndarray
    heuristic_names: tuple
    scenario_ids: tuple

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.ndim != 2:
            raise ValueError("label matrix must be two-dimensional")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "heuristic_names", tuple(self.heuristic_names))
        object.__setattr__(self, "scenario_ids", tuple(self.scenario_ids))
        n, m = cells.shape
        if len(self.heuristic_names) != m or len(self.scenario_ids) != n:
            raise ValueError(f"label matrix {cells.shape} does not match "
                             f"{len(self.scenario_ids)} ids x {len(self.heuristic_names)} names")
        if not np.isin(cells, (-1, 0, 1)).all():
            raise ValueError("label matrix cells must be in {-1, 0, 1}")

    @classmethod
    def from_array(cls, cells, names=None, ids=None) -> "LabelMatrix":
        cells = np.asarray(cells, dtype=np.int8)
        n, m = cells.shape
        names = names if names is not None else [f"h{j}" for j in range(m)]
        ids = ids if ids is not None else [str(i) for i in range(n)]
        return cls(cells, names, ids)

    @property
    def n_scenarios(self) -> int:
        return self.cells.shape[0]

    @property
    def n_heuristics(self) -> int:
        return self.cells.shape[1]

    def __getitem__(self, ij):
        return CandidateLabel(int(self.cells[ij]))

    def rows(self, indices: Sequence[int]) -> "LabelMatrix":
        idx = np.asarray(indices, dtype=int)
        return LabelMatrix(self.cells[idx], self.heuristic_names,
                           [self.scenario_ids[i] for i in idx])

    def drop_column(self, m: int) -> "LabelMatrix":
        keep = [j for j in range(self.n_heuristics) if j != m]
        return self.select_columns(keep)

    def select_columns(self, columns: Sequence[int]) -> "LabelMatrix":
        columns = list(columns)
        return LabelMatrix(self.cells[:, columns],
                           [self.heuristic_names[j] for j in columns], self.scenario_ids)

    def flipped(self) -> "LabelMatrix":
        return LabelMatrix(-self.cells, self.heuristic_names, self.scenario_ids)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario_id", *self.heuristic_names])
        sym = {1: "F", -1: "S", 0: "-"}
        for sid, row in zip(self.scenario_ids, self.cells):
            w.writerow([sid, *(sym[int(v)] for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LabelMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:1] != ["scenario_id"]:
            raise ValueError("label matrix CSV must start with a 'scenario_id' header")
        names = rows[0][1:]
        ids, cells = [], []
        for r in rows[1:]:
            if not r:
                continue
            if len(r) != len(names) + 1:
                raise ValueError(f"row {r[0]!r} has {len(r) - 1} cells, expected {len(names)}")
            ids.append(r[0])
            cells.append([int(CandidateLabel.from_symbol(c)) for c in r[1:]])
        arr = np.array(cells, dtype=np.int8).reshape(len(ids), len(names))
        return cls(arr, names, ids)


def apply_all(suite: Sequence[HeuristicSpec], d: Dataset) -> LabelMatrix:
    """Evaluate every heuristic on every scenario, preserving input order on both axes."""
    if not suite:
        raise ValueError("heuristic suite is empty")
    for h in suite:
        check_schema(h, d)
    n = len(d)
    env = columns_of(d.feature_matrix(), d.schema)
    cells = np.zeros((n, len(suite)), dtype=np.int8)
    for j, h in enumerate(suite):
        cells[:, j] = evaluate_columns(h, env, n)
    return LabelMatrix(cells, [h.name for h in suite], d.ids)
