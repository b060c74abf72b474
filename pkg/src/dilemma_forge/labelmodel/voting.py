"""Majority and weighted voting over a label matrix, plus probabilistic-label rounding."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from math import lcm
from typing import Any, Optional, Sequence

import numpy as np

from ..core import ProbLabel
from ..heuristics.matrix import LabelMatrix

TIE_EPS = 1e-12


@dataclass(frozen=True)
class TiePolicy:
    """How to settle rows whose First and Second tallies are equal.

    ``random`` flips a seeded coin per tied row, ``genweights`` re-tallies the
    row with a fitted generative model's accuracy weights (coin if still
    tied), ``abstain`` leaves the row unlabeled.
    """

    kind: str = "random"
    seed: int = 0
    model: Any = None

    def __post_init__(self):
        if self.kind not in ("random", "genweights", "abstain"):
            raise ValueError(f"unknown tie policy {self.kind!r}")
        if self.kind == "genweights" and self.model is None:
            raise ValueError("genweights tie policy needs a fitted generative model")

    @classmethod
    def random(cls, seed: int = 0) -> "TiePolicy":
        return cls("random", seed)

    @classmethod
    def abstain(cls) -> "TiePolicy":
        return cls("abstain")

    @classmethod
    def generative_weights(cls, model, seed: int = 0) -> "TiePolicy":
        return cls("genweights", seed, model)


class VoteWeights(tuple):
    """Per-heuristic vote weights in [0, 1], ordered like the matrix columns.

    Elements may be floats or ``Decimal``; when every weight is a Decimal
    the tallies are computed exactly.
    """

    def __new__(cls, values: Sequence):
        vals = tuple(v if isinstance(v, (Decimal, Fraction)) else float(v) for v in values)
        for v in vals:
            if not (0 <= v <= 1):
                raise ValueError(f"vote weight {v} outside [0, 1]")
        return super().__new__(cls, vals)

    @property
    def is_exact(self) -> bool:
        return all(isinstance(v, (Decimal, Fraction)) for v in self)

    def as_floats(self) -> np.ndarray:
        return np.array([float(v) for v in self], dtype=float)


def _settle(decisions: np.ndarray, tied: np.ndarray, L: LabelMatrix, policy: TiePolicy):
    idx = np.flatnonzero(tied)
    if idx.size == 0 or policy.kind == "abstain":
        decisions[idx] = 0
        return decisions
    rng = np.random.default_rng(policy.seed)
    if policy.kind == "genweights":
        w_acc = np.asarray(policy.model.w_acc, dtype=float)
        if w_acc.shape[0] != L.n_heuristics:
            raise ValueError(f"generative model has {w_acc.shape[0]} heuristics, "
                             f"matrix has {L.n_heuristics}")
        t = L.cells[idx].astype(float) @ w_acc
        decided = np.abs(t) > TIE_EPS
        decisions[idx[decided]] = np.sign(t[decided]).astype(np.int8)
        idx = idx[~decided]
    coins = rng.integers(0, 2, size=idx.size)
    decisions[idx] = np.where(coins == 1, 1, -1)
    return decisions


def majority_vote(L: LabelMatrix, tie_policy: Optional[TiePolicy] = None) -> np.ndarray:
    """Unweighted vote per row. Returns label codes (+1 First, -1 Second, 0 Abstain).

    Abstentions are ignored; rows where everyone abstains count as ties.
    """
    tie_policy = tie_policy or TiePolicy.random()
    if L.n_scenarios == 0 or L.n_heuristics == 0:
        raise ValueError("label matrix is empty")
    tally = L.cells.astype(np.int64).sum(axis=1)
    decisions = np.sign(tally).astype(np.int8)
    return _settle(decisions, tally == 0, L, tie_policy)


def _exact_integer_weights(weights: VoteWeights) -> list:
    fracs = [Fraction(v) for v in weights]
    scale = 1
    for f in fracs:
        scale = lcm(scale, f.denominator)
    return [int(f * scale) for f in fracs]


def weighted_vote(L: LabelMatrix, weights, tie_policy: Optional[TiePolicy] = None) -> np.ndarray:
    """Popularity-weighted vote: each heuristic's vote counts ``weights[m]``."""
    tie_policy = tie_policy or TiePolicy.random()
    if not isinstance(weights, VoteWeights):
        weights = VoteWeights(weights)
    if len(weights) != L.n_heuristics:
        raise ValueError(f"{len(weights)} weights for {L.n_heuristics} heuristics")
    if weights.is_exact:
        ints = _exact_integer_weights(weights)
        if max(ints, default=0) * max(L.n_heuristics, 1) < 2 ** 62:
            tally = L.cells.astype(np.int64) @ np.array(ints, dtype=np.int64)
        else:
            tally = L.cells.astype(object) @ np.array(ints, dtype=object)
        sign = np.array([int(t > 0) - int(t < 0) for t in tally], dtype=np.int8)
        tied = sign == 0
    else:
        tally = L.cells.astype(float) @ weights.as_floats()
        tied = np.abs(tally) <= TIE_EPS
        sign = np.where(tied, 0, np.sign(tally)).astype(np.int8)
    return _settle(sign, tied, L, tie_policy)


def round_labels(p, seed: int = 0) -> np.ndarray:
    """Harden probabilistic labels: +1 above 0.5, -1 below, seeded coin at exactly 0.5."""
    arr = np.array([x.p_first if isinstance(x, ProbLabel) else float(x) for x in p], dtype=float)
    out = np.where(arr > 0.5, 1, -1).astype(np.int8)
    ties = np.flatnonzero(arr == 0.5)
    coins = np.random.default_rng(seed).integers(0, 2, size=ties.size)
    out[ties] = np.where(coins == 1, 1, -1)
    return out
