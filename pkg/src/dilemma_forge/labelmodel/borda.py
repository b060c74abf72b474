"""Borda popularity of ranked strategies and its conversion to vote weights."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping, Sequence

import numpy as np

from .voting import VoteWeights


@dataclass(frozen=True)
class StrategyRanking:
    """One respondent's coded ranking; 1 is most preferred and ties share a rank.

    Strategies absent from ``ranks`` are tied one place below the worst explicit rank.
    """

    respondent_id: str
    ranks: Mapping[str, int]

    def __post_init__(self):
        if not self.ranks:
            raise ValueError(f"ranking for {self.respondent_id!r} has no explicit ranks")
        for name, r in self.ranks.items():
            if int(r) != r or r < 1:
                raise ValueError(f"rank of {name!r} must be a positive integer, got {r}")

    def effective_ranks(self, strategies: Sequence[str]) -> np.ndarray:
        unknown = set(self.ranks) - set(strategies)
        if unknown:
            raise ValueError(f"ranking {self.respondent_id!r} names unknown strategies "
                             f"{sorted(unknown)}")
        floor = max(self.ranks.values()) + 1
        return np.array([self.ranks.get(s, floor) for s in strategies], dtype=int)


def respondent_borda(ranking: StrategyRanking, strategies: Sequence[str]) -> np.ndarray:
    """Number of strategies ranked strictly below each strategy."""
    r = ranking.effective_ranks(strategies)
    return (r[None, :] > r[:, None]).sum(axis=1)


def borda_counts(rankings: Sequence[StrategyRanking], strategies: Sequence[str]) -> np.ndarray:
    """Mean Borda count per strategy over all respondents."""
    if not rankings:
        raise ValueError("no rankings given")
    strategies = list(strategies)
    per = np.vstack([respondent_borda(r, strategies) for r in rankings])
    return per.mean(axis=0)


def scale_weights(counts: Sequence, n_strategies: int, method: str = "max") -> VoteWeights:
    """Map mean Borda counts to [0, 1] vote weights.

    ``max`` divides by the largest attainable count ``n_strategies - 1``;
    ``minmax`` rescales the observed range instead. Arithmetic is decimal so
    table values such as 3.42 map to exactly 0.684.
    """
    if n_strategies < 2:
        raise ValueError("need at least two strategies")
    dec = [c if isinstance(c, Decimal) else Decimal(str(c)) for c in counts]
    top = Decimal(n_strategies - 1)
    for c in dec:
        if c < 0 or c > top:
            raise ValueError(f"Borda count {c} outside [0, {top}]")
    if method == "max":
        return VoteWeights([c / top for c in dec])
    if method == "minmax":
        lo, hi = min(dec), max(dec)
        if hi == lo:
            return VoteWeights([Decimal(1)] * len(dec))
        return VoteWeights([(c - lo) / (hi - lo) for c in dec])
    raise ValueError(f"unknown scaling method {method!r}")
