"""Synthetic respondent populations with known ground truth.

The kidney-exchange generator draws each respondent's lexicographic strategy
from a Plackett-Luce model whose item weights are the mean Borda counts of
the six coded strategies; a respondent decides each contest by the first
strategy in their ordering that distinguishes the two patients.
"""

from __future__ import annotations

import itertools
from decimal import Decimal
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import KE_FEATURES, KE_SCHEMA, MM_SCHEMA, Alternative, Choice, Dataset, Scenario, Signal
from .ingest import KE_PROFILES, KE_STRATEGIES, ke_scenario_type
from .labelmodel.borda import StrategyRanking

# Mean Borda counts reported for the coded kidney-exchange strategies.
KE_TABLE_BORDA = {
    "choose_younger": Decimal("3.42"),
    "choose_drinks_less": Decimal("2.71"),
    "choose_no_health_issues": Decimal("2.10"),
    "choose_older": Decimal("0.11"),
    "choose_drinks_more": Decimal("0.04"),
    "choose_health_issues": Decimal("0.19"),
}

# strategy -> (feature index, preferred feature value)
STRATEGY_RULE = {
    "choose_younger": (0, 0), "choose_older": (0, 1),
    "choose_drinks_less": (1, 0), "choose_drinks_more": (1, 1),
    "choose_no_health_issues": (2, 0), "choose_health_issues": (2, 1),
}
_OPPOSITE = {}
for _a, _b in zip(KE_STRATEGIES[:3], KE_STRATEGIES[3:]):
    _OPPOSITE[_a], _OPPOSITE[_b] = _b, _a


def ordering_probabilities(weights: Optional[Mapping[str, Decimal]] = None) -> dict:
    """Exact Plackett-Luce probability of each full lexicographic ordering.

    After a strategy is drawn its opposite leaves the pool, so each ordering
    names three strategies on three distinct features (48 orderings).
    """
    w = {k: Fraction(v) for k, v in (weights or KE_TABLE_BORDA).items()}
    out = {}

    def walk(prefix, pool, prob):
        if not pool:
            out[tuple(prefix)] = prob
            return
        total = sum(w[s] for s in pool)
        for s in pool:
            rest = [t for t in pool if t != s and t != _OPPOSITE[s]]
            walk(prefix + [s], rest, prob * w[s] / total)

    walk([], list(KE_STRATEGIES), Fraction(1))
    return out


def decide(ordering: Sequence[str], a: Sequence[int], b: Sequence[int]) -> Choice:
    for s in ordering:
        f, pref = STRATEGY_RULE[s]
        if a[f] != b[f]:
            return Choice.FIRST if a[f] == pref else Choice.SECOND
    raise ValueError("identical profiles cannot be decided")


def _allocate(probs: dict, n: int) -> list:
    """Largest-remainder quota: ordering per respondent slot, in a fixed order."""
    keys = sorted(probs)
    exact = [probs[k] * n for k in keys]
    base = [int(x) for x in exact]
    left = n - sum(base)
    by_rem = sorted(range(len(keys)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in by_rem[:left]:
        base[i] += 1
    return [k for k, c in zip(keys, base) for _ in range(c)]


def ke_population(n_rows: int, seed: int = 0, weights: Optional[Mapping[str, Decimal]] = None,
                  explicit_ranks: int = 3):
    """Simulated survey: ``(Dataset, rankings, orderings)``.

    Respondents answer all 28 contests in shuffled order and random
    orientation; the last respondent is truncated so exactly ``n_rows``
    scenarios come back. Orderings are assigned by quota rather than drawn
    independently, so strategy shares track their probabilities closely.
    Each ranking lists the first ``explicit_ranks`` strategies of the
    respondent's ordering as ranks 1, 2, ...
    """
    if n_rows < 1:
        raise ValueError("n_rows must be positive")
    rng = np.random.default_rng(seed)
    pairs = list(itertools.combinations(KE_PROFILES, 2))
    n_resp = -(-n_rows // len(pairs))
    slots = _allocate(ordering_probabilities(weights), n_resp)
    orderings = [slots[i] for i in rng.permutation(n_resp)]
    scenarios, rankings = [], []
    for r, ordering in enumerate(orderings):
        rid = f"r{r:05d}"
        rankings.append(StrategyRanking(rid, {s: k + 1 for k, s in enumerate(ordering[:explicit_ranks])}))
        for c in rng.permutation(len(pairs)):
            if len(scenarios) == n_rows:
                break
            a, b = pairs[c]
            if rng.integers(0, 2):
                a, b = b, a
            scenarios.append(Scenario(f"{rid}:{c}", Alternative(dict(zip(KE_FEATURES, a))),
                                      Alternative(dict(zip(KE_FEATURES, b))), rid,
                                      decide(ordering, a, b), ke_scenario_type(a, b)))
    return Dataset(KE_SCHEMA, scenarios), rankings, orderings


def analytic_agreement(weights: Optional[Mapping[str, Decimal]] = None) -> dict:
    """Exact accuracy of every strategy-as-heuristic over the complete design.

    Accuracy is measured on the contests where the heuristic votes, averaged
    over the ordering distribution.
    """
    probs = ordering_probabilities(weights)
    pairs = list(itertools.combinations(KE_PROFILES, 2))
    out = {}
    for s in KE_STRATEGIES:
        f, pref = STRATEGY_RULE[s]
        covered = [(a, b) for a, b in pairs if a[f] != b[f]]
        hits = Fraction(0)
        for ordering, p in probs.items():
            agree = sum(decide(ordering, a, b) == (Choice.FIRST if a[f] == pref else Choice.SECOND)
                        for a, b in covered)
            hits += p * agree
        out[s] = hits / len(covered)
    return out


def mm_population(n_respondents: int, seed: int = 0, noise: float = 0.1,
                  session_length: int = 13) -> Dataset:
    """Small abstract-feature dilemmas answered by a noisy save-more-humans rule."""
    rng = np.random.default_rng(seed)
    feats = MM_SCHEMA.features
    human = [f for f in feats if f not in ("non_human", "passenger", "law_abiding", "law_violating")]
    scenarios = []
    for r in range(n_respondents):
        rid = f"m{r:04d}"
        for k in range(session_length):
            sides = []
            for first in (True, False):
                counts = dict.fromkeys(feats, 0)
                n_h = int(rng.integers(0, 5))
                n_p = int(rng.integers(0, 3))
                counts["human"] = n_h
                counts["non_human"] = n_p
                for f in rng.choice(human[1:], size=min(n_h, 3), replace=False):
                    counts[str(f)] = int(rng.integers(1, n_h + 1))
                passengers = bool(first and rng.integers(0, 2))
                signal = Signal.NONE if passengers else Signal(rng.choice(["green", "red", "none"]))
                total = n_h + n_p
                counts["passenger"] = total if passengers else 0
                counts["law_abiding"] = total if signal is Signal.GREEN else 0
                counts["law_violating"] = total if signal is Signal.RED else 0
                sides.append(Alternative(counts, not first, signal, passengers))
            # the respondent spares the alternative with more humans on it
            diff = sides[0].counts["human"] - sides[1].counts["human"]
            truth = Choice.FIRST if (diff, rng.random()) > (0, 0.5) else Choice.SECOND
            if rng.random() < noise:
                truth = truth.flip()
            scenarios.append(Scenario(f"{rid}:{k}", sides[0], sides[1], rid, truth, None))
    return Dataset(MM_SCHEMA, scenarios)
