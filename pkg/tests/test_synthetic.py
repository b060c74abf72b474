from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilemma_forge.core import Choice
from dilemma_forge.heuristics import apply_all, builtin_suite
from dilemma_forge.metrics import accuracy
from dilemma_forge.synthetic import (
    STRATEGY_RULE,
    _allocate,
    analytic_agreement,
    decide,
    ke_population,
    mm_population,
    ordering_probabilities,
)


def test_orderings_are_a_distribution():
    probs = ordering_probabilities()
    assert len(probs) == 48
    assert sum(probs.values()) == 1
    assert all(sorted(STRATEGY_RULE[s][0] for s in o) == [0, 1, 2] for o in probs)


def test_single_feature_first_choice():
    probs = ordering_probabilities()
    lead = sum(p for o, p in probs.items() if o[0] == "choose_younger")
    assert lead == Fraction(342, 342 + 271 + 210 + 11 + 4 + 19)


def test_decide():
    ordering = ("choose_drinks_less", "choose_older", "choose_health_issues")
    assert decide(ordering, (0, 1, 0), (1, 0, 0)) is Choice.SECOND
    assert decide(ordering, (0, 0, 0), (1, 0, 1)) is Choice.SECOND
    assert decide(ordering, (0, 0, 1), (0, 0, 0)) is Choice.FIRST
    with pytest.raises(ValueError):
        decide(ordering, (1, 1, 1), (1, 1, 1))


@given(st.integers(1, 500))
def test_quota_allocation(n):
    probs = ordering_probabilities()
    slots = _allocate(probs, n)
    assert len(slots) == n
    for o, p in probs.items():
        assert abs(slots.count(o) - p * n) < 1


@settings(deadline=None, max_examples=15)
@given(st.integers(1, 200), st.integers(0, 50))
def test_population_size_and_determinism(n_rows, seed):
    d, rankings, orderings = ke_population(n_rows, seed)
    assert len(d) == n_rows
    assert len(rankings) == len(orderings) == -(-n_rows // 28)
    again, _, _ = ke_population(n_rows, seed)
    assert again == d


def test_truth_follows_each_respondents_ordering():
    d, rankings, orderings = ke_population(28 * 4, seed=1)
    by_rid = {r.respondent_id: o for r, o in zip(rankings, orderings)}
    for s in d.scenarios:
        a = tuple(s.first.counts.values())
        b = tuple(s.second.counts.values())
        assert s.truth is decide(by_rid[s.respondent_id], a, b)
    assert rankings[0].ranks == {s: k + 1 for k, s in enumerate(orderings[0])}


def test_analytic_rates_add_to_one_across_opposites():
    rates = analytic_agreement()
    assert rates["choose_younger"] + rates["choose_older"] == 1
    assert float(rates["choose_younger"]) == pytest.approx(0.8025, abs=1e-4)


def test_sampled_rates_track_analytic():
    d, _, _ = ke_population(28 * 200, seed=0)
    L = apply_all(builtin_suite("ke"), d)
    rates = analytic_agreement()
    for m, name in enumerate(L.heuristic_names):
        assert accuracy(L.cells[:, m], d.truth_array()) == pytest.approx(float(rates[name]), abs=0.02)


def test_mm_population_sessions():
    d = mm_population(3, seed=0)
    assert len(d) == 39
    assert d.respondent_ids().count("m0001") == 13
    assert d.has_truth()
