import math
from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilemma_forge.heuristics import LabelMatrix
from dilemma_forge.labelmodel import (
    GenerativeConfig,
    GenerativeModel,
    StrategyRanking,
    TiePolicy,
    VoteWeights,
    borda_counts,
    fit_generative,
    log_marginal_likelihood,
    majority_vote,
    overlap_pairs,
    predict_marginals,
    pseudolikelihood_grad,
    pseudolikelihood_nll,
    respondent_borda,
    round_labels,
    scale_weights,
    weighted_vote,
)
from dilemma_forge.labelmodel.generative import GenerativeFitError

from conftest import brute_borda, brute_log_marginal, brute_tally, label_matrices

M = LabelMatrix.from_array
STRATS = ["younger", "drinks_less", "no_health", "older", "drinks_more", "health"]


# --- voting ---------------------------------------------------------------

def test_strict_majority():
    assert majority_vote(M([[1, 1, -1]])).tolist() == [1]


def test_tie_abstains_under_abstain_policy():
    assert majority_vote(M([[1, -1, 0]]), TiePolicy.abstain()).tolist() == [0]


def test_all_abstain_row_coin_is_reproducible():
    L = M([[0, 0, 0]] * 20)
    a = majority_vote(L, TiePolicy.random(7))
    assert np.array_equal(a, majority_vote(L, TiePolicy.random(7)))
    assert set(a.tolist()) <= {1, -1}


def test_genweights_tie_break():
    model = GenerativeModel(3, weights=np.array([0, 0, 0, 2.0, 1.0, 0.5]))
    out = majority_vote(M([[1, -1, 0], [0, 0, 0]]), TiePolicy.generative_weights(model, 3))
    assert out[0] == 1 and out[1] in (1, -1)
    with pytest.raises(ValueError):
        majority_vote(M([[1, -1]]), TiePolicy.generative_weights(model))


def test_one_hot_weights_follow_column_zero(rng):
    cells = rng.integers(-1, 2, size=(200, 3))
    out = weighted_vote(M(cells), [1, 0, 0], TiePolicy.abstain())
    voted = cells[:, 0] != 0
    assert np.array_equal(out[voted], cells[voted, 0])
    assert (out[~voted] == 0).all()


def test_uniform_weights_match_majority(rng):
    L = M(rng.integers(-1, 2, size=(300, 5)))
    assert np.array_equal(weighted_vote(L, [0.3] * 5, TiePolicy.random(2)),
                          majority_vote(L, TiePolicy.random(2)))


def test_younger_outvoted_by_the_other_two():
    w = scale_weights([Decimal("3.42"), Decimal("2.71"), Decimal("2.10")], 6)
    assert weighted_vote(M([[1, -1, -1]]), w).tolist() == [-1]


def test_decimal_ties_are_exact():
    w = VoteWeights([Decimal("0.1"), Decimal("0.2"), Decimal("0.3")])
    assert weighted_vote(M([[-1, -1, 1]]), w, TiePolicy.abstain()).tolist() == [0]
    assert weighted_vote(M([[-1, -1, 1]]), [0.1, 0.2, 0.3], TiePolicy.abstain()).tolist() == [0]


def test_weight_length_mismatch():
    with pytest.raises(ValueError):
        weighted_vote(M([[1, 1]]), [1, 1, 1])


@given(label_matrices(max_m=5), st.lists(st.integers(0, 10), min_size=5, max_size=5),
       st.integers(1, 7))
def test_weight_scaling_invariance(cells, raw, c):
    m = cells.shape[1]
    w = [Fraction(x, 10) for x in raw[:m]]
    base = weighted_vote(M(cells), VoteWeights(w), TiePolicy.abstain())
    scaled = [min(x * c / 7, Fraction(1)) for x in w]
    if all(x * c / 7 <= 1 for x in w):
        assert np.array_equal(base, weighted_vote(M(cells), VoteWeights(scaled), TiePolicy.abstain()))


@given(label_matrices(max_m=5), st.data())
def test_column_permutation_equivariance(cells, data):
    m = cells.shape[1]
    perm = data.draw(st.permutations(list(range(m))))
    w = [Decimal(k + 1) / 10 for k in range(m)]
    a = weighted_vote(M(cells), w, TiePolicy.abstain())
    b = weighted_vote(M(cells[:, perm]), [w[p] for p in perm], TiePolicy.abstain())
    assert np.array_equal(a, b)


@given(label_matrices(max_m=5))
def test_flip_symmetry_of_votes(cells):
    a = majority_vote(M(cells), TiePolicy.abstain())
    b = majority_vote(M(-cells), TiePolicy.abstain())
    assert np.array_equal(a, -b)


@given(label_matrices(max_m=6))
def test_majority_matches_reference_tally(cells):
    out = majority_vote(M(cells), TiePolicy.abstain())
    assert out.tolist() == [sign for sign, _ in brute_tally(cells)]


def test_round_labels():
    assert round_labels([0.9, 0.2]).tolist() == [1, -1]
    a = round_labels([0.5] * 30, seed=4)
    assert np.array_equal(a, round_labels([0.5] * 30, seed=4))


# --- Borda ------------------------------------------------------------------

def test_worked_ranking_example():
    r = StrategyRanking("r1", {"younger": 1, "drinks_less": 2})
    assert respondent_borda(r, STRATS).tolist() == [5, 4, 0, 0, 0, 0]
    assert borda_counts([r], STRATS).tolist() == [5, 4, 0, 0, 0, 0]


def test_all_tied_counts_zero():
    r = StrategyRanking("r", {s: 1 for s in STRATS})
    assert borda_counts([r], STRATS).tolist() == [0] * 6


def test_unknown_strategy():
    with pytest.raises(ValueError):
        borda_counts([StrategyRanking("r", {"fastest": 1})], STRATS)


def test_nonpositive_rank():
    with pytest.raises(ValueError):
        StrategyRanking("r", {"younger": 0})


rankings = st.dictionaries(st.sampled_from(STRATS), st.integers(1, 6), min_size=1)


@given(rankings)
def test_borda_bounds_and_pair_sum(ranks):
    r = StrategyRanking("r", ranks)
    eff = r.effective_ranks(STRATS).tolist()
    counts = respondent_borda(r, STRATS)
    assert counts.tolist() == brute_borda(eff)
    assert all(0 <= c <= 5 for c in counts)
    assert counts.sum() <= 15
    assert (counts.sum() == 15) == (len(set(eff)) == 6)


@pytest.mark.parametrize("count,want", [("3.42", "0.684"), ("0", "0"), ("5", "1")])
def test_scale_by_max(count, want):
    assert scale_weights([Decimal(count)], 6)[0] == Decimal(want)


def test_scale_rejects_out_of_range():
    with pytest.raises(ValueError):
        scale_weights([Decimal("5.5")], 6)


def test_minmax_scaling():
    w = scale_weights([Decimal("1"), Decimal("3"), Decimal("2")], 6, method="minmax")
    assert list(w) == [Decimal(0), Decimal(1), Decimal("0.5")]


# --- generative model -------------------------------------------------------

def test_zero_weights_objective_is_nm_log3(rng):
    cells = rng.integers(-1, 2, size=(11, 4))
    w = np.zeros(8)
    assert abs(pseudolikelihood_nll(w, (), M(cells)) - 11 * 4 * math.log(3)) < 1e-12


def test_zero_weight_model_predicts_half():
    L = M([[1, -1, 0], [0, 0, 0], [1, 1, 1]])
    m = fit_generative(L, GenerativeConfig(epochs=0))
    assert [p.p_first for p in predict_marginals(m, L)] == [0.5, 0.5, 0.5]


@pytest.mark.parametrize("w", [0.0, 0.7, -1.3])
def test_single_heuristic_softmax(w):
    m = GenerativeModel(1, weights=np.array([0.2, w]))
    assert m.predict_proba(M([[1]]))[0] == pytest.approx(math.exp(w) / (math.exp(w) + 1))


def test_log3_gives_three_quarters():
    m = GenerativeModel(1, weights=np.array([0.0, math.log(3)]))
    assert m.predict_proba(M([[1]]))[0] == pytest.approx(0.75, abs=1e-15)
    assert m.predict_proba(M([[0]]))[0] == 0.5


def test_gradient_matches_finite_differences_6x3(rng):
    cells = rng.integers(-1, 2, size=(6, 3))
    pairs = ((0, 2),)
    w = rng.normal(size=7)
    g = pseudolikelihood_grad(w, pairs, M(cells))
    h = 1e-5
    fd = np.array([(pseudolikelihood_nll(w + h * e, pairs, M(cells))
                    - pseudolikelihood_nll(w - h * e, pairs, M(cells))) / (2 * h)
                   for e in np.eye(7)])
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8)) < 1e-5


@settings(max_examples=40, deadline=None)
@given(label_matrices(max_n=5, max_m=3), st.data())
def test_marginal_likelihood_matches_enumeration(cells, data):
    m = cells.shape[1]
    pairs = ((0, 1),) if m >= 2 and data.draw(st.booleans()) else ()
    w = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=2 * m + len(pairs),
                                    max_size=2 * m + len(pairs))))
    assert log_marginal_likelihood(w, pairs, M(cells)) == pytest.approx(
        brute_log_marginal(w, pairs, cells), abs=1e-9)


@given(label_matrices(max_m=4), st.data())
def test_flip_maps_marginals(cells, data):
    m = cells.shape[1]
    w = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=2 * m, max_size=2 * m)))
    gm = GenerativeModel(m, weights=w)
    p, q = gm.predict_proba(M(cells)), gm.predict_proba(M(-cells))
    assert np.allclose(p, 1 - q, atol=1e-12)


@given(label_matrices(max_m=4), st.data())
def test_accuracy_weight_monotone(cells, data):
    m = cells.shape[1]
    w = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=2 * m, max_size=2 * m)))
    j = data.draw(st.integers(0, m - 1))
    w2 = w.copy()
    w2[m + j] += data.draw(st.floats(0, 2))
    p1 = GenerativeModel(m, weights=w).predict_proba(M(cells))
    p2 = GenerativeModel(m, weights=w2).predict_proba(M(cells))
    rows = cells[:, j] != 0
    agree1 = np.where(cells[rows, j] > 0, p1[rows], 1 - p1[rows])
    agree2 = np.where(cells[rows, j] > 0, p2[rows], 1 - p2[rows])
    assert (agree2 >= agree1 - 1e-12).all()


def _planted(rng, n=400, acc=(0.85, 0.75, 0.65), cov=0.7):
    y = rng.choice([1, -1], size=n)
    cells = np.zeros((n, len(acc)), dtype=int)
    for j, a in enumerate(acc):
        vote = rng.random(n) < cov
        right = rng.random(n) < a
        cells[:, j] = np.where(vote, np.where(right, y, -y), 0)
    return y, cells


def test_fit_recovers_accuracy_order(rng):
    y, cells = _planted(rng)
    m = fit_generative(M(cells), GenerativeConfig(epochs=400, learning_rate=0.5))
    assert m.w_acc[0] > m.w_acc[1] > m.w_acc[2] > 0
    acc = np.mean(round_labels(m.predict_proba(M(cells))) == y)
    assert acc > 0.8


def test_fit_is_deterministic_and_json_round_trips(rng):
    _, cells = _planted(rng, n=60)
    cfg = GenerativeConfig(epochs=50, correlations=((0, 1),))
    a, b = fit_generative(M(cells), cfg), fit_generative(M(cells), cfg)
    assert np.array_equal(a.weights, b.weights)
    again = GenerativeModel.from_json(a.to_json())
    assert np.array_equal(again.weights, a.weights) and again.pairs == ((0, 1),)
    assert again.to_json() == a.to_json()


def test_gibbs_agrees_with_exact(rng):
    _, cells = _planted(rng, n=20)
    exact = fit_generative(M(cells), GenerativeConfig(epochs=150, learning_rate=0.2))
    gibbs = fit_generative(M(cells), GenerativeConfig(epochs=150, learning_rate=0.2,
                                                      gradient_mode="gibbs", gibbs_samples=500,
                                                      burn_in=20, seed=1))
    r = np.corrcoef(exact.weights, gibbs.weights)[0, 1]
    assert r > 0.95


def test_divergence_raises():
    with pytest.raises(GenerativeFitError):
        fit_generative(M([[1, 1, -1]] * 50), GenerativeConfig(epochs=200, learning_rate=1e308))


def test_overlap_pairs():
    L = M([[1, 1, 0], [1, -1, 0], [0, 1, 1], [0, 0, 1]])
    assert overlap_pairs(L, 0.25) == ((0, 1), (1, 2))


def test_invalid_config():
    with pytest.raises(ValueError):
        GenerativeConfig(epsilon=-1)
    with pytest.raises(ValueError):
        GenerativeConfig(gradient_mode="magic")


def test_ke_estimated_weights_nearly_tie():
    from dilemma_forge.heuristics import apply_all, builtin_suite
    from dilemma_forge.synthetic import ke_population

    d, _, _ = ke_population(28 * 100, seed=0)
    model = fit_generative(apply_all(builtin_suite("ke"), d))
    # the factorial design gives every heuristic the same vote pattern up to relabeling
    assert np.ptp(model.w_acc) < 0.01 and np.all(model.w_acc > 0)
