import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilemma_forge.core import ProbLabel
from dilemma_forge.forest import (
    DecisionForest,
    ForestConfig,
    ForestInputError,
    Tree,
    fit_forest,
    fit_on_problabels,
    gini,
    predict_proba,
)


def test_gini_three_to_one():
    assert gini([1, 1, 1, -1]) == pytest.approx(0.375)


def _distinct(rng, n=120, d=5):
    X = rng.permutation(n * d).reshape(n, d).astype(float)
    y = rng.choice([1, -1], size=n)
    return X, y


def test_memorizes_distinct_rows(rng):
    X, y = _distinct(rng)
    # without resampling every tree sees every row, so each tree memorizes
    f = fit_forest(X, y, ForestConfig(n_trees=5, seed=3, bootstrap=False))
    assert np.array_equal(f.predict(X), y)
    assert all(np.array_equal(np.where(t.predict_proba(X) > 0.5, 1, -1), y) for t in f.trees)


def test_memorizes_even_with_xor_labels():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([1, -1, -1, 1])
    f = fit_forest(X, y, ForestConfig(n_trees=1, bootstrap=False))
    assert np.array_equal(f.predict(X), y)


def test_single_row_is_single_leaf():
    f = fit_forest([[1.0, 2.0]], [-1], ForestConfig(n_trees=7))
    assert all(t.n_nodes == 1 and t.leaf_p[0] == 0.0 for t in f.trees)
    assert predict_proba(f, [5.0, 5.0]).p_first == 0.0


def test_two_trees_average():
    leaf = lambda p: Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([p]))
    f = DecisionForest([leaf(1.0), leaf(0.0)], ForestConfig(n_trees=2), 1)
    assert f.predict_proba([[3.0]]).tolist() == [0.5]
    g = DecisionForest([leaf(0.0), leaf(1.0)], ForestConfig(n_trees=2), 1)
    assert g.predict_proba([[3.0]]).tolist() == [0.5]


def test_deterministic_per_seed(rng):
    X, y = _distinct(rng, 80)
    a = fit_forest(X, y, ForestConfig(n_trees=10, seed=9))
    b = fit_forest(X, y, ForestConfig(n_trees=10, seed=9))
    assert a.same_as(b)
    assert a.to_json() == b.to_json()


def test_json_round_trip(rng):
    X, y = _distinct(rng, 40)
    f = fit_forest(X, y, ForestConfig(n_trees=4))
    g = DecisionForest.from_json(f.to_json())
    assert g.same_as(f) and np.array_equal(g.predict_proba(X), f.predict_proba(X))


def test_parallel_equals_sequential(rng):
    X, y = _distinct(rng, 60)
    a = fit_forest(X, y, ForestConfig(n_trees=8, seed=2, n_jobs=1))
    b = fit_forest(X, y, ForestConfig(n_trees=8, seed=2, n_jobs=2))
    assert a.same_as(b)


def test_one_tree_matches_its_leaf(rng):
    X, y = _distinct(rng, 30)
    f = fit_forest(X, y, ForestConfig(n_trees=1))
    assert np.array_equal(f.predict_proba(X), f.trees[0].predict_proba(X))


def test_max_depth_respected(rng):
    X, y = _distinct(rng, 60)
    f = fit_forest(X, y, ForestConfig(n_trees=3, max_depth=2))
    assert all(t.depth() <= 2 for t in f.trees)


def test_input_errors():
    with pytest.raises(ForestInputError):
        fit_forest(np.zeros((0, 2)), [])
    with pytest.raises(ForestInputError):
        fit_forest([[np.nan, 1.0]], [1])
    with pytest.raises(ForestInputError):
        fit_forest([[1.0], [2.0]], [1])
    f = fit_forest([[1.0, 2.0]], [1], ForestConfig(n_trees=1))
    with pytest.raises(ForestInputError):
        f.predict_proba([[1.0]])
    with pytest.raises(ValueError):
        ForestConfig(n_trees=0)
    with pytest.raises(ValueError):
        ForestConfig(min_samples_split=1)


def test_problabels_all_one_equals_all_first(rng):
    X, _ = _distinct(rng, 20)
    a = fit_on_problabels(X, [ProbLabel(1.0)] * 20, ForestConfig(n_trees=3))
    b = fit_forest(X, [1] * 20, ForestConfig(n_trees=3))
    assert a.same_as(b)
    assert a.metadata["rounding"] == {"seed": 0, "ties": 0}


def test_problabels_half_is_seeded(rng):
    X, _ = _distinct(rng, 30)
    a = fit_on_problabels(X, [0.5] * 30, ForestConfig(n_trees=2), seed=1)
    b = fit_on_problabels(X, [0.5] * 30, ForestConfig(n_trees=2), seed=1)
    assert a.same_as(b)
    assert a.metadata["rounding"]["ties"] == 30


def test_feature_permutation_consistency(rng):
    X = rng.integers(0, 3, size=(50, 4)).astype(float)
    y = np.where(X[:, 0] + X[:, 2] > 2, 1, -1)
    perm = [2, 0, 3, 1]
    inv = np.argsort(perm)
    cfg = ForestConfig(n_trees=5, seed=4)
    a = fit_forest(X, y, cfg)
    # priority follows the original index of each permuted column
    b = fit_forest(X[:, perm], y, cfg, feature_priority=list(perm))
    T = rng.integers(0, 3, size=(40, 4)).astype(float)
    assert np.array_equal(a.predict_proba(T), b.predict_proba(T[:, perm]))
    assert inv.size == 4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(1, 4), st.integers(0, 1000))
def test_proba_in_unit_interval(n, d, seed):
    r = np.random.default_rng(seed)
    X = r.integers(0, 3, size=(n, d)).astype(float)
    y = r.choice([1, -1], size=n)
    f = fit_forest(X, y, ForestConfig(n_trees=3, seed=seed))
    p = f.predict_proba(r.normal(size=(10, d)))
    assert ((p >= 0) & (p <= 1)).all()
