import itertools
import math

import numpy as np
import pytest
from hypothesis import strategies as st

from dilemma_forge.core import KE_FEATURES, KE_SCHEMA, MM_FEATURES, Alternative, Scenario, Signal


def ke_alt(age, drink, health):
    return Alternative(dict(zip(KE_FEATURES, (age, drink, health))))


def ke_scenario(a, b, sid="s", truth=None, rid=None):
    return Scenario(sid, ke_alt(*a), ke_alt(*b), rid, truth)


def mm_alt(signal=Signal.NONE, intervention=False, passengers=False, **counts):
    full = dict.fromkeys(MM_FEATURES, 0)
    full.update(counts)
    return Alternative(full, intervention, signal, passengers)


def brute_tally(cells, weights=None):
    """Reference vote: plain Python sums, returns (sign, tied) per row."""
    out = []
    for row in cells.tolist():
        ws = weights if weights is not None else [1] * len(row)
        first = sum(w for v, w in zip(row, ws) if v == 1)
        second = sum(w for v, w in zip(row, ws) if v == -1)
        out.append((1 if first > second else -1 if second > first else 0, first == second))
    return out


def brute_borda(effective_ranks):
    """Pair-counting: for each strategy, how many others sit strictly below it."""
    return [sum(1 for other in effective_ranks if other > mine) for mine in effective_ranks]


def brute_log_marginal(w, pairs, cells):
    """log p(votes) by summing the joint over every choice vector Y.

    The normalizer is built from an explicit enumeration of the 3^M vote
    patterns and both choices for one row, raised to the N-th power (rows
    are independent under the model).
    """
    n, m = cells.shape
    w_lab, w_acc, w_corr = w[:m], w[m:2 * m], w[2 * m:]

    def energy(row, y):
        e = 0.0
        for j, v in enumerate(row):
            e += w_lab[j] * (v != 0) + w_acc[j] * (v == y)
        for p, (a, b) in enumerate(pairs):
            e += w_corr[p] * (row[a] == row[b])
        return e

    total = []
    for ys in itertools.product((1, -1), repeat=n):
        total.append(sum(energy(cells[i], ys[i]) for i in range(n)))
    log_num = max(total) + math.log(sum(math.exp(t - max(total)) for t in total))
    row_z = [energy(r, y) for r in itertools.product((-1, 0, 1), repeat=m) for y in (1, -1)]
    log_z1 = max(row_z) + math.log(sum(math.exp(t - max(row_z)) for t in row_z))
    return log_num - n * log_z1


def label_matrices(max_n=8, max_m=4, min_n=1, min_m=1):
    return st.tuples(st.integers(min_n, max_n), st.integers(min_m, max_m)).flatmap(
        lambda nm: st.lists(st.lists(st.sampled_from([-1, 0, 1]), min_size=nm[1], max_size=nm[1]),
                            min_size=nm[0], max_size=nm[0])
    ).map(lambda rows: np.array(rows, dtype=np.int8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
