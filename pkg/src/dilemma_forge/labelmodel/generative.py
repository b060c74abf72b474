"""Generative label model over heuristic votes.

The joint over the vote matrix and the latent choices is a log-linear factor
graph with three factor families per row ``i``:

* propensity   ``1{L[i,j] != abstain}``
* accuracy     ``1{L[i,j] == y[i]}``
* correlation  ``1{L[i,j] == L[i,k]}`` for configured pairs ``(j, k)``

Weights are fit without ground truth by minimizing the marginal
pseudolikelihood of each column given the others (latent choice summed
out) plus an L1 penalty, using proximal gradient steps. Since the choice is
binary and factors decompose per row, each conditional is a sum over six
(vote, choice) states, so the gradient can be computed exactly. A Gibbs
mode estimates the same gradient by sampling instead.

Label codes: +1 First, -1 Second, 0 Abstain.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import ProbLabel
from ..heuristics.matrix import LabelMatrix

MODEL_FORMAT_VERSION = 1

VOTE_VALUES = np.array([-1, 0, 1], dtype=np.int8)  # state axis order for candidate votes
CHOICE_VALUES = np.array([-1, 1], dtype=np.int8)  # state axis order for the latent choice


class GenerativeFitError(RuntimeError):
    """Fitting diverged (non-finite objective or weights)."""


@dataclass(frozen=True)
class GenerativeConfig:
    epsilon: float = 0.01
    learning_rate: float = 0.05
    epochs: int = 500
    gradient_mode: str = "exact"
    gibbs_samples: int = 200
    burn_in: int = 50
    seed: int = 0
    correlations: tuple = ()

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.gradient_mode not in ("exact", "gibbs"):
            raise ValueError(f"unknown gradient_mode {self.gradient_mode!r}")
        if self.gibbs_samples < 1 or self.burn_in < 0:
            raise ValueError("gibbs_samples must be >= 1 and burn_in >= 0")
        object.__setattr__(self, "correlations",
                           tuple((int(a), int(b)) for a, b in self.correlations))


def validate_pairs(pairs, m: int) -> tuple:
    out = []
    for a, b in pairs:
        a, b = int(a), int(b)
        if not (0 <= a < b < m):
            raise ValueError(f"correlation pair {(a, b)} invalid for {m} heuristics (need j < k)")
        out.append((a, b))
    if len(set(out)) != len(out):
        raise ValueError("duplicate correlation pairs")
    return tuple(out)


def overlap_pairs(L: LabelMatrix, tau: float = 0.25) -> tuple:
    """All column pairs that both vote on at least a ``tau`` fraction of rows."""
    voted = L.cells != 0
    n = max(L.n_scenarios, 1)
    return tuple((j, k) for j, k in itertools.combinations(range(L.n_heuristics), 2)
                 if (voted[:, j] & voted[:, k]).sum() / n >= tau)


def n_weights(m: int, n_pairs: int) -> int:
    return 2 * m + n_pairs


def split_weights(w: np.ndarray, m: int):
    return w[:m], w[m:2 * m], w[2 * m:]


# --- core math on unique rows ----------------------------------------------

def _compress(cells: np.ndarray):
    if cells.shape[0] == 0:
        return cells, np.zeros(0)
    uniq, counts = np.unique(cells, axis=0, return_counts=True)
    return uniq.astype(np.int8), counts.astype(float)


def _energy_table(w, pairs, cells):
    """E[i, j, v, y]: log-potential of column j voting VOTE_VALUES[v] with choice CHOICE_VALUES[y].

    Terms that depend on neither column j's vote nor the choice are dropped;
    they cancel in every conditional.
    """
    n, m = cells.shape
    w_lab, w_acc, w_corr = split_weights(w, m)
    match = cells[:, :, None] == CHOICE_VALUES[None, None, :]  # (n, m, 2)
    acc_all = (match * w_acc[None, :, None]).sum(axis=1)  # (n, 2)
    acc_others = acc_all[:, None, :] - match * w_acc[None, :, None]  # (n, m, 2)
    v = VOTE_VALUES[None, None, :, None]
    y = CHOICE_VALUES[None, None, None, :]
    E = (acc_others[:, :, None, :]
         + w_lab[None, :, None, None] * (v != 0)
         + w_acc[None, :, None, None] * (v == y))
    E = np.broadcast_to(E, (n, m, 3, 2)).copy()
    for p, (a, b) in enumerate(pairs):
        E[:, a, :, :] += w_corr[p] * (VOTE_VALUES[None, :] == cells[:, b, None])[:, :, None]
        E[:, b, :, :] += w_corr[p] * (VOTE_VALUES[None, :] == cells[:, a, None])[:, :, None]
    return E


def _observed_index(cells):
    return (cells.astype(int) + 1)  # maps -1,0,1 -> 0,1,2


def _logsumexp(a, axis):
    mx = np.max(a, axis=axis, keepdims=True)
    return (mx + np.log(np.exp(a - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def _conditionals(w, pairs, cells):
    """Return (log_num, log_den, Q, P).

    Q[i,j,v,y]: full conditional of (column j's vote, choice) given the other columns.
    P[i,j,y]:   choice posterior with column j's vote clamped to its observed value.
    """
    E = _energy_table(w, pairs, cells)
    n, m = cells.shape
    flat = E.reshape(n, m, 6)
    log_den = _logsumexp(flat, axis=2)
    Q = np.exp(flat - log_den[:, :, None]).reshape(n, m, 3, 2)
    obs = np.take_along_axis(E, _observed_index(cells)[:, :, None, None], axis=2)[:, :, 0, :]
    log_num = _logsumexp(obs, axis=2)
    P = np.exp(obs - log_num[:, :, None])
    return log_num, log_den, Q, P


def _gradient_from(Q, P, pairs, cells, counts):
    """Gradient of sum_ij [log_den - log_num] given the two conditional distributions."""
    n, m = cells.shape
    c = counts[:, None]
    voted = cells != 0
    yidx = np.where(cells > 0, 1, 0)  # choice index equal to the observed vote

    g_lab = (c * (Q[:, :, [0, 2], :].sum(axis=(2, 3)) - voted)).sum(axis=0)
    q_agree = Q[:, :, 0, 0] + Q[:, :, 2, 1]
    p_agree = np.take_along_axis(P, yidx[:, :, None], axis=2)[:, :, 0] * voted
    g_acc = (c * (q_agree - p_agree)).sum(axis=0)

    # accuracy factors of the other columns see the choice only
    D = Q.sum(axis=2) - P  # (n, m, 2)
    S = D.sum(axis=1)  # (n, 2)
    for k in range(m):
        sel = yidx[:, k]
        others = np.take_along_axis(S, sel[:, None], axis=1)[:, 0] - D[np.arange(n), k, sel]
        g_acc[k] += (counts * voted[:, k] * others).sum()

    g_corr = np.zeros(len(pairs))
    for p, (a, b) in enumerate(pairs):
        for j, o in ((a, b), (b, a)):
            q_eq = Q[np.arange(n), j, _observed_index(cells[:, o]), :].sum(axis=1)
            g_corr[p] += (counts * (q_eq - (cells[:, j] == cells[:, o]))).sum()
    return np.concatenate([g_lab, g_acc, g_corr])


def pseudolikelihood_nll(w, pairs, L) -> float:
    """Unregularized objective: sum over rows and columns of -log p(L[i,j] | L[i,not j])."""
    cells = L.cells if isinstance(L, LabelMatrix) else np.asarray(L, dtype=np.int8)
    uniq, counts = _compress(cells)
    if uniq.shape[0] == 0:
        return 0.0
    log_num, log_den, _, _ = _conditionals(np.asarray(w, float), tuple(pairs), uniq)
    return math.fsum(((log_den - log_num) * counts[:, None]).ravel())


def pseudolikelihood_grad(w, pairs, L) -> np.ndarray:
    cells = L.cells if isinstance(L, LabelMatrix) else np.asarray(L, dtype=np.int8)
    uniq, counts = _compress(cells)
    _, _, Q, P = _conditionals(np.asarray(w, float), tuple(pairs), uniq)
    return _gradient_from(Q, P, tuple(pairs), uniq, counts)


def objective(w, pairs, L, epsilon: float) -> float:
    """Training objective: summed pseudolikelihood loss plus ``epsilon * |w|_1``."""
    return pseudolikelihood_nll(w, pairs, L) + epsilon * float(np.abs(w).sum())


class _GibbsEstimator:
    """Gradient estimate from Gibbs chains over (column j's vote, choice), one chain per cell.

    Chains persist between steps; each step runs ``burn_in`` sweeps and then
    averages ``samples`` sweeps.
    """

    def __init__(self, uniq, counts, pairs, samples, burn_in, rng):
        self.cells = uniq
        self.counts = counts
        self.pairs = pairs
        self.samples = samples
        self.burn_in = burn_in
        self.rng = rng
        n, m = uniq.shape
        self.rows = np.arange(n * m)
        self.v = _observed_index(uniq).ravel().copy()
        self.y = rng.integers(0, 2, size=n * m)

    def _sweep(self, E):
        # E: (n*m, 3, 2)
        ey = E[self.rows, self.v]
        p1 = 1.0 / (1.0 + np.exp(ey[:, 0] - ey[:, 1]))
        self.y = (self.rng.random(self.rows.size) < p1).astype(np.intp)
        ev = E[self.rows, :, self.y]
        pv = np.exp(ev - ev.max(axis=1, keepdims=True))
        cum = np.cumsum(pv, axis=1)
        u = self.rng.random(self.rows.size) * cum[:, 2]
        self.v = (u[:, None] > cum[:, :2]).sum(axis=1)

    def gradient(self, w):
        n, m = self.cells.shape
        E = _energy_table(w, self.pairs, self.cells)
        flat = E.reshape(n * m, 3, 2)
        for _ in range(self.burn_in):
            self._sweep(flat)
        hits = np.zeros((n * m) * 6, dtype=np.int64)
        for _ in range(self.samples):
            self._sweep(flat)
            hits += np.bincount(self.rows * 6 + self.v * 2 + self.y, minlength=hits.size)
        Q = hits.reshape(n, m, 3, 2) / self.samples
        # clamped phase: the choice is the only free variable
        obs = np.take_along_axis(E, _observed_index(self.cells)[:, :, None, None], axis=2)[:, :, 0, :]
        p1 = 1.0 / (1.0 + np.exp(obs[..., 0] - obs[..., 1]))
        frac1 = self.rng.binomial(self.samples, p1) / self.samples
        P = np.stack([1.0 - frac1, frac1], axis=2)
        return _gradient_from(Q, P, self.pairs, self.cells, self.counts)


def _soft_threshold(w, t):
    return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def _canonical_orientation(w, m):
    """Pick the mirror solution in which heuristics are better than random on average.

    Relabeling the latent choice maps (w_lab, w_acc) -> (w_lab + w_acc, -w_acc)
    and leaves the distribution over votes unchanged.
    """
    w = w.copy()
    w_lab, w_acc = w[:m].copy(), w[m:2 * m].copy()
    if w_acc.sum() < 0:
        w[:m] = w_lab + w_acc
        w[m:2 * m] = -w_acc
    return w


@dataclass
class GenerativeModel:
    n_heuristics: int
    pairs: tuple = ()
    weights: np.ndarray = field(default=None)
    config: GenerativeConfig = field(default_factory=GenerativeConfig)
    heuristic_names: Optional[tuple] = None
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.pairs = validate_pairs(self.pairs, self.n_heuristics)
        size = n_weights(self.n_heuristics, len(self.pairs))
        if self.weights is None:
            self.weights = np.zeros(size)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (size,):
            raise ValueError(f"expected {size} weights, got shape {self.weights.shape}")

    @property
    def w_lab(self) -> np.ndarray:
        return self.weights[:self.n_heuristics]

    @property
    def w_acc(self) -> np.ndarray:
        return self.weights[self.n_heuristics:2 * self.n_heuristics]

    @property
    def w_corr(self) -> np.ndarray:
        return self.weights[2 * self.n_heuristics:]

    def predict_proba(self, L) -> np.ndarray:
        """p(choice = First | votes) for each row as a float array."""
        cells = L.cells if isinstance(L, LabelMatrix) else np.asarray(L, dtype=np.int8)
        if cells.shape[1] != self.n_heuristics:
            raise ValueError(f"model has {self.n_heuristics} heuristics, matrix has {cells.shape[1]}")
        # propensity and correlation factors do not involve the choice and cancel
        z = cells.astype(float) @ self.w_acc
        return 1.0 / (1.0 + np.exp(-z))

    def to_json(self) -> str:
        doc = {
            "version": MODEL_FORMAT_VERSION,
            "M": self.n_heuristics,
            "pairs": [list(p) for p in self.pairs],
            "heuristic_names": list(self.heuristic_names) if self.heuristic_names else None,
            "w_lab": [float(x) for x in self.w_lab],
            "w_acc": [float(x) for x in self.w_acc],
            "w_corr": [float(x) for x in self.w_corr],
            "config": {k: (list(map(list, v)) if k == "correlations" else v)
                       for k, v in asdict(self.config).items()},
        }
        return dump_json(doc)

    @classmethod
    def from_json(cls, text: str) -> "GenerativeModel":
        doc = json.loads(text)
        if doc.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {doc.get('version')!r}")
        cfg = dict(doc["config"])
        cfg["correlations"] = tuple(tuple(p) for p in cfg.get("correlations", ()))
        w = np.array(doc["w_lab"] + doc["w_acc"] + doc["w_corr"], dtype=float)
        names = doc.get("heuristic_names")
        return cls(doc["M"], tuple(tuple(p) for p in doc["pairs"]), w,
                   GenerativeConfig(**cfg), tuple(names) if names else None)


def dump_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats written at 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dump_json(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dump_json(v, indent, _level + 1) for v in obj) + "]"
        return ("[\n" + ",\n".join(pad + dump_json(v, indent, _level + 1) for v in obj)
                + "\n" + end + "]")
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError("cannot serialize non-finite float")
        return format(x, ".17g")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return json.dumps(obj)


def fit_generative(L: LabelMatrix, config: Optional[GenerativeConfig] = None) -> GenerativeModel:
    """Fit weights from the vote matrix alone (no ground truth)."""
    config = config or GenerativeConfig()
    cells = L.cells
    n, m = cells.shape
    if n < 1 or m < 1:
        raise ValueError("need at least one scenario and one heuristic")
    pairs = validate_pairs(config.correlations, m)
    uniq, counts = _compress(cells)
    w = np.zeros(n_weights(m, len(pairs)))
    lr, eps = config.learning_rate, config.epsilon
    sampler = None
    if config.gradient_mode == "gibbs":
        sampler = _GibbsEstimator(uniq, counts, pairs, config.gibbs_samples, config.burn_in,
                                  np.random.default_rng(config.seed))
    history = []
    for epoch in range(config.epochs):
        if sampler is None:
            _, _, Q, P = _conditionals(w, pairs, uniq)
            g = _gradient_from(Q, P, pairs, uniq, counts)
        else:
            g = sampler.gradient(w)
        # proximal step of size lr / n on the summed objective
        with np.errstate(over="ignore", invalid="ignore"):
            w = _soft_threshold(w - lr * g / n, lr * eps / n)
        if not np.all(np.isfinite(w)):
            raise GenerativeFitError(f"weights became non-finite at epoch {epoch}; "
                                     "lower the learning rate")
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            val = objective(w, pairs, L, eps)
            if not math.isfinite(val):
                raise GenerativeFitError(f"objective became non-finite at epoch {epoch}")
            history.append((epoch, val))
    w = _canonical_orientation(w, m)
    return GenerativeModel(m, pairs, w, config, tuple(L.heuristic_names), history)


def predict_marginals(model: GenerativeModel, L: LabelMatrix) -> list:
    return [ProbLabel(float(p)) for p in model.predict_proba(L)]


def log_marginal_likelihood(w, pairs, L) -> float:
    """log p_w(votes) = log sum_Y p_w(votes, Y), with the partition function summed exactly.

    The per-row partition function is factorized: columns outside every
    correlation pair contribute a closed-form term, the correlated columns
    are enumerated (at most 12 of them).
    """
    cells = L.cells if isinstance(L, LabelMatrix) else np.asarray(L, dtype=np.int8)
    w = np.asarray(w, dtype=float)
    n, m = cells.shape
    pairs = validate_pairs(pairs, m)
    w_lab, w_acc, w_corr = split_weights(w, m)

    lab = (cells != 0).astype(float) @ w_lab
    corr = np.zeros(n)
    for p, (a, b) in enumerate(pairs):
        corr += w_corr[p] * (cells[:, a] == cells[:, b])
    acc = np.stack([(cells == y).astype(float) @ w_acc for y in CHOICE_VALUES], axis=1)
    row_log = lab + corr + _logsumexp(acc, axis=1)

    involved = sorted({j for p in pairs for j in p})
    if len(involved) > 12:
        raise ValueError("too many correlated columns for exact normalization")
    free = [j for j in range(m) if j not in involved]
    # independent column: sum_v exp(w_lab[v!=0] + w_acc[v==y]) is the same for both y
    log_free = float(np.sum(np.log1p(np.exp(w_lab[free]) * (np.exp(w_acc[free]) + 1.0))))
    if involved:
        states = np.array(list(itertools.product((-1, 0, 1), repeat=len(involved))), dtype=np.int8)
        pos = {j: t for t, j in enumerate(involved)}
        base = (states != 0).astype(float) @ w_lab[involved]
        for p, (a, b) in enumerate(pairs):
            base += w_corr[p] * (states[:, pos[a]] == states[:, pos[b]])
        per_y = [base + (states == y).astype(float) @ w_acc[involved] for y in CHOICE_VALUES]
        log_inv = float(_logsumexp(np.concatenate(per_y), axis=0))
    else:
        log_inv = math.log(2.0)
    log_z = log_free + log_inv
    return math.fsum(row_log) - n * log_z
