"""Random-forest binary classifier with Gini splits, written against numpy only.

Each tree grows on a seeded bootstrap resample with exhaustive split search
over every feature. Candidate thresholds sit at midpoints between
consecutive distinct values; equal-gain candidates are settled by feature
priority (lowest index by default) and then by lowest threshold, so a given
seed always yields the same forest.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ProbLabel
from .labelmodel.generative import dump_json
from .labelmodel.voting import round_labels

FOREST_FORMAT_VERSION = 1
_GAIN_TOL = 1e-9


class ForestInputError(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    criterion: str = "gini"
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.criterion != "gini":
            raise ValueError("only the gini criterion is supported")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


def gini(labels) -> float:
    """Gini impurity of a 0/1 (or +1/-1) label collection."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    p = np.mean(labels > 0)
    return 1.0 - (p * p + (1.0 - p) ** 2)


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_p: np.ndarray  # fraction of First among training samples at the node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] >= 0
        return self.leaf_p[node]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "leaf_p": self.leaf_p.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["leaf_p"], dtype=float))

    def same_as(self, other: "Tree") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("feature", "threshold", "left", "right", "leaf_p"))


def _best_split(Xn, yn, priority):
    """Best (feature, threshold) for one node, or None when every feature is constant."""
    n = Xn.shape[0]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    ys = yn[order]
    cum = np.cumsum(ys, axis=0)[:-1].astype(float)
    total = float(yn.sum())
    nl = np.arange(1, n, dtype=float)[:, None]
    nr = n - nl
    cr = total - cum
    # sum over children of n_c * (p^2 + q^2); larger means lower weighted Gini
    score = (cum ** 2 + (nl - cum) ** 2) / nl + (cr ** 2 + (nr - cr) ** 2) / nr
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    best = score.max()
    cand_pos, cand_feat = np.nonzero(score >= best - _GAIN_TOL * max(1.0, abs(best)))
    f = min(set(cand_feat.tolist()), key=lambda c: priority[c])
    k = cand_pos[cand_feat == f].min()
    return int(f), 0.5 * (xs[k, f] + xs[k + 1, f])


def build_tree(X: np.ndarray, y01: np.ndarray, sample: np.ndarray, cfg: ForestConfig,
               priority: Sequence[int]) -> Tree:
    feature, threshold, left, right, leaf_p = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_p.append(float(y01[idx].mean()))
        return len(feature) - 1

    stack = [(new_node(sample), sample, 0)]
    while stack:
        node, idx, depth = stack.pop()
        n = idx.size
        pos = int(y01[idx].sum())
        if pos == 0 or pos == n or n < cfg.min_samples_split:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        split = _best_split(X[idx], y01[idx], priority)
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(leaf_p, dtype=float))


def _tree_job(args):
    X, y01, cfg, priority, t = args
    n = X.shape[0]
    if cfg.bootstrap:
        sample = np.random.default_rng(cfg.seed + t).integers(0, n, size=n)
    else:
        sample = np.arange(n)
    return build_tree(X, y01, sample, cfg, priority)


@dataclass
class DecisionForest:
    trees: list
    config: ForestConfig
    n_features: int
    metadata: dict = field(default_factory=dict)

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ForestInputError(f"expected {self.n_features} features, got {X.shape[1]}")
        p = np.mean([t.predict_proba(X) for t in self.trees], axis=0)
        return p[0] if single else p

    def predict(self, X, seed: Optional[int] = None) -> np.ndarray:
        """Hard +1/-1 decisions; exact 0.5 ties go to a seeded coin."""
        return round_labels(np.atleast_1d(self.predict_proba(X)),
                            self.config.seed if seed is None else seed)

    def same_as(self, other: "DecisionForest") -> bool:
        return (len(self.trees) == len(other.trees)
                and all(a.same_as(b) for a, b in zip(self.trees, other.trees)))

    def to_json(self) -> str:
        doc = {"version": FOREST_FORMAT_VERSION, "n_features": self.n_features,
               "config": asdict(self.config), "metadata": self.metadata,
               "trees": [t.to_dict() for t in self.trees]}
        return dump_json(doc)

    @classmethod
    def from_json(cls, text: str) -> "DecisionForest":
        doc = json.loads(text)
        if doc.get("version") != FOREST_FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {doc.get('version')!r}")
        return cls([Tree.from_dict(t) for t in doc["trees"]], ForestConfig(**doc["config"]),
                   doc["n_features"], doc.get("metadata", {}))


def _check_inputs(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ForestInputError("X must be a non-empty 2-D array")
    y = np.asarray([int(v) for v in y])
    if y.shape[0] != X.shape[0]:
        raise ForestInputError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if np.isnan(X).any():
        raise ForestInputError("X contains missing values; impute before fitting")
    if not np.isin(y, (-1, 1)).all():
        raise ForestInputError("labels must be First (+1) or Second (-1)")
    return X, (y > 0).astype(np.int64)


def fit_forest(X, y, cfg: Optional[ForestConfig] = None,
               feature_priority: Optional[Sequence[int]] = None) -> DecisionForest:
    """Fit on feature rows ``X`` and Choice labels ``y`` (+1 First / -1 Second).

    ``feature_priority[f]`` orders features when split gains tie (lower wins);
    defaults to the column index.
    """
    cfg = cfg or ForestConfig()
    X, y01 = _check_inputs(X, y)
    priority = list(range(X.shape[1])) if feature_priority is None else list(feature_priority)
    jobs = [(X, y01, cfg, priority, t) for t in range(cfg.n_trees)]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            trees = list(pool.map(_tree_job, jobs, chunksize=max(1, cfg.n_trees // (4 * cfg.n_jobs))))
    else:
        trees = [_tree_job(j) for j in jobs]
    return DecisionForest(trees, cfg, X.shape[1])


def fit_on_problabels(X, p, cfg: Optional[ForestConfig] = None, seed: int = 0) -> DecisionForest:
    """Round probabilistic labels (seeded coin at 0.5) and fit on the hard labels."""
    probs = np.array([x.p_first if isinstance(x, ProbLabel) else float(x) for x in p])
    labels = round_labels(probs, seed)
    forest = fit_forest(X, labels, cfg)
    forest.metadata["rounding"] = {"seed": int(seed), "ties": int(np.sum(probs == 0.5))}
    return forest


def predict_proba(f: DecisionForest, x) -> ProbLabel:
    return ProbLabel(float(np.clip(f.predict_proba(np.asarray(x, dtype=float)), 0.0, 1.0)))
