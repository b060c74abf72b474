"""Diagnostics for heuristics and label models, plus the experiment loops built on them."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Dataset
from .forest import ForestConfig, fit_forest
from .heuristics.matrix import LabelMatrix, apply_all
from .ingest import kfold
from .labelmodel.borda import borda_counts, scale_weights
from .labelmodel.generative import GenerativeConfig, fit_generative
from .labelmodel.voting import TiePolicy, VoteWeights, majority_vote, round_labels, weighted_vote

FLOAT_FMT = "{:.6f}"
RANDOM_TYPE = "Random"


class EvaluationError(ValueError):
    pass


def fmt(x) -> str:
    """Fixed-precision text for report cells; missing values become empty."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return FLOAT_FMT.format(x + 0.0)  # +0.0 folds -0.0 into 0.0


def _codes(seq) -> np.ndarray:
    return np.array([int(v) if v is not None else 0 for v in seq], dtype=np.int64)


# --- per-heuristic diagnostics ---------------------------------------------

def coverage(L: LabelMatrix, m: int) -> float:
    if not 0 <= m < L.n_heuristics:
        raise IndexError(f"heuristic index {m} out of range for {L.n_heuristics} columns")
    if L.n_scenarios == 0:
        return 0.0
    return float(np.count_nonzero(L.cells[:, m])) / L.n_scenarios


def polarity(L: LabelMatrix, m: int):
    """(share First, share Second) among non-abstaining votes; None when the column is all Abstain."""
    col = L.cells[:, m]
    votes = np.count_nonzero(col)
    if votes == 0:
        return None
    first = int(np.sum(col > 0))
    return first / votes, (votes - first) / votes


def accuracy(pred, truth) -> Optional[float]:
    """Share of non-abstaining predictions that equal the truth; None if every prediction abstains."""
    p, t = _codes(pred), _codes(truth)
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions for {t.size} truth values")
    scored = p != 0
    if not scored.any():
        return None
    return float(np.mean(p[scored] == t[scored]))


def model_accuracy(pred, truth) -> float:
    """Aggregate-model accuracy: every row counts, an abstention counts as wrong."""
    p, t = _codes(pred), _codes(truth)
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions for {t.size} truth values")
    if p.size == 0:
        raise EvaluationError("no rows to evaluate")
    return float(np.mean(p == t))


def density(L: LabelMatrix):
    counts = np.count_nonzero(L.cells, axis=1)
    mean = float(counts.mean()) if counts.size else 0.0
    return counts, mean


def conflict_overlap(L: LabelMatrix) -> dict:
    """``{(j, k): (overlap, conflict)}`` for every column pair j < k."""
    if L.n_heuristics < 2:
        raise ValueError("need at least two heuristics")
    n = max(L.n_scenarios, 1)
    voted = L.cells != 0
    out = {}
    for j in range(L.n_heuristics):
        for k in range(j + 1, L.n_heuristics):
            both = voted[:, j] & voted[:, k]
            clash = both & (L.cells[:, j] != L.cells[:, k])
            out[(j, k)] = (int(both.sum()) / n, int(clash.sum()) / n)
    return out


def accuracy_by_type(pred, truth, types) -> "OrderedDict[str, Optional[float]]":
    """Aggregate-model accuracy per scenario type; untagged rows fall under ``Random``."""
    p, t = _codes(pred), _codes(truth)
    types = [RANDOM_TYPE if not ty else ty for ty in types]
    if not (len(p) == len(t) == len(types)):
        raise ValueError("types must align with pred and truth")
    out = OrderedDict()
    for ty in sorted(set(types)):
        idx = [i for i, x in enumerate(types) if x == ty]
        out[ty] = float(np.mean(p[idx] == t[idx]))
    return out


@dataclass(frozen=True)
class HeuristicRow:
    name: str
    coverage: float
    polarity_first: Optional[float]
    polarity_second: Optional[float]
    accuracy: Optional[float]
    estimated_weight: Optional[float] = None
    estimated_accuracy: Optional[float] = None


REPORT_COLUMNS = ("heuristic", "coverage", "polarity_first", "polarity_second", "accuracy",
                  "estimated_weight", "estimated_accuracy")


@dataclass(frozen=True)
class HeuristicReport:
    rows: tuple

    def to_csv(self) -> str:
        lines = [",".join(REPORT_COLUMNS)]
        for r in self.rows:
            lines.append(",".join([r.name] + [fmt(getattr(r, c)) for c in REPORT_COLUMNS[1:]]))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"heuristics": [{"heuristic": r.name, **{c: _num(getattr(r, c))
                                                        for c in REPORT_COLUMNS[1:]}}
                               for r in self.rows]}


def _num(x):
    return None if x is None else float(fmt(x))


def heuristic_report(L: LabelMatrix, truth=None, model=None) -> HeuristicReport:
    """Coverage, polarity and (when truth is given) accuracy per column.

    With a fitted generative ``model`` the report adds its raw accuracy
    weight and the implied probability that a vote is correct, sigmoid(w).
    """
    rows = []
    for m, name in enumerate(L.heuristic_names):
        pol = polarity(L, m)
        acc = None if truth is None else accuracy(L.cells[:, m], truth)
        w = p = None
        if model is not None:
            w = float(model.w_acc[m])
            p = 1.0 / (1.0 + math.exp(-w))
        rows.append(HeuristicRow(name, coverage(L, m), pol and pol[0], pol and pol[1], acc, w, p))
    return HeuristicReport(tuple(rows))


# --- label models ------------------------------------------------------------

@dataclass(frozen=True)
class LabelModelConfig:
    """Which aggregator turns a label matrix into one label per row.

    ``weights`` feeds the weighted vote; for generative models the hard label
    is the seeded rounding of the predicted marginal.
    """

    kind: str = "majority"
    tie: str = "random"
    seed: int = 0
    weights: Optional[tuple] = None
    generative: GenerativeConfig = field(default_factory=GenerativeConfig)

    def __post_init__(self):
        if self.kind not in ("majority", "weighted", "generative"):
            raise ValueError(f"unknown label model {self.kind!r}")
        if self.tie not in ("random", "genweights", "abstain"):
            raise ValueError(f"unknown tie policy {self.tie!r}")
        if self.kind == "weighted" and self.weights is None:
            raise ValueError("weighted voting needs weights")


@dataclass
class Aggregate:
    labels: np.ndarray  # +1 / -1 / 0
    proba: Optional[np.ndarray] = None
    model: object = None


def _tie_policy(L: LabelMatrix, cfg: LabelModelConfig) -> TiePolicy:
    if cfg.tie == "genweights":
        return TiePolicy.generative_weights(fit_generative(L, cfg.generative), cfg.seed)
    return TiePolicy(cfg.tie, cfg.seed)


def aggregate(L: LabelMatrix, cfg: LabelModelConfig) -> Aggregate:
    if cfg.kind == "majority":
        return Aggregate(majority_vote(L, _tie_policy(L, cfg)))
    if cfg.kind == "weighted":
        if len(cfg.weights) != L.n_heuristics:
            raise ValueError(f"{len(cfg.weights)} weights for {L.n_heuristics} heuristics")
        return Aggregate(weighted_vote(L, VoteWeights(cfg.weights), _tie_policy(L, cfg)))
    model = fit_generative(L, cfg.generative)
    p = model.predict_proba(L)
    return Aggregate(round_labels(p, cfg.seed), p, model)


def _without(cfg: LabelModelConfig, m: int) -> LabelModelConfig:
    changes = {}
    if cfg.weights is not None:
        changes["weights"] = tuple(w for i, w in enumerate(cfg.weights) if i != m)
    g = cfg.generative
    if g.correlations:
        kept = [(a - (a > m), b - (b > m)) for a, b in g.correlations if m not in (a, b)]
        changes["generative"] = replace(g, correlations=tuple(kept))
    return replace(cfg, **changes)


@dataclass(frozen=True)
class PerturbationRow:
    heuristic: str
    gain: Optional[float]
    baseline: float
    perturbed: Optional[float]
    error: Optional[str] = None


def perturbation_matrix(L: LabelMatrix, truth, cfg: LabelModelConfig) -> list:
    """Accuracy lost by refitting the label model without each column in turn.

    gain[m] = baseline accuracy - accuracy with column m removed. A failing
    refit is recorded on its own row and leaves the other rows intact.
    """
    if L.n_heuristics < 2:
        raise ValueError("perturbation needs at least two heuristics")
    truth = _codes(truth)
    if (truth == 0).any():
        raise EvaluationError("perturbation needs ground truth on every row")
    base = model_accuracy(aggregate(L, cfg).labels, truth)
    out = []
    for m, name in enumerate(L.heuristic_names):
        try:
            acc = model_accuracy(aggregate(L.drop_column(m), _without(cfg, m)).labels, truth)
            out.append(PerturbationRow(name, base - acc, base, acc))
        except Exception as exc:  # reported per heuristic by contract
            out.append(PerturbationRow(name, None, base, None, f"{type(exc).__name__}: {exc}"))
    return out


def perturbation(suite, d: Dataset, cfg: LabelModelConfig) -> list:
    if not d.has_truth():
        raise EvaluationError("perturbation needs a dataset with ground truth")
    return perturbation_matrix(apply_all(suite, d), d.truth_array(), cfg)


def perturbation_csv(rows) -> str:
    lines = ["heuristic,gain,baseline,perturbed,error"]
    for r in rows:
        err = (r.error or "").replace(",", ";").replace("\n", " ")
        lines.append(f"{r.heuristic},{fmt(r.gain)},{fmt(r.baseline)},{fmt(r.perturbed)},{err}")
    return "\n".join(lines) + "\n"


# --- training and evaluating the discriminative model ------------------------

SUPERVISED = "supervised"
MODEL_NAMES = ("supervised", "weak_majority", "weak_weighted", "weak_generative",
               "vote_majority", "vote_weighted", "vote_generative")


def _train_labels(model: str, d_train: Dataset, L_train: LabelMatrix, cfg: LabelModelConfig):
    if model == SUPERVISED:
        y = d_train.truth_array()
        if (y == 0).any():
            raise EvaluationError("supervised training needs truth on every training row")
        return y
    return aggregate(L_train, cfg).labels


def fit_and_predict(model: str, d_train: Dataset, L_train: LabelMatrix, d_test: Dataset,
                    L_test: LabelMatrix, cfg: LabelModelConfig,
                    forest_cfg: ForestConfig) -> np.ndarray:
    """Hard predictions (+1/-1/0) on ``d_test`` for one named model.

    ``supervised`` and ``weak_*`` train a forest (on truth or aggregate
    labels); ``vote_*`` apply the label model straight to the test matrix,
    fitting generative weights on the training matrix.
    """
    if model not in MODEL_NAMES:
        raise ValueError(f"unknown model {model!r}; expected one of {MODEL_NAMES}")
    if len(d_test) == 0:
        raise EvaluationError("test split is empty")
    kind = model.split("_", 1)[1] if "_" in model else None
    lcfg = replace(cfg, kind=kind) if kind else cfg
    if model.startswith("vote_"):
        if kind == "generative":
            gm = fit_generative(L_train, lcfg.generative)
            return round_labels(gm.predict_proba(L_test), lcfg.seed)
        return aggregate(L_test, lcfg).labels
    y = _train_labels(model, d_train, L_train, lcfg)
    keep = np.flatnonzero(y != 0)
    if keep.size == 0:
        raise EvaluationError("no labeled training rows")
    X = d_train.feature_matrix()[keep]
    forest = fit_forest(X, y[keep], forest_cfg)
    return forest.predict(d_test.feature_matrix(), seed=forest_cfg.seed)


# --- learning curves ---------------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    x: int
    model: str
    mean: float
    ci_lo: float
    ci_hi: float
    runs: int


def ci95(values) -> tuple:
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    if v.size < 2:
        return mean, mean, mean
    half = 1.96 * float(v.std(ddof=1)) / math.sqrt(v.size)
    return mean, mean - half, mean + half


def _respondent_groups(d: Dataset) -> "OrderedDict[str, list]":
    groups = OrderedDict()
    for i, s in enumerate(d.scenarios):
        if s.respondent_id is None:
            raise EvaluationError(f"scenario {s.id!r} has no respondent_id")
        groups.setdefault(s.respondent_id, []).append(i)
    return groups


def _weights_from_rankings(rankings, respondents, strategies, columns):
    chosen = [r for r in rankings if r.respondent_id in respondents] or list(rankings)
    counts = borda_counts(chosen, strategies)
    by_name = dict(zip(strategies, scale_weights([round(c, 12) for c in counts], len(strategies))))
    return tuple(by_name[c] for c in columns)


def learning_curve(d: Dataset, suite, axis: str, xs: Sequence[int], models: Sequence[str],
                   cfg: Optional[LabelModelConfig] = None, forest_cfg: Optional[ForestConfig] = None,
                   folds: int = 5, seeds: Sequence[int] = (0,), within_split: Optional[int] = None,
                   rankings=None, strategies: Optional[Sequence[str]] = None) -> list:
    """Mean held-out accuracy (with CI95) per training size and model.

    axis ``rows``: k-fold over rows; each run trains on ``x`` rows drawn from
    the training folds. axis ``respondents``: k-fold over respondents; each
    run trains on ``x`` respondents from the training folds. With
    ``within_split=k`` the respondent axis instead trains on each sampled
    respondent's first k scenarios and tests on the rest of theirs.
    ``rankings`` recompute weighted-vote weights from the sampled
    respondents only. ``x = 0`` means all available training units.
    """
    cfg = cfg or LabelModelConfig()
    forest_cfg = forest_cfg or ForestConfig()
    if axis not in ("rows", "respondents"):
        raise ValueError(f"axis must be rows or respondents, got {axis!r}")
    if folds < 2 and within_split is None:
        raise ValueError("folds must be >= 2")
    for mdl in models:
        if mdl not in MODEL_NAMES:
            raise ValueError(f"unknown model {mdl!r}")
    if not d.has_truth():
        raise EvaluationError("learning curves need ground truth")
    L = apply_all(suite, d)
    results = {(x, mdl): [] for x in xs for mdl in models}
    groups = _respondent_groups(d) if axis == "respondents" else None

    def run(train_idx, test_idx, rid_set, seed, x):
        if not train_idx or not test_idx:
            raise EvaluationError(f"empty train or test rows at x={x}")
        run_cfg = replace(cfg, seed=seed)
        if rankings is not None and cfg.weights is not None:
            run_cfg = replace(run_cfg, weights=_weights_from_rankings(
                rankings, rid_set, strategies, L.heuristic_names))
        fcfg = replace(forest_cfg, seed=forest_cfg.seed + seed)
        d_tr, d_te = d.subset(train_idx), d.subset(test_idx)
        L_tr, L_te = L.rows(train_idx), L.rows(test_idx)
        truth = d_te.truth_array()
        for mdl in models:
            pred = fit_and_predict(mdl, d_tr, L_tr, d_te, L_te, run_cfg, fcfg)
            results[(x, mdl)].append(model_accuracy(pred, truth))

    for seed in seeds:
        rng = np.random.default_rng(seed)
        if axis == "respondents" and within_split is not None:
            rids = list(groups)
            for x in xs:
                n = len(rids) if x == 0 else x
                if n > len(rids):
                    raise EvaluationError(f"x={x} exceeds {len(rids)} respondents")
                pick = [rids[i] for i in sorted(rng.choice(len(rids), size=n, replace=False))]
                tr = [i for r in pick for i in groups[r][:within_split]]
                te = [i for r in pick for i in groups[r][within_split:]]
                run(sorted(tr), sorted(te), set(pick), seed, x)
            continue
        for train_rows, test_rows in kfold(d, folds, seed, group_by_respondent=axis == "respondents"):
            if axis == "rows":
                units = [[i] for i in train_rows]
            else:
                units = [[i for i in train_rows if d.scenarios[i].respondent_id == r]
                         for r in OrderedDict.fromkeys(d.scenarios[i].respondent_id for i in train_rows)]
            for x in xs:
                n = len(units) if x == 0 else x
                if n > len(units):
                    raise EvaluationError(f"x={x} exceeds the {len(units)} training units in a fold")
                pick = sorted(rng.choice(len(units), size=n, replace=False))
                tr = sorted(i for u in pick for i in units[u])
                rid_set = {d.scenarios[i].respondent_id for i in tr}
                run(tr, list(test_rows), rid_set, seed, x)

    return [CurvePoint(x, mdl, *ci95(results[(x, mdl)]), len(results[(x, mdl)]))
            for x in xs for mdl in models]


def curve_csv(points) -> str:
    lines = ["x,model,mean,ci_lo,ci_hi,runs"]
    for p in points:
        lines.append(f"{p.x},{p.model},{fmt(p.mean)},{fmt(p.ci_lo)},{fmt(p.ci_hi)},{p.runs}")
    return "\n".join(lines) + "\n"


def accuracy_table_csv(pred, truth, types) -> str:
    """Overall and per-type accuracy, one row each, with the row count."""
    types = [RANDOM_TYPE if not ty else ty for ty in types]
    lines = ["scenario_type,accuracy,rows",
             f"ALL,{fmt(model_accuracy(pred, truth))},{len(types)}"]
    for ty, acc in accuracy_by_type(pred, truth, types).items():
        lines.append(f"{ty},{fmt(acc)},{types.count(ty)}")
    return "\n".join(lines) + "\n"


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
