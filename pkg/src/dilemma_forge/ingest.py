"""Loading and normalizing case-study data.

All files are UTF-8 CSV with a header row, preceded by a version line
``# dilemma-forge v1 <schema>``. Empty cells are missing values.

Schemas
-------
mm
    ``scenario_id, respondent_id, scenario_type, choice`` then, for each side
    ``first`` / ``second``, either one count column per character
    (``first_man`` ...) or one per abstract feature (``first_male`` ...),
    followed by ``<side>_intervention`` (0/1), ``<side>_signal``
    (green/red/none) and ``<side>_is_passengers`` (0/1). ``choice`` is 0 when
    the first (stay-on-course) alternative was chosen, 1 otherwise.
ke
    ``respondent_id, contest_id, a_age, a_drink, a_health, b_age, b_drink,
    b_health, choice`` with binary features and ``choice`` 0 for patient A.
rankings
    ``respondent_id, strategy, rank``; equal ranks are ties.
abstraction
    ``character`` followed by one 0/1 column per abstract feature.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import os
import tempfile
from collections import OrderedDict
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    KE_FEATURES,
    KE_SCHEMA,
    MM_FEATURES,
    MM_SCHEMA,
    MISSING,
    Alternative,
    Choice,
    Dataset,
    DatasetSplit,
    Scenario,
    Signal,
)
from .labelmodel.borda import StrategyRanking

log = logging.getLogger(__name__)

HEADER_PREFIX = "# dilemma-forge v1"
MM_SESSION_LENGTH = 13

MM_CHARACTERS = (
    "man", "woman", "pregnant", "stroller", "old_man", "old_woman", "boy", "girl",
    "homeless", "large_woman", "large_man", "criminal", "male_executive",
    "female_executive", "female_athlete", "male_athlete", "female_doctor",
    "male_doctor", "dog", "cat",
)
# features filled from the alternative's context rather than from characters
CONTEXT_DERIVED = ("passenger", "law_abiding", "law_violating")

KE_STRATEGIES = (
    "choose_younger", "choose_drinks_less", "choose_no_health_issues",
    "choose_older", "choose_drinks_more", "choose_health_issues",
)
KE_COLUMNS = ("respondent_id", "contest_id", "a_age", "a_drink", "a_health",
              "b_age", "b_drink", "b_health", "choice")
KE_TYPE_NAMES = {"age_old": "Age", "drinks_frequently": "Drinking", "has_health_issue": "Health"}


class DataError(ValueError):
    pass


# --- file plumbing ---------------------------------------------------------

def _read_versioned(path, schema: str) -> list:
    text = Path(path).read_text(encoding="utf-8")
    return _parse_versioned(text, schema, str(path))


def _parse_versioned(text: str, schema: str, where: str = "<text>") -> list:
    lines = text.splitlines()
    expected = f"{HEADER_PREFIX} {schema}"
    if not lines or lines[0].strip() != expected:
        raise DataError(f"{where}: first line must be {expected!r}")
    rows = list(csv.reader(lines[1:]))
    if not rows:
        raise DataError(f"{where}: missing header row")
    return rows


def _versioned_text(schema: str, header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    buf.write(f"{HEADER_PREFIX} {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _int_cell(value: str, what: str, line: int) -> Optional[int]:
    value = value.strip()
    if value == "":
        return MISSING
    try:
        out = int(value)
    except ValueError:
        raise DataError(f"line {line}: {what} must be an integer, got {value!r}") from None
    if out < 0:
        raise DataError(f"line {line}: {what} must be non-negative, got {out}")
    return out


def _flag_cell(value: str, what: str, line: int) -> Optional[bool]:
    v = _int_cell(value, what, line)
    if v is MISSING:
        return None
    if v not in (0, 1):
        raise DataError(f"line {line}: {what} must be 0 or 1, got {v}")
    return bool(v)


# --- abstraction -----------------------------------------------------------

@dataclass(frozen=True)
class AbstractionMap:
    """Binary character -> abstract-feature matrix."""

    rows: Mapping[str, tuple]
    features: tuple = MM_FEATURES

    def __post_init__(self):
        hi, nh = self.features.index("human"), self.features.index("non_human")
        for name, vec in self.rows.items():
            if len(vec) != len(self.features):
                raise DataError(f"character {name!r} maps to {len(vec)} features, "
                                f"expected {len(self.features)}")
            if any(v not in (0, 1) for v in vec):
                raise DataError(f"character {name!r} has non-binary entries")
            if vec[hi] and vec[nh]:
                raise DataError(f"character {name!r} is both human and non_human")

    @property
    def characters(self) -> tuple:
        return tuple(self.rows)

    def matrix(self) -> np.ndarray:
        return np.array([self.rows[c] for c in self.rows], dtype=np.int64)

    @classmethod
    def from_csv_text(cls, text: str) -> "AbstractionMap":
        rows = _parse_versioned(text, "abstraction")
        header = rows[0]
        if header[:1] != ["character"] or tuple(header[1:]) != MM_FEATURES:
            raise DataError("abstraction header must be 'character' followed by the 17 features")
        out = OrderedDict()
        for line, r in enumerate(rows[1:], start=3):
            if not r:
                continue
            out[r[0]] = tuple(int(v) for v in r[1:])
        return cls(out)

    def to_csv_text(self) -> str:
        return _versioned_text("abstraction", ["character", *self.features],
                               [[c, *v] for c, v in self.rows.items()])


def default_abstraction() -> AbstractionMap:
    text = resources.files("dilemma_forge.data").joinpath("abstraction.csv").read_text("utf-8")
    return AbstractionMap.from_csv_text(text)


def load_abstraction(path) -> AbstractionMap:
    return AbstractionMap.from_csv_text(Path(path).read_text(encoding="utf-8"))


def abstract_characters(char_counts: Mapping[str, int], B: Optional[AbstractionMap] = None) -> dict:
    """Abstract feature counts ``B^T c`` for a map of character counts."""
    B = B or default_abstraction()
    unknown = set(char_counts) - set(B.rows)
    if unknown:
        raise DataError(f"unknown characters {sorted(unknown)}")
    out = dict.fromkeys(B.features, 0)
    for ch, n in char_counts.items():
        for f, bit in zip(B.features, B.rows[ch]):
            out[f] += bit * int(n)
    return out


def _abstract_with_missing(char_counts: Mapping[str, Optional[int]], B: AbstractionMap) -> dict:
    known = {c: n for c, n in char_counts.items() if n is not MISSING}
    out = abstract_characters(known, B)
    for c, n in char_counts.items():
        if n is MISSING:
            for f, bit in zip(B.features, B.rows[c]):
                if bit:
                    out[f] = MISSING
    return out


def _fill_context_features(counts: dict, total, signal, is_passengers) -> dict:
    counts = dict(counts)
    if is_passengers is None or total is MISSING:
        counts.update(passenger=MISSING, law_abiding=MISSING, law_violating=MISSING)
        return counts
    counts["passenger"] = total if is_passengers else 0
    if is_passengers:
        counts["law_abiding"] = counts["law_violating"] = 0
    elif signal is None:
        counts["law_abiding"] = counts["law_violating"] = MISSING
    else:
        counts["law_abiding"] = total if signal is Signal.GREEN else 0
        counts["law_violating"] = total if signal is Signal.RED else 0
    return counts


# --- Moral Machine ---------------------------------------------------------

def _parse_signal(value: str, line: int):
    value = value.strip().lower()
    if value == "":
        return None
    try:
        return Signal(value)
    except ValueError:
        raise DataError(f"line {line}: unknown signal value {value!r}") from None


def _parse_choice(value: str, line: int) -> Optional[Choice]:
    value = value.strip()
    if value == "":
        return None
    if value == "0":
        return Choice.FIRST
    if value == "1":
        return Choice.SECOND
    raise DataError(f"line {line}: choice must be 0 or 1, got {value!r}")


def parse_mm_csv(text: str, session_filter: bool = True, B: Optional[AbstractionMap] = None,
                 where: str = "<text>") -> Dataset:
    B = B or default_abstraction()
    rows = _parse_versioned(text, "mm", where)
    header = [h.strip() for h in rows[0]]
    lead = ["scenario_id", "respondent_id", "scenario_type", "choice"]
    ctx = ["intervention", "signal", "is_passengers"]
    char_cols = lead + [f"{s}_{x}" for s in ("first", "second") for x in (*B.characters, *ctx)]
    feat_cols = lead + [f"{s}_{x}" for s in ("first", "second") for x in (*MM_FEATURES, *ctx)]
    if header == char_cols:
        mode, names = "characters", B.characters
    elif header == feat_cols:
        mode, names = "features", MM_FEATURES
    else:
        raise DataError(f"{where}: malformed mm header; expected either character-count "
                        "or abstract-feature columns in the documented order")
    width = len(names) + len(ctx)
    scenarios = []
    for line, r in enumerate(rows[1:], start=3):
        if not r:
            continue
        if len(r) != len(header):
            raise DataError(f"line {line}: expected {len(header)} cells, got {len(r)}")
        sides = []
        for s in range(2):
            cells = r[4 + s * width: 4 + (s + 1) * width]
            vals = {n: _int_cell(v, n, line) for n, v in zip(names, cells[:len(names)])}
            intervention = _flag_cell(cells[len(names)], "intervention", line)
            signal = _parse_signal(cells[len(names) + 1], line)
            passengers = _flag_cell(cells[len(names) + 2], "is_passengers", line)
            if mode == "characters":
                counts = _abstract_with_missing(vals, B)
                total = (MISSING if any(v is MISSING for v in vals.values())
                         else sum(vals.values()))
                counts = _fill_context_features(counts, total, signal, passengers)
            else:
                counts = vals
            sides.append(Alternative(counts, intervention, signal, passengers))
        scenarios.append(Scenario(r[0], sides[0], sides[1], r[1] or None,
                                  _parse_choice(r[3], line), r[2] or None))
    if session_filter:
        scenarios = _complete_sessions(scenarios)
    return Dataset(MM_SCHEMA, scenarios)


def _complete_sessions(scenarios):
    per = {}
    for s in scenarios:
        per.setdefault(s.respondent_id, []).append(s)
    keep = {r for r, ss in per.items() if r is not None and len(ss) == MM_SESSION_LENGTH}
    dropped = len(per) - len(keep)
    if dropped:
        log.warning("dropped %d respondent(s) without a complete %d-scenario session",
                    dropped, MM_SESSION_LENGTH)
    return [s for s in scenarios if s.respondent_id in keep]


def load_mm_csv(path, session_filter: bool = True, B: Optional[AbstractionMap] = None) -> Dataset:
    return parse_mm_csv(Path(path).read_text(encoding="utf-8"), session_filter, B, str(path))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, Signal):
        return v.value
    return str(v)


def mm_csv_text(d: Dataset) -> str:
    """Serialize in the abstract-feature layout."""
    ctx = ["intervention", "signal", "is_passengers"]
    header = (["scenario_id", "respondent_id", "scenario_type", "choice"]
              + [f"{s}_{x}" for s in ("first", "second") for x in (*MM_FEATURES, *ctx)])
    rows = []
    for s in d.scenarios:
        choice = "" if s.truth is None else ("0" if s.truth is Choice.FIRST else "1")
        row = [s.id, s.respondent_id or "", s.scenario_type or "", choice]
        for alt in (s.first, s.second):
            row += [_cell(alt.counts[f]) for f in MM_FEATURES]
            row += [_cell(alt.intervention), _cell(alt.crossing_signal), _cell(alt.is_passengers)]
        rows.append(row)
    return _versioned_text("mm", header, rows)


def write_mm_csv(d: Dataset, path) -> None:
    write_atomic(path, mm_csv_text(d))


# --- kidney exchange -------------------------------------------------------

def ke_scenario_type(a: Sequence[int], b: Sequence[int]) -> str:
    diff = [KE_TYPE_NAMES[f] for f, x, y in zip(KE_FEATURES, a, b) if x != y]
    if len(diff) == len(KE_FEATURES):
        return "Random"
    return " & ".join(diff) if diff else "Identical"


def _ke_alt(values) -> Alternative:
    return Alternative(dict(zip(KE_FEATURES, values)))


def parse_ke_csv(text: str, where: str = "<text>") -> Dataset:
    rows = _parse_versioned(text, "ke", where)
    if tuple(h.strip() for h in rows[0]) != KE_COLUMNS:
        raise DataError(f"{where}: malformed ke header; expected {','.join(KE_COLUMNS)}")
    scenarios = []
    for line, r in enumerate(rows[1:], start=3):
        if not r:
            continue
        if len(r) != len(KE_COLUMNS):
            raise DataError(f"line {line}: expected {len(KE_COLUMNS)} cells, got {len(r)}")
        vals = []
        for name, v in zip(KE_COLUMNS[2:8], r[2:8]):
            x = _int_cell(v, name, line)
            if x is MISSING:
                raise DataError(f"line {line}: missing value in {name}")
            if x not in (0, 1):
                raise DataError(f"line {line}: {name} must be binary, got {x}")
            vals.append(x)
        a, b = vals[:3], vals[3:]
        scenarios.append(Scenario(f"{r[0]}:{r[1]}", _ke_alt(a), _ke_alt(b), r[0] or None,
                                  _parse_choice(r[8], line), ke_scenario_type(a, b)))
    return Dataset(KE_SCHEMA, scenarios)


def load_ke_csv(path) -> Dataset:
    return parse_ke_csv(Path(path).read_text(encoding="utf-8"), str(path))


def ke_csv_text(d: Dataset) -> str:
    rows = []
    for s in d.scenarios:
        rid = s.respondent_id or ""
        contest = s.id.split(":", 1)[1] if ":" in s.id else s.id
        choice = "" if s.truth is None else ("0" if s.truth is Choice.FIRST else "1")
        rows.append([rid, contest, *(s.first.counts[f] for f in KE_FEATURES),
                     *(s.second.counts[f] for f in KE_FEATURES), choice])
    return _versioned_text("ke", KE_COLUMNS, rows)


def write_ke_csv(d: Dataset, path) -> None:
    write_atomic(path, ke_csv_text(d))


KE_PROFILES = tuple(itertools.product((0, 1), repeat=3))


def ke_factorial_design(respondent_id: Optional[str] = None) -> Dataset:
    """All 28 unordered contests between the 8 binary patient profiles."""
    scenarios = []
    for n, (a, b) in enumerate(itertools.combinations(KE_PROFILES, 2)):
        sid = f"{respondent_id}:{n}" if respondent_id else f"c{n:02d}"
        scenarios.append(Scenario(sid, _ke_alt(a), _ke_alt(b), respondent_id, None,
                                  ke_scenario_type(a, b)))
    return Dataset(KE_SCHEMA, scenarios)


# --- rankings --------------------------------------------------------------

def parse_rankings_csv(text: str, strategies: Sequence[str] = KE_STRATEGIES,
                       where: str = "<text>") -> list:
    rows = _parse_versioned(text, "rankings", where)
    if [h.strip() for h in rows[0]] != ["respondent_id", "strategy", "rank"]:
        raise DataError(f"{where}: rankings header must be respondent_id,strategy,rank")
    per = OrderedDict()
    for line, r in enumerate(rows[1:], start=3):
        if not r:
            continue
        rid, strat, rank = (c.strip() for c in r)
        if strat not in strategies:
            raise DataError(f"line {line}: unknown strategy {strat!r}")
        try:
            k = int(rank)
        except ValueError:
            raise DataError(f"line {line}: rank must be an integer, got {rank!r}") from None
        if k < 1:
            raise DataError(f"line {line}: rank must be positive, got {k}")
        per.setdefault(rid, {})[strat] = k
    return [StrategyRanking(rid, ranks) for rid, ranks in per.items()]


def load_rankings_csv(path, strategies: Sequence[str] = KE_STRATEGIES) -> list:
    return parse_rankings_csv(Path(path).read_text(encoding="utf-8"), strategies, str(path))


def rankings_csv_text(rankings) -> str:
    rows = [[r.respondent_id, s, k] for r in rankings for s, k in r.ranks.items()]
    return _versioned_text("rankings", ["respondent_id", "strategy", "rank"], rows)


# --- imputation and splitting ----------------------------------------------

def _lower_median(values):
    v = sorted(values)
    return v[(len(v) - 1) // 2]


def impute_median(d: Dataset, fit_on: Sequence[int]) -> Dataset:
    """Replace every missing value with the lower-middle median of the ``fit_on`` rows.

    Medians are taken per side and feature (counts and boolean flags); a
    missing crossing signal takes the most common signal among ``fit_on``.
    """
    fit_on = list(fit_on)
    if not fit_on:
        raise DataError("impute_median needs at least one row to fit on")
    fill = {}
    for side in ("first", "second"):
        alts = [getattr(d.scenarios[i], side) for i in fit_on]
        for f in d.schema.features:
            vals = [a.counts[f] for a in alts if a.counts[f] is not MISSING]
            if vals:
                fill[(side, f)] = _lower_median(vals)
        if d.schema.has_context:
            for flag in ("intervention", "is_passengers"):
                vals = [int(getattr(a, flag)) for a in alts if getattr(a, flag) is not None]
                if vals:
                    fill[(side, flag)] = bool(_lower_median(vals))
            sigs = [a.crossing_signal for a in alts if a.crossing_signal is not None]
            if sigs:
                order = list(Signal)
                fill[(side, "signal")] = max(order, key=lambda s: (sigs.count(s), -order.index(s)))

    def need(side, key):
        if (side, key) not in fill:
            raise DataError(f"{side}.{key} is missing in every fit_on row")
        return fill[(side, key)]

    out = []
    for s in d.scenarios:
        new_alts = []
        for side in ("first", "second"):
            a = getattr(s, side)
            counts = {f: (need(side, f) if v is MISSING else v) for f, v in a.counts.items()}
            if d.schema.has_context:
                a = Alternative(
                    counts,
                    need(side, "intervention") if a.intervention is None else a.intervention,
                    need(side, "signal") if a.crossing_signal is None else a.crossing_signal,
                    need(side, "is_passengers") if a.is_passengers is None else a.is_passengers,
                )
            else:
                a = Alternative(counts)
            new_alts.append(a)
        out.append(Scenario(s.id, new_alts[0], new_alts[1], s.respondent_id, s.truth,
                            s.scenario_type))
    return Dataset(d.schema, out)


_PART_NAMES = {1: ("train",), 2: ("train", "test"), 3: ("train", "valid", "test"),
               4: ("train", "dev", "valid", "test")}


def _units(d: Dataset, group_by_respondent: bool):
    if not group_by_respondent:
        return [[i] for i in range(len(d))]
    groups = OrderedDict()
    for i, s in enumerate(d.scenarios):
        if s.respondent_id is None:
            raise DataError(f"scenario {s.id!r} has no respondent_id; cannot group")
        groups.setdefault(s.respondent_id, []).append(i)
    return list(groups.values())


def make_split(d: Dataset, fractions, seed: int = 0, group_by_respondent: bool = False) -> DatasetSplit:
    """Seeded shuffle of rows (or respondent groups) cut into contiguous parts.

    ``fractions`` is a mapping of part name to fraction, or a sequence read as
    (train, test), (train, valid, test) or (train, dev, valid, test).
    """
    if isinstance(fractions, Mapping):
        named = dict(fractions)
    else:
        fr = list(fractions)
        if len(fr) not in _PART_NAMES:
            raise ValueError("fractions must have 1 to 4 entries")
        named = dict(zip(_PART_NAMES[len(fr)], fr))
    if any(f < 0 for f in named.values()) or sum(named.values()) > 1 + 1e-9:
        raise ValueError("fractions must be non-negative and sum to at most 1")
    units = _units(d, group_by_respondent)
    order = np.random.default_rng(seed).permutation(len(units))
    parts, start, cum = {}, 0, 0.0
    for name, f in named.items():
        cum += f
        stop = min(len(units), int(round(cum * len(units))))
        chosen = order[start:stop]
        idx = sorted(i for u in chosen for i in units[u])
        if f > 0 and not idx:
            raise DataError(f"split part {name!r} would be empty")
        parts[name] = idx
        start = stop
    return DatasetSplit(**parts)


def kfold(d: Dataset, k: int, seed: int = 0, group_by_respondent: bool = False) -> list:
    """Seeded k-fold partition; returns (train_indices, test_indices) per fold."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    units = _units(d, group_by_respondent)
    if len(units) < k:
        raise DataError(f"{len(units)} units cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(units))
    folds = np.array_split(order, k)
    out = []
    for f in range(k):
        test = sorted(i for u in folds[f] for i in units[u])
        train = sorted(i for g in range(k) if g != f for u in folds[g] for i in units[u])
        out.append((train, test))
    return out
