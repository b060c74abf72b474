"""Domain types shared across the engine: alternatives, scenarios, labels, datasets."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

MISSING = None
"""Marker for a feature value that was not observed (kept distinct from 0)."""

MM_FEATURES = (
    "male", "female", "young", "old", "infant", "pregnant", "fat", "fit",
    "working", "medical", "homeless", "criminal", "human", "non_human",
    "passenger", "law_abiding", "law_violating",
)
KE_FEATURES = ("age_old", "drinks_frequently", "has_health_issue")

CONTEXT_FIELDS = ("intervention", "is_green", "is_red", "is_passengers")


class SchemaError(ValueError):
    """A scenario or alternative does not conform to the active schema."""


class Choice(enum.IntEnum):
    FIRST = 1
    SECOND = -1

    def flip(self) -> "Choice":
        return Choice(-self.value)


class CandidateLabel(enum.IntEnum):
    """Heuristic output. Integer codes are shared with the label matrix (+1 / -1 / 0)."""

    FIRST = 1
    SECOND = -1
    ABSTAIN = 0

    def flip(self) -> "CandidateLabel":
        return CandidateLabel(-self.value)

    @property
    def symbol(self) -> str:
        return {1: "F", -1: "S", 0: "-"}[self.value]

    @classmethod
    def from_symbol(cls, sym: str) -> "CandidateLabel":
        try:
            return {"F": cls.FIRST, "S": cls.SECOND, "-": cls.ABSTAIN}[sym.strip()]
        except KeyError:
            raise ValueError(f"unknown label symbol {sym!r}") from None


class Signal(enum.Enum):
    GREEN = "green"
    RED = "red"
    NONE = "none"


@dataclass(frozen=True)
class ProbLabel:
    p_first: float

    def __post_init__(self):
        if not (0.0 <= self.p_first <= 1.0):
            raise ValueError(f"p_first must lie in [0, 1], got {self.p_first}")

    @property
    def p_second(self) -> float:
        return 1.0 - self.p_first


@dataclass(frozen=True)
class Schema:
    """Closed feature vocabulary of a domain.

    ``has_context`` toggles the four per-side context entries (intervention,
    one-hot crossing signal, passenger flag) used by the Moral Machine domain.
    """

    domain: str
    features: tuple
    has_context: bool = False

    @property
    def side_width(self) -> int:
        return len(self.features) + (len(CONTEXT_FIELDS) if self.has_context else 0)

    @property
    def width(self) -> int:
        return 2 * self.side_width

    def side_fields(self) -> tuple:
        return tuple(self.features) + (CONTEXT_FIELDS if self.has_context else ())

    def column_names(self) -> list:
        return [f"{side}.{f}" for side in ("first", "second") for f in self.side_fields()]


MM_SCHEMA = Schema("mm", MM_FEATURES, has_context=True)
KE_SCHEMA = Schema("ke", KE_FEATURES, has_context=False)

SCHEMAS = {"mm": MM_SCHEMA, "ke": KE_SCHEMA}


def get_schema(domain: str) -> Schema:
    try:
        return SCHEMAS[domain]
    except KeyError:
        raise SchemaError(f"unknown domain {domain!r}; expected one of {sorted(SCHEMAS)}") from None


@dataclass(frozen=True)
class Alternative:
    counts: Mapping[str, Optional[int]]
    intervention: Optional[bool] = None
    crossing_signal: Optional[Signal] = None
    is_passengers: Optional[bool] = None

    def side_vector(self, schema: Schema) -> list:
        out = []
        for name in schema.features:
            if name not in self.counts:
                raise SchemaError(f"alternative lacks feature {name!r}")
            v = self.counts[name]
            out.append(np.nan if v is MISSING else float(v))
        extra = set(self.counts) - set(schema.features)
        if extra:
            raise SchemaError(f"features {sorted(extra)} not in schema {schema.domain!r}")
        if schema.has_context:
            out.append(_flag(self.intervention))
            if self.crossing_signal is None:
                out += [np.nan, np.nan]
            else:
                out += [float(self.crossing_signal is Signal.GREEN),
                        float(self.crossing_signal is Signal.RED)]
            out.append(_flag(self.is_passengers))
        return out


def _flag(v):
    return np.nan if v is None else float(bool(v))


@dataclass(frozen=True)
class Scenario:
    id: str
    first: Alternative
    second: Alternative
    respondent_id: Optional[str] = None
    truth: Optional[Choice] = None
    scenario_type: Optional[str] = None

    def swapped(self) -> "Scenario":
        """Same dilemma with the alternatives listed in the opposite order."""
        truth = None if self.truth is None else self.truth.flip()
        return Scenario(self.id, self.second, self.first, self.respondent_id,
                        truth, self.scenario_type)


def concat_features(s: Scenario, schema: Schema) -> np.ndarray:
    """Flatten a scenario into ``[first side | second side]``; NaN marks missing values."""
    return np.array(s.first.side_vector(schema) + s.second.side_vector(schema), dtype=float)


@dataclass(frozen=True)
class Dataset:
    schema: Schema
    scenarios: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))

    def __len__(self):
        return len(self.scenarios)

    def __getitem__(self, i):
        return self.scenarios[i]

    @property
    def ids(self) -> list:
        return [s.id for s in self.scenarios]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.schema, tuple(self.scenarios[i] for i in indices))

    def feature_matrix(self) -> np.ndarray:
        if not self.scenarios:
            return np.zeros((0, self.schema.width))
        return np.vstack([concat_features(s, self.schema) for s in self.scenarios])

    def truth_array(self) -> np.ndarray:
        """Truth as +1/-1 with 0 where unknown."""
        return np.array([0 if s.truth is None else int(s.truth) for s in self.scenarios], dtype=int)

    def has_truth(self) -> bool:
        return all(s.truth is not None for s in self.scenarios)

    def respondent_ids(self) -> list:
        return [s.respondent_id for s in self.scenarios]

    def scenario_types(self) -> list:
        return [s.scenario_type for s in self.scenarios]


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    dev: tuple = ()
    valid: tuple = ()
    test: tuple = ()

    def __post_init__(self):
        parts = [tuple(int(i) for i in p) for p in (self.train, self.dev, self.valid, self.test)]
        for name, p in zip(("train", "dev", "valid", "test"), parts):
            object.__setattr__(self, name, p)
        flat = [i for p in parts for i in p]
        if len(flat) != len(set(flat)):
            raise ValueError("split parts overlap")

    def parts(self) -> dict:
        return {"train": self.train, "dev": self.dev, "valid": self.valid, "test": self.test}


@dataclass(frozen=True)
class Violation:
    kind: str
    scenario_id: str
    detail: str = ""


def validate_dataset(d: Dataset) -> list:
    """Report every invariant violation in ``d``; an empty list means the dataset is well formed."""
    report = []
    seen = Counter(s.id for s in d.scenarios)
    for sid, n in seen.items():
        if n > 1:
            report.append(Violation("duplicate_id", sid, f"appears {n} times"))
    allowed = set(d.schema.features)
    for s in d.scenarios:
        for side_name, alt in (("first", s.first), ("second", s.second)):
            keys = set(alt.counts)
            for name in sorted(keys - allowed):
                report.append(Violation("unknown_feature", s.id, f"{side_name}.{name}"))
            for name in sorted(allowed - keys):
                report.append(Violation("absent_feature", s.id, f"{side_name}.{name}"))
            for name in d.schema.features:
                v = alt.counts.get(name)
                if v is not MISSING and v is not None and v < 0:
                    report.append(Violation("negative_count", s.id, f"{side_name}.{name}={v}"))
            if not d.schema.has_context and (
                alt.intervention is not None or alt.crossing_signal is not None
                or alt.is_passengers is not None
            ):
                report.append(Violation("unexpected_context", s.id, side_name))
    return report
