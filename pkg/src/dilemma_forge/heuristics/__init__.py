from .dsl import (
    DSLSyntaxError,
    DSLTypeError,
    HeuristicError,
    HeuristicSpec,
    UnknownFeatureError,
    evaluate,
    parse_heuristic,
    parse_heuristics,
)
from .matrix import LabelMatrix, apply_all
from .suites import KE_OPPOSITES, builtin_suite, load_suite, resolve_suite

__all__ = [
    "DSLSyntaxError", "DSLTypeError", "HeuristicError", "HeuristicSpec", "UnknownFeatureError",
    "evaluate", "parse_heuristic", "parse_heuristics", "LabelMatrix", "apply_all",
    "KE_OPPOSITES", "builtin_suite", "load_suite", "resolve_suite",
]
