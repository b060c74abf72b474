"""Builtin heuristic suites and loading suites from rule files."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Optional

from ..core import Schema
from .dsl import HeuristicError, parse_heuristics

BUILTIN_DOMAINS = ("mm", "ke", "ke_with_opposites")

# Each main KE heuristic paired with its contradiction.
KE_OPPOSITES = {
    "choose_younger": "choose_older",
    "choose_drinks_less": "choose_drinks_more",
    "choose_no_health_issues": "choose_health_issues",
}


def _read_builtin(name: str) -> str:
    return resources.files("dilemma_forge.data").joinpath("suites", name).read_text("utf-8")


def builtin_suite(domain: str) -> list:
    if domain == "mm":
        return parse_heuristics(_read_builtin("mm.rules"))
    if domain == "ke":
        return parse_heuristics(_read_builtin("ke.rules"))
    if domain == "ke_with_opposites":
        return (parse_heuristics(_read_builtin("ke.rules"))
                + parse_heuristics(_read_builtin("ke_opposites.rules")))
    raise HeuristicError(f"unknown builtin suite {domain!r}; expected one of {BUILTIN_DOMAINS}")


def load_suite(path, schema: Optional[Schema] = None) -> list:
    """Load heuristics from a rule file or from every file in a directory.

    Directory entries are read in lexicographic filename order, which fixes
    the column order of the resulting label matrix.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith("."))
    else:
        files = [path]
    suite = []
    for f in files:
        suite += parse_heuristics(f.read_text(encoding="utf-8"), schema)
    names = [h.name for h in suite]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise HeuristicError(f"duplicate heuristic names across files: {dupes}")
    if not suite:
        raise HeuristicError(f"no heuristics found in {path}")
    return suite


def resolve_suite(ref: str, schema: Optional[Schema] = None) -> list:
    """``builtin:<domain>`` or a filesystem path."""
    if ref.startswith("builtin:"):
        return builtin_suite(ref.split(":", 1)[1])
    return load_suite(ref, schema)
