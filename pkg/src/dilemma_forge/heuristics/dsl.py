"""Rule language for heuristic labeling functions.

A source file holds one or more blocks::

    # comments run to end of line
    heuristic "utilitarian" {
        when argmax(first.human, second.human)
    }

    heuristic "spare_lawful" {
        when first.law_abiding > 0 and second.law_abiding == 0 -> choose first
        when second.law_abiding > 0 and first.law_abiding == 0 -> choose second
        otherwise abstain
    }

Rules are tried in order and the first satisfied guard fires; when nothing
fires the heuristic abstains. ``argmax(a, b)`` as a whole rule picks first
when ``a > b``, second when ``b > a`` and abstains on a tie (``argmin`` is
the mirror). Guards touching a missing feature value are unsatisfied.

Evaluation is vectorized: expressions compile to functions over column
arrays so a whole dataset is labeled in one pass.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import CONTEXT_FIELDS, SCHEMAS, CandidateLabel, Dataset, Scenario, Schema, SchemaError


class HeuristicError(ValueError):
    pass


class DSLSyntaxError(HeuristicError):
    def __init__(self, message, line, col):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


class UnknownFeatureError(HeuristicError):
    def __init__(self, name, line=None, col=None):
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(f"unknown feature {name!r}{where}")
        self.feature = name


class DSLTypeError(HeuristicError):
    pass


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|==|!=|<=|>=|[<>{}(),.+\-])
    """,
    re.VERBOSE,
)

KEYWORDS = {"heuristic", "when", "otherwise", "choose", "abstain", "and", "or", "not",
            "argmax", "argmin", "first", "second", "true", "false"}


@dataclass(frozen=True)
class Token:
    kind: str  # 'kw', 'name', 'int', 'string', 'op', 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str) -> list:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "name":
            word = m.group()
            tokens.append(Token("kw" if word in KEYWORDS else "name", word, line, col))
        elif kind in ("string", "int", "op"):
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Node:
    type: str  # 'int' or 'bool'
    line: int
    col: int


@dataclass(frozen=True)
class Num(Node):
    value: int = 0


@dataclass(frozen=True)
class BoolLit(Node):
    value: bool = False


@dataclass(frozen=True)
class Field(Node):
    path: str = ""  # 'first.human'


@dataclass(frozen=True)
class Unary(Node):
    op: str = ""
    operand: Optional[Node] = None


@dataclass(frozen=True)
class Binary(Node):
    op: str = ""
    left: Optional[Node] = None
    right: Optional[Node] = None


ACTIONS = {"choose first": CandidateLabel.FIRST, "choose second": CandidateLabel.SECOND,
           "abstain": CandidateLabel.ABSTAIN}


@dataclass(frozen=True)
class Rule:
    kind: str  # 'when', 'argmax', 'otherwise'
    guard: Optional[Node] = None
    action: Optional[CandidateLabel] = None
    left: Optional[Node] = None
    right: Optional[Node] = None


@dataclass(frozen=True)
class HeuristicSpec:
    name: str
    source: str
    rules: tuple
    schema: Schema
    fields: tuple = field(default=())

    def __call__(self, s: Scenario) -> CandidateLabel:
        return evaluate(self, s)


# --- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.fields = []  # (path, token) in order of appearance

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise DSLSyntaxError(f"{msg}, found {found}", tok.line, tok.col)

    def accept(self, text):
        if self.tok.text == text and self.tok.kind in ("kw", "op"):
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            self.error(f"expected {text!r}")

    def parse_file(self):
        blocks = []
        while self.tok.kind != "eof":
            blocks.append(self.parse_block())
        if not blocks:
            self.error("expected 'heuristic'")
        return blocks

    def parse_block(self):
        start = self.tok
        self.expect("heuristic")
        if self.tok.kind != "string":
            self.error("expected heuristic name string")
        name = re.sub(r"\\(.)", r"\1", self.tok.text[1:-1])
        self.i += 1
        self.expect("{")
        field_mark = len(self.fields)
        rules = []
        while not self.accept("}"):
            if self.tok.kind == "eof":
                self.error("expected '}'")
            rules.append(self.parse_rule())
        if not rules:
            self.error("heuristic needs at least one rule", start)
        return name, tuple(rules), self.fields[field_mark:]

    def parse_rule(self):
        if self.accept("otherwise"):
            return Rule("otherwise", action=self.parse_action())
        self.expect("when")
        if self.tok.text in ("argmax", "argmin") and self._argmax_is_whole_rule():
            which = self.tok.text
            self.i += 1
            self.expect("(")
            a = self.parse_sum()
            self.expect(",")
            b = self.parse_sum()
            self.expect(")")
            for e in (a, b):
                self._require(e, "int")
            if which == "argmin":
                a, b = b, a
            return Rule("argmax", left=a, right=b)
        guard = self.parse_expr()
        self._require(guard, "bool")
        self.expect("->")
        return Rule("when", guard=guard, action=self.parse_action())

    def _argmax_is_whole_rule(self):
        # argmax(...) followed directly by a rule boundary
        depth, j = 0, self.i + 1
        while j < len(self.tokens):
            t = self.tokens[j]
            if t.text == "(":
                depth += 1
            elif t.text == ")":
                depth -= 1
                if depth == 0:
                    nxt = self.tokens[j + 1]
                    return nxt.text in ("when", "otherwise", "}") or nxt.kind == "eof"
            elif t.kind == "eof":
                return False
            j += 1
        return False

    def parse_action(self):
        if self.accept("abstain"):
            return CandidateLabel.ABSTAIN
        if self.accept("choose"):
            if self.accept("first"):
                return CandidateLabel.FIRST
            if self.accept("second"):
                return CandidateLabel.SECOND
            self.error("expected 'first' or 'second' after 'choose'")
        self.error("expected action ('choose first', 'choose second' or 'abstain')")

    def _require(self, node, typ):
        if node.type != typ:
            want = "boolean" if typ == "bool" else "integer"
            got = "boolean" if node.type == "bool" else "integer"
            raise DSLTypeError(f"line {node.line}, column {node.col}: expected {want} "
                               f"expression, got {got}")

    def parse_expr(self):
        left = self.parse_and()
        while self.tok.text == "or" and self.tok.kind == "kw":
            t = self.tok
            self.i += 1
            right = self.parse_and()
            self._require(left, "bool")
            self._require(right, "bool")
            left = Binary("bool", t.line, t.col, "or", left, right)
        return left

    def parse_and(self):
        left = self.parse_not()
        while self.tok.text == "and" and self.tok.kind == "kw":
            t = self.tok
            self.i += 1
            right = self.parse_not()
            self._require(left, "bool")
            self._require(right, "bool")
            left = Binary("bool", t.line, t.col, "and", left, right)
        return left

    def parse_not(self):
        if self.tok.text == "not" and self.tok.kind == "kw":
            t = self.tok
            self.i += 1
            operand = self.parse_not()
            self._require(operand, "bool")
            return Unary("bool", t.line, t.col, "not", operand)
        return self.parse_comparison()

    def parse_comparison(self):
        left = self.parse_sum()
        if self.tok.kind == "op" and self.tok.text in ("==", "!=", "<", "<=", ">", ">="):
            t = self.tok
            self.i += 1
            right = self.parse_sum()
            if t.text in ("==", "!="):
                if left.type != right.type:
                    raise DSLTypeError(f"line {t.line}, column {t.col}: cannot compare "
                                       f"{left.type} with {right.type}")
            else:
                self._require(left, "int")
                self._require(right, "int")
            return Binary("bool", t.line, t.col, t.text, left, right)
        return left

    def parse_sum(self):
        left = self.parse_term()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            t = self.tok
            self.i += 1
            right = self.parse_term()
            self._require(left, "int")
            self._require(right, "int")
            left = Binary("int", t.line, t.col, t.text, left, right)
        return left

    def parse_term(self):
        t = self.tok
        if t.kind == "int":
            self.i += 1
            return Num("int", t.line, t.col, int(t.text))
        if t.kind == "kw" and t.text in ("true", "false"):
            self.i += 1
            return BoolLit("bool", t.line, t.col, t.text == "true")
        if t.kind == "op" and t.text == "-":
            self.i += 1
            operand = self.parse_term()
            self._require(operand, "int")
            return Unary("int", t.line, t.col, "neg", operand)
        if t.kind == "op" and t.text == "(":
            self.i += 1
            e = self.parse_expr()
            self.expect(")")
            return e
        if t.kind == "kw" and t.text in ("first", "second"):
            self.i += 1
            self.expect(".")
            if self.tok.kind not in ("name", "kw"):
                self.error("expected feature name")
            name = self.tok.text
            self.i += 1
            path = f"{t.text}.{name}"
            self.fields.append((path, t))
            typ = "bool" if name in CONTEXT_FIELDS else "int"
            return Field(typ, t.line, t.col, path)
        if t.kind == "kw" and t.text in ("argmax", "argmin"):
            self.error("argmax/argmin may only be used as a whole rule")
        self.error("expected expression")


def _resolve_schema(fields, schema, source_name=""):
    names = [(p.split(".", 1)[1], tok) for p, tok in fields]
    if schema is not None:
        known = set(schema.side_fields())
        for name, tok in names:
            if name not in known:
                raise UnknownFeatureError(name, tok.line, tok.col)
        return schema
    candidates = [s for s in SCHEMAS.values()
                  if all(n in set(s.side_fields()) for n, _ in names)]
    if not candidates:
        for name, tok in names:
            if not any(name in s.side_fields() for s in SCHEMAS.values()):
                raise UnknownFeatureError(name, tok.line, tok.col)
        raise SchemaError(f"heuristic {source_name!r} mixes features of several domains")
    if len(candidates) > 1:
        raise SchemaError(f"cannot infer domain of heuristic {source_name!r}; pass a schema")
    return candidates[0]


def parse_heuristics(text: str, schema: Optional[Schema] = None) -> list:
    """Parse every ``heuristic`` block in ``text``.

    Without ``schema`` the domain is inferred from the referenced fields.
    """
    parser = _Parser(text)
    specs = []
    seen = set()
    for name, rules, fields in parser.parse_file():
        if name in seen:
            raise HeuristicError(f"duplicate heuristic name {name!r}")
        seen.add(name)
        resolved = _resolve_schema(fields, schema, name)
        specs.append(HeuristicSpec(name, text, rules, resolved,
                                   tuple(dict.fromkeys(p for p, _ in fields))))
    return specs


def parse_heuristic(text: str, schema: Optional[Schema] = None) -> HeuristicSpec:
    specs = parse_heuristics(text, schema)
    if len(specs) != 1:
        raise HeuristicError(f"expected exactly one heuristic block, found {len(specs)}")
    return specs[0]


# --- evaluation ------------------------------------------------------------

def _eval(node, env, n):
    """Return (values, valid) arrays of length n."""
    if isinstance(node, Num):
        return np.full(n, float(node.value)), np.ones(n, bool)
    if isinstance(node, BoolLit):
        return np.full(n, node.value), np.ones(n, bool)
    if isinstance(node, Field):
        col = env[node.path]
        valid = ~np.isnan(col)
        if node.type == "bool":
            return np.where(valid, col, 0.0) != 0.0, valid
        return np.where(valid, col, 0.0), valid
    if isinstance(node, Unary):
        v, ok = _eval(node.operand, env, n)
        return (~v if node.op == "not" else -v), ok
    if isinstance(node, Binary):
        a, ok_a = _eval(node.left, env, n)
        b, ok_b = _eval(node.right, env, n)
        ok = ok_a & ok_b
        op = node.op
        if op == "and":
            return a & b, ok
        if op == "or":
            return a | b, ok
        if op == "+":
            return a + b, ok
        if op == "-":
            return a - b, ok
        return {"==": np.equal, "!=": np.not_equal, "<": np.less, "<=": np.less_equal,
                ">": np.greater, ">=": np.greater_equal}[op](a, b), ok
    raise TypeError(f"bad node {node!r}")


def evaluate_columns(h: HeuristicSpec, env: dict, n: int) -> np.ndarray:
    """Label ``n`` scenarios given column arrays keyed by ``first.x`` / ``second.x``."""
    out = np.zeros(n, dtype=np.int8)
    pending = np.ones(n, bool)
    for rule in h.rules:
        if not pending.any():
            break
        if rule.kind == "otherwise":
            out[pending] = int(rule.action)
            pending[:] = False
        elif rule.kind == "when":
            v, ok = _eval(rule.guard, env, n)
            fire = pending & ok & v
            out[fire] = int(rule.action)
            pending &= ~fire
        else:
            a, ok_a = _eval(rule.left, env, n)
            b, ok_b = _eval(rule.right, env, n)
            fire = pending & ok_a & ok_b
            out[fire & (a > b)] = int(CandidateLabel.FIRST)
            out[fire & (b > a)] = int(CandidateLabel.SECOND)
            pending &= ~fire
    return out


def columns_of(X: np.ndarray, schema: Schema) -> dict:
    return dict(zip(schema.column_names(), X.T))


def evaluate(h: HeuristicSpec, s: Scenario) -> CandidateLabel:
    from ..core import concat_features

    x = concat_features(s, h.schema)[None, :]
    return CandidateLabel(int(evaluate_columns(h, columns_of(x, h.schema), 1)[0]))


def check_schema(h: HeuristicSpec, d: Dataset) -> None:
    if h.schema != d.schema:
        known = set(d.schema.side_fields())
        missing = [p for p in h.fields if p.split(".", 1)[1] not in known]
        if missing or h.schema.has_context != d.schema.has_context:
            raise SchemaError(f"heuristic {h.name!r} is written for domain "
                              f"{h.schema.domain!r}, dataset is {d.schema.domain!r}")
