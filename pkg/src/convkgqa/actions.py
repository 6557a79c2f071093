"""Action grammar: typed trees over KG symbols with three interpretations.

An action tree is written as a comma-separated, bracketed prefix token list,
e.g. ``[filter_type, find_rev, Q650855, P1923, Q500834]``.  Every operator
has a fixed shape, so a well-formed token list parses to exactly one tree.

Set operators: find / find_rev (one-hop lookups), filter_type, union,
intersection, difference.  Terminal operators: count, is_in.  Quantitative
operators work on grouped counts: group / group_rev build per-key distinct
value counts for a relation, the comparators (greater, less, equal, atleast,
atmost, approx) keep keys whose count passes, and argmin / argmax keep the
keys with the extremal count.  Comparator thresholds are integer literals or
a nested count expression.

Trees can be interpreted directly against a graph or compiled to the SPARQL
fragment; ``interpret(kg, t) == evaluate(kg, compile_action(t))`` is a
tested equivalence, not an implementation shortcut.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union as TUnion

from .kg import INSTANCE_OF, KnowledgeGraph, is_entity_id, is_property_id
from . import sparql as sq
from .sparql import (Answer, BooleanAnswer, CountAnswer, EntitySetAnswer,
                     SparqlQuery)

WILDCARD = "all"


class ActionError(Exception):
    pass


class ActionParseError(ActionError):
    def __init__(self, message: str, index: int):
        super().__init__(f"token {index}: {message}")
        self.index = index


# ---------------------------------------------------------------------------
# Tree nodes

@dataclass(frozen=True)
class Find:
    entity: str
    relation: str


@dataclass(frozen=True)
class FindRev:
    entity: str
    relation: str


@dataclass(frozen=True)
class FilterType:
    source: "SetExpr"
    type_id: str


@dataclass(frozen=True)
class UnionAct:
    left: "SetExpr"
    right: "SetExpr"


@dataclass(frozen=True)
class IntersectAct:
    left: "SetExpr"
    right: "SetExpr"


@dataclass(frozen=True)
class DifferenceAct:
    left: "SetExpr"
    right: "SetExpr"


SetExpr = TUnion[Find, FindRev, FilterType, UnionAct, IntersectAct,
                 DifferenceAct]


@dataclass(frozen=True)
class GroupCounts:
    """Distinct-value counts per key over one relation.

    Forward keys on the subject, reverse on the object.  Either side may be
    type-restricted; the wildcard token ``all`` leaves it open.
    """
    relation: str
    key_type: str | None
    value_type: str | None
    reverse: bool = False


@dataclass(frozen=True)
class CountAct:
    source: TUnion[SetExpr, "CompareCount", "ExtremumAct"]


@dataclass(frozen=True)
class IsIn:
    entity: str
    source: SetExpr


@dataclass(frozen=True)
class CompareCount:
    group: GroupCounts
    comparator: str  # greater less equal atleast atmost approx
    threshold: TUnion[int, CountAct]


@dataclass(frozen=True)
class ExtremumAct:
    group: GroupCounts
    which: str  # argmin / argmax


ActionTree = TUnion[SetExpr, GroupCounts, CountAct, IsIn, CompareCount,
                    ExtremumAct]

COMPARATOR_ACTIONS = {"greater": ">", "less": "<", "equal": "=",
                      "atleast": ">=", "atmost": "<=", "approx": "APPROX"}
EXTREMUM_ACTIONS = {"argmin": sq.EXTREMUM_MIN, "argmax": sq.EXTREMUM_MAX}

_INT_RE = re.compile(r"[0-9]+\Z")


# ---------------------------------------------------------------------------
# Token serialization

def to_tokens(tree: ActionTree) -> list[str]:
    if isinstance(tree, Find):
        return ["find", tree.entity, tree.relation]
    if isinstance(tree, FindRev):
        return ["find_rev", tree.entity, tree.relation]
    if isinstance(tree, FilterType):
        return ["filter_type"] + to_tokens(tree.source) + [tree.type_id]
    if isinstance(tree, UnionAct):
        return ["union"] + to_tokens(tree.left) + to_tokens(tree.right)
    if isinstance(tree, IntersectAct):
        return ["intersection"] + to_tokens(tree.left) + to_tokens(tree.right)
    if isinstance(tree, DifferenceAct):
        return ["difference"] + to_tokens(tree.left) + to_tokens(tree.right)
    if isinstance(tree, GroupCounts):
        name = "group_rev" if tree.reverse else "group"
        return [name, tree.relation, tree.key_type or WILDCARD,
                tree.value_type or WILDCARD]
    if isinstance(tree, CountAct):
        return ["count"] + to_tokens(tree.source)
    if isinstance(tree, IsIn):
        return ["is_in", tree.entity] + to_tokens(tree.source)
    if isinstance(tree, CompareCount):
        threshold = [str(tree.threshold)] if isinstance(tree.threshold, int) \
            else to_tokens(tree.threshold)
        return [tree.comparator] + to_tokens(tree.group) + threshold
    if isinstance(tree, ExtremumAct):
        return [tree.which] + to_tokens(tree.group)
    raise TypeError(f"not an action tree: {tree!r}")


def to_text(tree: ActionTree) -> str:
    return "[" + ", ".join(to_tokens(tree)) + "]"


def _split_tokens(source) -> list[str]:
    if isinstance(source, str):
        text = source.strip()
        if text.startswith("[") and text.endswith("]"):
            text = text[1:-1]
        return [t for t in (piece.strip() for piece in text.split(",")) if t]
    return [str(t) for t in source]


class _ActionParser:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.i = 0

    def next(self) -> str:
        if self.i >= len(self.tokens):
            raise ActionParseError("tokens exhausted mid-expression", self.i)
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def peek(self) -> str | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def entity(self) -> str:
        tok = self.next()
        if not is_entity_id(tok):
            raise ActionParseError(f"expected an entity id, found {tok!r}",
                                   self.i - 1)
        return tok

    def relation(self) -> str:
        tok = self.next()
        if not is_property_id(tok):
            raise ActionParseError(f"expected a relation id, found {tok!r}",
                                   self.i - 1)
        return tok

    def type_or_wildcard(self) -> str | None:
        tok = self.next()
        if tok == WILDCARD:
            return None
        if not is_entity_id(tok):
            raise ActionParseError(
                f"expected a type id or {WILDCARD!r}, found {tok!r}", self.i - 1)
        return tok

    def set_expr(self) -> SetExpr:
        tok = self.next()
        if tok == "find":
            return Find(self.entity(), self.relation())
        if tok == "find_rev":
            return FindRev(self.entity(), self.relation())
        if tok == "filter_type":
            source = self.set_expr()
            tail = self.next()
            if not is_entity_id(tail):
                raise ActionParseError(
                    f"filter_type needs a type id, found {tail!r}", self.i - 1)
            return FilterType(source, tail)
        if tok == "union":
            return UnionAct(self.set_expr(), self.set_expr())
        if tok == "intersection":
            return IntersectAct(self.set_expr(), self.set_expr())
        if tok == "difference":
            return DifferenceAct(self.set_expr(), self.set_expr())
        raise ActionParseError(f"expected a set operator, found {tok!r}",
                               self.i - 1)

    def group_expr(self) -> GroupCounts:
        tok = self.next()
        if tok not in ("group", "group_rev"):
            raise ActionParseError(f"expected group or group_rev, found {tok!r}",
                                   self.i - 1)
        return GroupCounts(self.relation(), self.type_or_wildcard(),
                           self.type_or_wildcard(), reverse=tok == "group_rev")

    def count_expr(self) -> CountAct:
        tok = self.next()
        if tok != "count":
            raise ActionParseError(f"expected count, found {tok!r}", self.i - 1)
        head = self.peek()
        if head in EXTREMUM_ACTIONS:
            raise ActionParseError("counting an extremum is not supported",
                                   self.i)
        if head in COMPARATOR_ACTIONS:
            return CountAct(self.quantitative())
        return CountAct(self.set_expr())

    def quantitative(self) -> TUnion[CompareCount, ExtremumAct]:
        tok = self.next()
        if tok in EXTREMUM_ACTIONS:
            return ExtremumAct(self.group_expr(), tok)
        if tok in COMPARATOR_ACTIONS:
            group = self.group_expr()
            head = self.peek()
            if head is not None and _INT_RE.match(head):
                threshold: TUnion[int, CountAct] = int(self.next())
            elif head == "count":
                threshold = self.count_expr()
                if not isinstance(threshold.source, (Find, FindRev, FilterType,
                                                     UnionAct, IntersectAct,
                                                     DifferenceAct)):
                    raise ActionParseError(
                        "threshold counts must count a set expression", self.i)
            else:
                raise ActionParseError(
                    f"expected an integer or count, found {head!r}", self.i)
            return CompareCount(group, tok, threshold)
        raise ActionParseError(f"expected a quantitative operator, found {tok!r}",
                               self.i - 1)

    def tree(self) -> ActionTree:
        head = self.peek()
        if head is None:
            raise ActionParseError("empty action sequence", 0)
        if head == "count":
            node: ActionTree = self.count_expr()
        elif head == "is_in":
            self.next()
            node = IsIn(self.entity(), self.set_expr())
        elif head in COMPARATOR_ACTIONS or head in EXTREMUM_ACTIONS:
            node = self.quantitative()
        elif head in ("group", "group_rev"):
            node = self.group_expr()
        else:
            node = self.set_expr()
        if self.i != len(self.tokens):
            raise ActionParseError(
                f"trailing tokens {self.tokens[self.i:]!r}", self.i)
        return node


def parse_actions(source) -> ActionTree:
    """Parse a token list (or its bracketed text form) into one tree."""
    return _ActionParser(_split_tokens(source)).tree()


# ---------------------------------------------------------------------------
# Direct interpretation

def _interpret_set(kg: KnowledgeGraph, expr: SetExpr) -> frozenset[str]:
    if isinstance(expr, Find):
        return frozenset(t.object for t in kg.match(subject=expr.entity,
                                                    predicate=expr.relation))
    if isinstance(expr, FindRev):
        return frozenset(t.subject for t in kg.match(predicate=expr.relation,
                                                     object=expr.entity))
    if isinstance(expr, FilterType):
        return frozenset(e for e in _interpret_set(kg, expr.source)
                         if expr.type_id in kg.types_of(e))
    if isinstance(expr, UnionAct):
        return _interpret_set(kg, expr.left) | _interpret_set(kg, expr.right)
    if isinstance(expr, IntersectAct):
        return _interpret_set(kg, expr.left) & _interpret_set(kg, expr.right)
    if isinstance(expr, DifferenceAct):
        return _interpret_set(kg, expr.left) - _interpret_set(kg, expr.right)
    raise TypeError(f"not a set expression: {expr!r}")


def _interpret_group(kg: KnowledgeGraph, group: GroupCounts) -> dict[str, int]:
    values: dict[str, set[str]] = {}
    for s, _, o in kg.match(predicate=group.relation):
        key, value = (o, s) if group.reverse else (s, o)
        if group.key_type and group.key_type not in kg.types_of(key):
            continue
        if group.value_type and group.value_type not in kg.types_of(value):
            continue
        values.setdefault(key, set()).add(value)
    return {k: len(v) for k, v in values.items()}


def interpret(kg: KnowledgeGraph, tree: ActionTree,
              approx_tolerance=None) -> Answer:
    if isinstance(tree, (Find, FindRev, FilterType, UnionAct, IntersectAct,
                         DifferenceAct)):
        return EntitySetAnswer(_interpret_set(kg, tree))
    if isinstance(tree, CountAct):
        inner = interpret(kg, tree.source, approx_tolerance)
        return CountAnswer(len(inner.entities))
    if isinstance(tree, IsIn):
        return BooleanAnswer(tree.entity in _interpret_set(kg, tree.source))
    if isinstance(tree, CompareCount):
        counts = _interpret_group(kg, tree.group)
        if isinstance(tree.threshold, int):
            reference = tree.threshold
        else:
            reference = interpret(kg, tree.threshold, approx_tolerance).value
        op = COMPARATOR_ACTIONS[tree.comparator]
        return EntitySetAnswer(frozenset(
            k for k, c in counts.items()
            if sq._compare(c, op, reference, approx_tolerance)))
    if isinstance(tree, ExtremumAct):
        counts = _interpret_group(kg, tree.group)
        if not counts:
            return EntitySetAnswer(frozenset())
        best = max(counts.values()) if tree.which == "argmax" \
            else min(counts.values())
        return EntitySetAnswer(frozenset(
            k for k, c in counts.items() if c == best))
    if isinstance(tree, GroupCounts):
        raise ActionError("a bare group has no answer; compare or rank it")
    raise TypeError(f"not an action tree: {tree!r}")


# ---------------------------------------------------------------------------
# Compilation to the SPARQL fragment

_X = sq.Var("x")
_Y = sq.Var("y")
_Z = sq.Var("z")


def _conj(a: sq.Group, b: sq.Group) -> sq.Group:
    """Conjoin two groups; unions distribute, minus keeps its base side."""
    if isinstance(a, sq.Bgp) and isinstance(b, sq.Bgp):
        return sq.Bgp(a.patterns + b.patterns)
    if isinstance(a, sq.UnionGroup):
        return sq.UnionGroup(_conj(a.left, b), _conj(a.right, b))
    if isinstance(b, sq.UnionGroup):
        return sq.UnionGroup(_conj(a, b.left), _conj(a, b.right))
    if isinstance(a, sq.MinusGroup):
        return sq.MinusGroup(_conj(a.base, b), a.removed)
    if isinstance(b, sq.MinusGroup):
        return sq.MinusGroup(_conj(a, b.base), b.removed)
    raise TypeError(f"cannot conjoin {a!r} and {b!r}")


def _compile_set(expr: SetExpr, var: sq.Var) -> sq.Group:
    if isinstance(expr, Find):
        return sq.Bgp((sq.TriplePattern(sq.Entity(expr.entity),
                                        sq.Prop(expr.relation), var),))
    if isinstance(expr, FindRev):
        return sq.Bgp((sq.TriplePattern(var, sq.Prop(expr.relation),
                                        sq.Entity(expr.entity)),))
    if isinstance(expr, FilterType):
        constraint = sq.Bgp((sq.TriplePattern(var, sq.Prop(INSTANCE_OF),
                                              sq.Entity(expr.type_id)),))
        return _conj(_compile_set(expr.source, var), constraint)
    if isinstance(expr, UnionAct):
        return sq.UnionGroup(_compile_set(expr.left, var),
                             _compile_set(expr.right, var))
    if isinstance(expr, IntersectAct):
        return _conj(_compile_set(expr.left, var),
                     _compile_set(expr.right, var))
    if isinstance(expr, DifferenceAct):
        return sq.MinusGroup(_compile_set(expr.left, var),
                             _compile_set(expr.right, var))
    raise TypeError(f"not a set expression: {expr!r}")


def _compile_group(group: GroupCounts, key: sq.Var, counted: sq.Var) -> sq.Group:
    rel = sq.Prop(group.relation)
    if group.reverse:
        patterns = [sq.TriplePattern(counted, rel, key)]
    else:
        patterns = [sq.TriplePattern(key, rel, counted)]
    if group.key_type:
        patterns.append(sq.TriplePattern(key, sq.Prop(INSTANCE_OF),
                                         sq.Entity(group.key_type)))
    if group.value_type:
        patterns.append(sq.TriplePattern(counted, sq.Prop(INSTANCE_OF),
                                         sq.Entity(group.value_type)))
    return sq.Bgp(tuple(patterns))


def _substitute(group: sq.Group, var: sq.Var, entity: sq.Entity) -> sq.Group:
    def sub_term(term):
        return entity if term == var else term

    if isinstance(group, sq.Bgp):
        return sq.Bgp(tuple(
            sq.TriplePattern(sub_term(p.subject), p.predicate,
                             sub_term(p.object))
            for p in group.patterns))
    if isinstance(group, sq.UnionGroup):
        return sq.UnionGroup(_substitute(group.left, var, entity),
                             _substitute(group.right, var, entity))
    if isinstance(group, sq.MinusGroup):
        return sq.MinusGroup(_substitute(group.base, var, entity),
                             _substitute(group.removed, var, entity))
    raise TypeError(f"not a group: {group!r}")


def _count_query(expr: SetExpr, var: sq.Var, alias: sq.Var) -> SparqlQuery:
    where = _compile_set(expr, var)
    if isinstance(where, sq.UnionGroup):
        form = sq.SelectCount(var=var, distinct=True, alias=alias)
    else:
        form = sq.SelectCount(var=None, alias=alias)
    return SparqlQuery(form, where)


def _compile_grouped(tree: TUnion[CompareCount, ExtremumAct],
                     count_groups: bool) -> SparqlQuery:
    if isinstance(tree, ExtremumAct):
        where = _compile_group(tree.group, _X, _Y)
        form = sq.SelectGrouped(key=_X, counted=_Y,
                                extremum=EXTREMUM_ACTIONS[tree.which])
        return SparqlQuery(form, where)
    where = _compile_group(tree.group, _X, _Y)
    if isinstance(tree.threshold, int):
        threshold = tree.threshold
    else:
        threshold = _count_query(tree.threshold.source, _Z, sq.Var("n"))
    form = sq.SelectGrouped(key=_X, counted=_Y,
                            comparator=COMPARATOR_ACTIONS[tree.comparator],
                            threshold=threshold, count_groups=count_groups)
    return SparqlQuery(form, where)


def compile_action(tree: ActionTree) -> SparqlQuery:
    """Compile a tree to the SPARQL fragment over variable ?x (and ?y, ?z)."""
    if isinstance(tree, (Find, FindRev, FilterType, UnionAct, IntersectAct,
                         DifferenceAct)):
        return SparqlQuery(sq.SelectEntities(_X), _compile_set(tree, _X))
    if isinstance(tree, CountAct):
        if isinstance(tree.source, (CompareCount,)):
            return _compile_grouped(tree.source, count_groups=True)
        if isinstance(tree.source, ExtremumAct):
            raise ActionError("counting an extremum is not supported")
        return _count_query(tree.source, _X, sq.Var("count"))
    if isinstance(tree, IsIn):
        where = _substitute(_compile_set(tree.source, _X), _X,
                            sq.Entity(tree.entity))
        return SparqlQuery(sq.Ask(), where)
    if isinstance(tree, (CompareCount, ExtremumAct)):
        return _compile_grouped(tree, count_groups=False)
    if isinstance(tree, GroupCounts):
        raise ActionError("a bare group has no answer; compare or rank it")
    raise TypeError(f"not an action tree: {tree!r}")


# ---------------------------------------------------------------------------
# Denotation-guided breadth-first search

@dataclass(frozen=True)
class ActionSymbols:
    entities: frozenset[str]
    relations: frozenset[str]
    types: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "entities", frozenset(self.entities))
        object.__setattr__(self, "relations", frozenset(self.relations))
        object.__setattr__(self, "types", frozenset(self.types))


def search_annotation(kg: KnowledgeGraph, symbols: ActionSymbols,
                      gold: Answer, max_depth: int = 10
                      ) -> ActionTree | None:
    """Smallest action tree over `symbols` whose denotation equals `gold`.

    Trees are enumerated in nondecreasing token count; within one size, the
    lexicographically smallest matching serialization wins, so results are
    deterministic.  The searched grammar is the set algebra plus the
    terminal count / is_in operators; quantitative comparators are out of
    scope here because turn annotations carry no numeric operands.  Returns
    None when no tree of at most `max_depth` tokens reproduces `gold`.
    """
    if max_depth < 1:
        raise ActionError("max_depth must be at least 1")
    entities = sorted(symbols.entities)
    relations = sorted(symbols.relations)
    types = sorted(symbols.types)

    # representative set expressions per size, pruned by denotation: any
    # tree reproducing a known denotation with no fewer tokens is redundant.
    levels: dict[int, list[tuple[ActionTree, frozenset[str]]]] = {}
    seen: set[frozenset[str]] = set()

    def candidate_sets(size: int) -> list[SetExpr]:
        found: list[SetExpr] = []
        if size == 3:
            for e in entities:
                for r in relations:
                    found.append(Find(e, r))
                    found.append(FindRev(e, r))
        if size >= 5:
            for sub, _ in levels.get(size - 2, ()):
                for t in types:
                    found.append(FilterType(sub, t))
        if size >= 7:
            for left_size in range(3, size - 3):
                right_size = size - 1 - left_size
                for left, _ in levels.get(left_size, ()):
                    for right, _ in levels.get(right_size, ()):
                        found.append(UnionAct(left, right))
                        found.append(IntersectAct(left, right))
                        found.append(DifferenceAct(left, right))
        return found

    def matches(size: int) -> list[ActionTree]:
        out: list[ActionTree] = []
        if isinstance(gold, EntitySetAnswer):
            for tree, denotation in levels.get(size, ()):
                if denotation == gold.entities:
                    out.append(tree)
        elif isinstance(gold, CountAnswer):
            for tree, denotation in levels.get(size - 1, ()):
                if len(denotation) == gold.value:
                    out.append(CountAct(tree))
        elif isinstance(gold, BooleanAnswer):
            for tree, denotation in levels.get(size - 2, ()):
                for e in entities:
                    if (e in denotation) == gold.value:
                        out.append(IsIn(e, tree))
        return out

    for size in range(3, max_depth + 1):
        fresh: list[tuple[list[str], SetExpr, frozenset[str]]] = []
        for tree in candidate_sets(size):
            denotation = _interpret_set(kg, tree)
            fresh.append((to_tokens(tree), tree, denotation))
        level: list[tuple[ActionTree, frozenset[str]]] = []
        for tokens, tree, denotation in sorted(fresh, key=lambda f: f[0]):
            if denotation in seen:
                continue
            seen.add(denotation)
            level.append((tree, denotation))
        levels[size] = level
        hits = matches(size)
        if hits:
            return min(hits, key=to_tokens)
    return None
