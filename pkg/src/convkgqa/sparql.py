"""SPARQL fragment: AST, parser, serializers, and two evaluators.

The fragment covers SELECT / ASK queries over basic graph patterns with
UNION and MINUS, COUNT projections, and grouped-count comparisons
(GROUP BY ... HAVING (COUNT(?y) <cmp> n), plus ORDER BY ...(COUNT(?y)) LIMIT 1
for extrema).  Entities are written ``wd:Q...`` and relations ``wdt:P...``.

Two evaluators are provided on purpose.  ``evaluate`` answers queries
through the graph's permutation indexes; ``brute_force_evaluate`` re-derives
the answer by exhaustively enumerating variable assignments over the entity
universe with no index lookups and no join ordering.  The second exists as
an oracle for the first and must not share its machinery.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterator, Union as TUnion

from .kg import INSTANCE_OF, KnowledgeGraph, is_entity_id, is_property_id

VAR_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9]*\Z")

SLOT_KINDS = ("ENTITY", "RELATION", "TYPE", "VALUE")

COMPARATORS = (">", "<", ">=", "<=", "=", "APPROX")

EXTREMUM_MAX = "max"
EXTREMUM_MIN = "min"


class SparqlError(Exception):
    pass


class ParseError(SparqlError):
    def __init__(self, message: str, position: int, expected: tuple[str, ...] = ()):
        detail = f"at offset {position}: {message}"
        if expected:
            detail += " (expected " + " | ".join(expected) + ")"
        super().__init__(detail)
        self.position = position
        self.expected = expected


class UnsupportedConstructError(ParseError):
    def __init__(self, construct: str, position: int):
        ParseError.__init__(
            self, f"unsupported construct {construct!r}", position)
        self.construct = construct


class EvalError(SparqlError):
    pass


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Var:
    name: str  # stored without the leading '?'

    def __post_init__(self):
        if not VAR_NAME_RE.match(self.name):
            raise SparqlError(f"bad variable name {self.name!r}")


@dataclass(frozen=True)
class Entity:
    id: str

    def __post_init__(self):
        if not is_entity_id(self.id):
            raise SparqlError(f"bad entity id {self.id!r}")


@dataclass(frozen=True)
class Prop:
    id: str

    def __post_init__(self):
        if not is_property_id(self.id):
            raise SparqlError(f"bad property id {self.id!r}")


@dataclass(frozen=True)
class Slot:
    """Placeholder term in a template skeleton, e.g. ENTITY1 or RELATION2."""
    kind: str
    ordinal: int

    def __post_init__(self):
        if self.kind not in SLOT_KINDS or self.ordinal < 1:
            raise SparqlError(f"bad slot {self.kind}{self.ordinal}")

    @property
    def token(self) -> str:
        return f"{self.kind}{self.ordinal}"


Term = TUnion[Var, Entity, Prop, Slot]


@dataclass(frozen=True)
class TriplePattern:
    subject: Term
    predicate: Term
    object: Term

    def __post_init__(self):
        if isinstance(self.predicate, (Var, Entity)):
            raise SparqlError("predicate must be a relation or slot")

    def terms(self) -> tuple[Term, Term, Term]:
        return (self.subject, self.predicate, self.object)


@dataclass(frozen=True)
class Bgp:
    patterns: tuple[TriplePattern, ...]


@dataclass(frozen=True)
class UnionGroup:
    left: "Group"
    right: "Group"


@dataclass(frozen=True)
class MinusGroup:
    base: "Group"
    removed: "Group"


Group = TUnion[Bgp, UnionGroup, MinusGroup]


@dataclass(frozen=True)
class SelectEntities:
    var: Var
    distinct: bool = False


@dataclass(frozen=True)
class SelectCount:
    var: Var | None = None        # None counts rows: COUNT(*)
    distinct: bool = False
    alias: Var = field(default_factory=lambda: Var("count"))


@dataclass(frozen=True)
class Ask:
    pass


@dataclass(frozen=True)
class SelectGrouped:
    """Group solutions by `key`, count distinct `counted` values per group.

    Exactly one of `comparator` (with `threshold`) or `extremum` is set.
    With `count_groups` the query projects how many groups qualify instead
    of the group keys themselves.
    """
    key: Var
    counted: Var
    comparator: str | None = None
    threshold: TUnion[int, Slot, "SparqlQuery", None] = None
    extremum: str | None = None
    count_groups: bool = False
    alias: Var = field(default_factory=lambda: Var("count"))

    def __post_init__(self):
        if (self.comparator is None) == (self.extremum is None):
            raise SparqlError("grouped query needs a comparator xor an extremum")
        if self.comparator is not None:
            if self.comparator not in COMPARATORS:
                raise SparqlError(f"bad comparator {self.comparator!r}")
            if self.threshold is None:
                raise SparqlError("comparator needs a threshold")
        if self.extremum is not None:
            if self.extremum not in (EXTREMUM_MIN, EXTREMUM_MAX):
                raise SparqlError(f"bad extremum {self.extremum!r}")
            if self.count_groups:
                raise SparqlError("extremum query cannot count groups")
        if self.key == self.counted:
            raise SparqlError("grouped key and counted variable must differ")


QueryForm = TUnion[SelectEntities, SelectCount, Ask, SelectGrouped]


@dataclass(frozen=True)
class SparqlQuery:
    form: QueryForm
    where: Group


# ---------------------------------------------------------------------------
# Answers

@dataclass(frozen=True)
class EntitySetAnswer:
    entities: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "entities", frozenset(self.entities))


@dataclass(frozen=True)
class BooleanAnswer:
    value: bool


@dataclass(frozen=True)
class CountAnswer:
    value: int

    def __post_init__(self):
        if self.value < 0:
            raise SparqlError("count answers are nonnegative")


Answer = TUnion[EntitySetAnswer, BooleanAnswer, CountAnswer]


def answer_to_json(answer: Answer):
    """Answers serialize as an id array, a bool, or an int."""
    if isinstance(answer, EntitySetAnswer):
        return sorted(answer.entities)
    if isinstance(answer, BooleanAnswer):
        return answer.value
    if isinstance(answer, CountAnswer):
        return answer.value
    raise TypeError(f"not an answer: {answer!r}")


def verbalize_answer(kg: KnowledgeGraph, answer: Answer) -> str:
    """Render an answer the way a system turn would say it."""
    if isinstance(answer, BooleanAnswer):
        return "Yes" if answer.value else "No"
    if isinstance(answer, CountAnswer):
        return str(answer.value)
    if isinstance(answer, EntitySetAnswer):
        if not answer.entities:
            return "none"
        labels = sorted((kg.label(e), e) for e in answer.entities)
        return ", ".join(label for label, _ in labels)
    raise TypeError(f"not an answer: {answer!r}")


def answer_from_json(value) -> Answer:
    if isinstance(value, bool):
        return BooleanAnswer(value)
    if isinstance(value, int):
        return CountAnswer(value)
    if isinstance(value, list):
        return EntitySetAnswer(frozenset(value))
    raise ValueError(f"cannot decode answer from {value!r}")


# ---------------------------------------------------------------------------
# Structural helpers

def iter_patterns(group: Group) -> Iterator[TriplePattern]:
    if isinstance(group, Bgp):
        yield from group.patterns
    elif isinstance(group, UnionGroup):
        yield from iter_patterns(group.left)
        yield from iter_patterns(group.right)
    elif isinstance(group, MinusGroup):
        yield from iter_patterns(group.base)
        yield from iter_patterns(group.removed)
    else:
        raise TypeError(f"not a group: {group!r}")


def group_vars(group: Group) -> list[str]:
    """Variable names in first-appearance order."""
    seen: list[str] = []
    for pat in iter_patterns(group):
        for term in pat.terms():
            if isinstance(term, Var) and term.name not in seen:
                seen.append(term.name)
    return seen


def query_symbols(query: SparqlQuery) -> tuple[set[str], set[str], set[str]]:
    """(entities, relations, types) mentioned by the query.

    An entity in object position of an instance-of pattern counts as a type.
    """
    entities: set[str] = set()
    relations: set[str] = set()
    types: set[str] = set()
    queries = [query]
    while queries:
        q = queries.pop()
        form = q.form
        if isinstance(form, SelectGrouped) and isinstance(form.threshold, SparqlQuery):
            queries.append(form.threshold)
        for pat in iter_patterns(q.where):
            if isinstance(pat.predicate, Prop):
                relations.add(pat.predicate.id)
            is_type_edge = isinstance(pat.predicate, Prop) and \
                pat.predicate.id == INSTANCE_OF
            for pos, term in enumerate(pat.terms()):
                if isinstance(term, Entity):
                    if pos == 2 and is_type_edge:
                        types.add(term.id)
                    else:
                        entities.add(term.id)
    return entities, relations, types


def has_slots(query: SparqlQuery) -> bool:
    form = query.form
    if isinstance(form, SelectGrouped):
        if isinstance(form.threshold, Slot):
            return True
        if isinstance(form.threshold, SparqlQuery) and has_slots(form.threshold):
            return True
    return any(isinstance(term, Slot)
               for pat in iter_patterns(query.where) for term in pat.terms())


def validate_query(query: SparqlQuery) -> None:
    """Reject queries whose projection or grouping is inconsistent."""
    names = set(group_vars(query.where))
    form = query.form
    if isinstance(form, SelectEntities):
        if form.var.name not in names:
            raise SparqlError(
                f"projected variable ?{form.var.name} not in the pattern")
    elif isinstance(form, SelectCount):
        if form.var is not None and form.var.name not in names:
            raise SparqlError(
                f"counted variable ?{form.var.name} not in the pattern")
    elif isinstance(form, SelectGrouped):
        for v in (form.key, form.counted):
            if v.name not in names:
                raise SparqlError(f"grouping variable ?{v.name} not in the pattern")
        if isinstance(form.threshold, SparqlQuery):
            if not isinstance(form.threshold.form, SelectCount):
                raise SparqlError("threshold subquery must be a count query")
            validate_query(form.threshold)
    elif not isinstance(form, Ask):
        raise TypeError(f"not a query form: {form!r}")


# ---------------------------------------------------------------------------
# Tokenizer

_KEYWORDS = {"SELECT", "DISTINCT", "COUNT", "AS", "WHERE", "ASK", "UNION",
             "MINUS", "GROUP", "BY", "HAVING", "ORDER", "ASC", "DESC",
             "LIMIT", "APPROX", "PREFIX"}

# Constructs that belong to full SPARQL but not to this fragment.  They are
# recognized so the error can name them instead of a generic syntax failure.
_UNSUPPORTED = {"OPTIONAL", "FILTER", "CONSTRUCT", "DESCRIBE", "INSERT",
                "DELETE", "SERVICE", "GRAPH", "BIND", "VALUES", "EXISTS",
                "NOT", "OFFSET", "FROM", "REDUCED", "NAMED", "SUM", "AVG",
                "MIN", "MAX", "SAMPLE", "GROUP_CONCAT"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<iri><[^<>\s]*>)
  | (?P<var>\?[A-Za-z][A-Za-z0-9]*)
  | (?P<pname>(?:wd|wdt):[A-Za-z0-9]*)
  | (?P<slot>(?:ENTITY|RELATION|TYPE|VALUE)[0-9]+)
  | (?P<int>[0-9]+)
  | (?P<word>[A-Za-z][A-Za-z0-9_]*:?)
  | (?P<op><=|>=|[{}().*<>=])
""", re.VERBOSE)


@dataclass(frozen=True)
class _Token:
    kind: str
    value: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"cannot read {text[pos:pos + 10]!r}", pos)
        kind = m.lastgroup
        value = m.group()
        if kind != "ws":
            if kind == "word":
                upper = value.upper().rstrip(":")
                if upper in _KEYWORDS:
                    tokens.append(_Token("kw", upper, pos))
                elif upper in _UNSUPPORTED:
                    raise UnsupportedConstructError(upper, pos)
                elif value.endswith(":"):
                    tokens.append(_Token("pname_ns", value[:-1], pos))
                else:
                    raise ParseError(f"unexpected word {value!r}", pos)
            else:
                tokens.append(_Token(kind, value, pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, tokens: list[_Token], allow_slots: bool):
        self.tokens = tokens
        self.i = 0
        self.allow_slots = allow_slots

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, *expected: str):
        raise ParseError(message, self.peek().pos, expected)

    def expect_kw(self, word: str) -> _Token:
        tok = self.peek()
        if tok.kind != "kw" or tok.value != word:
            self.fail(f"found {tok.value or 'end of input'!r}", word)
        return self.next()

    def expect_op(self, op: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.value != op:
            self.fail(f"found {tok.value or 'end of input'!r}", op)
        return self.next()

    def at_kw(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "kw" and tok.value in words

    def at_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.value in ops

    # grammar ---------------------------------------------------------------

    def query(self) -> SparqlQuery:
        self.prologue()
        if self.at_kw("ASK"):
            self.next()
            q = SparqlQuery(Ask(), self.group())
        elif self.at_kw("SELECT"):
            q = self.select_query()
        else:
            self.fail(f"found {self.peek().value!r}", "SELECT", "ASK")
        if self.peek().kind != "eof":
            self.fail(f"trailing input {self.peek().value!r}", "end of input")
        validate_query(q)
        return q

    def prologue(self) -> None:
        while self.at_kw("PREFIX"):
            self.next()
            ns = self.peek()
            if ns.kind == "pname_ns":
                self.next()
            elif ns.kind == "pname" and ns.value.endswith(":"):
                self.next()
            else:
                self.fail("prefix declaration needs a namespace", "wd:", "wdt:")
            iri = self.peek()
            if iri.kind != "iri":
                self.fail("prefix declaration needs an IRI", "<...>")
            self.next()

    def select_query(self) -> SparqlQuery:
        self.expect_kw("SELECT")
        proj = self.projection()
        if self.at_kw("WHERE"):
            self.next()
        where = self.group()
        if self.at_kw("GROUP"):
            form = self.grouped_form(proj)
        elif self.at_kw("ORDER"):
            self.fail("ORDER BY requires GROUP BY in this fragment", "GROUP")
        else:
            form = proj_to_form(proj, self)
        return SparqlQuery(form, where)

    def projection(self):
        # returns ("var", var, distinct) or ("count", var|None, distinct, alias)
        if self.at_op("("):
            self.next()
            self.expect_kw("COUNT")
            self.expect_op("(")
            distinct = False
            var = None
            if self.at_kw("DISTINCT"):
                self.next()
                distinct = True
            tok = self.peek()
            if tok.kind == "op" and tok.value == "*":
                if distinct:
                    self.fail("COUNT(DISTINCT *) is not supported", "?var")
                self.next()
            elif tok.kind == "var":
                var = Var(self.next().value[1:])
            else:
                self.fail(f"found {tok.value!r}", "*", "?var")
            self.expect_op(")")
            self.expect_kw("AS")
            alias_tok = self.peek()
            if alias_tok.kind != "var":
                self.fail("count projection needs an alias", "?var")
            alias = Var(self.next().value[1:])
            self.expect_op(")")
            return ("count", var, distinct, alias)
        distinct = False
        if self.at_kw("DISTINCT"):
            self.next()
            distinct = True
        tok = self.peek()
        if tok.kind != "var":
            self.fail(f"found {tok.value!r}", "?var", "(COUNT(...) AS ?var)")
        return ("var", Var(self.next().value[1:]), distinct)

    def grouped_form(self, proj) -> SelectGrouped:
        self.expect_kw("GROUP")
        self.expect_kw("BY")
        tok = self.peek()
        if tok.kind != "var":
            self.fail("GROUP BY needs a variable", "?var")
        key = Var(self.next().value[1:])
        if proj[0] == "var":
            if proj[1] != key:
                self.fail(f"projection ?{proj[1].name} must match the group key")
            count_groups, alias = False, Var("count")
        else:
            _, var, _, alias = proj
            if var is not None and var != key:
                self.fail("group count must count the group key")
            count_groups = True
        if self.at_kw("HAVING"):
            self.next()
            self.expect_op("(")
            self.expect_kw("COUNT")
            self.expect_op("(")
            counted = self.counted_var()
            self.expect_op(")")
            cmp_tok = self.peek()
            if cmp_tok.kind == "op" and cmp_tok.value in (">", "<", ">=", "<=", "="):
                comparator = self.next().value
            elif self.at_kw("APPROX"):
                self.next()
                comparator = "APPROX"
            else:
                self.fail(f"found {cmp_tok.value!r}", *COMPARATORS)
            threshold = self.threshold()
            self.expect_op(")")
            return SelectGrouped(key=key, counted=counted, comparator=comparator,
                                 threshold=threshold, count_groups=count_groups,
                                 alias=alias)
        if self.at_kw("ORDER"):
            self.next()
            self.expect_kw("BY")
            if self.at_kw("DESC"):
                extremum = EXTREMUM_MAX
            elif self.at_kw("ASC"):
                extremum = EXTREMUM_MIN
            else:
                self.fail(f"found {self.peek().value!r}", "ASC", "DESC")
            self.next()
            self.expect_op("(")
            self.expect_kw("COUNT")
            self.expect_op("(")
            counted = self.counted_var()
            self.expect_op(")")
            self.expect_op(")")
            self.expect_kw("LIMIT")
            tok = self.peek()
            if tok.kind != "int" or tok.value != "1":
                self.fail("extremum queries use LIMIT 1", "1")
            self.next()
            if count_groups:
                self.fail("extremum queries project the group key")
            return SelectGrouped(key=key, counted=counted, extremum=extremum)
        self.fail(f"found {self.peek().value!r}", "HAVING", "ORDER")

    def counted_var(self) -> Var:
        if self.at_kw("DISTINCT"):
            self.next()
        tok = self.peek()
        if tok.kind != "var":
            self.fail("COUNT needs a variable here", "?var")
        return Var(self.next().value[1:])

    def threshold(self):
        tok = self.peek()
        if tok.kind == "int":
            return int(self.next().value)
        if tok.kind == "slot":
            slot = self.slot(self.next())
            if slot.kind != "VALUE":
                self.fail("only VALUE slots may stand for a threshold")
            return slot
        if tok.kind == "op" and tok.value == "(":
            self.next()
            sub = self.select_query()
            if not isinstance(sub.form, SelectCount):
                self.fail("threshold subquery must be a count query")
            self.expect_op(")")
            return sub
        self.fail(f"found {tok.value!r}", "integer", "(SELECT (COUNT(...)")

    def slot(self, tok: _Token) -> Slot:
        if not self.allow_slots:
            raise ParseError(f"slot {tok.value} outside a template", tok.pos)
        m = re.match(r"(ENTITY|RELATION|TYPE|VALUE)([0-9]+)\Z", tok.value)
        return Slot(m.group(1), int(m.group(2)))

    def group(self) -> Group:
        self.expect_op("{")
        if self.at_op("{"):
            node = self.group()
            while self.at_kw("UNION", "MINUS"):
                op = self.next().value
                right = self.group()
                node = UnionGroup(node, right) if op == "UNION" \
                    else MinusGroup(node, right)
        else:
            node = self.triples_block()
        self.expect_op("}")
        return node

    def triples_block(self) -> Bgp:
        patterns = [self.triple_pattern()]
        while self.at_op("."):
            self.next()
            if self.at_op("}"):
                break
            patterns.append(self.triple_pattern())
        return Bgp(tuple(patterns))

    def triple_pattern(self) -> TriplePattern:
        s = self.term(position="subject")
        p = self.term(position="predicate")
        o = self.term(position="object")
        return TriplePattern(s, p, o)

    def term(self, position: str) -> Term:
        tok = self.peek()
        if tok.kind == "var":
            if position == "predicate":
                raise UnsupportedConstructError("variable predicate", tok.pos)
            self.next()
            return Var(tok.value[1:])
        if tok.kind == "pname":
            self.next()
            ns, _, local = tok.value.partition(":")
            if ns == "wd" and is_entity_id(local):
                if position == "predicate":
                    self.fail(f"{tok.value} cannot be a predicate")
                return Entity(local)
            if ns == "wdt" and is_property_id(local):
                if position != "predicate":
                    self.fail(f"{tok.value} must be a predicate")
                return Prop(local)
            raise ParseError(f"bad prefixed name {tok.value!r}", tok.pos)
        if tok.kind == "slot":
            self.next()
            slot = self.slot(tok)
            if position == "predicate" and slot.kind != "RELATION":
                self.fail(f"{slot.token} cannot be a predicate")
            if position != "predicate" and slot.kind == "RELATION":
                self.fail(f"{slot.token} must be a predicate")
            if slot.kind == "VALUE":
                self.fail("VALUE slots only stand for thresholds")
            return slot
        self.fail(f"found {tok.value or 'end of input'!r}",
                  "?var", "wd:Q...", "wdt:P...")


def parse_sparql(text: str, allow_slots: bool = False) -> SparqlQuery:
    """Parse a query in the fragment; raises ParseError with position info."""
    return _Parser(_tokenize(text), allow_slots).query()


def proj_to_form(proj, _parser=None) -> QueryForm:
    if proj[0] == "var":
        return SelectEntities(var=proj[1], distinct=proj[2])
    _, var, distinct, alias = proj
    return SelectCount(var=var, distinct=distinct, alias=alias)


# ---------------------------------------------------------------------------
# Serializers

def _term_text(term: Term, rename: dict[str, str] | None = None) -> str:
    if isinstance(term, Var):
        name = rename.get(term.name, term.name) if rename else term.name
        return f"?{name}"
    if isinstance(term, Entity):
        return f"wd:{term.id}"
    if isinstance(term, Prop):
        return f"wdt:{term.id}"
    if isinstance(term, Slot):
        return term.token
    raise TypeError(f"not a term: {term!r}")


def _group_text(group: Group, rename: dict[str, str] | None) -> str:
    if isinstance(group, Bgp):
        inner = " ".join(
            " ".join(_term_text(t, rename) for t in pat.terms()) + " ."
            for pat in group.patterns)
        return "{ " + inner + " }"
    if isinstance(group, UnionGroup):
        return ("{ " + _group_text(group.left, rename) + " UNION "
                + _group_text(group.right, rename) + " }")
    if isinstance(group, MinusGroup):
        return ("{ " + _group_text(group.base, rename) + " MINUS "
                + _group_text(group.removed, rename) + " }")
    raise TypeError(f"not a group: {group!r}")


def _threshold_text(threshold, rename: dict[str, str] | None) -> str:
    if isinstance(threshold, int):
        return str(threshold)
    if isinstance(threshold, Slot):
        return threshold.token
    if isinstance(threshold, SparqlQuery):
        return "(" + _query_text(threshold, rename) + ")"
    raise TypeError(f"not a threshold: {threshold!r}")


def _query_text(query: SparqlQuery, rename: dict[str, str] | None) -> str:
    form = query.form
    where = _group_text(query.where, rename)

    def v(var: Var) -> str:
        return _term_text(var, rename)

    if isinstance(form, Ask):
        return f"ASK {where}"
    if isinstance(form, SelectEntities):
        head = "SELECT DISTINCT" if form.distinct else "SELECT"
        return f"{head} {v(form.var)} WHERE {where}"
    if isinstance(form, SelectCount):
        inner = "*" if form.var is None else \
            ("DISTINCT " if form.distinct else "") + v(form.var)
        return f"SELECT (COUNT({inner}) AS {v(form.alias)}) WHERE {where}"
    if isinstance(form, SelectGrouped):
        if form.count_groups:
            head = f"SELECT (COUNT(DISTINCT {v(form.key)}) AS {v(form.alias)})"
        else:
            head = f"SELECT {v(form.key)}"
        text = f"{head} WHERE {where} GROUP BY {v(form.key)}"
        if form.extremum is not None:
            order = "DESC" if form.extremum == EXTREMUM_MAX else "ASC"
            return f"{text} ORDER BY {order}(COUNT({v(form.counted)})) LIMIT 1"
        cmp = form.comparator
        thr = _threshold_text(form.threshold, rename)
        return f"{text} HAVING (COUNT({v(form.counted)}) {cmp} {thr})"
    raise TypeError(f"not a query form: {form!r}")


def serialize(query: SparqlQuery, prefixes: bool = False) -> str:
    """Faithful serialization: variable names and pattern order preserved."""
    text = _query_text(query, rename=None)
    if prefixes:
        from .kg import WD_PREFIX, WDT_PREFIX
        return (f"PREFIX wd: <{WD_PREFIX}>\n"
                f"PREFIX wdt: <{WDT_PREFIX}>\n" + text)
    return text


def _query_vars(query: SparqlQuery) -> list[str]:
    """All variable names in deterministic first-appearance order."""
    order: list[str] = []

    def add(name: str):
        if name not in order:
            order.append(name)

    form = query.form
    if isinstance(form, SelectEntities):
        add(form.var.name)
    elif isinstance(form, SelectCount):
        add(form.alias.name)
        if form.var is not None:
            add(form.var.name)
    elif isinstance(form, SelectGrouped):
        if form.count_groups:
            add(form.alias.name)
        add(form.key.name)
    for name in group_vars(query.where):
        add(name)
    if isinstance(form, SelectGrouped):
        add(form.counted.name)
    return order


def _with_threshold(query: SparqlQuery, threshold) -> SparqlQuery:
    form = query.form
    return SparqlQuery(
        SelectGrouped(key=form.key, counted=form.counted,
                      comparator=form.comparator, threshold=threshold,
                      extremum=form.extremum, count_groups=form.count_groups,
                      alias=form.alias),
        query.where)


def canonical(query: SparqlQuery) -> str:
    """Canonical text: variables renamed ?v0, ?v1, ... in appearance order.

    Pattern order is preserved, whitespace is single spaces, and no prefix
    prologue is emitted.  Two queries are an exact match when their
    canonical texts are equal, which makes the comparison insensitive to
    variable naming but sensitive to structure and ordering.
    """
    form = query.form
    if isinstance(form, SelectGrouped) and isinstance(form.threshold, SparqlQuery):
        # threshold subqueries are a separate variable scope
        sub = form.threshold
        sub_rename = {name: f"s{i}" for i, name in enumerate(_query_vars(sub))}
        query = _with_threshold(query, _rename_query(sub, sub_rename))
    rename = {name: f"v{i}" for i, name in enumerate(_query_vars(query))}
    renamed = _rename_query(query, rename)
    return _query_text(renamed, None)


def exact_match(predicted: SparqlQuery, gold: SparqlQuery) -> bool:
    return canonical(predicted) == canonical(gold)


def _sort_group(group: Group) -> Group:
    if isinstance(group, Bgp):
        return Bgp(tuple(sorted(group.patterns,
                                key=lambda p: _group_text(Bgp((p,)), None))))
    if isinstance(group, UnionGroup):
        left, right = _sort_group(group.left), _sort_group(group.right)
        if _group_text(left, None) > _group_text(right, None):
            left, right = right, left
        return UnionGroup(left, right)
    if isinstance(group, MinusGroup):
        return MinusGroup(_sort_group(group.base), _sort_group(group.removed))
    raise TypeError(f"not a group: {group!r}")


def _rename_term(term: Term, rename: dict[str, str]) -> Term:
    if isinstance(term, Var):
        return Var(rename.get(term.name, term.name))
    return term


def _rename_group(group: Group, rename: dict[str, str]) -> Group:
    if isinstance(group, Bgp):
        return Bgp(tuple(
            TriplePattern(*(_rename_term(t, rename) for t in pat.terms()))
            for pat in group.patterns))
    if isinstance(group, UnionGroup):
        return UnionGroup(_rename_group(group.left, rename),
                          _rename_group(group.right, rename))
    if isinstance(group, MinusGroup):
        return MinusGroup(_rename_group(group.base, rename),
                          _rename_group(group.removed, rename))
    raise TypeError(f"not a group: {group!r}")


def _rename_query(query: SparqlQuery, rename: dict[str, str]) -> SparqlQuery:
    form = query.form
    if isinstance(form, SelectEntities):
        new_form = SelectEntities(Var(rename.get(form.var.name, form.var.name)),
                                  form.distinct)
    elif isinstance(form, SelectCount):
        new_form = SelectCount(
            None if form.var is None else Var(rename.get(form.var.name,
                                                         form.var.name)),
            form.distinct,
            Var(rename.get(form.alias.name, form.alias.name)))
    elif isinstance(form, SelectGrouped):
        new_form = SelectGrouped(
            key=Var(rename.get(form.key.name, form.key.name)),
            counted=Var(rename.get(form.counted.name, form.counted.name)),
            comparator=form.comparator, threshold=form.threshold,
            extremum=form.extremum, count_groups=form.count_groups,
            alias=Var(rename.get(form.alias.name, form.alias.name)))
    else:
        new_form = form
    return SparqlQuery(new_form, _rename_group(query.where, rename))


def canonical_unordered(query: SparqlQuery) -> str:
    """Order-insensitive canonical text (diagnostic, not the main metric).

    Alternates canonical renaming with pattern sorting until a fixpoint so
    that queries differing only in pattern order or union operand order
    compare equal.
    """
    form = query.form
    if isinstance(form, SelectGrouped) and isinstance(form.threshold, SparqlQuery):
        sub = form.threshold
        query = _with_threshold(
            query, parse_sparql(canonical_unordered(sub), allow_slots=True))
    current = query
    previous = None
    for _ in range(8):
        rename = {name: f"v{i}" for i, name in enumerate(_query_vars(current))}
        current = _rename_query(current, rename)
        current = SparqlQuery(current.form, _sort_group(current.where))
        text = canonical(current)
        if text == previous:
            break
        previous = text
    return canonical(current)


# ---------------------------------------------------------------------------
# Indexed evaluator

def _approx_ok(count: int, reference: int, tolerance) -> bool:
    if tolerance is None:
        tol = max(1, round(0.1 * reference))
    elif callable(tolerance):
        tol = tolerance(reference)
    else:
        tol = int(tolerance)
    return abs(count - reference) <= tol


def _compare(count: int, comparator: str, reference: int, tolerance) -> bool:
    if comparator == ">":
        return count > reference
    if comparator == "<":
        return count < reference
    if comparator == ">=":
        return count >= reference
    if comparator == "<=":
        return count <= reference
    if comparator == "=":
        return count == reference
    if comparator == "APPROX":
        return _approx_ok(count, reference, tolerance)
    raise EvalError(f"bad comparator {comparator!r}")


def _solutions(kg: KnowledgeGraph, group: Group) -> list[dict[str, str]]:
    if isinstance(group, Bgp):
        rows: list[dict[str, str]] = [{}]
        for pat in group.patterns:
            s, p, o = pat.terms()
            if not isinstance(p, Prop):
                raise EvalError("cannot evaluate a query with open slots")
            new_rows = []
            for row in rows:
                def bound(term):
                    if isinstance(term, Entity):
                        return term.id
                    if isinstance(term, Var):
                        return row.get(term.name)
                    raise EvalError("cannot evaluate a query with open slots")
                bs, bo = bound(s), bound(o)
                for ts, _, to in kg.match(bs, p.id, bo):
                    ext = dict(row)
                    ok = True
                    for term, value in ((s, ts), (o, to)):
                        if isinstance(term, Var):
                            if ext.get(term.name, value) != value:
                                ok = False
                                break
                            ext[term.name] = value
                    if ok:
                        new_rows.append(ext)
            rows = new_rows
        seen = set()
        out = []
        for row in rows:
            key = frozenset(row.items())
            if key not in seen:
                seen.add(key)
                out.append(row)
        return out
    if isinstance(group, UnionGroup):
        rows = _solutions(kg, group.left) + _solutions(kg, group.right)
        seen = set()
        out = []
        for row in rows:
            key = frozenset(row.items())
            if key not in seen:
                seen.add(key)
                out.append(row)
        return out
    if isinstance(group, MinusGroup):
        base = _solutions(kg, group.base)
        removed = _solutions(kg, group.removed)
        out = []
        for row in base:
            drop = False
            for other in removed:
                shared = row.keys() & other.keys()
                if shared and all(row[k] == other[k] for k in shared):
                    drop = True
                    break
            if not drop:
                out.append(row)
        return out
    raise TypeError(f"not a group: {group!r}")


def _grouped_counts(rows: list[dict[str, str]], key: str, counted: str
                    ) -> dict[str, set[str]]:
    groups: dict[str, set[str]] = {}
    for row in rows:
        if key in row and counted in row:
            groups.setdefault(row[key], set()).add(row[counted])
    return groups


def evaluate(kg: KnowledgeGraph, query: SparqlQuery,
             approx_tolerance=None) -> Answer:
    """Evaluate through the permutation indexes; set semantics throughout."""
    if has_slots(query):
        raise EvalError("cannot evaluate a query with open slots")
    form = query.form
    rows = _solutions(kg, query.where)
    if isinstance(form, Ask):
        return BooleanAnswer(bool(rows))
    if isinstance(form, SelectEntities):
        name = form.var.name
        return EntitySetAnswer(frozenset(
            row[name] for row in rows if name in row))
    if isinstance(form, SelectCount):
        if form.var is None:
            return CountAnswer(len({frozenset(r.items()) for r in rows}))
        name = form.var.name
        return CountAnswer(len({row[name] for row in rows if name in row}))
    if isinstance(form, SelectGrouped):
        groups = _grouped_counts(rows, form.key.name, form.counted.name)
        if form.extremum is not None:
            if not groups:
                return EntitySetAnswer(frozenset())
            pick = max(groups.values(), key=len) if form.extremum == EXTREMUM_MAX \
                else min(groups.values(), key=len)
            best = len(pick)
            return EntitySetAnswer(frozenset(
                k for k, vs in groups.items() if len(vs) == best))
        threshold = form.threshold
        if isinstance(threshold, SparqlQuery):
            sub = evaluate(kg, threshold, approx_tolerance)
            if not isinstance(sub, CountAnswer):
                raise EvalError("threshold subquery must produce a count")
            reference = sub.value
        else:
            reference = int(threshold)
        selected = frozenset(
            k for k, vs in groups.items()
            if _compare(len(vs), form.comparator, reference, approx_tolerance))
        if form.count_groups:
            return CountAnswer(len(selected))
        return EntitySetAnswer(selected)
    raise TypeError(f"not a query form: {form!r}")


# ---------------------------------------------------------------------------
# Brute-force oracle
#
# Same answer contract as `evaluate`, independently derived: every basic
# pattern block is answered by enumerating all assignments of its variables
# over the full entity universe and checking each ground triple against the
# plain triple set.  No index lookups, no join ordering.  Guarded against
# blowup so a misuse fails loudly instead of hanging.

_BF_LIMIT = 20_000_000


def _bf_rows(triples: frozenset, universe: list[str], group: Group
             ) -> list[dict[str, str]]:
    if isinstance(group, Bgp):
        names: list[str] = []
        for pat in group.patterns:
            for term in (pat.subject, pat.object):
                if isinstance(term, Var) and term.name not in names:
                    names.append(term.name)
        if len(universe) ** len(names) > _BF_LIMIT:
            raise EvalError("assignment space too large for the brute-force oracle")
        rows = []
        for values in itertools.product(universe, repeat=len(names)):
            binding = dict(zip(names, values))

            def ground(term):
                return term.id if isinstance(term, Entity) else binding[term.name]

            if all((ground(p.subject), p.predicate.id, ground(p.object))
                   in triples for p in group.patterns):
                rows.append(binding)
        return rows
    if isinstance(group, UnionGroup):
        rows = _bf_rows(triples, universe, group.left) \
            + _bf_rows(triples, universe, group.right)
        unique = []
        seen = set()
        for row in rows:
            key = tuple(sorted(row.items()))
            if key not in seen:
                seen.add(key)
                unique.append(row)
        return unique
    if isinstance(group, MinusGroup):
        base = _bf_rows(triples, universe, group.base)
        removed = _bf_rows(triples, universe, group.removed)
        kept = []
        for row in base:
            compatible = False
            for other in removed:
                shared = set(row) & set(other)
                if shared and all(row[k] == other[k] for k in shared):
                    compatible = True
                    break
            if not compatible:
                kept.append(row)
        return kept
    raise TypeError(f"not a group: {group!r}")


def brute_force_evaluate(kg: KnowledgeGraph, query: SparqlQuery,
                         approx_tolerance=None) -> Answer:
    if has_slots(query):
        raise EvalError("cannot evaluate a query with open slots")
    triples = frozenset((s, p, o) for s, p, o in kg.triples)
    universe = sorted({s for s, _, _ in triples} | {o for _, _, o in triples})
    rows = _bf_rows(triples, universe, query.where)
    form = query.form
    if isinstance(form, Ask):
        return BooleanAnswer(len(rows) > 0)
    if isinstance(form, SelectEntities):
        values = set()
        for row in rows:
            if form.var.name in row:
                values.add(row[form.var.name])
        return EntitySetAnswer(frozenset(values))
    if isinstance(form, SelectCount):
        if form.var is None:
            distinct_rows = {tuple(sorted(r.items())) for r in rows}
            return CountAnswer(len(distinct_rows))
        values = {row[form.var.name] for row in rows if form.var.name in row}
        return CountAnswer(len(values))
    if isinstance(form, SelectGrouped):
        groups: dict[str, set[str]] = {}
        for row in rows:
            if form.key.name in row and form.counted.name in row:
                groups.setdefault(row[form.key.name], set()).add(
                    row[form.counted.name])
        if form.extremum is not None:
            if not groups:
                return EntitySetAnswer(frozenset())
            sizes = [len(v) for v in groups.values()]
            best = max(sizes) if form.extremum == EXTREMUM_MAX else min(sizes)
            return EntitySetAnswer(frozenset(
                k for k, vs in groups.items() if len(vs) == best))
        if isinstance(form.threshold, SparqlQuery):
            sub = brute_force_evaluate(kg, form.threshold, approx_tolerance)
            if not isinstance(sub, CountAnswer):
                raise EvalError("threshold subquery must produce a count")
            reference = sub.value
        else:
            reference = int(form.threshold)
        chosen = frozenset(
            k for k, vs in groups.items()
            if _compare(len(vs), form.comparator, reference, approx_tolerance))
        if form.count_groups:
            return CountAnswer(len(chosen))
        return EntitySetAnswer(chosen)
    raise TypeError(f"not a query form: {form!r}")
