"""Question-template catalog keyed by sub-type names.

Each sub-type maps to a query skeleton with slot tokens (ENTITY1,
RELATION1, TYPE1, VALUE1, ...) in a forward or reverse direction:
forward puts the annotated entity in subject position, reverse in
object position.  `instantiate` fills a skeleton from a question
annotation, `validate_conversation` re-executes stored conversations
against a graph and repairs or truncates stale turns, and
`dataset_stats` summarizes a corpus.
"""

from __future__ import annotations

import copy
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import lru_cache, partial
from typing import Callable

from . import sparql as sq
from .actions import COMPARATOR_ACTIONS, EXTREMUM_ACTIONS
from .dataset import Conversation, QuestionAnnotation, USER
from .kg import KnowledgeGraph
from .sparql import SparqlQuery, evaluate, parse_sparql, verbalize_answer

FORWARD = "forward"
REVERSE = "reverse"
DIRECTIONS = (FORWARD, REVERSE)

CLARIFICATION = "Clarification"
SIMPLE_DIRECT = "Simple Question (Direct)"
SIMPLE_COREFERENCED = "Simple Question (Coreferenced)"
SIMPLE_ELLIPSIS = "Simple Question (Ellipsis)"
VERIFICATION = "Verification (Boolean)"
LOGICAL = "Logical Reasoning (All)"
QUANTITATIVE = "Quantitative Reasoning (All)"
QUANTITATIVE_COUNT = "Quantitative Reasoning (Count)"
COMPARATIVE = "Comparative Reasoning (All)"
COMPARATIVE_COUNT = "Comparative Reasoning (Count)"

QUESTION_TYPES = (
    CLARIFICATION,
    COMPARATIVE,
    COMPARATIVE_COUNT,
    LOGICAL,
    QUANTITATIVE,
    QUANTITATIVE_COUNT,
    SIMPLE_COREFERENCED,
    SIMPLE_DIRECT,
    SIMPLE_ELLIPSIS,
    VERIFICATION,
)

THRESHOLD_COMPARATORS = frozenset({"atleast", "atmost", "equal", "approx"})
ORDER_COMPARATORS = frozenset({"greater", "less"})
EXTREMUM_COMPARATORS = frozenset({"argmin", "argmax"})


class TemplateError(Exception):
    pass


# ---------------------------------------------------------------------------
# Skeleton builders

def _entity_pattern(direction: str, entity: str, relation: str,
                    var: str = "?x") -> str:
    if direction == FORWARD:
        return f"{entity} {relation} {var} ."
    return f"{var} {relation} {entity} ."


def _typed(var: str, type_token: str) -> str:
    return f"{var} wdt:P31 {type_token} ."


def _select_simple(direction: str, arity: int) -> str:
    body = f"{_entity_pattern(direction, 'ENTITY1', 'RELATION1')} " \
           f"{_typed('?x', 'TYPE1')}"
    return f"SELECT ?x WHERE {{ {body} }}"


def _union_branches(direction: str, arity: int, multirel: bool) -> str:
    branches = []
    for i in range(1, arity + 1):
        relation = f"RELATION{i}" if multirel else "RELATION1"
        body = f"{_entity_pattern(direction, f'ENTITY{i}', relation)} " \
               f"{_typed('?x', 'TYPE1')}"
        branches.append(f"{{ {body} }}")
    return " UNION ".join(branches)


def _select_union(direction: str, arity: int, multirel: bool = False) -> str:
    return f"SELECT ?x WHERE {{ {_union_branches(direction, arity, multirel)} }}"


def _select_intersection(direction: str, arity: int,
                         multirel: bool = False) -> str:
    parts = []
    for i in (1, 2):
        relation = f"RELATION{i}" if multirel else "RELATION1"
        parts.append(_entity_pattern(direction, f"ENTITY{i}", relation))
    parts.append(_typed("?x", "TYPE1"))
    return f"SELECT ?x WHERE {{ {' '.join(parts)} }}"


def _select_difference(direction: str, arity: int,
                       multirel: bool = False) -> str:
    branches = []
    for i in (1, 2):
        relation = f"RELATION{i}" if multirel else "RELATION1"
        body = f"{_entity_pattern(direction, f'ENTITY{i}', relation)} " \
               f"{_typed('?x', 'TYPE1')}"
        branches.append(f"{{ {body} }}")
    return f"SELECT ?x WHERE {{ {branches[0]} MINUS {branches[1]} }}"


def _ask_pair(direction: str, arity: int) -> str:
    if direction == FORWARD:
        return "ASK { ENTITY1 RELATION1 ENTITY2 . }"
    return "ASK { ENTITY2 RELATION1 ENTITY1 . }"


def _ask_three(direction: str, arity: int) -> str:
    """Two query entities checked against a shared third entity."""
    if direction == FORWARD:
        return "ASK { ENTITY2 RELATION1 ENTITY1 . ENTITY3 RELATION1 ENTITY1 . }"
    return "ASK { ENTITY1 RELATION1 ENTITY2 . ENTITY1 RELATION1 ENTITY3 . }"


def _ask_multi(direction: str, arity: int) -> str:
    """One subject entity checked against every remaining entity."""
    patterns = []
    for i in range(2, arity + 1):
        if direction == FORWARD:
            patterns.append(f"ENTITY1 RELATION1 ENTITY{i} .")
        else:
            patterns.append(f"ENTITY{i} RELATION1 ENTITY1 .")
    return f"ASK {{ {' '.join(patterns)} }}"


def _count_simple(direction: str, arity: int) -> str:
    body = f"{_entity_pattern(direction, 'ENTITY1', 'RELATION1')} " \
           f"{_typed('?x', 'TYPE1')}"
    return f"SELECT (COUNT(*) AS ?count) WHERE {{ {body} }}"


def _count_union_entities(direction: str, arity: int) -> str:
    branches = _union_branches(direction, arity, multirel=False)
    return f"SELECT (COUNT(DISTINCT ?x) AS ?count) WHERE {{ {branches} }}"


def _count_union_types(direction: str, arity: int) -> str:
    branches = []
    for i in (1, 2):
        body = f"{_entity_pattern(direction, 'ENTITY1', 'RELATION1')} " \
               f"{_typed('?x', f'TYPE{i}')}"
        branches.append(f"{{ {body} }}")
    joined = " UNION ".join(branches)
    return f"SELECT (COUNT(DISTINCT ?x) AS ?count) WHERE {{ {joined} }}"


def _grouped(direction: str, arity: int, *, single: bool, mode: str,
             count_over: bool = False) -> str:
    """Group-and-count skeleton over (?x, RELATION1, ?y) pairs.

    mode "value" compares each group count to a literal, "entity" to the
    count observed for a reference entity, and "extremum" keeps the
    largest or smallest group.
    """
    patterns = ["?x RELATION1 ?y ." if direction == FORWARD
                else "?y RELATION1 ?x .",
                _typed("?x", "TYPE1")]
    if not single:
        patterns.append(_typed("?y", "TYPE2"))
    head = ("SELECT (COUNT(DISTINCT ?x) AS ?count)" if count_over
            else "SELECT ?x")
    where = f"WHERE {{ {' '.join(patterns)} }}"
    if mode == "extremum":
        tail = "GROUP BY ?x ORDER BY DESC(COUNT(?y)) LIMIT 1"
    elif mode == "value":
        tail = "GROUP BY ?x HAVING (COUNT(?y) >= VALUE1)"
    else:
        reference = ["ENTITY1 RELATION1 ?z ." if direction == FORWARD
                     else "?z RELATION1 ENTITY1 ."]
        if not single:
            reference.append(_typed("?z", "TYPE2"))
        sub = f"(SELECT (COUNT(*) AS ?n) WHERE {{ {' '.join(reference)} }})"
        tail = f"GROUP BY ?x HAVING (COUNT(?y) > {sub})"
    return f"{head} {where} {tail}"


# ---------------------------------------------------------------------------
# Catalog

@dataclass(frozen=True)
class Template:
    sub_type: str
    question_type: str
    builder: Callable[[str, int], str] = field(compare=False, repr=False)
    arity: int = 1
    variadic: bool = False
    allowed_comparators: frozenset[str] | None = None

    def skeleton(self, direction: str = FORWARD,
                 arity: int | None = None) -> SparqlQuery:
        if direction not in DIRECTIONS:
            raise TemplateError(f"bad direction {direction!r}")
        return _skeleton(self.sub_type, direction,
                         self.arity if arity is None else arity)

    def slot_signature(self, direction: str = FORWARD,
                       arity: int | None = None) -> tuple[str, ...]:
        slots = _query_slots(self.skeleton(direction, arity))
        return tuple(slot.token for slot in slots)


def _entries() -> list[Template]:
    simple = _select_simple
    union = partial(_select_union, multirel=False)
    union_multirel = partial(_select_union, multirel=True)
    intersection = partial(_select_intersection, multirel=False)
    intersection_multirel = partial(_select_intersection, multirel=True)
    difference = partial(_select_difference, multirel=False)
    difference_multirel = partial(_select_difference, multirel=True)
    value_single = partial(_grouped, single=True, mode="value")
    value_multi = partial(_grouped, single=False, mode="value")
    entity_single = partial(_grouped, single=True, mode="entity")
    entity_multi = partial(_grouped, single=False, mode="entity")
    extremum_single = partial(_grouped, single=True, mode="extremum")
    extremum_multi = partial(_grouped, single=False, mode="extremum")
    count_value_single = partial(_grouped, single=True, mode="value",
                                 count_over=True)
    count_value_multi = partial(_grouped, single=False, mode="value",
                                count_over=True)
    count_entity_single = partial(_grouped, single=True, mode="entity",
                                  count_over=True)
    count_entity_multi = partial(_grouped, single=False, mode="entity",
                                 count_over=True)

    entries = [
        Template("Simple Question", SIMPLE_DIRECT, simple),
        Template("Single Entity", SIMPLE_DIRECT, simple),
        Template("Mult. Entity", SIMPLE_DIRECT, union, arity=2,
                 variadic=True),
        Template("Single Entity (Coreference)", SIMPLE_COREFERENCED, simple),
        Template("Mult. Entity (Coreference)", SIMPLE_COREFERENCED, union,
                 arity=2, variadic=True),
        Template("only subject is changed, parent and predicate remains same",
                 SIMPLE_ELLIPSIS, simple),
        Template("object parent is changed, subject and predicate remain same",
                 SIMPLE_ELLIPSIS, simple),

        Template("2 entities, both direct", VERIFICATION, _ask_pair, arity=2),
        Template("2 entities, subject is indirect", VERIFICATION, _ask_pair,
                 arity=2),
        Template("2 entities, one direct and one indirect, subject is indirect",
                 VERIFICATION, _ask_pair, arity=2),
        Template("2 entities, one direct and one indirect, object is indirect",
                 VERIFICATION, _ask_pair, arity=2),
        Template("3 entities, all direct, 2 are query entities", VERIFICATION,
                 _ask_three, arity=3),
        Template("3 entities, 2 direct, 2(direct) are query entities, "
                 "subject is indirect", VERIFICATION, _ask_three, arity=3),
        Template("3 entities, 2 direct, 2(direct) are query entities, "
                 "subject is corefered", VERIFICATION, _ask_three, arity=3),
        Template("one entity, multiple entities (as object) corefered",
                 VERIFICATION, _ask_multi, arity=3, variadic=True),

        Template("Union | Single Relation", LOGICAL, union, arity=2),
        Template("Union | Single Relation (Ellipsis)", LOGICAL, union,
                 arity=2),
        Template("Union | Multiple Relation", LOGICAL, union_multirel,
                 arity=2),
        Template("Intersection | Single Relation", LOGICAL, intersection,
                 arity=2),
        Template("Intersection | Single Relation (Ellipsis)", LOGICAL,
                 intersection, arity=2),
        Template("Intersection | Multiple Relation", LOGICAL,
                 intersection_multirel, arity=2),
        Template("Difference | Single Relation", LOGICAL, difference,
                 arity=2),
        Template("Difference | Single Relation (Ellipsis)", LOGICAL,
                 difference, arity=2),
        Template("Difference | Multiple Relation", LOGICAL,
                 difference_multirel, arity=2),

        Template("Count | Single entity type", QUANTITATIVE_COUNT,
                 _count_simple),
        Template("Count | Single entity type (Coreference)",
                 QUANTITATIVE_COUNT, _count_simple),
        Template("Count | Mult. entity type", QUANTITATIVE_COUNT,
                 _count_union_entities, arity=2, variadic=True),
        Template("Count | Logical operators", QUANTITATIVE_COUNT,
                 _count_union_types),
        Template("Count | Logical operators (Coreference)",
                 QUANTITATIVE_COUNT, _count_union_types),
        Template("Incomplete count-based ques", QUANTITATIVE_COUNT,
                 _count_simple),

        Template("Atleast/ Atmost/ Approx. the same/Equal | Single entity type",
                 QUANTITATIVE, value_single, arity=0,
                 allowed_comparators=THRESHOLD_COMPARATORS),
        Template("Atleast/ Atmost/ Approx. the same/Equal | Mult. entity type",
                 QUANTITATIVE, value_multi, arity=0,
                 allowed_comparators=THRESHOLD_COMPARATORS),
        Template("Min/Max | Single entity type", QUANTITATIVE,
                 extremum_single, arity=0,
                 allowed_comparators=EXTREMUM_COMPARATORS),
        Template("Min/Max | Mult. entity type", QUANTITATIVE, extremum_multi,
                 arity=0, allowed_comparators=EXTREMUM_COMPARATORS),
        Template("Count over Atleast/ Atmost/ Approx. the same / Equal | "
                 "Single entity type", QUANTITATIVE_COUNT, count_value_single,
                 arity=0, allowed_comparators=THRESHOLD_COMPARATORS),
        Template("Count over Atleast/ Atmost/ Approx. the same / Equal | "
                 "Mult. entity type", QUANTITATIVE_COUNT, count_value_multi,
                 arity=0, allowed_comparators=THRESHOLD_COMPARATORS),
    ]
    for suffix in ("", " (Coreference)", " (Ellipsis)"):
        entries.extend([
            Template(f"More/Less | Single entity type{suffix}", COMPARATIVE,
                     entity_single, allowed_comparators=ORDER_COMPARATORS),
            Template(f"More/Less | Mult. entity type{suffix}", COMPARATIVE,
                     entity_multi, allowed_comparators=ORDER_COMPARATORS),
            Template(f"Count over More/Less | Single entity type{suffix}",
                     COMPARATIVE_COUNT, count_entity_single,
                     allowed_comparators=ORDER_COMPARATORS),
            Template(f"Count over More/Less | Mult. entity type{suffix}",
                     COMPARATIVE_COUNT, count_entity_multi,
                     allowed_comparators=ORDER_COMPARATORS),
        ])
    return entries


_REGISTRY: dict[str, Template] = {t.sub_type: t for t in _entries()}

ALIASES = {
    "Mult. Entity (Simple Question Direct and Coreference)": "Mult. Entity",
    "Single Entity|Indirect": "Single Entity (Coreference)",
    "Mult. Entity|Indirect": "Mult. Entity (Coreference)",
    "one entity, multiple entities (as object) coreferred":
        "one entity, multiple entities (as object) corefered",
    "Incomplete|object parent is changed, subject and predicate remain same":
        "object parent is changed, subject and predicate remain same",
}

_INTENT_NAMES = frozenset({
    "Simple Question", "Verification", "Logical Reasoning",
    "Quantitative Reasoning", "Comparative Reasoning", CLARIFICATION,
}) | frozenset(QUESTION_TYPES)


def _normalize_name(name: str) -> str:
    return " ".join(name.replace("/", " / ").split()).casefold()


_NORMALIZED: dict[str, str] = {}
for _name in list(_REGISTRY) + list(ALIASES):
    _NORMALIZED.setdefault(_normalize_name(_name),
                           ALIASES.get(_name, _name))


def sub_types() -> list[str]:
    return sorted(_REGISTRY)


def resolve_sub_type(name: str) -> str:
    """Map a sub-type name, alias, or intent-prefixed form to its
    canonical catalog key."""
    if name in _REGISTRY:
        return name
    if name in ALIASES:
        return ALIASES[name]
    canonical = _NORMALIZED.get(_normalize_name(name))
    if canonical is not None:
        return canonical
    head, sep, tail = name.partition("|")
    if sep and head.strip() in _INTENT_NAMES:
        return resolve_sub_type(tail.strip())
    raise TemplateError(f"unknown sub-type {name!r}")


def template_for(sub_type: str) -> Template:
    return _REGISTRY[resolve_sub_type(sub_type)]


def question_type_for(annotation) -> str:
    """Question type for an annotation (or bare sub-type name)."""
    if isinstance(annotation, str):
        return _REGISTRY[resolve_sub_type(annotation)].question_type
    if annotation.intent_type == CLARIFICATION:
        return CLARIFICATION
    try:
        return _REGISTRY[resolve_sub_type(annotation.sub_type)].question_type
    except TemplateError:
        return annotation.intent_type


@lru_cache(maxsize=None)
def _skeleton(sub_type: str, direction: str, arity: int) -> SparqlQuery:
    template = _REGISTRY[sub_type]
    return parse_sparql(template.builder(direction, arity), allow_slots=True)


def _query_slots(query: SparqlQuery) -> list[sq.Slot]:
    out: list[sq.Slot] = []
    seen: set[str] = set()

    def add(term) -> None:
        if isinstance(term, sq.Slot) and term.token not in seen:
            seen.add(term.token)
            out.append(term)

    for pattern in sq.iter_patterns(query.where):
        for term in pattern.terms():
            add(term)
    form = query.form
    if isinstance(form, sq.SelectGrouped):
        if isinstance(form.threshold, sq.Slot):
            add(form.threshold)
        elif isinstance(form.threshold, SparqlQuery):
            for slot in _query_slots(form.threshold):
                add(slot)
    return out


# ---------------------------------------------------------------------------
# Instantiation

def derive_direction(annotation: QuestionAnnotation) -> str:
    """Pick the skeleton direction from the annotation's triple hints.

    A hint whose subject is an annotated entity reads forward; one whose
    object is an annotated entity reads reverse.  Entity-free grouped
    questions fall back to the first annotated type, which marks the
    group key: key type in subject position reads forward.  Without a
    decisive hint the direction is forward.
    """
    entities = set(annotation.entities)
    key_type = annotation.types[0] if annotation.types else None
    for subject, _, obj in annotation.triple_hints:
        if subject in entities:
            return FORWARD
        if obj in entities:
            return REVERSE
        if key_type is not None:
            if subject == key_type:
                return FORWARD
            if obj == key_type:
                return REVERSE
    return FORWARD


def _fill_term(term, mapping: dict, sub_type: str):
    if not isinstance(term, sq.Slot):
        return term
    key = (term.kind, term.ordinal)
    if key not in mapping:
        raise TemplateError(f"{sub_type}: no symbol for slot {term.token}")
    value = mapping[key]
    if term.kind == "RELATION":
        return sq.Prop(value)
    return sq.Entity(value)


def _fill_group(group: sq.Group, mapping: dict, sub_type: str) -> sq.Group:
    if isinstance(group, sq.Bgp):
        return sq.Bgp(tuple(
            sq.TriplePattern(*(_fill_term(t, mapping, sub_type)
                               for t in pattern.terms()))
            for pattern in group.patterns))
    if isinstance(group, sq.UnionGroup):
        return sq.UnionGroup(_fill_group(group.left, mapping, sub_type),
                             _fill_group(group.right, mapping, sub_type))
    return sq.MinusGroup(_fill_group(group.base, mapping, sub_type),
                         _fill_group(group.removed, mapping, sub_type))


def _fill_query(query: SparqlQuery, mapping: dict,
                sub_type: str) -> SparqlQuery:
    form = query.form
    if isinstance(form, sq.SelectGrouped):
        threshold = form.threshold
        if isinstance(threshold, sq.Slot):
            key = (threshold.kind, threshold.ordinal)
            if key not in mapping:
                raise TemplateError(
                    f"{sub_type}: no symbol for slot {threshold.token}")
            form = replace(form, threshold=int(mapping[key]))
        elif isinstance(threshold, SparqlQuery):
            form = replace(form,
                           threshold=_fill_query(threshold, mapping, sub_type))
    return SparqlQuery(form=form,
                       where=_fill_group(query.where, mapping, sub_type))


def _apply_comparator(template: Template, query: SparqlQuery,
                      word: str | None) -> SparqlQuery:
    if template.allowed_comparators is None:
        if word is not None:
            raise TemplateError(
                f"{template.sub_type}: comparator {word!r} is not used here")
        return query
    if word not in template.allowed_comparators:
        raise TemplateError(
            f"{template.sub_type}: comparator must be one of "
            f"{sorted(template.allowed_comparators)}, got {word!r}")
    if word in EXTREMUM_COMPARATORS:
        form = replace(query.form, extremum=EXTREMUM_ACTIONS[word])
    else:
        form = replace(query.form, comparator=COMPARATOR_ACTIONS[word])
    return SparqlQuery(form=form, where=query.where)


def fill_skeleton(template: Template, direction: str,
                  assignment: dict[str, str | int],
                  comparator: str | None = None,
                  arity: int | None = None) -> SparqlQuery:
    """Fill a skeleton from an explicit slot-token assignment."""
    skeleton = template.skeleton(direction, arity)
    mapping: dict = {}
    for slot in _query_slots(skeleton):
        if slot.token not in assignment:
            raise TemplateError(
                f"{template.sub_type}: no symbol for slot {slot.token}")
        mapping[(slot.kind, slot.ordinal)] = assignment[slot.token]
    query = _fill_query(skeleton, mapping, template.sub_type)
    query = _apply_comparator(template, query, comparator)
    sq.validate_query(query)
    return query


def instantiate(template: Template, annotation: QuestionAnnotation,
                direction: str | None = None) -> SparqlQuery:
    """Fill a template's skeleton from an annotation.

    Every slot must find a symbol and every annotated symbol must be
    used; a mismatch raises TemplateError naming the offending slot.
    """
    if direction is None:
        direction = derive_direction(annotation)
    if template.variadic:
        if len(annotation.entities) < template.arity:
            raise TemplateError(
                f"{template.sub_type}: needs at least {template.arity} "
                f"entities, got {len(annotation.entities)}")
        arity = len(annotation.entities)
    else:
        arity = template.arity
    skeleton = template.skeleton(direction, arity)

    supply = {"ENTITY": annotation.entities, "RELATION": annotation.relations,
              "TYPE": annotation.types, "VALUE": annotation.values}
    assignment: dict[str, str | int] = {}
    used = dict.fromkeys(supply, 0)
    for slot in _query_slots(skeleton):
        pool = supply[slot.kind]
        if slot.ordinal > len(pool):
            raise TemplateError(
                f"{template.sub_type}: annotation has no symbol for "
                f"slot {slot.token}")
        assignment[slot.token] = pool[slot.ordinal - 1]
        used[slot.kind] = max(used[slot.kind], slot.ordinal)
    for kind, pool in supply.items():
        # Types beyond what the skeleton needs are fine: annotations also
        # carry them as coreference context.
        if kind != "TYPE" and len(pool) > used[kind]:
            raise TemplateError(
                f"{template.sub_type}: {len(pool)} {kind} symbols given "
                f"but only {used[kind]} used")

    return fill_skeleton(template, direction, assignment,
                         comparator=annotation.comparator, arity=arity)


def annotation_query(annotation: QuestionAnnotation,
                     direction: str | None = None) -> SparqlQuery:
    return instantiate(template_for(annotation.sub_type), annotation,
                       direction)


# ---------------------------------------------------------------------------
# Phenomenon strata

COREFERENCE_SUB_TYPES = (
    "More/Less | Mult. entity type (Coreference)",
    "More/Less | Single entity type (Coreference)",
    "Single Entity (Coreference)",
    "2 entities, one direct and one indirect, object is indirect",
    "2 entities, one direct and one indirect, subject is indirect",
    "3 entities, 2 direct, 2(direct) are query entities, subject is corefered",
    "one entity, multiple entities (as object) corefered",
    "Count | Logical operators (Coreference)",
    "Count | Single entity type (Coreference)",
    "Count over More/Less | Mult. entity type (Coreference)",
    "Count over More/Less | Single entity type (Coreference)",
)

ELLIPSIS_SUB_TYPES = (
    "Difference | Single Relation (Ellipsis)",
    "Intersection | Single Relation (Ellipsis)",
    "Union | Single Relation (Ellipsis)",
    "More/Less | Mult. entity type (Ellipsis)",
    "More/Less | Single entity type (Ellipsis)",
    "object parent is changed, subject and predicate remain same",
    "Incomplete count-based ques",
    "Count over More/Less | Mult. entity type (Ellipsis)",
    "Count over More/Less | Single entity type (Ellipsis)",
)

MULTI_ENTITY_SUB_TYPES = (
    "Difference | Multiple Relation",
    "Intersection | Multiple Relation",
    "Union | Multiple Relation",
    "Atleast/ Atmost/ Approx. the same/Equal | Mult. entity type",
    "Min/Max | Mult. entity type",
    "More/Less | Mult. entity type",
    "More/Less | Mult. entity type (Ellipsis)",
    "More/Less | Mult. entity type (Coreference)",
    "Mult. Entity (Simple Question Direct and Coreference)",
    "one entity, multiple entities (as object) coreferred",
    "Count over Atleast/ Atmost/ Approx. the same / Equal | Mult. entity type",
    "Count | Mult. entity type",
    "Count over More/Less | Mult. entity type",
    "Count over More/Less | Mult. entity type (Ellipsis)",
    "Count over More/Less | Mult. entity type (Coreference)",
)

COREFERENCE = "coreference"
ELLIPSIS = "ellipsis"
MULTI_ENTITY = "multi_entity"
PHENOMENON_NAMES = (COREFERENCE, ELLIPSIS, MULTI_ENTITY)

# A few listed rows stand for more than one catalog entry.
_PHENOMENON_EXPANSIONS = {
    "Mult. Entity (Simple Question Direct and Coreference)":
        ("Mult. Entity", "Mult. Entity (Coreference)"),
}


def _expand_stratum(names: tuple[str, ...]) -> frozenset[str]:
    out = set()
    for name in names:
        for expanded in _PHENOMENON_EXPANSIONS.get(name, (name,)):
            out.add(resolve_sub_type(expanded))
    return frozenset(out)


PHENOMENA: dict[str, frozenset[str]] = {
    COREFERENCE: _expand_stratum(COREFERENCE_SUB_TYPES),
    ELLIPSIS: _expand_stratum(ELLIPSIS_SUB_TYPES),
    MULTI_ENTITY: _expand_stratum(MULTI_ENTITY_SUB_TYPES),
}


def phenomena_of(sub_type: str) -> frozenset[str]:
    canonical = resolve_sub_type(sub_type)
    return frozenset(name for name, members in PHENOMENA.items()
                     if canonical in members)


# ---------------------------------------------------------------------------
# Conversation validation

OK = "ok"
REDEFINED = "redefined"
TRUNCATED = "truncated"
ERROR = "error"


@dataclass(frozen=True)
class RepairPolicy:
    """What a validation run may change.

    Redefining replaces a stale stored answer with the one the graph
    gives now; truncating drops the first broken turn and everything
    after it.  With both disabled the run only reports.
    """
    allow_redefine: bool = True
    allow_truncate: bool = True


@dataclass(frozen=True)
class TurnValidation:
    turn_index: int
    status: str
    detail: str = ""


def _redefine_safe(conv: Conversation, index: int, stored, computed) -> bool:
    """A redefinition is unsafe when a later turn mentions an entity
    that only the old answer contained."""
    if not isinstance(stored, sq.EntitySetAnswer):
        return True
    new_ids = (computed.entities
               if isinstance(computed, sq.EntitySetAnswer) else frozenset())
    dropped = stored.entities - new_ids
    if not dropped:
        return True
    for later in conv.turns[index + 1:]:
        if later.speaker == USER and later.annotation is not None:
            if dropped & set(later.annotation.entities):
                return False
    return True


def validate_conversation(
        kg: KnowledgeGraph, conversation: Conversation,
        policy: RepairPolicy | None = None,
) -> tuple[Conversation | None, list[TurnValidation]]:
    """Re-execute each annotated turn and reconcile stored answers.

    Returns a repaired copy (None if nothing survives) plus one row per
    checked turn.  The input conversation is left untouched.
    """
    policy = policy or RepairPolicy()
    conv = copy.deepcopy(conversation)
    report: list[TurnValidation] = []
    for index in [i for i, t in enumerate(conv.turns) if t.speaker == USER]:
        turn = conv.turns[index]
        annotation = turn.annotation
        if annotation is None or annotation.intent_type == CLARIFICATION:
            report.append(TurnValidation(index, OK, "clarification turn"))
            continue
        try:
            template = template_for(annotation.sub_type)
            query = instantiate(template, annotation)
            computed = evaluate(kg, query)
        except (TemplateError, sq.SparqlError) as exc:
            detail = str(exc)
            if policy.allow_truncate:
                report.append(TurnValidation(index, ERROR,
                                             f"{detail} (turn dropped)"))
                del conv.turns[index:]
                break
            report.append(TurnValidation(index, ERROR, detail))
            continue
        stored = annotation.gold_answer
        if stored == computed:
            if turn.sparql is None:
                turn.sparql = query
            report.append(TurnValidation(index, OK))
            continue
        if policy.allow_redefine and _redefine_safe(conv, index, stored,
                                                    computed):
            annotation.gold_answer = computed
            turn.sparql = query
            if index + 1 < len(conv.turns):
                conv.turns[index + 1].utterance = verbalize_answer(kg, computed)
            detail = ("missing answer filled" if stored is None
                      else "stored answer replaced")
            report.append(TurnValidation(index, REDEFINED, detail))
            continue
        if policy.allow_truncate:
            report.append(TurnValidation(
                index, TRUNCATED, "stored answer disagrees with the graph"))
            del conv.turns[index:]
            break
        report.append(TurnValidation(
            index, ERROR, "stored answer disagrees with the graph"))
    if not conv.turns:
        return None, report
    return conv.check(), report


# ---------------------------------------------------------------------------
# Corpus statistics

@dataclass
class DatasetStats:
    conversations: int = 0
    turns: int = 0
    user_turns: int = 0
    question_types: Counter = field(default_factory=Counter)
    sub_types: Counter = field(default_factory=Counter)
    phenomena: Counter = field(default_factory=Counter)
    answer_kinds: Counter = field(default_factory=Counter)
    distinct_entities: int = 0
    distinct_relations: int = 0
    distinct_types: int = 0
    kg_entity_coverage: float | None = None

    def as_dict(self) -> dict:
        out = {
            "conversations": self.conversations,
            "turns": self.turns,
            "userTurns": self.user_turns,
            "questionTypes": dict(sorted(self.question_types.items())),
            "subTypes": dict(sorted(self.sub_types.items())),
            "phenomena": dict(sorted(self.phenomena.items())),
            "answerKinds": dict(sorted(self.answer_kinds.items())),
            "distinctEntities": self.distinct_entities,
            "distinctRelations": self.distinct_relations,
            "distinctTypes": self.distinct_types,
        }
        if self.kg_entity_coverage is not None:
            out["kgEntityCoverage"] = round(self.kg_entity_coverage, 4)
        return out


_ANSWER_KINDS = ((sq.EntitySetAnswer, "entities"),
                 (sq.BooleanAnswer, "boolean"),
                 (sq.CountAnswer, "count"))


def dataset_stats(conversations: list[Conversation],
                  kg: KnowledgeGraph | None = None) -> DatasetStats:
    stats = DatasetStats(conversations=len(conversations))
    entities: set[str] = set()
    relations: set[str] = set()
    types: set[str] = set()
    for conv in conversations:
        stats.turns += len(conv.turns)
        for _, turn in conv.user_turns():
            stats.user_turns += 1
            annotation = turn.annotation
            stats.question_types[question_type_for(annotation)] += 1
            stats.sub_types[annotation.sub_type] += 1
            try:
                for name in sorted(phenomena_of(annotation.sub_type)):
                    stats.phenomena[name] += 1
            except TemplateError:
                pass
            entities.update(annotation.entities)
            relations.update(annotation.relations)
            types.update(annotation.types)
            gold = annotation.gold_answer
            if gold is not None:
                for kind, label in _ANSWER_KINDS:
                    if isinstance(gold, kind):
                        stats.answer_kinds[label] += 1
                        break
    stats.distinct_entities = len(entities)
    stats.distinct_relations = len(relations)
    stats.distinct_types = len(types)
    if kg is not None:
        known = kg.entities()
        stats.kg_entity_coverage = (
            sum(1 for e in entities if e in known) / len(entities)
            if entities else 1.0)
    return stats
