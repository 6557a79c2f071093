"""Turn-level question parsing: sketch selection plus slot filling.

A parse runs in stages.  Mentions detected in the user utterance are
linked against the label index (anaphora resolve through the context
window), the linked seeds expand into a per-turn dynamic vocabulary,
a selector proposes ranked query sketches from surface cues, each
sketch's slots are filled by beam search over the linked candidates,
and the filled queries are ranked by sketch confidence, slot score,
and executability.  Every stage appends to a human-readable trace
that survives into the result, so failures stay diagnosable.

The output side is a closed vocabulary: a fixed token set (query
keywords, punctuation, variables, slot and separator markers, digits)
plus the turn's dynamic KG symbols.  Filled queries never mention a
symbol outside that union.

Clarification exchanges carry no executable query of their own; the
user reply that follows the system's clarification is the turn to
parse.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Protocol

from . import templates as tp
from .context import (CLS_MARKER, CTX_MARKER, SEP_MARKER, ContextWindow,
                      DynamicVocabulary, context_of, dynamic_vocabulary)
from .dataset import Conversation
from .kg import INSTANCE_OF, KnowledgeGraph
from .linking import (ANAPHORIC, GENERAL, InvertedIndex, build_index,
                      detect_mentions, link_mention, resolve_coreference)
from .sparql import (SLOT_KINDS, BooleanAnswer, CountAnswer, EntitySetAnswer,
                     SparqlError, SparqlQuery, evaluate, query_symbols,
                     serialize)
from .templates import (DIRECTIONS, FORWARD, REVERSE, Template, TemplateError,
                        fill_skeleton, template_for)

DEFAULT_BEAM = 8
DEFAULT_MAX_SKETCHES = 6

COMPARATOR_SLOT = "COMPARATOR"

_PLURAL_CAP = 4
_MAX_RELATION_CANDIDATES = 8

_KEYWORDS = ("ASK", "SELECT", "DISTINCT", "COUNT", "AS", "WHERE", "UNION",
             "MINUS", "GROUP", "BY", "HAVING", "ORDER", "ASC", "DESC",
             "LIMIT", "APPROX")
_PUNCTUATION = ("{", "}", "(", ")", ".", ",", "*", "=", "<", ">", "<=", ">=")
_VARIABLES = ("?x", "?y", "?z", "?n", "?count")
_MARKERS = (CLS_MARKER, CTX_MARKER, SEP_MARKER)
_PREFIXES = ("wd:", "wdt:")
_SLOT_TOKENS = tuple(f"{kind}{i}" for kind in SLOT_KINDS
                     for i in range(1, 10))
_DIGITS = tuple("0123456789")

FIXED_VOCABULARY = frozenset(_KEYWORDS + _PUNCTUATION + _VARIABLES +
                             _MARKERS + _PREFIXES + _SLOT_TOKENS + _DIGITS)


class ParserError(Exception):
    pass


def is_fixed_token(token: str) -> bool:
    """True for tokens every parse may emit regardless of the turn."""
    return token in FIXED_VOCABULARY or token.isdigit()


@dataclass(frozen=True)
class OutputVocabulary:
    """Fixed decoder tokens plus one turn's dynamic KG symbols."""
    fixed: frozenset[str]
    dynamic: frozenset[str]

    def __post_init__(self):
        overlap = self.fixed & self.dynamic
        if overlap:
            raise ParserError(f"fixed/dynamic overlap: {sorted(overlap)}")

    def tokens(self) -> frozenset[str]:
        return self.fixed | self.dynamic

    def __contains__(self, token: str) -> bool:
        return token in self.dynamic or is_fixed_token(token)

    def __len__(self) -> int:
        return len(self.fixed) + len(self.dynamic)


def assemble_output_vocabulary(vocab: DynamicVocabulary) -> OutputVocabulary:
    return OutputVocabulary(FIXED_VOCABULARY, vocab.symbols())


@dataclass(frozen=True)
class SketchGuess:
    """One ranked sketch proposal: catalog sub-type plus direction."""
    sub_type: str
    direction: str
    confidence: float

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ParserError(f"bad direction {self.direction!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ParserError(f"confidence out of range: {self.confidence}")


class SketchSelector(Protocol):
    def rank(self, question: str, ctx: ContextWindow) -> list[SketchGuess]:
        ...


_AUX_START = ("is ", "are ", "was ", "were ", "does ", "did ", "do ")
_WH_START = ("which", "what", "who", "whose", "whom", "where")


class RuleBasedSelector:
    """Sketch ranking from surface cues, checked in a fixed order.

    1. "how many"        count families; "or" prefers the union counts,
                         an embedded comparator prefers count-over forms
    2. leading auxiliary verification
    3. comparator phrase ("more/less/fewer ... than", "at least", "at
       most", "around", "exactly", "min/max") the matching grouped
       family
    4. "or" / "and" / "not"  union / intersection / difference
    5. otherwise         simple question; a demonstrative with context
                         available prefers the coreferenced form

    A wh-question with a do-auxiliary ("which X did E ...") puts the
    named entity in agent position while the answer fills the subject
    side of the relation, so those rank reverse first; everything else
    ranks forward first.  The tail always falls back to the simple
    family so the ranking is never empty.
    """

    def rank(self, question: str, ctx: ContextWindow) -> list[SketchGuess]:
        q = " ".join(question.lower().split())
        padded = f" {q} "
        wh = q.startswith(_WH_START)
        lead = REVERSE if wh and re.search(r"\b(did|does|do)\b", q) \
            else FORWARD

        pairs: list[tuple[str, str]] = []

        def both(sub_type: str, first: str = FORWARD) -> None:
            pairs.append((sub_type, first))
            pairs.append((sub_type, _other(first)))

        has_or = " or " in padded
        has_and = " and " in padded
        has_not = " not " in padded or " no " in padded
        order_cmp = re.search(r"\b(more|less|fewer|greater)\b.+\bthan\b", q)
        threshold_cmp = ("at least" in q or "at most" in q or
                         "around" in padded or "approximately" in padded or
                         "exactly" in padded or "same number" in q)
        extremum_cmp = re.search(r"\b(min|max|most|least|fewest)\b", q)

        if "how many" in q:
            if order_cmp:
                for name in ("Count over More/Less | Single entity type",
                             "Count over More/Less | Mult. entity type"):
                    both(name, lead)
            elif threshold_cmp:
                for name in ("Count over Atleast/ Atmost/ Approx. the same"
                             " / Equal | Single entity type",
                             "Count over Atleast/ Atmost/ Approx. the same"
                             " / Equal | Mult. entity type"):
                    both(name, lead)
            elif has_or:
                for name in ("Count | Logical operators",
                             "Count | Mult. entity type",
                             "Count | Single entity type"):
                    both(name, lead)
            else:
                for name in ("Count | Single entity type",
                             "Count | Mult. entity type",
                             "Count | Logical operators"):
                    both(name, lead)
        elif q.startswith(_AUX_START):
            for name in ("2 entities, both direct",
                         "3 entities, all direct, 2 are query entities",
                         "one entity, multiple entities (as object) "
                         "corefered"):
                both(name, FORWARD)
        elif order_cmp:
            for name in ("More/Less | Single entity type",
                         "More/Less | Mult. entity type"):
                both(name, lead)
        elif threshold_cmp:
            for name in ("Atleast/ Atmost/ Approx. the same/Equal | "
                         "Single entity type",
                         "Atleast/ Atmost/ Approx. the same/Equal | "
                         "Mult. entity type"):
                both(name, lead)
        elif extremum_cmp:
            for name in ("Min/Max | Single entity type",
                         "Min/Max | Mult. entity type"):
                both(name, lead)
        elif has_or:
            for name in ("Union | Single Relation",
                         "Union | Multiple Relation", "Mult. Entity"):
                both(name, lead)
        elif has_and and has_not:
            for name in ("Difference | Single Relation",
                         "Difference | Multiple Relation"):
                both(name, lead)
        elif has_and:
            for name in ("Intersection | Single Relation",
                         "Intersection | Multiple Relation"):
                both(name, lead)

        anaphora = ctx.turns and re.search(
            r"\b(that|this|those|these|it|they|them|one|former|latter)\b", q)
        simples = ["Single Entity (Coreference)", "Single Entity",
                   "Mult. Entity"] if anaphora else \
                  ["Single Entity", "Mult. Entity",
                   "Single Entity (Coreference)"]
        for name in simples:
            both(name, lead)

        guesses: list[SketchGuess] = []
        seen: set[tuple[str, str]] = set()
        for i, (name, direction) in enumerate(pairs):
            if (name, direction) in seen:
                continue
            seen.add((name, direction))
            guesses.append(SketchGuess(name, direction,
                                       round(0.9 * 0.9 ** i, 6)))
        return guesses


class OracleSelector:
    """Replays gold sub-types keyed by the annotated question text."""

    def __init__(self, conversations: Conversation | list[Conversation]):
        if isinstance(conversations, Conversation):
            conversations = [conversations]
        self._by_question: dict[str, SketchGuess] = {}
        for conversation in conversations:
            self._index(conversation)

    def _index(self, conversation: Conversation) -> None:
        for _, turn in conversation.user_turns():
            ann = turn.annotation
            if ann is None or ann.intent_type == tp.CLARIFICATION:
                continue
            try:
                sub_type = tp.resolve_sub_type(ann.sub_type)
            except TemplateError:
                continue
            direction = tp.derive_direction(ann)
            self._by_question[turn.utterance] = SketchGuess(
                sub_type, direction, 1.0)

    def rank(self, question: str, ctx: ContextWindow) -> list[SketchGuess]:
        guess = self._by_question.get(question)
        return [guess] if guess else []


def _other(direction: str) -> str:
    return REVERSE if direction == FORWARD else FORWARD


def select_sketch(selector: SketchSelector, question: str,
                  ctx: ContextWindow) -> list[SketchGuess]:
    """Ranked sketches for a question; confidences must not increase."""
    guesses = list(selector.rank(question, ctx))
    confs = [g.confidence for g in guesses]
    if confs != sorted(confs, reverse=True):
        raise ParserError("selector confidences must be non-increasing")
    return guesses


Candidates = list[tuple[str | int, float]]


def fill_slots(template: Template, linked: dict[str, Candidates],
               vocab: DynamicVocabulary, beam: int = DEFAULT_BEAM,
               direction: str = FORWARD) -> list[tuple[SparqlQuery, float]]:
    """Beam-fill a sketch's slots from ranked candidates per slot token.

    Assignments are scored by the product of candidate scores and only
    the `beam` best survive each expansion.  ENTITY and TYPE candidates
    outside the dynamic vocabulary are dropped; a slot left with no
    candidates (or a missing key) makes the whole fill come back empty.
    Comparator templates read the extra COMPARATOR key.  The same
    symbol may fill several slots.  Results are deduplicated by query
    text, best score first.
    """
    arity: int | None = template.arity
    if template.variadic:
        ordinals = sorted(int(key[6:]) for key in linked
                          if key.startswith("ENTITY") and key[6:].isdigit())
        arity = ordinals[-1] if ordinals else 0
        if arity < template.arity or ordinals != list(range(1, arity + 1)):
            return []

    slot_tokens = list(template.slot_signature(direction, arity))
    if template.allowed_comparators is not None:
        slot_tokens.append(COMPARATOR_SLOT)

    per_slot: list[tuple[str, Candidates]] = []
    for token in slot_tokens:
        cands = list(linked.get(token, []))
        if token.startswith("ENTITY"):
            cands = [(s, sc) for s, sc in cands if s in vocab.entities]
        elif token.startswith("TYPE"):
            cands = [(s, sc) for s, sc in cands
                     if s in vocab.types or s in vocab.entities]
        elif token == COMPARATOR_SLOT:
            cands = [(s, sc) for s, sc in cands
                     if s in template.allowed_comparators]
        if not cands:
            return []
        per_slot.append((token, cands))

    assignments: list[tuple[dict[str, str | int], float]] = [({}, 1.0)]
    for token, cands in per_slot:
        grown = [(dict(assign, **{token: symbol}), score * sc)
                 for assign, score in assignments
                 for symbol, sc in cands]
        grown.sort(key=lambda pair: -pair[1])
        assignments = grown[:beam]

    out: list[tuple[SparqlQuery, float]] = []
    seen: set[str] = set()
    for assign, score in assignments:
        comparator = assign.pop(COMPARATOR_SLOT, None)
        try:
            query = fill_skeleton(template, direction, assign,
                                  comparator=comparator, arity=arity)
        except (TemplateError, SparqlError):
            continue
        text = serialize(query)
        if text in seen:
            continue
        seen.add(text)
        out.append((query, score))
    return out


@dataclass
class ParserConfig:
    selector: SketchSelector = field(default_factory=RuleBasedSelector)
    index: InvertedIndex | None = None
    window_size: int = 1
    beam: int = DEFAULT_BEAM
    max_sketches: int = DEFAULT_MAX_SKETCHES
    seed: int = 0
    oracle_symbols: bool = False


@dataclass
class ParseResult:
    """Best query for a turn, or an explicit failure with its trace."""
    query: SparqlQuery | None
    sub_type: str | None
    direction: str | None
    score: float
    used_symbols: DynamicVocabulary
    trace: list[str]

    @property
    def ok(self) -> bool:
        return self.query is not None

    def to_json(self) -> dict:
        return {
            "sparql": None if self.query is None else serialize(self.query),
            "subType": self.sub_type,
            "direction": self.direction,
            "score": self.score,
            "symbols": {
                "entities": sorted(self.used_symbols.entities),
                "relations": sorted(self.used_symbols.relations),
                "types": sorted(self.used_symbols.types),
            },
            "trace": list(self.trace),
        }


_NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11,
    "twelve": 12,
}

_COMPARATOR_CUES = (
    ("at least", "atleast"),
    ("at most", "atmost"),
    ("approximately", "approx"),
    ("around", "approx"),
    ("roughly", "approx"),
    ("exactly", "equal"),
    ("same number", "equal"),
    ("more", "greater"),
    ("greater", "greater"),
    ("over", "greater"),
    ("less", "less"),
    ("fewer", "less"),
    ("under", "less"),
    ("max", "argmax"),
    ("most", "argmax"),
    ("min", "argmin"),
    ("least", "argmin"),
    ("fewest", "argmin"),
)


def _number_candidates(question: str) -> Candidates:
    """Numeric literals in utterance order, digits before number words."""
    q = question.lower()
    found: list[tuple[int, int]] = []
    for match in re.finditer(r"\b\d+\b", q):
        found.append((match.start(), int(match.group())))
    for match in re.finditer(r"\b[a-z]+\b", q):
        if match.group() in _NUMBER_WORDS:
            found.append((match.start(), _NUMBER_WORDS[match.group()]))
    found.sort()
    out: Candidates = []
    seen: set[int] = set()
    for rank, (_, value) in enumerate(found):
        if value in seen:
            continue
        seen.add(value)
        out.append((value, 1.0 / (rank + 1)))
    return out


def _comparator_candidates(question: str) -> Candidates:
    """Comparator words cued by the utterance, first cue wins the rank."""
    q = f" {' '.join(question.lower().split())} "
    hits: list[tuple[int, str]] = []
    taken: set[str] = set()
    for cue, word in _COMPARATOR_CUES:
        pos = q.find(f" {cue} ")
        if pos >= 0 and word not in taken:
            taken.add(word)
            hits.append((pos, word))
    hits.sort()
    return [(word, 1.0 / (rank + 1)) for rank, (_, word) in enumerate(hits)]


def _rank_relations(vocab: DynamicVocabulary) -> Candidates:
    """Vocabulary relations by subgraph support, instance-of excluded."""
    counts: dict[str, int] = {}
    for _, rel, _ in vocab.subgraph:
        if rel != INSTANCE_OF:
            counts[rel] = counts.get(rel, 0) + 1
    ranked = sorted(counts.items(),
                    key=lambda item: (-item[1], int(item[0][1:])))
    top = ranked[:_MAX_RELATION_CANDIDATES]
    if not top:
        return []
    peak = top[0][1]
    return [(rel, count / peak) for rel, count in top]


def _gather_candidates(kg: KnowledgeGraph, index: InvertedIndex,
                       question: str, ctx: ContextWindow,
                       trace: list[str]) -> tuple[list[Candidates],
                                                  list[Candidates],
                                                  list[str]]:
    """Detect and link mentions; entity/type slot lists plus seeds."""
    entity_slots: list[Candidates] = []
    type_slots: list[Candidates] = []
    seeds: list[str] = []

    for span in detect_mentions(question, index):
        if span.kind == ANAPHORIC:
            cands = resolve_coreference(span, ctx, kg)
        else:
            cands = link_mention(index, span)
        pairs: Candidates = [(c.id, c.score) for c in cands]
        ids = [c.id for c in cands[:3]]
        trace.append(f"mention {span.surface!r} [{span.kind}] -> {ids}")
        if not pairs:
            if span.kind != GENERAL:
                entity_slots.append([])
            continue
        if span.kind == GENERAL:
            type_slots.append(pairs)
        elif span.kind == ANAPHORIC and span.plural and len(pairs) > 1:
            # A plural anaphor stands for several context entities, one
            # slot each.
            for symbol, score in pairs[:_PLURAL_CAP]:
                entity_slots.append([(symbol, score)])
        else:
            entity_slots.append(pairs)
        for symbol, _ in pairs[:1]:
            if symbol not in seeds:
                seeds.append(str(symbol))
    return entity_slots, type_slots, seeds


def _assemble_linked(template: Template, direction: str, arity: int | None,
                     entity_slots: list[Candidates],
                     type_slots: list[Candidates],
                     relation_slots: list[Candidates],
                     value_slots: list[Candidates],
                     comparator: Candidates,
                     share_relations: bool) -> dict[str, Candidates]:
    """Map one sketch's slot tokens onto the gathered candidate lists.

    Mention order decides which list feeds which ordinal.  With
    `share_relations` every RELATION slot draws from the same ranked
    list and the beam explores combinations; otherwise ordinals map
    one-to-one (oracle mode).
    """
    linked: dict[str, Candidates] = {}
    for token in template.slot_signature(direction, arity):
        kind = token.rstrip("0123456789")
        ordinal = int(token[len(kind):])
        if kind == "ENTITY":
            pools = entity_slots
        elif kind == "TYPE":
            pools = type_slots
        elif kind == "RELATION":
            pools = relation_slots
        else:
            pools = value_slots
        if kind == "RELATION" and share_relations:
            linked[token] = pools[0] if pools else []
        elif ordinal <= len(pools):
            linked[token] = pools[ordinal - 1]
        else:
            linked[token] = []
    if template.allowed_comparators is not None:
        linked[COMPARATOR_SLOT] = comparator
    return linked


def _executability(kg: KnowledgeGraph, query: SparqlQuery) -> int:
    """2 = defined and non-empty (booleans and counts always count),
    1 = defined but empty, 0 = evaluation failed."""
    try:
        answer = evaluate(kg, query)
    except SparqlError:
        return 0
    if isinstance(answer, (BooleanAnswer, CountAnswer)):
        return 2
    if isinstance(answer, EntitySetAnswer) and answer.entities:
        return 2
    return 1


def _used_symbols(vocab: DynamicVocabulary,
                  query: SparqlQuery) -> DynamicVocabulary:
    """The vocabulary subset the query actually draws on.

    Symbols a query mentions that the vocabulary never offered are
    left out, which is what lets `closed_vocabulary_ok` catch them.
    The typing predicate always counts as offered: skeletons hardcode
    the instance-of pattern.
    """
    entities, relations, types = query_symbols(query)
    used_entities = entities & vocab.entities
    used_relations = relations & (vocab.relations | {INSTANCE_OF})
    used_types = types & (vocab.types | vocab.entities)
    touched = used_entities | used_relations | used_types
    subgraph = frozenset(
        triple for triple in vocab.subgraph
        if triple[0] in touched or triple[1] in touched
        or triple[2] in touched)
    return DynamicVocabulary(used_entities, used_relations, used_types,
                             subgraph)


def parse_turn(kg: KnowledgeGraph, conversation: Conversation, t: int,
               config: ParserConfig | None = None) -> ParseResult:
    """Parse the user turn at index `t` into an executable query.

    With `oracle_symbols` the turn's annotation supplies the linked
    symbols directly (detection and linking are skipped); combined
    with OracleSelector this replays the gold pipeline.
    """
    config = config or ParserConfig()
    turn = conversation.turns[t]
    ctx = context_of(conversation, t, config.window_size)
    question = turn.utterance
    trace: list[str] = [f"turn {t}: {question!r}"]

    relation_slots: list[Candidates]
    if config.oracle_symbols:
        ann = turn.annotation
        if ann is None:
            trace.append("oracle symbols requested but turn is unannotated")
            return _failure(trace)
        entity_slots = [[(e, 1.0)] for e in ann.entities]
        type_slots = [[(ty, 1.0)] for ty in ann.types]
        relation_slots = [[(r, 1.0)] for r in ann.relations]
        value_slots: list[Candidates] = [[(v, 1.0)] for v in ann.values]
        comparator: Candidates = \
            [(ann.comparator, 1.0)] if ann.comparator else []
        seeds = list(dict.fromkeys(ann.entities + ann.types))
        trace.append(f"oracle symbols: {seeds}")
    else:
        index = config.index or build_index(kg)
        entity_slots, type_slots, seeds = _gather_candidates(
            kg, index, question, ctx, trace)
        value_slots = [[pair] for pair in _number_candidates(question)]
        comparator = _comparator_candidates(question)

    vocab = dynamic_vocabulary(kg, set(seeds))
    trace.append(f"vocabulary: {len(vocab.entities)} entities, "
                 f"{len(vocab.relations)} relations, "
                 f"{len(vocab.types)} types")
    if not config.oracle_symbols:
        relation_slots = [_rank_relations(vocab)]

    scored: list[tuple[SparqlQuery, SketchGuess, float]] = []
    for guess in select_sketch(config.selector, question,
                               ctx)[:config.max_sketches]:
        try:
            template = template_for(guess.sub_type)
        except TemplateError:
            trace.append(f"sketch {guess.sub_type!r}: unknown sub-type")
            continue
        arity: int | None = template.arity
        if template.variadic:
            arity = len(entity_slots)
            if arity < template.arity:
                trace.append(f"sketch {guess.sub_type!r}: needs "
                             f"{template.arity}+ entities, have {arity}")
                continue
        linked = _assemble_linked(template, guess.direction, arity,
                                  entity_slots, type_slots, relation_slots,
                                  value_slots, comparator,
                                  share_relations=not config.oracle_symbols)
        filled = fill_slots(template, linked, vocab, beam=config.beam,
                            direction=guess.direction)
        trace.append(f"sketch {guess.sub_type!r} [{guess.direction}] "
                     f"conf={guess.confidence:.3f}: {len(filled)} filled")
        for query, slot_score in filled:
            scored.append((query, guess, slot_score))

    if not scored:
        trace.append("no sketch produced a filled query")
        return _failure(trace)

    ranked = sorted(
        ((query, guess, slot_score, _executability(kg, query))
         for query, guess, slot_score in scored),
        key=lambda row: (-row[3], -row[1].confidence, -row[2],
                         serialize(row[0])))
    query, guess, slot_score, tier = ranked[0]
    trace.append(f"best: {serialize(query)} (tier={tier}, "
                 f"score={guess.confidence * slot_score:.4f})")
    return ParseResult(query=query, sub_type=guess.sub_type,
                       direction=guess.direction,
                       score=guess.confidence * slot_score,
                       used_symbols=_used_symbols(vocab, query),
                       trace=trace)


def _failure(trace: list[str]) -> ParseResult:
    return ParseResult(query=None, sub_type=None, direction=None, score=0.0,
                       used_symbols=DynamicVocabulary(), trace=trace)


def closed_vocabulary_ok(result: ParseResult) -> bool:
    """Every KG symbol in the parsed query came from the turn's
    vocabulary (the typing predicate belongs to the grammar)."""
    if result.query is None:
        return True
    entities, relations, types = query_symbols(result.query)
    mentioned = (entities | relations | types) - {INSTANCE_OF}
    return mentioned <= result.used_symbols.symbols()
