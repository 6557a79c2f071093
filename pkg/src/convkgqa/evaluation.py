"""Execution metrics, stratified reports, and held-out query splits.

Entity-set questions score micro F1 (true/false positives and false
negatives summed within a category before the ratio); boolean and
count questions score accuracy.  Exact Match compares canonical query
text, with an order-insensitive variant kept as a diagnostic column.
Reports break down by question type and by linguistic phenomenon
(coreference split by how far back the referent sits, ellipsis,
multiple entities).  `make_splits` holds out whole conversations that
contain named sub-types, for testing generalization to unseen query
shapes.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field, replace

from . import sparql as sq
from . import templates as tp
from .context import DynamicVocabulary
from .dataset import Conversation
from .kg import KnowledgeGraph
from .parser import OracleSelector, ParseResult, ParserConfig, parse_turn
from .sparql import (Answer, BooleanAnswer, CountAnswer, EntitySetAnswer,
                     SparqlError, SparqlQuery, evaluate, exact_match,
                     canonical_unordered, query_symbols)

OVERALL = "Overall"
COREF_PREVIOUS = "Coreference (previous interaction)"
COREF_EARLIER = "Coreference (earlier interaction)"
ELLIPSIS_ROW = "Ellipsis"
MULTI_ENTITY_ROW = "Multiple Entities"

PHENOMENON_ROWS = (COREF_PREVIOUS, COREF_EARLIER, ELLIPSIS_ROW,
                   MULTI_ENTITY_ROW)

ACCURACY_TYPES = frozenset({tp.VERIFICATION, tp.QUANTITATIVE_COUNT,
                            tp.COMPARATIVE_COUNT})

WRONG_ENTITY = "wrong-entity"
WRONG_RELATION = "wrong-relation"
MISSING_ENTITY = "missing-entity"
ARGUMENT_ORDER = "argument-order"
WRONG_INTENT = "wrong-intent"
ILL_FORMED = "ill-formed"


class EvalError(Exception):
    pass


@dataclass
class MetricContribution:
    """One question's additive share of the metrics.

    Entity-set questions populate tp/fp/fn; boolean and count
    questions populate `correct`.  Never both.
    """
    tp: int = 0
    fp: int = 0
    fn: int = 0
    correct: bool | None = None
    em: bool = False
    em_unordered: bool = False

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise EvalError("negative count")
        if self.correct is not None and (self.tp or self.fp or self.fn):
            raise EvalError("contribution is either set-style or "
                            "correctness-style, not both")


def score_answer(pred: Answer | None, gold: Answer) -> MetricContribution:
    """Compare answers; the gold answer's kind picks the metric style."""
    if isinstance(gold, EntitySetAnswer):
        if isinstance(pred, EntitySetAnswer):
            inter = len(pred.entities & gold.entities)
            return MetricContribution(
                tp=inter, fp=len(pred.entities) - inter,
                fn=len(gold.entities) - inter)
        # A defined answer of the wrong kind is one wrong claim.
        return MetricContribution(fp=0 if pred is None else 1,
                                  fn=len(gold.entities))
    if isinstance(gold, (BooleanAnswer, CountAnswer)):
        return MetricContribution(correct=pred == gold)
    raise EvalError(f"not an answer: {gold!r}")


def micro_f1(contributions: list[MetricContribution]) -> float | None:
    """F1 over summed counts; None when nothing contributed counts."""
    tp = sum(c.tp for c in contributions)
    fp = sum(c.fp for c in contributions)
    fn = sum(c.fn for c in contributions)
    if tp == fp == fn == 0:
        return None
    return 2 * tp / (2 * tp + fp + fn)


def accuracy(contributions: list[MetricContribution]) -> float | None:
    scored = [c for c in contributions if c.correct is not None]
    if not scored:
        return None
    return sum(c.correct for c in scored) / len(scored)


def em_rate(contributions: list[MetricContribution]) -> float | None:
    if not contributions:
        return None
    return sum(c.em for c in contributions) / len(contributions)


def diagnose(result: ParseResult, gold: SparqlQuery) -> list[str]:
    """Tag how a prediction went wrong; tags land in the trace.

    Types count with entities (both are node ids).  When every symbol
    and the query form agree but the canonical texts differ, the
    patterns read their arguments in the wrong order.
    """
    if result.query is None:
        tags = [ILL_FORMED]
    elif exact_match(result.query, gold):
        tags = []
    else:
        tags = []
        pe, pr, pt = query_symbols(result.query)
        ge, gr, gt = query_symbols(gold)
        pred_nodes, gold_nodes = pe | pt, ge | gt
        if not _same_intent(result.query, gold):
            tags.append(WRONG_INTENT)
        if gold_nodes - pred_nodes:
            tags.append(MISSING_ENTITY)
        if pred_nodes - gold_nodes:
            tags.append(WRONG_ENTITY)
        if pr != gr:
            tags.append(WRONG_RELATION)
        if not tags:
            tags.append(ARGUMENT_ORDER)
    if tags:
        result.trace.append(f"diagnosis: {', '.join(tags)}")
    return tags


def _same_intent(pred: SparqlQuery, gold: SparqlQuery) -> bool:
    if type(pred.form) is not type(gold.form):
        return False
    if isinstance(pred.form, sq.SelectGrouped):
        return (pred.form.count_groups == gold.form.count_groups
                and (pred.form.extremum is None)
                == (gold.form.extremum is None))
    return True


@dataclass
class TurnScore:
    """Scored record for one user turn."""
    conv_id: str
    turn_index: int
    question_type: str
    sub_type: str
    phenomena: frozenset[str]
    contribution: MetricContribution
    tags: list[str]
    predicted: str | None


@dataclass
class ReportRow:
    name: str
    metric: str
    value: float | None
    em: float | None
    em_unordered: float | None
    support: int

    def to_json(self) -> dict:
        return {"name": self.name, "metric": self.metric,
                "value": self.value, "em": self.em,
                "emUnordered": self.em_unordered, "support": self.support}


@dataclass
class EvalReport:
    by_type: list[ReportRow]
    by_phenomenon: list[ReportRow]
    overall: ReportRow
    turns: list[TurnScore] = field(default_factory=list)
    tag_counts: Counter = field(default_factory=Counter)
    skipped: int = 0

    def rows(self) -> list[ReportRow]:
        return [*self.by_type, *self.by_phenomenon, self.overall]

    def to_json(self) -> dict:
        return {
            "byType": [r.to_json() for r in self.by_type],
            "byPhenomenon": [r.to_json() for r in self.by_phenomenon],
            "overall": self.overall.to_json(),
            "tagCounts": dict(sorted(self.tag_counts.items())),
            "skipped": self.skipped,
        }

    def to_text(self) -> str:
        def fmt(value: float | None) -> str:
            return "-" if value is None else f"{value:.3f}"

        lines = [f"{'category':<42} {'metric':<11} {'value':>6} {'EM':>6} "
                 f"{'EM(u)':>6} {'N':>5}"]
        for row in self.rows():
            lines.append(f"{row.name:<42} {row.metric:<11} "
                         f"{fmt(row.value):>6} {fmt(row.em):>6} "
                         f"{fmt(row.em_unordered):>6} {row.support:>5}")
        return "\n".join(lines)


def _em_unordered_rate(contribs: list[MetricContribution]) -> float | None:
    if not contribs:
        return None
    return sum(c.em_unordered for c in contribs) / len(contribs)


def _make_row(name: str, metric: str,
              contribs: list[MetricContribution]) -> ReportRow:
    value = accuracy(contribs) if metric == "Accuracy" else \
        micro_f1(contribs)
    return ReportRow(name=name, metric=metric, value=value,
                     em=em_rate(contribs),
                     em_unordered=_em_unordered_rate(contribs),
                     support=len(contribs))


def coreference_depth(conversation: Conversation, t: int) -> str:
    """Which strata a coreferent question falls in: every annotated
    entity found in the immediately previous interaction, or not."""
    ann = conversation.turns[t].annotation
    if ann is None or t < 2:
        return COREF_EARLIER
    previous = conversation.turns[t - 2].annotation
    if previous is None:
        return COREF_EARLIER
    available = set(previous.entities)
    if isinstance(previous.gold_answer, EntitySetAnswer):
        available |= previous.gold_answer.entities
    return COREF_PREVIOUS if set(ann.entities) <= available \
        else COREF_EARLIER


def _gold_query(turn) -> SparqlQuery | None:
    if isinstance(turn.sparql, SparqlQuery):
        return turn.sparql
    if turn.sparql:
        try:
            return sq.parse_sparql(turn.sparql)
        except SparqlError:
            return None
    try:
        return tp.annotation_query(turn.annotation)
    except (tp.TemplateError, SparqlError):
        return None


def evaluate_dataset(kg: KnowledgeGraph, conversations: list[Conversation],
                     config: ParserConfig | None = None,
                     oracle: bool = False) -> EvalReport:
    """Parse and score every annotated user turn.

    With `oracle` the parser gets gold symbols and gold sub-types per
    conversation.  Turns without an annotation, clarifications, and
    turns whose gold answer or gold query cannot be recovered are
    skipped (counted in `skipped`); parse failures score as wrong.
    """
    base = config or ParserConfig()
    turns: list[TurnScore] = []
    tag_counts: Counter = Counter()
    skipped = 0
    for conversation in conversations:
        cfg = base
        if oracle:
            cfg = replace(base, selector=OracleSelector(conversation),
                          oracle_symbols=True)
        for t, turn in conversation.user_turns():
            ann = turn.annotation
            if (ann is None or ann.intent_type == tp.CLARIFICATION
                    or ann.gold_answer is None):
                skipped += 1
                continue
            gold_query = _gold_query(turn)
            if gold_query is None:
                skipped += 1
                continue
            try:
                result = parse_turn(kg, conversation, t, cfg)
            except Exception as exc:
                result = ParseResult(
                    query=None, sub_type=None, direction=None, score=0.0,
                    used_symbols=DynamicVocabulary(),
                    trace=[f"parser raised: {exc!r}"])
            pred_answer: Answer | None = None
            if result.query is not None:
                try:
                    pred_answer = evaluate(kg, result.query)
                except SparqlError:
                    pred_answer = None
            contribution = score_answer(pred_answer, ann.gold_answer)
            if result.query is not None:
                contribution.em = exact_match(result.query, gold_query)
                contribution.em_unordered = (
                    canonical_unordered(result.query)
                    == canonical_unordered(gold_query))
            tags = diagnose(result, gold_query)
            tag_counts.update(tags)
            phenomena = _phenomena(conversation, t, ann)
            turns.append(TurnScore(
                conv_id=conversation.conv_id, turn_index=t,
                question_type=tp.question_type_for(ann),
                sub_type=ann.sub_type, phenomena=phenomena,
                contribution=contribution, tags=list(tags),
                predicted=None if result.query is None
                else sq.serialize(result.query)))
    return _aggregate(turns, tag_counts, skipped)


def _phenomena(conversation: Conversation, t: int, ann) -> frozenset[str]:
    try:
        names = tp.phenomena_of(ann.sub_type)
    except tp.TemplateError:
        return frozenset()
    rows = set()
    if tp.COREFERENCE in names:
        rows.add(coreference_depth(conversation, t))
    if tp.ELLIPSIS in names:
        rows.add(ELLIPSIS_ROW)
    if tp.MULTI_ENTITY in names:
        rows.add(MULTI_ENTITY_ROW)
    return frozenset(rows)


def _aggregate(turns: list[TurnScore], tag_counts: Counter,
               skipped: int) -> EvalReport:
    by_type: list[ReportRow] = []
    for qtype in (*tp.QUESTION_TYPES,):
        contribs = [s.contribution for s in turns
                    if s.question_type == qtype]
        if not contribs:
            continue
        metric = "Accuracy" if qtype in ACCURACY_TYPES else "F1"
        by_type.append(_make_row(qtype, metric, contribs))

    by_phenomenon: list[ReportRow] = []
    for row_name in PHENOMENON_ROWS:
        contribs = [s.contribution for s in turns
                    if row_name in s.phenomena]
        if not contribs:
            continue
        metric = "Accuracy" if all(
            c.correct is not None for c in contribs) else "F1"
        by_phenomenon.append(_make_row(row_name, metric, contribs))

    all_contribs = [s.contribution for s in turns]
    overall = ReportRow(
        name=OVERALL, metric="F1/Accuracy",
        value=micro_f1(all_contribs), em=em_rate(all_contribs),
        em_unordered=_em_unordered_rate(all_contribs),
        support=len(all_contribs))
    return EvalReport(by_type=by_type, by_phenomenon=by_phenomenon,
                      overall=overall, turns=turns, tag_counts=tag_counts,
                      skipped=skipped)


# ---------------------------------------------------------------------------
# Held-out query splits

@dataclass(frozen=True)
class SplitSpec:
    """Named set of sub-types whose conversations are forced to test."""
    name: str
    held_out: frozenset[str]

    def __post_init__(self):
        if not self.held_out:
            raise EvalError(f"split {self.name!r} holds out nothing")


SPLIT_SPECS: dict[str, SplitSpec] = {
    spec.name: spec for spec in (
        SplitSpec("CountLogic", frozenset({
            "Count | Logical operators",
            "Count | Logical operators (Coreference)",
        })),
        SplitSpec("UnionMulti", frozenset({
            "Union | Multiple Relation",
        })),
        SplitSpec("Verify3", frozenset({
            "3 entities, 2 direct, 2(direct) are query entities, "
            "subject is indirect",
            "3 entities, all direct, 2 are query entities",
        })),
    )
}


def split_spec(name: str) -> SplitSpec:
    try:
        return SPLIT_SPECS[name]
    except KeyError:
        raise EvalError(
            f"unknown split {name!r}; have {sorted(SPLIT_SPECS)}") from None


@dataclass
class Splits:
    train: list[Conversation]
    valid: list[Conversation]
    test: list[Conversation]

    def manifest(self) -> dict[str, list[str]]:
        return {part: [c.conv_id for c in convs]
                for part, convs in (("train", self.train),
                                    ("valid", self.valid),
                                    ("test", self.test))}


def _canonical_held_out(spec: SplitSpec) -> frozenset[str]:
    resolved = set()
    for name in spec.held_out:
        try:
            resolved.add(tp.resolve_sub_type(name))
        except tp.TemplateError:
            raise EvalError(f"split {spec.name!r}: unknown sub-type "
                            f"{name!r}") from None
    return frozenset(resolved)


def conversation_sub_types(conversation: Conversation) -> frozenset[str]:
    found = set()
    for _, turn in conversation.user_turns():
        ann = turn.annotation
        if ann is None or ann.intent_type == tp.CLARIFICATION:
            continue
        try:
            found.add(tp.resolve_sub_type(ann.sub_type))
        except tp.TemplateError:
            continue
    return frozenset(found)


def make_splits(conversations: list[Conversation], spec: SplitSpec,
                ratios: tuple[float, float] = (0.9, 0.1),
                seed: int = 0) -> Splits:
    """Assign whole conversations: any held-out sub-type forces test;
    the rest shuffle into train/valid by the given proportions."""
    if len(ratios) != 2 or min(ratios) < 0 or sum(ratios) <= 0:
        raise EvalError(f"bad ratios {ratios!r}")
    held_out = _canonical_held_out(spec)

    test: list[Conversation] = []
    rest: list[Conversation] = []
    seen_sub_types: set[str] = set()
    for conversation in conversations:
        sub_types = conversation_sub_types(conversation)
        seen_sub_types |= sub_types
        (test if sub_types & held_out else rest).append(conversation)
    missing = held_out - seen_sub_types
    if missing:
        raise EvalError(
            f"split {spec.name!r}: sub-types never occur: {sorted(missing)}")

    order = list(range(len(rest)))
    random.Random(seed).shuffle(order)
    n_train = round(len(rest) * ratios[0] / sum(ratios))
    train_ids = set(order[:n_train])
    train = [c for i, c in enumerate(rest) if i in train_ids]
    valid = [c for i, c in enumerate(rest) if i not in train_ids]
    return Splits(train=train, valid=valid, test=test)
