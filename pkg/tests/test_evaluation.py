"""Tests for answer scoring, diagnostics, reports, and held-out splits."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from convkgqa import evaluation as ev
from convkgqa import parser as ps
from convkgqa import sparql as sq
from convkgqa.context import DynamicVocabulary
from convkgqa.dataset import Conversation, QuestionAnnotation, Turn
from convkgqa.kg import KnowledgeGraph

TRIPLES = [
    ("Q846847", "P1923", "Q650855"),
    ("Q846847", "P31", "Q500834"),
    ("Q846847", "P1346", "Q7199360"),
    ("Q650855", "P31", "Q12973014"),
    ("Q7199360", "P31", "Q12973014"),
    ("Q653772", "P31", "Q12973014"),
    ("Q653772", "P17", "Q30"),
    ("Q53190", "P31", "Q15617994"),
    ("Q30", "P31", "Q6256"),
]
LABELS = {
    "Q846847": "1909 World Series", "Q650855": "Detroit Tigers",
    "Q7199360": "Pittsburgh Pirates", "Q653772": "Pittsburgh Pirates",
    "Q53190": "Sacile", "Q30": "United States of America",
    "Q500834": "tournament", "Q12973014": "sports team",
    "Q15617994": "designation admin. territorial entity",
    "Q6256": "country",
}

T1 = QuestionAnnotation(
    intent_type="Simple Question", sub_type="Single Entity",
    entities=["Q650855"], relations=["P1923"], types=["Q500834"],
    triple_hints=[("Q500834", "P1923", "Q650855")],
    gold_answer=sq.EntitySetAnswer(frozenset({"Q846847"})))
T2 = QuestionAnnotation(
    intent_type="Simple Question", sub_type="Single Entity|Indirect",
    entities=["Q846847"], relations=["P1346"], types=["Q12973014"],
    triple_hints=[("Q846847", "P1346", "Q12973014")],
    gold_answer=sq.EntitySetAnswer(frozenset({"Q7199360"})))
T3 = QuestionAnnotation(
    intent_type="Verification", sub_type="2 entities, subject is indirect",
    entities=["Q653772", "Q53190"], relations=["P17"], types=["Q15617994"],
    triple_hints=[("Q653772", "P17", "Q53190")],
    gold_answer=sq.BooleanAnswer(False))

GOLD_T1_TEXT = ("SELECT ?x WHERE { ?x wdt:P1923 wd:Q650855 ."
                " ?x wdt:P31 wd:Q500834 . }")


@pytest.fixture(scope="module")
def kg():
    return KnowledgeGraph.from_triples(TRIPLES, labels=LABELS)


@pytest.fixture(scope="module")
def conv():
    return Conversation("c1", [
        Turn("user", "Which tournament did Detroit Tigers participate in?",
             T1),
        Turn("system", "1909 World Series"),
        Turn("user",
             "Which sports team was the champion of that tournament?", T2),
        Turn("system", "Pittsburgh Pirates"),
        Turn("user", "Does that sports team belong to Sacile?", T3),
        Turn("system", "No"),
    ])


def entity_set(*ids):
    return sq.EntitySetAnswer(frozenset(ids))


class TestScoreAnswer:
    @pytest.mark.parametrize("pred,gold,expected", [
        (entity_set("Q846847"), entity_set("Q846847"), (1, 0, 0)),
        (entity_set("Q1"), entity_set("Q1", "Q2"), (1, 0, 1)),
        (entity_set("Q1", "Q3"), entity_set("Q1", "Q2"), (1, 1, 1)),
        (entity_set(), entity_set("Q1"), (0, 0, 1)),
        (sq.BooleanAnswer(True), entity_set("Q846847"), (0, 1, 1)),
        (None, entity_set("Q846847"), (0, 0, 1)),
    ])
    def test_set_counts(self, pred, gold, expected):
        c = ev.score_answer(pred, gold)
        assert (c.tp, c.fp, c.fn) == expected
        assert c.correct is None

    @pytest.mark.parametrize("pred,gold,correct", [
        (sq.BooleanAnswer(False), sq.BooleanAnswer(False), True),
        (sq.BooleanAnswer(True), sq.BooleanAnswer(False), False),
        (sq.CountAnswer(3), sq.CountAnswer(3), True),
        (sq.CountAnswer(3), sq.CountAnswer(4), False),
        (None, sq.BooleanAnswer(True), False),
        (None, sq.CountAnswer(0), False),
        (entity_set("Q1"), sq.CountAnswer(1), False),
    ])
    def test_scalar_correctness(self, pred, gold, correct):
        c = ev.score_answer(pred, gold)
        assert c.correct is correct
        assert (c.tp, c.fp, c.fn) == (0, 0, 0)

    def test_mixed_contribution_rejected(self):
        with pytest.raises(ev.EvalError):
            ev.MetricContribution(tp=1, correct=True)

    @given(pred=st.frozensets(st.sampled_from([f"Q{i}" for i in range(8)])),
           gold=st.frozensets(st.sampled_from([f"Q{i}" for i in range(8)])))
    @settings(max_examples=80)
    def test_counts_partition_both_sets(self, pred, gold):
        c = ev.score_answer(sq.EntitySetAnswer(pred),
                            sq.EntitySetAnswer(gold))
        assert c.tp == len(pred & gold)
        assert c.fp == len(pred - gold)
        assert c.fn == len(gold - pred)
        assert c.tp + c.fp == len(pred)
        assert c.tp + c.fn == len(gold)


class TestAggregates:
    def test_micro_differs_from_macro(self):
        two = [ev.MetricContribution(tp=1, fn=1), ev.MetricContribution(tp=3)]
        micro = ev.micro_f1(two)
        macro = (2 / 3 + 1.0) / 2
        assert micro == pytest.approx(8 / 9)
        assert abs(micro - macro) > 1e-3

    def test_micro_empty_is_none(self):
        assert ev.micro_f1([]) is None

    def test_micro_ignores_scalar_rows(self):
        contribs = [ev.MetricContribution(tp=1),
                    ev.MetricContribution(correct=False)]
        assert ev.micro_f1(contribs) == pytest.approx(1.0)

    def test_accuracy(self):
        contribs = [ev.MetricContribution(correct=True),
                    ev.MetricContribution(correct=False)]
        assert ev.accuracy(contribs) == 0.5
        assert ev.accuracy([]) is None

    def test_em_rate(self):
        contribs = [ev.MetricContribution(tp=1, em=True),
                    ev.MetricContribution(correct=True)]
        assert ev.em_rate(contribs) == 0.5


def result_of(text):
    return ps.ParseResult(query=sq.parse_sparql(text), sub_type=None,
                          direction=None, score=1.0,
                          used_symbols=DynamicVocabulary(), trace=[])


class TestDiagnose:
    @pytest.fixture()
    def gold(self):
        return sq.parse_sparql(GOLD_T1_TEXT)

    def test_exact_no_tags(self, gold):
        renamed = ("SELECT ?y WHERE { ?y wdt:P1923 wd:Q650855 ."
                   " ?y wdt:P31 wd:Q500834 . }")
        assert ev.diagnose(result_of(renamed), gold) == []

    def test_argument_order(self, gold):
        swapped = ("SELECT ?x WHERE { wd:Q650855 wdt:P1923 ?x ."
                   " ?x wdt:P31 wd:Q500834 . }")
        assert ev.diagnose(result_of(swapped), gold) == [ev.ARGUMENT_ORDER]

    def test_entity_swapped(self, gold):
        other = ("SELECT ?x WHERE { ?x wdt:P1923 wd:Q653772 ."
                 " ?x wdt:P31 wd:Q500834 . }")
        tags = ev.diagnose(result_of(other), gold)
        assert set(tags) == {ev.WRONG_ENTITY, ev.MISSING_ENTITY}

    def test_relation_swapped(self, gold):
        other = ("SELECT ?x WHERE { ?x wdt:P1346 wd:Q650855 ."
                 " ?x wdt:P31 wd:Q500834 . }")
        assert ev.diagnose(result_of(other), gold) == [ev.WRONG_RELATION]

    def test_intent_mismatch(self, gold):
        tags = ev.diagnose(
            result_of("ASK { wd:Q650855 wdt:P1923 wd:Q500834 . }"), gold)
        assert ev.WRONG_INTENT in tags

    def test_failure_ill_formed_and_traced(self, gold):
        fail = ps.ParseResult(query=None, sub_type=None, direction=None,
                              score=0.0, used_symbols=DynamicVocabulary(),
                              trace=[])
        assert ev.diagnose(fail, gold) == [ev.ILL_FORMED]
        assert any("diagnosis" in line for line in fail.trace)


class TestCoreferenceDepth:
    def test_previous_interaction(self, conv):
        assert ev.coreference_depth(conv, 2) == ev.COREF_PREVIOUS

    def test_distant_referent(self):
        far_back = QuestionAnnotation(
            intent_type="Simple Question", sub_type="Single Entity|Indirect",
            entities=["Q650855"], relations=["P1923"], types=["Q500834"],
            triple_hints=[("Q500834", "P1923", "Q650855")],
            gold_answer=sq.EntitySetAnswer(frozenset({"Q846847"})))
        far = Conversation("c9", [
            Turn("user", "q1", T1), Turn("system", "1909 World Series"),
            Turn("user", "q2", T2), Turn("system", "Pittsburgh Pirates"),
            Turn("user", "q3", far_back), Turn("system", "1909 World Series"),
        ])
        assert ev.coreference_depth(far, 4) == ev.COREF_EARLIER

    def test_first_turn_counts_as_earlier(self, conv):
        assert ev.coreference_depth(conv, 0) == ev.COREF_EARLIER


class TestEvaluateOracle:
    def test_toy_conversation_perfect(self, kg, conv):
        report = ev.evaluate_dataset(kg, [conv], oracle=True)
        assert report.overall.support == 3
        assert report.overall.em == 1.0
        assert report.overall.value == 1.0
        assert not report.tag_counts
        type_rows = {r.name: r for r in report.by_type}
        direct = type_rows["Simple Question (Direct)"]
        assert direct.metric == "F1" and direct.value == 1.0
        assert type_rows["Simple Question (Coreferenced)"].support == 1
        boolean = type_rows["Verification (Boolean)"]
        assert boolean.metric == "Accuracy" and boolean.value == 1.0
        ph_rows = {r.name: r for r in report.by_phenomenon}
        assert ph_rows[ev.COREF_PREVIOUS].support >= 1

    def test_reproducible(self, kg, conv):
        first = ev.evaluate_dataset(kg, [conv], oracle=True)
        second = ev.evaluate_dataset(kg, [conv], oracle=True)
        assert json.dumps(first.to_json()) == json.dumps(second.to_json())

    def test_text_rendering(self, kg, conv):
        text = ev.evaluate_dataset(kg, [conv], oracle=True).to_text()
        assert "category" in text
        assert "Overall" in text

    def test_json_shape(self, kg, conv):
        payload = ev.evaluate_dataset(kg, [conv], oracle=True).to_json()
        assert set(payload) >= {"byType", "byPhenomenon", "overall",
                                "tagCounts", "skipped"}
        assert payload["overall"]["support"] == 3

    def test_empty_dataset(self, kg):
        report = ev.evaluate_dataset(kg, [], oracle=True)
        assert report.overall.support == 0
        assert report.overall.value is None
        assert not report.by_type

    def test_suite_perfect(self, suite_kg, suite_conversations):
        report = ev.evaluate_dataset(suite_kg, suite_conversations,
                                     oracle=True)
        assert report.overall.support == 45
        assert report.overall.em == 1.0
        assert report.overall.em_unordered == 1.0
        assert report.overall.value == 1.0
        assert report.skipped == 1
        assert not report.tag_counts
        ph_rows = {r.name: r for r in report.by_phenomenon}
        assert set(ph_rows) == {ev.COREF_PREVIOUS, ev.COREF_EARLIER,
                                ev.ELLIPSIS_ROW, ev.MULTI_ENTITY_ROW}
        assert all(row.value == 1.0 for row in report.by_phenomenon)


class TestEvaluateRuleBased:
    def test_toy_conversation(self, kg, conv):
        report = ev.evaluate_dataset(kg, [conv])
        assert report.overall.support == 3
        assert report.overall.em == pytest.approx(2 / 3)
        type_rows = {r.name: r for r in report.by_type}
        assert type_rows["Verification (Boolean)"].value == 1.0
        assert report.tag_counts[ev.WRONG_ENTITY] >= 1

    def test_suite_scores_below_oracle(self, suite_kg, suite_conversations):
        report = ev.evaluate_dataset(suite_kg, suite_conversations)
        assert report.overall.support == 45
        assert report.overall.em < 1.0
        assert report.tag_counts
        assert report.tag_counts[ev.ILL_FORMED] >= 1


def verification_conv(cid, sub_type, intent="Verification"):
    ann = QuestionAnnotation(
        intent_type=intent, sub_type=sub_type,
        entities=["Q846847", "Q650855", "Q7199360"],
        relations=["P1923"], types=[],
        gold_answer=sq.BooleanAnswer(True))
    return Conversation(cid, [Turn("user", f"{cid}?", ann),
                              Turn("system", "Yes")])


VERIFY3_A = "3 entities, all direct, 2 are query entities"
VERIFY3_B = ("3 entities, 2 direct, 2(direct) are query entities,"
             " subject is indirect")


class TestSplits:
    @pytest.fixture()
    def convs(self):
        return [
            verification_conv("v1", VERIFY3_A),
            verification_conv("v2", VERIFY3_B),
            verification_conv("p1", "2 entities, both direct"),
            verification_conv("p2", "2 entities, both direct"),
            verification_conv("p3", "2 entities, both direct"),
            verification_conv("p4", "2 entities, both direct"),
        ]

    def test_held_out_forced_to_test(self, convs):
        spec = ev.split_spec("Verify3")
        splits = ev.make_splits(convs, spec, ratios=(0.5, 0.5), seed=0)
        assert {c.conv_id for c in splits.test} == {"v1", "v2"}
        assert len(splits.train) == 2
        assert len(splits.valid) == 2

    def test_zero_leakage(self, convs):
        spec = ev.split_spec("Verify3")
        splits = ev.make_splits(convs, spec, ratios=(0.5, 0.5), seed=0)
        held = ev._canonical_held_out(spec)
        for conversation in splits.train + splits.valid:
            assert not (ev.conversation_sub_types(conversation) & held)

    def test_manifest_deterministic(self, convs):
        spec = ev.split_spec("Verify3")
        first = ev.make_splits(convs, spec, ratios=(0.5, 0.5), seed=0)
        second = ev.make_splits(convs, spec, ratios=(0.5, 0.5), seed=0)
        assert first.manifest() == second.manifest()

    def test_seed_changes_assignment(self, convs):
        spec = ev.split_spec("Verify3")
        base = ev.make_splits(convs, spec, ratios=(0.5, 0.5), seed=0)
        assert any(
            ev.make_splits(convs, spec, ratios=(0.5, 0.5), seed=s).manifest()
            != base.manifest() for s in range(1, 6))

    def test_partition_is_complete(self, convs):
        spec = ev.split_spec("Verify3")
        splits = ev.make_splits(convs, spec, ratios=(0.5, 0.5), seed=3)
        assigned = sorted(c.conv_id for part in
                          (splits.train, splits.valid, splits.test)
                          for c in part)
        assert assigned == sorted(c.conv_id for c in convs)

    def test_unknown_split_name(self):
        with pytest.raises(ev.EvalError, match="unknown split"):
            ev.split_spec("Nope")

    def test_absent_sub_type_rejected(self, convs):
        with pytest.raises(ev.EvalError, match="never occur"):
            ev.make_splits(convs[2:], ev.split_spec("Verify3"))

    def test_bad_ratios_rejected(self, convs):
        with pytest.raises(ev.EvalError, match="ratios"):
            ev.make_splits(convs, ev.split_spec("Verify3"),
                           ratios=(-1.0, 2.0))

    def test_builtin_specs(self):
        assert set(ev.SPLIT_SPECS) == {"CountLogic", "UnionMulti", "Verify3"}
        for spec in ev.SPLIT_SPECS.values():
            assert ev._canonical_held_out(spec)


@given(choices=st.lists(
    st.sampled_from([VERIFY3_A, VERIFY3_B, "2 entities, both direct",
                     "Single Entity", "Mult. Entity"]),
    max_size=12),
    seed=st.integers(0, 50))
@settings(max_examples=50)
def test_splits_never_leak(choices, seed):
    choices = choices + [VERIFY3_A, VERIFY3_B]
    convs = [verification_conv(f"c{i}", sub_type)
             for i, sub_type in enumerate(choices)]
    spec = ev.split_spec("Verify3")
    splits = ev.make_splits(convs, spec, seed=seed)
    held = ev._canonical_held_out(spec)
    for conversation in splits.train + splits.valid:
        assert not (ev.conversation_sub_types(conversation) & held)
    assigned = sorted(c.conv_id for part in
                      (splits.train, splits.valid, splits.test) for c in part)
    assert assigned == sorted(c.conv_id for c in convs)
