"""Tests for the action grammar: parsing, both semantics, and the search."""

import random

import pytest
from hypothesis import given, settings, strategies as st

import helpers
from convkgqa import actions as ac
from convkgqa import sparql as sq
from convkgqa.actions import (
    ActionError,
    ActionParseError,
    ActionSymbols,
    CompareCount,
    CountAct,
    DifferenceAct,
    ExtremumAct,
    FilterType,
    Find,
    FindRev,
    GroupCounts,
    IntersectAct,
    IsIn,
    UnionAct,
    compile_action,
    interpret,
    parse_actions,
    search_annotation,
    to_text,
    to_tokens,
)
from convkgqa.kg import KnowledgeGraph
from convkgqa.sparql import (
    BooleanAnswer,
    CountAnswer,
    EntitySetAnswer,
    evaluate,
    exact_match,
    parse_sparql,
)

FILM_TRIPLES = [
    ("Q1", "P31", "Q5"), ("Q2", "P31", "Q5"), ("Q3", "P31", "Q5"),
    ("Q10", "P31", "Q11424"), ("Q11", "P31", "Q11424"),
    ("Q12", "P31", "Q11424"),
    ("Q10", "P161", "Q1"), ("Q10", "P161", "Q2"), ("Q10", "P161", "Q3"),
    ("Q11", "P161", "Q1"), ("Q11", "P161", "Q2"),
    ("Q12", "P161", "Q1"),
    ("Q10", "P57", "Q2"), ("Q11", "P57", "Q2"), ("Q12", "P57", "Q3"),
]


@pytest.fixture(scope="module")
def film_kg():
    return KnowledgeGraph.from_triples(FILM_TRIPLES)


class TestTokens:
    CASES = [
        ("[find, Q846847, P1346]", Find("Q846847", "P1346")),
        ("[find_rev, Q650855, P1923]", FindRev("Q650855", "P1923")),
        ("[filter_type, find_rev, Q650855, P1923, Q500834]",
         FilterType(FindRev("Q650855", "P1923"), "Q500834")),
        ("[union, find, Q1, P1, find, Q2, P1]",
         UnionAct(Find("Q1", "P1"), Find("Q2", "P1"))),
        ("[intersection, find, Q1, P1, find_rev, Q2, P2]",
         IntersectAct(Find("Q1", "P1"), FindRev("Q2", "P2"))),
        ("[difference, find, Q1, P1, find, Q2, P1]",
         DifferenceAct(Find("Q1", "P1"), Find("Q2", "P1"))),
        ("[count, find, Q1, P1]", CountAct(Find("Q1", "P1"))),
        ("[is_in, Q53190, find, Q653772, P17]",
         IsIn("Q53190", Find("Q653772", "P17"))),
        ("[group, P161, Q11424, Q5]",
         GroupCounts("P161", "Q11424", "Q5", reverse=False)),
        ("[group_rev, P161, all, all]",
         GroupCounts("P161", None, None, reverse=True)),
        ("[atleast, group_rev, P161, Q5, all, 2]",
         CompareCount(GroupCounts("P161", "Q5", None, reverse=True),
                      "atleast", 2)),
        ("[greater, group_rev, P161, Q5, all, count, find_rev, Q2, P161]",
         CompareCount(GroupCounts("P161", "Q5", None, reverse=True),
                      "greater", CountAct(FindRev("Q2", "P161")))),
        ("[argmax, group_rev, P161, Q5, all]",
         ExtremumAct(GroupCounts("P161", "Q5", None, reverse=True),
                     "argmax")),
        ("[count, atmost, group, P161, all, all, 2]",
         CountAct(CompareCount(GroupCounts("P161", None, None), "atmost",
                               2))),
    ]

    @pytest.mark.parametrize("text,tree", CASES)
    def test_parse(self, text, tree):
        assert parse_actions(text) == tree

    @pytest.mark.parametrize("text,tree", CASES)
    def test_to_text_roundtrip(self, text, tree):
        assert to_text(tree) == text
        assert parse_actions(to_text(tree)) == tree

    def test_token_list_input(self):
        assert parse_actions(["find", "Q1", "P1"]) == Find("Q1", "P1")

    @pytest.mark.parametrize("text", [
        "[]",
        "[find, Q1]",
        "[find, P1, Q1]",
        "[find, Q1, P1, extra]",
        "[bogus, Q1, P1]",
        "[is_in, find, Q1, P1]",
        "[count, is_in, Q1, find, Q1, P1]",
        "[atleast, group, P1, all, all, nope]",
        "[argmax, find, Q1, P1]",
    ])
    def test_parse_errors(self, text):
        with pytest.raises(ActionParseError):
            parse_actions(text)

    def test_error_reports_token_index(self):
        with pytest.raises(ActionParseError, match="token"):
            parse_actions("[find, Q1]")


class TestInterpret:
    def test_find_and_find_rev(self, film_kg):
        assert interpret(film_kg, Find("Q10", "P161")) == \
            EntitySetAnswer({"Q1", "Q2", "Q3"})
        assert interpret(film_kg, FindRev("Q1", "P161")) == \
            EntitySetAnswer({"Q10", "Q11", "Q12"})

    def test_set_algebra(self, film_kg):
        a = Find("Q10", "P161")
        b = Find("Q11", "P161")
        assert interpret(film_kg, UnionAct(a, b)) == \
            EntitySetAnswer({"Q1", "Q2", "Q3"})
        assert interpret(film_kg, IntersectAct(a, b)) == \
            EntitySetAnswer({"Q1", "Q2"})
        assert interpret(film_kg, DifferenceAct(a, b)) == \
            EntitySetAnswer({"Q3"})

    def test_filter_type(self, film_kg):
        tree = FilterType(FindRev("Q2", "P57"), "Q11424")
        assert interpret(film_kg, tree) == EntitySetAnswer({"Q10", "Q11"})
        assert interpret(film_kg, FilterType(FindRev("Q2", "P57"), "Q5")) == \
            EntitySetAnswer(frozenset())

    def test_count_and_is_in(self, film_kg):
        assert interpret(film_kg, CountAct(Find("Q10", "P161"))) == \
            CountAnswer(3)
        assert interpret(film_kg, IsIn("Q2", Find("Q10", "P161"))) == \
            BooleanAnswer(True)
        assert interpret(film_kg, IsIn("Q10", Find("Q10", "P161"))) == \
            BooleanAnswer(False)

    def test_grouped_comparators(self, film_kg):
        # People counted by films casting them: Q1 3, Q2 2, Q3 1.
        group = GroupCounts("P161", "Q5", None, reverse=True)
        assert interpret(film_kg, CompareCount(group, "atleast", 2)) == \
            EntitySetAnswer({"Q1", "Q2"})
        assert interpret(film_kg, CompareCount(group, "less", 2)) == \
            EntitySetAnswer({"Q3"})
        assert interpret(film_kg, CompareCount(group, "equal", 2)) == \
            EntitySetAnswer({"Q2"})
        assert interpret(film_kg, CompareCount(group, "approx", 3)) == \
            EntitySetAnswer({"Q1", "Q2"})
        assert interpret(film_kg, ExtremumAct(group, "argmax")) == \
            EntitySetAnswer({"Q1"})
        assert interpret(film_kg, ExtremumAct(group, "argmin")) == \
            EntitySetAnswer({"Q3"})

    def test_count_threshold_expression(self, film_kg):
        group = GroupCounts("P161", "Q5", None, reverse=True)
        # Q2 appears in two films, so the threshold compiles to 2.
        tree = CompareCount(group, "greater", CountAct(FindRev("Q2", "P161")))
        assert interpret(film_kg, tree) == EntitySetAnswer({"Q1"})

    def test_count_over_compare(self, film_kg):
        group = GroupCounts("P161", "Q5", None, reverse=True)
        tree = CountAct(CompareCount(group, "atleast", 2))
        assert interpret(film_kg, tree) == CountAnswer(2)

    def test_group_type_restrictions(self, film_kg):
        loose = GroupCounts("P57", None, None, reverse=True)
        typed = GroupCounts("P57", "Q5", "Q11424", reverse=True)
        assert interpret(film_kg, ExtremumAct(loose, "argmax")) == \
            interpret(film_kg, ExtremumAct(typed, "argmax")) == \
            EntitySetAnswer({"Q2"})

    def test_bare_group_has_no_answer(self, film_kg):
        with pytest.raises(ActionError):
            interpret(film_kg, GroupCounts("P161", None, None))
        with pytest.raises(ActionError):
            compile_action(GroupCounts("P161", None, None))

    def test_count_over_extremum_rejected(self, film_kg):
        tree = CountAct(ExtremumAct(GroupCounts("P161", None, None),
                                    "argmax"))
        with pytest.raises(ActionError):
            compile_action(tree)


class TestCompile:
    PAIRS = [
        ("[filter_type, find_rev, Q650855, P1923, Q500834]",
         "SELECT ?x WHERE { ?x wdt:P1923 wd:Q650855. "
         "?x wdt:P31 wd:Q500834.}"),
        ("[filter_type, find, Q846847, P1346, Q12973014]",
         "SELECT ?x WHERE { wd:Q846847 wdt:P1346 ?x. "
         "?x wdt:P31 wd:Q12973014.}"),
        ("[is_in, Q53190, find, Q653772, P17]",
         "ASK {wd:Q653772 wdt:P17 wd:Q53190.}"),
    ]

    @pytest.mark.parametrize("action_text,query_text", PAIRS)
    def test_compiles_to_paired_query(self, action_text, query_text):
        compiled = compile_action(parse_actions(action_text))
        assert exact_match(compiled, parse_sparql(query_text))

    def test_count_over_union_counts_distinct(self, film_kg):
        tree = CountAct(UnionAct(Find("Q10", "P161"), Find("Q11", "P161")))
        query = compile_action(tree)
        assert isinstance(query.form, sq.SelectCount)
        assert query.form.distinct
        assert evaluate(film_kg, query) == CountAnswer(3)

    def test_compare_compiles_to_grouped(self):
        tree = CompareCount(GroupCounts("P161", "Q5", None, reverse=True),
                            "atleast", 2)
        query = compile_action(tree)
        assert isinstance(query.form, sq.SelectGrouped)
        assert query.form.comparator == ">="
        assert not query.form.count_groups

    def test_count_over_compare_counts_groups(self):
        tree = CountAct(CompareCount(GroupCounts("P161", None, None),
                                     "equal", 1))
        query = compile_action(tree)
        assert isinstance(query.form, sq.SelectGrouped)
        assert query.form.count_groups

    def test_count_threshold_compiles_to_subquery(self):
        tree = CompareCount(GroupCounts("P161", "Q5", None, reverse=True),
                            "greater", CountAct(FindRev("Q2", "P161")))
        query = compile_action(tree)
        assert isinstance(query.form.threshold, sq.SparqlQuery)


class TestSearch:
    def test_reproduces_entity_gold(self, mini_kg):
        symbols = ActionSymbols({"Q650855"}, {"P1923"}, {"Q500834"})
        gold = EntitySetAnswer({"Q846847"})
        tree = search_annotation(mini_kg, symbols, gold, max_depth=5)
        assert tree is not None
        assert len(to_tokens(tree)) <= 5
        assert interpret(mini_kg, tree) == gold

    def test_reproduces_boolean_gold(self, mini_kg):
        symbols = ActionSymbols({"Q653772", "Q53190"}, {"P17"}, set())
        tree = search_annotation(mini_kg, symbols, BooleanAnswer(False),
                                 max_depth=6)
        assert tree is not None
        assert interpret(mini_kg, tree) == BooleanAnswer(False)

    def test_reproduces_count_gold(self, film_kg):
        symbols = ActionSymbols({"Q10"}, {"P161"}, set())
        tree = search_annotation(film_kg, symbols, CountAnswer(3))
        assert tree == CountAct(Find("Q10", "P161"))

    def test_prefers_smallest_then_lexicographic(self, film_kg):
        symbols = ActionSymbols({"Q10", "Q1"}, {"P161"}, {"Q5"})
        gold = EntitySetAnswer({"Q1", "Q2", "Q3"})
        tree = search_annotation(film_kg, symbols, gold)
        # Both [find, Q10, P161] and its filtered variants match; the
        # 3-token tree wins.
        assert tree == Find("Q10", "P161")

    def test_deterministic(self, film_kg):
        symbols = ActionSymbols({"Q10", "Q11", "Q12"}, {"P161", "P57"},
                                {"Q5"})
        gold = EntitySetAnswer({"Q3"})
        first = search_annotation(film_kg, symbols, gold)
        second = search_annotation(film_kg, symbols, gold)
        assert first == second is not None

    def test_returns_none_when_unreachable(self, film_kg):
        symbols = ActionSymbols({"Q10"}, {"P161"}, set())
        assert search_annotation(film_kg, symbols,
                                 EntitySetAnswer({"Q99"}), max_depth=7) is None

    def test_depth_budget_is_respected(self, film_kg):
        symbols = ActionSymbols({"Q10", "Q11"}, {"P161"}, set())
        gold = EntitySetAnswer({"Q3"})  # needs difference: 7 tokens
        assert search_annotation(film_kg, symbols, gold, max_depth=5) is None
        tree = search_annotation(film_kg, symbols, gold, max_depth=7)
        assert tree == DifferenceAct(Find("Q10", "P161"), Find("Q11", "P161"))

    def test_bad_depth(self, film_kg):
        with pytest.raises(ActionError):
            search_annotation(film_kg, ActionSymbols(set(), set(), set()),
                              CountAnswer(0), max_depth=0)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=120)
def test_interpret_matches_compiled_evaluation(seed):
    rng = random.Random(seed)
    kg = helpers.random_kg(rng, max_entities=20)
    tree = helpers.random_action_tree(rng, kg)
    assert parse_actions(to_text(tree)) == tree
    assert interpret(kg, tree) == evaluate(kg, compile_action(tree))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40)
def test_search_results_always_reexecute_to_gold(seed):
    rng = random.Random(seed)
    kg = helpers.random_kg(rng, max_entities=10)
    entities = sorted(kg.entities())
    sample = rng.sample(entities, k=min(3, len(entities)))
    symbols = ActionSymbols(sample, set(kg.relations()),
                            {t.object for t in kg.match(predicate="P31")})
    gold = interpret(kg, helpers.random_action_tree(rng, kg))
    if isinstance(gold, EntitySetAnswer) and len(gold.entities) > 6:
        gold = CountAnswer(len(gold.entities))
    found = search_annotation(kg, symbols, gold, max_depth=7)
    if found is not None:
        assert interpret(kg, found) == gold
