"""Tests for conversation records, their JSON form, and file handling."""

import json

import pytest

from convkgqa.dataset import (
    Conversation,
    DatasetError,
    QuestionAnnotation,
    Turn,
    annotation_from_json,
    annotation_to_json,
    atomic_write,
    conversation_from_json,
    conversation_to_json,
    load_conversations,
    save_conversations,
)
from convkgqa.sparql import (
    BooleanAnswer,
    CountAnswer,
    EntitySetAnswer,
    parse_sparql,
)


def make_annotation(**overrides):
    base = dict(intent_type="Simple Question (Direct)",
                sub_type="Single Entity",
                entities=["Q846847"], relations=["P1346"],
                types=["Q12973014"],
                gold_answer=EntitySetAnswer({"Q7199360"}))
    base.update(overrides)
    return QuestionAnnotation(**base)


def make_conversation(conv_id="c1"):
    return Conversation(conv_id, [
        Turn("user", "Who won the 1909 World Series?",
             annotation=make_annotation(),
             sparql=parse_sparql(
                 "SELECT ?x WHERE { wd:Q846847 wdt:P1346 ?x . "
                 "?x wdt:P31 wd:Q12973014 . }")),
        Turn("system", "Pittsburgh Pirates"),
    ])


class TestAnnotation:
    def test_intent_combines_type_and_sub_type(self):
        ann = make_annotation()
        assert ann.intent == "Simple Question (Direct)|Single Entity"

    @pytest.mark.parametrize("field,value", [
        ("entities", ["P31"]),
        ("entities", ["x"]),
        ("relations", ["Q1"]),
        ("types", ["P31"]),
    ])
    def test_bad_symbol_ids_rejected(self, field, value):
        with pytest.raises(DatasetError):
            make_annotation(**{field: value})

    def test_triple_hints_become_tuples(self):
        ann = make_annotation(triple_hints=[["Q1", "P1", "Q2"]])
        assert ann.triple_hints == [("Q1", "P1", "Q2")]

    @pytest.mark.parametrize("ann", [
        make_annotation(),
        make_annotation(gold_answer=BooleanAnswer(False)),
        make_annotation(gold_answer=CountAnswer(3)),
        make_annotation(gold_answer=None),
        make_annotation(values=[2], comparator="atleast"),
        make_annotation(triple_hints=[("Q1", "P1", "Q2")]),
    ])
    def test_json_roundtrip(self, ann):
        assert annotation_from_json(annotation_to_json(ann)) == ann

    def test_json_uses_camel_case_and_omits_empty(self):
        obj = annotation_to_json(make_annotation())
        assert obj["intentType"] == "Simple Question (Direct)"
        assert obj["subType"] == "Single Entity"
        assert "values" not in obj
        assert "comparator" not in obj
        assert obj["goldAnswer"] == ["Q7199360"]


class TestTurnsAndConversations:
    def test_speaker_validated(self):
        with pytest.raises(DatasetError):
            Turn("narrator", "hello")

    def test_check_passes_on_well_formed(self):
        assert make_conversation().check() is not None

    def test_check_requires_turns(self):
        with pytest.raises(DatasetError, match="no turns"):
            Conversation("c1", []).check()

    def test_check_requires_alternation(self):
        conv = Conversation("c1", [
            Turn("user", "hi", annotation=make_annotation()),
            Turn("user", "hi again", annotation=make_annotation()),
        ])
        with pytest.raises(DatasetError, match="turn 1"):
            conv.check()

    def test_check_requires_user_annotations(self):
        conv = Conversation("c1", [Turn("user", "hi"), Turn("system", "yo")])
        with pytest.raises(DatasetError, match="lacks an annotation"):
            conv.check()

    def test_user_turns_and_interactions(self):
        conv = make_conversation()
        assert [i for i, _ in conv.user_turns()] == [0]
        pairs = list(conv.interactions())
        assert len(pairs) == 1
        assert pairs[0][0].speaker == "user"
        assert pairs[0][1].speaker == "system"

    def test_trailing_user_turn_is_not_an_interaction(self):
        conv = make_conversation()
        conv.turns.append(Turn("user", "and then?",
                               annotation=make_annotation()))
        assert len(list(conv.interactions())) == 1
        assert len(list(conv.user_turns())) == 2


class TestConversationJson:
    def test_roundtrip_preserves_query_objects(self):
        conv = make_conversation()
        back = conversation_from_json(conversation_to_json(conv))
        assert back.conv_id == conv.conv_id
        assert back.turns[0].annotation == conv.turns[0].annotation
        assert back.turns[0].sparql == conv.turns[0].sparql
        assert back.turns[1].annotation is None

    def test_sparql_stored_as_text(self):
        obj = conversation_to_json(make_conversation())
        assert isinstance(obj["turns"][0]["sparql"], str)
        assert obj["turns"][0]["sparql"].startswith("SELECT ?x WHERE")

    def test_from_json_checks_shape(self):
        with pytest.raises(DatasetError):
            conversation_from_json({"id": "c1", "turns": [
                {"speaker": "system", "utterance": "backwards"}]})


class TestFiles:
    def test_save_load_roundtrip(self, tmp_path):
        path = tmp_path / "conv.jsonl"
        conversations = [make_conversation("c1"), make_conversation("c2")]
        save_conversations(conversations, path)
        loaded = load_conversations(path)
        assert [c.conv_id for c in loaded] == ["c1", "c2"]
        assert loaded[0].turns[0].sparql == conversations[0].turns[0].sparql

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "conv.jsonl"
        text = json.dumps(conversation_to_json(make_conversation()))
        path.write_text(text + "\n\n" + text + "\n")
        assert len(load_conversations(path)) == 2

    def test_load_error_names_line(self, tmp_path):
        path = tmp_path / "conv.jsonl"
        good = json.dumps(conversation_to_json(make_conversation()))
        path.write_text(good + "\n{not json\n")
        with pytest.raises(DatasetError, match=":2:"):
            load_conversations(path)

    def test_load_missing_key_names_line(self, tmp_path):
        path = tmp_path / "conv.jsonl"
        path.write_text('{"turns": []}\n')
        with pytest.raises(DatasetError, match=":1:"):
            load_conversations(path)

    def test_atomic_write_success(self, tmp_path):
        path = tmp_path / "out" / "file.txt"
        with atomic_write(path) as f:
            f.write("content")
        assert path.read_text() == "content"
        assert list(path.parent.iterdir()) == [path]

    def test_atomic_write_failure_leaves_no_file(self, tmp_path):
        path = tmp_path / "file.txt"
        path.write_text("original")
        with pytest.raises(RuntimeError):
            with atomic_write(path) as f:
                f.write("partial")
                raise RuntimeError("boom")
        assert path.read_text() == "original"
        assert list(tmp_path.iterdir()) == [path]

    def test_bundled_datasets_load(self, mini_conversations,
                                    suite_conversations):
        assert len(mini_conversations) == 1
        assert len(suite_conversations) == 30
        for conv in mini_conversations + suite_conversations:
            conv.check()
