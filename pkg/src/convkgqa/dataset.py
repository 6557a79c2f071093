"""Conversation data model and JSONL serialization.

A conversation alternates user and system turns, starting with the user.
User turns carry a question annotation (intent, sub-type, KG symbols,
direction hints, and the gold answer); system turns verbalize the previous
answer.  Conversations serialize one-per-line as JSON.
"""

from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .kg import is_entity_id, is_property_id
from .sparql import (Answer, SparqlQuery, answer_from_json, answer_to_json,
                     parse_sparql, serialize)

USER = "user"
SYSTEM = "system"


class DatasetError(Exception):
    pass


@dataclass
class QuestionAnnotation:
    """Gold annotation attached to a user turn.

    `comparator` names the quantitative operator for grouped sub-types
    (atleast, atmost, equal, approx, greater, less, argmin, argmax) and
    `values` holds integer operands; both stay empty elsewhere.
    """
    intent_type: str
    sub_type: str
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    types: list[str] = field(default_factory=list)
    triple_hints: list[tuple[str, str, str]] = field(default_factory=list)
    values: list[int] = field(default_factory=list)
    comparator: str | None = None
    gold_answer: Answer | None = None

    def __post_init__(self):
        for e in self.entities:
            if not is_entity_id(e):
                raise DatasetError(f"bad entity id {e!r}")
        for r in self.relations:
            if not is_property_id(r):
                raise DatasetError(f"bad relation id {r!r}")
        for t in self.types:
            if not is_entity_id(t):
                raise DatasetError(f"bad type id {t!r}")
        self.triple_hints = [tuple(h) for h in self.triple_hints]

    @property
    def intent(self) -> str:
        return f"{self.intent_type}|{self.sub_type}"


@dataclass
class Turn:
    speaker: str
    utterance: str
    annotation: QuestionAnnotation | None = None
    sparql: SparqlQuery | None = None

    def __post_init__(self):
        if self.speaker not in (USER, SYSTEM):
            raise DatasetError(f"bad speaker {self.speaker!r}")


@dataclass
class Conversation:
    conv_id: str
    turns: list[Turn]

    def check(self) -> "Conversation":
        if not self.turns:
            raise DatasetError(f"{self.conv_id}: conversation has no turns")
        for i, turn in enumerate(self.turns):
            expected = USER if i % 2 == 0 else SYSTEM
            if turn.speaker != expected:
                raise DatasetError(
                    f"{self.conv_id}: turn {i} should be a {expected} turn")
            if turn.speaker == USER and turn.annotation is None:
                raise DatasetError(
                    f"{self.conv_id}: user turn {i} lacks an annotation")
        return self

    def user_turns(self):
        for i, turn in enumerate(self.turns):
            if turn.speaker == USER:
                yield i, turn

    def interactions(self):
        """Complete (user, system) turn pairs, oldest first."""
        for i in range(0, len(self.turns) - 1, 2):
            yield self.turns[i], self.turns[i + 1]


def annotation_to_json(ann: QuestionAnnotation) -> dict:
    out = {
        "intentType": ann.intent_type,
        "subType": ann.sub_type,
        "entities": list(ann.entities),
        "relations": list(ann.relations),
        "types": list(ann.types),
        "tripleHints": [list(h) for h in ann.triple_hints],
    }
    if ann.values:
        out["values"] = list(ann.values)
    if ann.comparator:
        out["comparator"] = ann.comparator
    if ann.gold_answer is not None:
        out["goldAnswer"] = answer_to_json(ann.gold_answer)
    return out


def annotation_from_json(obj: dict) -> QuestionAnnotation:
    gold = obj.get("goldAnswer")
    return QuestionAnnotation(
        intent_type=obj["intentType"],
        sub_type=obj["subType"],
        entities=list(obj.get("entities", ())),
        relations=list(obj.get("relations", ())),
        types=list(obj.get("types", ())),
        triple_hints=[tuple(h) for h in obj.get("tripleHints", ())],
        values=list(obj.get("values", ())),
        comparator=obj.get("comparator"),
        gold_answer=None if gold is None else answer_from_json(gold),
    )


def conversation_to_json(conv: Conversation) -> dict:
    turns = []
    for turn in conv.turns:
        obj: dict = {"speaker": turn.speaker, "utterance": turn.utterance}
        if turn.annotation is not None:
            obj["annotation"] = annotation_to_json(turn.annotation)
        if turn.sparql is not None:
            obj["sparql"] = serialize(turn.sparql)
        turns.append(obj)
    return {"id": conv.conv_id, "turns": turns}


def conversation_from_json(obj: dict) -> Conversation:
    turns = []
    for t in obj["turns"]:
        ann = t.get("annotation")
        query = t.get("sparql")
        turns.append(Turn(
            speaker=t["speaker"],
            utterance=t["utterance"],
            annotation=None if ann is None else annotation_from_json(ann),
            sparql=None if query is None else parse_sparql(query),
        ))
    return Conversation(conv_id=obj["id"], turns=turns).check()


def load_conversations(path: str | Path) -> list[Conversation]:
    conversations = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                conversations.append(conversation_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, DatasetError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return conversations


@contextmanager
def atomic_write(path: str | Path, mode: str = "w"):
    """Write to a temp file in the target directory, then rename into place.

    A failed write never leaves a partial file at the destination.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, mode, encoding=None if "b" in mode else "utf-8") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_conversations(conversations: list[Conversation], path: str | Path) -> None:
    with atomic_write(path) as f:
        for conv in conversations:
            f.write(json.dumps(conversation_to_json(conv), ensure_ascii=False))
            f.write("\n")
