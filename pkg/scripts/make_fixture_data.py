#!/usr/bin/env python3
"""Build the bundled fixture graphs and conversation corpora under data/.

Two worlds are generated:

* ``mini``: the ten-entity tournament graph used in the docs, with one
  three-interaction conversation exercising direct questions,
  coreference, and verification.
* ``suite``: a film/book/geography graph plus thirty conversations
  covering every question family, coreference at both depths, ellipsis,
  multi-entity questions, and the sub-types the canned splits hold out.

Nothing gold is hand-written.  Each annotation is instantiated into a
query, executed on both evaluation routes, checked against the expected
value, and only then stored next to the turn.  The suite corpus is
additionally replayed through the oracle parser configuration, which
must reproduce every stored query exactly.

Rerunning the script rewrites data/ byte-for-byte.
"""

import json
import sys
from pathlib import Path

from convkgqa import evaluation as ev
from convkgqa import sparql as sq
from convkgqa import templates as tp
from convkgqa.dataset import (Conversation, QuestionAnnotation, Turn,
                              save_conversations)
from convkgqa.kg import KnowledgeGraph, load_source_dump
from convkgqa.linking import build_index
from convkgqa.parser import OracleSelector, ParserConfig

DATA = Path(__file__).resolve().parents[1] / "data"

# ---------------------------------------------------------------------------
# Mini world: one tournament, two teams, one town.

MINI_ADJACENCY = {
    "Q846847": {"P1923": ["Q650855"], "P31": ["Q500834"],
                "P1346": ["Q7199360"]},
    "Q650855": {"P31": ["Q12973014"]},
    "Q7199360": {"P31": ["Q12973014"]},
    "Q653772": {"P31": ["Q12973014"], "P17": ["Q30"]},
    "Q53190": {"P31": ["Q15617994"]},
    "Q30": {"P31": ["Q6256"]},
}
MINI_REVERSE = {"Q650855": {"P1923": ["Q846847"]}}
MINI_ENTITY_LABELS = {
    "Q846847": "1909 World Series",
    "Q650855": "Detroit Tigers",
    "Q7199360": "Pittsburgh Pirates",
    "Q653772": "Pittsburgh Pirates",
    "Q53190": "Sacile",
    "Q30": "United States of America",
    "Q500834": "tournament",
    "Q12973014": "sports team",
    "Q15617994": "designation admin. territorial entity",
    "Q6256": "country",
    "Q99999": "World Series",
}
MINI_PROPERTY_LABELS = {
    "P1923": "participating team",
    "P1346": "winner",
    "P17": "country",
    "P31": "instance of",
}
# Q99999 has no adjacency entry; its typing only exists here, so the
# loader has to synthesize the instance-of edge.
MINI_CHILD_PAR = {"Q99999": "Q500834", "Q846847": "Q500834"}

MINI_CONVERSATIONS = [
    ("mini-1", [
        dict(u="Which tournament did Detroit Tigers participate in?",
             st="Single Entity", e=["Q650855"], r=["P1923"],
             ty=["Q500834"], h=[("Q500834", "P1923", "Q650855")],
             expect={"Q846847"}),
        dict(u="Which sports team was the champion of that tournament?",
             st="Single Entity (Coreference)", e=["Q846847"], r=["P1346"],
             ty=["Q12973014"], h=[("Q846847", "P1346", "Q12973014")],
             expect={"Q7199360"}),
        dict(u="Does that sports team belong to Sacile?",
             st="2 entities, subject is indirect", e=["Q653772", "Q53190"],
             r=["P17"], ty=["Q15617994"], h=[("Q653772", "P17", "Q53190")],
             expect=False),
    ]),
]

# ---------------------------------------------------------------------------
# Suite world: films, books, and the places behind them.

SUITE_ENTITY_LABELS = {
    # humans
    "Q9001": "Mira Holt", "Q9002": "Jon Abel", "Q9003": "Lena Voss",
    "Q9101": "Sam Reyes", "Q9102": "Ana Brook", "Q9103": "Tom Walsh",
    "Q9104": "May Chen", "Q9201": "Ivy Lane", "Q9202": "Rex Stone",
    # films and books
    "Q8001": "Silver Harbor", "Q8002": "Night Orchard",
    "Q8003": "Paper Sky", "Q8004": "Glass River", "Q8005": "Last Lantern",
    "Q8101": "Iron Garden", "Q8102": "Quiet Atlas", "Q8103": "Wren Hollow",
    # places
    "Q7001": "Valdora", "Q7002": "Norvia", "Q7003": "Esteria",
    "Q7101": "Port Arlen", "Q7102": "Brimfield", "Q7103": "Caldera",
    "Q7104": "Mosshaven",
    "Q7201": "Arlen University", "Q7202": "Brimfield College",
    # awards
    "Q7301": "Golden Reel", "Q7302": "Opal Prize",
    # classes
    "Q5": "human", "Q11424": "film", "Q571": "book", "Q6256": "country",
    "Q515": "city", "Q3918": "university", "Q618779": "award",
}
SUITE_PROPERTY_LABELS = {
    "P57": "director", "P161": "cast member", "P495": "country of origin",
    "P50": "author", "P17": "country", "P27": "country of citizenship",
    "P69": "educated at", "P166": "award received", "P36": "capital",
    "P31": "instance of",
}
SUITE_TYPES = {
    "Q5": ["Q9001", "Q9002", "Q9003", "Q9101", "Q9102", "Q9103", "Q9104",
           "Q9201", "Q9202"],
    "Q11424": ["Q8001", "Q8002", "Q8003", "Q8004", "Q8005"],
    "Q571": ["Q8101", "Q8102", "Q8103"],
    "Q6256": ["Q7001", "Q7002", "Q7003"],
    "Q515": ["Q7101", "Q7102", "Q7103", "Q7104"],
    "Q3918": ["Q7201", "Q7202"],
    "Q618779": ["Q7301", "Q7302"],
}
SUITE_FACTS = [
    ("Q8001", "P57", "Q9001"), ("Q8002", "P57", "Q9001"),
    ("Q8003", "P57", "Q9002"), ("Q8004", "P57", "Q9003"),
    ("Q8005", "P57", "Q9001"),
    ("Q8001", "P161", "Q9101"), ("Q8001", "P161", "Q9102"),
    ("Q8002", "P161", "Q9101"),
    ("Q8003", "P161", "Q9102"), ("Q8003", "P161", "Q9103"),
    ("Q8004", "P161", "Q9104"), ("Q8004", "P161", "Q9101"),
    ("Q8005", "P161", "Q9103"),
    ("Q8001", "P495", "Q7001"), ("Q8002", "P495", "Q7001"),
    ("Q8003", "P495", "Q7002"), ("Q8004", "P495", "Q7003"),
    ("Q8005", "P495", "Q7002"),
    ("Q8101", "P50", "Q9201"), ("Q8102", "P50", "Q9201"),
    ("Q8103", "P50", "Q9202"),
    ("Q7101", "P17", "Q7001"), ("Q7102", "P17", "Q7002"),
    ("Q7103", "P17", "Q7003"), ("Q7104", "P17", "Q7001"),
    ("Q7201", "P17", "Q7001"), ("Q7202", "P17", "Q7002"),
    ("Q9001", "P27", "Q7001"), ("Q9002", "P27", "Q7002"),
    ("Q9003", "P27", "Q7001"), ("Q9101", "P27", "Q7001"),
    ("Q9102", "P27", "Q7002"), ("Q9103", "P27", "Q7003"),
    ("Q9104", "P27", "Q7001"), ("Q9201", "P27", "Q7002"),
    ("Q9202", "P27", "Q7001"),
    ("Q9001", "P166", "Q7301"), ("Q9101", "P166", "Q7301"),
    ("Q9201", "P166", "Q7302"), ("Q9003", "P166", "Q7302"),
    ("Q9001", "P69", "Q7201"), ("Q9002", "P69", "Q7201"),
    ("Q9101", "P69", "Q7202"), ("Q9201", "P69", "Q7202"),
    ("Q9103", "P69", "Q7201"),
    ("Q7001", "P36", "Q7101"), ("Q7002", "P36", "Q7102"),
    ("Q7003", "P36", "Q7103"),
]
# Awards are typed only through the class map, never in the adjacency.
SUITE_SYNTH_ONLY = {"Q7301", "Q7302"}

SUITE_CONVERSATIONS = [
    ("suite-01", [
        dict(u="Which films did Mira Holt direct?",
             st="Single Entity", e=["Q9001"], r=["P57"], ty=["Q11424"],
             h=[("Q11424", "P57", "Q9001")],
             expect={"Q8001", "Q8002", "Q8005"}),
        dict(u="Which country is that director a citizen of?",
             st="Single Entity (Coreference)", e=["Q9001"], r=["P27"],
             ty=["Q6256"], h=[("Q9001", "P27", "Q6256")],
             expect={"Q7001"}),
    ]),
    ("suite-02", [
        dict(u="Which city is the capital of Valdora?",
             st="Single Entity", e=["Q7001"], r=["P36"], ty=["Q515"],
             h=[("Q7001", "P36", "Q515")], expect={"Q7101"}),
        dict(u="Which country is that city located in?",
             st="Single Entity (Coreference)", e=["Q7101"], r=["P17"],
             ty=["Q6256"], h=[("Q7101", "P17", "Q6256")],
             expect={"Q7001"}),
    ]),
    ("suite-03", [
        dict(u="Which films star Sam Reyes or May Chen?",
             st="Mult. Entity", e=["Q9101", "Q9104"], r=["P161"],
             ty=["Q11424"], h=[("Q11424", "P161", "Q9101")],
             expect={"Q8001", "Q8002", "Q8004"}),
    ]),
    ("suite-04", [
        dict(u="Which films star Ana Brook?",
             st="Single Entity", e=["Q9102"], r=["P161"], ty=["Q11424"],
             h=[("Q11424", "P161", "Q9102")], expect={"Q8001", "Q8003"}),
        dict(u="Which cities are located in Norvia?",
             st="Single Entity", e=["Q7002"], r=["P17"], ty=["Q515"],
             h=[("Q515", "P17", "Q7002")], expect={"Q7102"}),
        dict(u="Which films star that actress or May Chen?",
             st="Mult. Entity (Coreference)", e=["Q9102", "Q9104"],
             r=["P161"], ty=["Q11424"], h=[("Q11424", "P161", "Q9102")],
             expect={"Q8001", "Q8003", "Q8004"}),
    ]),
    ("suite-05", [
        dict(u="Which films were made in Valdora?",
             st="Single Entity", e=["Q7001"], r=["P495"], ty=["Q11424"],
             h=[("Q11424", "P495", "Q7001")], expect={"Q8001", "Q8002"}),
        dict(u="And which were made in Norvia?",
             st="only subject is changed, parent and predicate remains same",
             e=["Q7002"], r=["P495"], ty=["Q11424"],
             h=[("Q11424", "P495", "Q7002")], expect={"Q8003", "Q8005"}),
    ]),
    ("suite-06", [
        dict(u="Which humans were educated at Arlen University?",
             st="Single Entity", e=["Q7201"], r=["P69"], ty=["Q5"],
             h=[("Q5", "P69", "Q7201")],
             expect={"Q9001", "Q9002", "Q9103"}),
        dict(u="And at Brimfield College?",
             st="object parent is changed, subject and predicate remain same",
             e=["Q7202"], r=["P69"], ty=["Q5"],
             h=[("Q5", "P69", "Q7202")], expect={"Q9101", "Q9201"}),
    ]),
    ("suite-07", [
        dict(u="Is Port Arlen located in Valdora?",
             st="2 entities, both direct", e=["Q7101", "Q7001"],
             r=["P17"], ty=["Q515"], h=[("Q7101", "P17", "Q7001")],
             expect=True),
        dict(u="Is Caldera located in Norvia?",
             st="2 entities, both direct", e=["Q7103", "Q7002"],
             r=["P17"], ty=["Q515"], h=[("Q7103", "P17", "Q7002")],
             expect=False),
    ]),
    ("suite-08", [
        dict(u="Which city is the capital of Norvia?",
             st="Single Entity", e=["Q7002"], r=["P36"], ty=["Q515"],
             h=[("Q7002", "P36", "Q515")], expect={"Q7102"}),
        dict(u="Is that city located in Norvia?",
             st="2 entities, subject is indirect", e=["Q7102", "Q7002"],
             r=["P17"], ty=["Q515"], h=[("Q7102", "P17", "Q7002")],
             expect=True),
    ]),
    ("suite-09", [
        dict(u="Were Mira Holt and Jon Abel educated at Arlen University?",
             st="3 entities, all direct, 2 are query entities",
             e=["Q7201", "Q9001", "Q9002"], r=["P69"], ty=["Q3918"],
             h=[("Q9001", "P69", "Q7201")], expect=True),
    ]),
    ("suite-10", [
        dict(u="Which humans were educated at Arlen University?",
             st="Single Entity", e=["Q7201"], r=["P69"], ty=["Q5"],
             h=[("Q5", "P69", "Q7201")],
             expect={"Q9001", "Q9002", "Q9103"}),
        dict(u="Were Mira Holt and Tom Walsh educated there?",
             st="3 entities, 2 direct, 2(direct) are query entities, "
                "subject is indirect",
             e=["Q7201", "Q9001", "Q9103"], r=["P69"], ty=["Q3918"],
             h=[("Q9001", "P69", "Q7201")], expect=True),
    ]),
    ("suite-11", [
        dict(u="Which films were made in Valdora or Esteria?",
             st="Union | Single Relation", e=["Q7001", "Q7003"],
             r=["P495"], ty=["Q11424"], h=[("Q11424", "P495", "Q7001")],
             expect={"Q8001", "Q8002", "Q8004"}),
    ]),
    ("suite-12", [
        dict(u="Which humans are citizens of Norvia or were educated at "
               "Brimfield College?",
             st="Union | Multiple Relation", e=["Q7002", "Q7202"],
             r=["P27", "P69"], ty=["Q5"],
             h=[("Q5", "P27", "Q7002"), ("Q5", "P69", "Q7202")],
             expect={"Q9002", "Q9101", "Q9102", "Q9201"}),
    ]),
    ("suite-13", [
        dict(u="Which humans star in both Silver Harbor and Paper Sky?",
             st="Intersection | Single Relation", e=["Q8001", "Q8003"],
             r=["P161"], ty=["Q5"], h=[("Q8001", "P161", "Q5")],
             expect={"Q9102"}),
    ]),
    ("suite-14", [
        dict(u="Which humans are citizens of Valdora and were educated at "
               "Arlen University?",
             st="Intersection | Multiple Relation", e=["Q7001", "Q7201"],
             r=["P27", "P69"], ty=["Q5"],
             h=[("Q5", "P27", "Q7001"), ("Q5", "P69", "Q7201")],
             expect={"Q9001"}),
    ]),
    ("suite-15", [
        dict(u="Which humans star in Silver Harbor but not in Night "
               "Orchard?",
             st="Difference | Single Relation", e=["Q8001", "Q8002"],
             r=["P161"], ty=["Q5"], h=[("Q8001", "P161", "Q5")],
             expect={"Q9102"}),
    ]),
    ("suite-16", [
        dict(u="How many humans star in Silver Harbor?",
             st="Count | Single entity type", e=["Q8001"], r=["P161"],
             ty=["Q5"], h=[("Q8001", "P161", "Q5")], expect=2),
        dict(u="And in Glass River?",
             st="Incomplete count-based ques", e=["Q8004"], r=["P161"],
             ty=["Q5"], h=[("Q8004", "P161", "Q5")], expect=2),
    ]),
    ("suite-17", [
        dict(u="Which country is Brimfield located in?",
             st="Single Entity", e=["Q7102"], r=["P17"], ty=["Q6256"],
             h=[("Q7102", "P17", "Q6256")], expect={"Q7002"}),
        dict(u="How many cities are located in that country?",
             st="Count | Single entity type (Coreference)", e=["Q7002"],
             r=["P17"], ty=["Q515"], h=[("Q515", "P17", "Q7002")],
             expect=1),
    ]),
    ("suite-18", [
        dict(u="How many humans star in Silver Harbor or Glass River?",
             st="Count | Mult. entity type", e=["Q8001", "Q8004"],
             r=["P161"], ty=["Q5"], h=[("Q8001", "P161", "Q5")],
             expect=3),
    ]),
    ("suite-19", [
        dict(u="How many cities or universities are located in Valdora?",
             st="Count | Logical operators", e=["Q7001"], r=["P17"],
             ty=["Q515", "Q3918"], h=[("Q515", "P17", "Q7001")],
             expect=3),
    ]),
    ("suite-20", [
        dict(u="Which country is Port Arlen located in?",
             st="Single Entity", e=["Q7101"], r=["P17"], ty=["Q6256"],
             h=[("Q7101", "P17", "Q6256")], expect={"Q7001"}),
        dict(u="How many cities or universities are located in that "
               "country?",
             st="Count | Logical operators (Coreference)", e=["Q7001"],
             r=["P17"], ty=["Q515", "Q3918"],
             h=[("Q515", "P17", "Q7001")], expect=3),
    ]),
    ("suite-21", [
        dict(u="Which humans star in at least 2 films?",
             st="Atleast/ Atmost/ Approx. the same/Equal | Single entity "
                "type",
             r=["P161"], ty=["Q5"], h=[("Q11424", "P161", "Q5")],
             v=[2], cmp="atleast", expect={"Q9101", "Q9102", "Q9103"}),
    ]),
    ("suite-22", [
        dict(u="Which humans star in exactly 2 films?",
             st="Atleast/ Atmost/ Approx. the same/Equal | Mult. entity "
                "type",
             r=["P161"], ty=["Q5", "Q11424"], h=[("Q11424", "P161", "Q5")],
             v=[2], cmp="equal", expect={"Q9102", "Q9103"}),
    ]),
    ("suite-23", [
        dict(u="Which human stars in the most films?",
             st="Min/Max | Single entity type", r=["P161"], ty=["Q5"],
             h=[("Q11424", "P161", "Q5")], cmp="argmax",
             expect={"Q9101"}),
        dict(u="Which human stars in the fewest films?",
             st="Min/Max | Single entity type", r=["P161"], ty=["Q5"],
             h=[("Q11424", "P161", "Q5")], cmp="argmin",
             expect={"Q9104"}),
    ]),
    ("suite-24", [
        dict(u="How many humans star in at least 2 films?",
             st="Count over Atleast/ Atmost/ Approx. the same / Equal | "
                "Single entity type",
             r=["P161"], ty=["Q5"], h=[("Q11424", "P161", "Q5")],
             v=[2], cmp="atleast", expect=3),
    ]),
    ("suite-25", [
        dict(u="Which humans star in more films than Ana Brook?",
             st="More/Less | Single entity type", e=["Q9102"], r=["P161"],
             ty=["Q5"], h=[("Q11424", "P161", "Q9102")], cmp="greater",
             expect={"Q9101"}),
    ]),
    ("suite-26", [
        dict(u="Which films star Tom Walsh?",
             st="Single Entity", e=["Q9103"], r=["P161"], ty=["Q11424"],
             h=[("Q11424", "P161", "Q9103")], expect={"Q8003", "Q8005"}),
        dict(u="Which humans star in fewer films than that actor?",
             st="More/Less | Single entity type (Coreference)",
             e=["Q9103"], r=["P161"], ty=["Q5"],
             h=[("Q11424", "P161", "Q9103")], cmp="less",
             expect={"Q9104"}),
    ]),
    ("suite-27", [
        dict(u="How many humans star in more films than May Chen?",
             st="Count over More/Less | Single entity type", e=["Q9104"],
             r=["P161"], ty=["Q5"], h=[("Q11424", "P161", "Q9104")],
             cmp="greater", expect=3),
    ]),
    ("suite-28", [
        dict(u="Which humans star in more films than May Chen?",
             st="More/Less | Mult. entity type", e=["Q9104"], r=["P161"],
             ty=["Q5", "Q11424"], h=[("Q11424", "P161", "Q9104")],
             cmp="greater", expect={"Q9101", "Q9102", "Q9103"}),
    ]),
    ("suite-29", [
        dict(u="Who stars in it?", clarify=True,
             reply="Did you mean the film Silver Harbor?"),
        dict(u="Yes, Silver Harbor. Which humans star in it?",
             st="Single Entity", e=["Q8001"], r=["P161"], ty=["Q5"],
             h=[("Q8001", "P161", "Q5")], expect={"Q9101", "Q9102"}),
    ]),
    ("suite-30", [
        dict(u="Which films star Ana Brook?",
             st="Single Entity", e=["Q9102"], r=["P161"], ty=["Q11424"],
             h=[("Q11424", "P161", "Q9102")], expect={"Q8001", "Q8003"}),
        dict(u="Does Silver Harbor star Sam Reyes and that actress?",
             st="one entity, multiple entities (as object) corefered",
             e=["Q8001", "Q9101", "Q9102"], r=["P161"], ty=["Q11424"],
             h=[("Q8001", "P161", "Q9101")], expect=True),
    ]),
]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=1,
                               sort_keys=True) + "\n", encoding="utf-8")


def write_dump(directory: Path, adjacency: dict, reverse: dict,
               entity_labels: dict, property_labels: dict,
               child_par: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    subjects = sorted(adjacency)
    half = subjects[: len(subjects) // 2]
    _write_json(directory / "wikidata_short_1.json",
                {s: adjacency[s] for s in half})
    _write_json(directory / "wikidata_2.json",
                {s: adjacency[s] for s in subjects[len(half):]})
    _write_json(directory / "comp_wikidata_rev.json", reverse)
    _write_json(directory / "items_wikidata_n.json", entity_labels)
    _write_json(directory / "filtered_property_wikidata4.json",
                property_labels)
    _write_json(directory / "child_par.json", child_par)


def suite_triples() -> list[tuple[str, str, str]]:
    triples = list(SUITE_FACTS)
    for class_id, members in SUITE_TYPES.items():
        triples.extend((m, "P31", class_id) for m in members)
    return triples


def suite_dump_parts():
    """Adjacency split so every ingestion path gets exercised: cast
    edges only appear reversed, award typings only in the class map."""
    adjacency: dict[str, dict[str, list[str]]] = {}
    reverse: dict[str, dict[str, list[str]]] = {}
    for s, p, o in suite_triples():
        if p == "P161":
            reverse.setdefault(o, {}).setdefault(p, []).append(s)
            continue
        if p == "P31" and s in SUITE_SYNTH_ONLY:
            continue
        adjacency.setdefault(s, {}).setdefault(p, []).append(o)
    child_par = {m: c for c, ms in SUITE_TYPES.items() for m in ms}
    return adjacency, reverse, child_par


def build_turns(kg: KnowledgeGraph, specs: list[dict]) -> list[Turn]:
    turns: list[Turn] = []
    for spec in specs:
        if spec.get("clarify"):
            ann = QuestionAnnotation(intent_type=tp.CLARIFICATION,
                                     sub_type=tp.CLARIFICATION)
            turns.append(Turn("user", spec["u"], ann))
            turns.append(Turn("system", spec["reply"]))
            continue
        ann = QuestionAnnotation(
            intent_type=tp.question_type_for(spec["st"]),
            sub_type=spec["st"],
            entities=spec.get("e", []),
            relations=spec.get("r", []),
            types=spec.get("ty", []),
            triple_hints=spec.get("h", []),
            values=spec.get("v", []),
            comparator=spec.get("cmp"),
        )
        query = tp.annotation_query(ann)
        answer = sq.evaluate(kg, query)
        oracle = sq.brute_force_evaluate(kg, query)
        if answer != oracle:
            raise SystemExit(f"route mismatch for {spec['u']!r}: "
                             f"{answer} vs {oracle}")
        expect = spec["expect"]
        if isinstance(expect, set):
            expected = sq.EntitySetAnswer(frozenset(expect))
        elif isinstance(expect, bool):
            expected = sq.BooleanAnswer(expect)
        else:
            expected = sq.CountAnswer(expect)
        if answer != expected:
            raise SystemExit(f"unexpected answer for {spec['u']!r}: "
                             f"got {answer}, wanted {expected}")
        ann.gold_answer = answer
        turns.append(Turn("user", spec["u"], ann, query))
        turns.append(Turn("system", sq.verbalize_answer(kg, answer)))
    return turns


def build_corpus(kg: KnowledgeGraph, plan) -> list[Conversation]:
    conversations = []
    for conv_id, specs in plan:
        conv = Conversation(conv_id, build_turns(kg, specs)).check()
        fixed, report = tp.validate_conversation(kg, conv)
        bad = [row for row in report if row.status != tp.OK]
        if fixed is None or bad:
            raise SystemExit(f"{conv_id} failed validation: {bad}")
        conversations.append(conv)
    return conversations


def check_dump(directory: Path, triples, labels) -> None:
    loaded, report = load_source_dump(directory)
    expected = KnowledgeGraph.from_triples(triples, labels=labels)
    if set(loaded.match()) != set(expected.match()):
        raise SystemExit(f"{directory}: dump does not round-trip")
    if report.errors:
        raise SystemExit(f"{directory}: ingest errors {report.errors}")


def check_oracle_replay(kg: KnowledgeGraph, conversations) -> None:
    config = ParserConfig(index=build_index(kg), oracle_symbols=True)
    report = ev.evaluate_dataset(kg, conversations, config, oracle=True)
    if report.overall.em != 1.0 or report.overall.value != 1.0:
        raise SystemExit(f"oracle replay imperfect: {report.to_text()}")


def main() -> None:
    mini_labels = {**MINI_ENTITY_LABELS, **MINI_PROPERTY_LABELS}
    write_dump(DATA / "mini_kg", MINI_ADJACENCY, MINI_REVERSE,
               MINI_ENTITY_LABELS, MINI_PROPERTY_LABELS, MINI_CHILD_PAR)
    mini_kg, _ = load_source_dump(DATA / "mini_kg")
    mini_conversations = build_corpus(mini_kg, MINI_CONVERSATIONS)
    save_conversations(mini_conversations, DATA / "mini_dataset.jsonl")
    check_oracle_replay(mini_kg, mini_conversations)

    adjacency, reverse, child_par = suite_dump_parts()
    suite_labels = {**SUITE_ENTITY_LABELS, **SUITE_PROPERTY_LABELS}
    write_dump(DATA / "suite_kg", adjacency, reverse, SUITE_ENTITY_LABELS,
               SUITE_PROPERTY_LABELS, child_par)
    check_dump(DATA / "suite_kg", suite_triples(), suite_labels)
    suite_kg, _ = load_source_dump(DATA / "suite_kg")
    suite_conversations = build_corpus(suite_kg, SUITE_CONVERSATIONS)
    save_conversations(suite_conversations, DATA / "suite_dataset.jsonl")
    check_oracle_replay(suite_kg, suite_conversations)

    stats = tp.dataset_stats(suite_conversations)
    print(f"mini: {len(mini_kg)} triples, "
          f"{len(mini_conversations)} conversation(s)")
    print(f"suite: {len(suite_kg)} triples, "
          f"{len(suite_conversations)} conversations, "
          f"{stats.user_turns} questions")
    sub_types = {t.annotation.sub_type
                 for c in suite_conversations
                 for _, t in c.user_turns()
                 if t.annotation.intent_type != tp.CLARIFICATION}
    print(f"suite sub-types covered: {len(sub_types)}")


if __name__ == "__main__":
    sys.exit(main())
