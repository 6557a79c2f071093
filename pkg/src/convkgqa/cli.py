"""Command line tying the pipelines together.

`--kg` accepts either a source dump directory (ingested on the fly)
or a Turtle file written by `build-kg`; labels then come from the
sibling `<name>.labels.json` when present.  Every file this tool
writes goes through a temp-file rename, so interrupted runs never
leave truncated artifacts.  Exit codes: 0 success, 1 content failures
(broken turns, unparseable query), 2 usage or IO errors.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import evaluation as ev
from . import templates as tp
from .dataset import (DatasetError, atomic_write, load_conversations,
                      save_conversations)
from .kg import KGError, KnowledgeGraph, export_turtle, load_source_dump, \
    load_turtle
from .linking import build_index
from .parser import (OracleSelector, ParserConfig, RuleBasedSelector,
                     parse_turn)
from .sparql import SparqlError, evaluate, parse_sparql, serialize, \
    verbalize_answer
from .templates import ERROR, RepairPolicy, validate_conversation

POLICIES = {
    "repair": RepairPolicy(allow_redefine=True, allow_truncate=True),
    "redefine-only": RepairPolicy(allow_redefine=True, allow_truncate=False),
    "truncate-only": RepairPolicy(allow_redefine=False, allow_truncate=True),
    "report-only": RepairPolicy(allow_redefine=False, allow_truncate=False),
}


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_kg(path: str) -> KnowledgeGraph:
    p = Path(path)
    try:
        if p.is_dir():
            kg, report = load_source_dump(p)
            if report.malformed_records:
                click.echo(f"note: {report.malformed_records} malformed "
                           f"source records skipped", err=True)
            return kg
        if p.is_file():
            labels = None
            side = p.with_suffix(".labels.json")
            if side.exists():
                labels = json.loads(side.read_text(encoding="utf-8"))
            return load_turtle(p, labels)
    except (KGError, json.JSONDecodeError, OSError) as exc:
        _fail(f"cannot load graph from {path}: {exc}", 2)
    _fail(f"graph not found: {path}", 2)
    raise AssertionError("unreachable")


def _load_dataset(path: str):
    try:
        return load_conversations(path)
    except FileNotFoundError:
        _fail(f"dataset not found: {path}", 2)
    except DatasetError as exc:
        _fail(str(exc), 2)


@click.group(context_settings={"show_default": True})
def cli():
    """Conversational question answering over a Wikidata-style graph."""


@cli.command("build-kg")
@click.argument("source_dir", type=click.Path())
@click.option("--out", required=True, type=click.Path(),
              help="Turtle file to write (labels go to a sibling "
                   "<name>.labels.json).")
def cmd_build_kg(source_dir: str, out: str):
    """Ingest a source dump directory into a Turtle graph."""
    if not Path(source_dir).is_dir():
        _fail(f"source dump directory not found: {source_dir}", 2)
    try:
        kg, report = load_source_dump(source_dir)
    except (KGError, json.JSONDecodeError) as exc:
        _fail(f"ingest failed: {exc}", 2)
    out_path = Path(out)
    with atomic_write(out_path) as f:
        export_turtle(kg, f)
    with atomic_write(out_path.with_suffix(".labels.json")) as f:
        json.dump({i: kg.label(i) for i in sorted(kg.labels)}, f,
                  ensure_ascii=False, indent=0, sort_keys=True)
    click.echo(f"triples {len(kg)}  labels {report.labels}  "
               f"entities {len(kg.entities())}  "
               f"synthesized-types {report.synthesized_types}  "
               f"malformed {report.malformed_records}")
    for line in report.errors[:10]:
        click.echo(f"  {line}", err=True)


@cli.command("validate")
@click.option("--kg", "kg_path", required=True, type=click.Path(),
              help="Graph: dump directory or Turtle file.")
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--out", type=click.Path(),
              help="Where to write the repaired dataset (JSONL).")
@click.option("--report", "report_path", type=click.Path(),
              help="Where to write the per-turn validation report (JSON).")
@click.option("--policy", type=click.Choice(sorted(POLICIES)),
              default="repair")
def cmd_validate(kg_path, dataset_path, out, report_path, policy):
    """Re-execute stored conversations and repair stale answers."""
    kg = _load_kg(kg_path)
    conversations = _load_dataset(dataset_path)
    repaired = []
    rows = []
    errored = 0
    for conversation in conversations:
        fixed, report = validate_conversation(kg, conversation,
                                              POLICIES[policy])
        if fixed is not None:
            repaired.append(fixed)
        for row in report:
            rows.append({"conversation": conversation.conv_id,
                         "turn": row.turn_index, "status": row.status,
                         "detail": row.detail})
            errored += row.status == ERROR
    if out:
        save_conversations(repaired, out)
    if report_path:
        with atomic_write(report_path) as f:
            json.dump(rows, f, ensure_ascii=False, indent=2)
    by_status = {}
    for row in rows:
        by_status[row["status"]] = by_status.get(row["status"], 0) + 1
    click.echo(f"conversations {len(conversations)} -> kept {len(repaired)}"
               f"  turns checked {len(rows)}  " +
               "  ".join(f"{k} {v}" for k, v in sorted(by_status.items())))
    sys.exit(1 if errored else 0)


@cli.command("split")
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--split-spec", "spec_name", required=True,
              type=click.Choice(sorted(ev.SPLIT_SPECS)))
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Directory for train/valid/test JSONL plus manifest.")
@click.option("--train-ratio", default=0.9, type=float,
              help="Share of non-held-out conversations used for train.")
@click.option("--seed", default=0, type=int)
def cmd_split(dataset_path, spec_name, out_dir, train_ratio, seed):
    """Hold out conversations with the named sub-types as a test set."""
    if not 0 < train_ratio < 1:
        _fail(f"train ratio must be in (0, 1), got {train_ratio}", 2)
    conversations = _load_dataset(dataset_path)
    try:
        splits = ev.make_splits(conversations, ev.split_spec(spec_name),
                                ratios=(train_ratio, 1 - train_ratio),
                                seed=seed)
    except ev.EvalError as exc:
        _fail(str(exc), 1)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for part, convs in (("train", splits.train), ("valid", splits.valid),
                        ("test", splits.test)):
        save_conversations(convs, out / f"{part}.jsonl")
    with atomic_write(out / "manifest.json") as f:
        json.dump({"spec": spec_name, "seed": seed,
                   "parts": splits.manifest()}, f, indent=2)
    click.echo(f"train {len(splits.train)}  valid {len(splits.valid)}  "
               f"test {len(splits.test)}")


def _parser_config(kg, selector, window, beam, seed, conversations):
    if selector == "oracle":
        chosen = OracleSelector(conversations or [])
    else:
        chosen = RuleBasedSelector()
    return ParserConfig(selector=chosen, index=build_index(kg),
                        window_size=window, beam=beam, seed=seed,
                        oracle_symbols=selector == "oracle")


@cli.command("eval")
@click.option("--kg", "kg_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_path", required=True, type=click.Path())
@click.option("--out", type=click.Path(),
              help="Where to write the JSON report.")
@click.option("--selector", type=click.Choice(["rule", "oracle"]),
              default="rule",
              help="Sketch selection: surface rules, or gold annotations "
                   "with gold symbols.")
@click.option("--window", default=1, type=int)
@click.option("--beam", default=8, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--strata", type=click.Choice(["type", "phenomenon", "both"]),
              default="both", help="Which breakdown rows to print.")
def cmd_eval(kg_path, dataset_path, out, selector, window, beam, seed,
             strata):
    """Parse every turn, execute, and report metrics."""
    kg = _load_kg(kg_path)
    conversations = _load_dataset(dataset_path)
    config = _parser_config(kg, selector, window, beam, seed, conversations)
    report = ev.evaluate_dataset(kg, conversations, config,
                                 oracle=selector == "oracle")
    if strata == "type":
        report_view = replace(report, by_phenomenon=[])
    elif strata == "phenomenon":
        report_view = replace(report, by_type=[])
    else:
        report_view = report
    click.echo(report_view.to_text())
    if report.tag_counts:
        click.echo("errors: " + "  ".join(
            f"{k} {v}" for k, v in sorted(report.tag_counts.items())))
    if out:
        with atomic_write(out) as f:
            json.dump(report.to_json(), f, indent=2)


@cli.command("query")
@click.option("--kg", "kg_path", required=True, type=click.Path())
@click.argument("sparql_text")
def cmd_query(kg_path, sparql_text):
    """Execute one query and print the verbalized answer."""
    kg = _load_kg(kg_path)
    try:
        query = parse_sparql(sparql_text)
        answer = evaluate(kg, query)
    except SparqlError as exc:
        _fail(str(exc), 1)
    click.echo(verbalize_answer(kg, answer))


@cli.command("chat")
@click.option("--kg", "kg_path", required=True, type=click.Path())
@click.option("--window", default=1, type=int)
@click.option("--beam", default=8, type=int)
@click.option("--seed", default=0, type=int)
def cmd_chat(kg_path, window, beam, seed):
    """Interactive conversation; :reset, :trace, :quit."""
    from .dataset import Conversation, QuestionAnnotation, Turn

    kg = _load_kg(kg_path)
    config = ParserConfig(selector=RuleBasedSelector(), index=build_index(kg),
                          window_size=window, beam=beam, seed=seed)
    turns: list[Turn] = []
    last_trace: list[str] = []
    click.echo("ready (:reset, :trace, :quit)")
    while True:
        try:
            line = input("you> ").strip()
        except EOFError:
            break
        if not line:
            continue
        if line == ":quit":
            break
        if line == ":reset":
            turns = []
            last_trace = []
            click.echo("bot> (conversation cleared)")
            continue
        if line == ":trace":
            for entry in last_trace or ["(no trace yet)"]:
                click.echo(f"  {entry}")
            continue
        turns.append(Turn("user", line))
        conversation = Conversation("chat", turns + [Turn("system", "")])
        try:
            result = parse_turn(kg, conversation, len(turns) - 1, config)
        except Exception as exc:
            result = None
            last_trace = [f"parser raised: {exc!r}"]
        if result is not None:
            last_trace = result.trace
        if result is None or not result.ok:
            reply = "Sorry, I could not parse that (:trace for details)."
        else:
            try:
                answer = evaluate(kg, result.query)
            except SparqlError as exc:
                reply = f"Sorry, that query failed: {exc}"
            else:
                reply = verbalize_answer(kg, answer)
                used = result.used_symbols
                # Later turns resolve anaphors against this record, the
                # same way annotated conversations carry their history.
                turns[-1] = Turn("user", line, QuestionAnnotation(
                    intent_type=tp.question_type_for(result.sub_type),
                    sub_type=result.sub_type,
                    entities=sorted(used.entities),
                    relations=sorted(used.relations),
                    types=sorted(used.types),
                    gold_answer=answer))
            click.echo(f"  [{serialize(result.query)}]")
        click.echo(f"bot> {reply}")
        turns.append(Turn("system", reply))


def main():
    cli(auto_envvar_prefix="CONVKGQA")


if __name__ == "__main__":
    main()
