"""In-memory knowledge graph with sorted permutation indexes.

The graph stores wikidata-style triples (Q-entities connected by P-properties)
together with display labels.  Three sorted permutations (SPO, POS, OSP) back
prefix-range lookups, so every triple pattern with at least one bound position
is answered without a full scan.
"""

from __future__ import annotations

import io
import json
import re
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

ENTITY_ID_RE = re.compile(r"Q[0-9]+\Z")
PROPERTY_ID_RE = re.compile(r"P[0-9]+\Z")

# Relation used for entity typing; type assertions are ordinary triples.
INSTANCE_OF = "P31"

WD_PREFIX = "http://www.wikidata.org/entity/"
WDT_PREFIX = "http://www.wikidata.org/prop/direct/"

_PUNCT_RE = re.compile(r"[^0-9a-z]+")


def is_entity_id(s: str) -> bool:
    return bool(ENTITY_ID_RE.match(s))


def is_property_id(s: str) -> bool:
    return bool(PROPERTY_ID_RE.match(s))


def normalize_label(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace.

    The same normalization is applied when indexing labels and when looking
    them up, so the two sides always agree on the key space.
    """
    return _PUNCT_RE.sub(" ", text.lower()).strip()


class Triple(NamedTuple):
    subject: str
    predicate: str
    object: str


class KGError(Exception):
    pass


@dataclass
class IngestReport:
    """Counters and record-level diagnostics from a source-dump ingest."""

    triples: int = 0
    duplicates: int = 0
    literal_objects_dropped: int = 0
    malformed_records: int = 0
    labels: int = 0
    synthesized_types: int = 0
    errors: list[str] = field(default_factory=list)
    _max_errors: int = 1000

    def error(self, message: str) -> None:
        self.malformed_records += 1
        if len(self.errors) < self._max_errors:
            self.errors.append(message)


def _prefix_range(index: list[tuple], prefix: tuple) -> Iterator[tuple]:
    """Yield entries of a sorted tuple list that start with `prefix`."""
    lo = bisect_left(index, prefix)
    n = len(prefix)
    for i in range(lo, len(index)):
        entry = index[i]
        if entry[:n] != prefix:
            break
        yield entry


class KnowledgeGraph:
    """Immutable triple store with SPO/POS/OSP indexes and label maps.

    Construct through :meth:`from_triples`, :func:`ingest_records`,
    :func:`load_source_dump` or :func:`load_turtle`; the indexes, the
    entity-type map and the normalized-label index are derived once here
    and never mutated afterwards.
    """

    __slots__ = ("index_spo", "index_pos", "index_osp", "labels",
                 "_types", "_label_index")

    def __init__(self, triples: Iterable[Triple], labels: dict[str, str]):
        spo = sorted({Triple(*t) for t in triples})
        self.index_spo: list[Triple] = spo
        self.index_pos: list[tuple[str, str, str]] = sorted(
            (p, o, s) for s, p, o in spo)
        self.index_osp: list[tuple[str, str, str]] = sorted(
            (o, s, p) for s, p, o in spo)
        self.labels: dict[str, str] = dict(labels)

        # Types are exactly the explicit instance-of edges, nothing else.
        types: dict[str, set[str]] = {}
        for s, p, o in spo:
            if p == INSTANCE_OF:
                types.setdefault(s, set()).add(o)
        self._types = {e: frozenset(ts) for e, ts in types.items()}

        label_index: dict[str, set[str]] = {}
        for ident, label in self.labels.items():
            if is_entity_id(ident):
                label_index.setdefault(normalize_label(label), set()).add(ident)
        self._label_index = label_index

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, str]],
                     labels: dict[str, str] | None = None) -> "KnowledgeGraph":
        return cls((Triple(*t) for t in triples), labels or {})

    def __len__(self) -> int:
        return len(self.index_spo)

    def __contains__(self, triple: tuple[str, str, str]) -> bool:
        i = bisect_left(self.index_spo, tuple(triple))
        return i < len(self.index_spo) and tuple(self.index_spo[i]) == tuple(triple)

    @property
    def triples(self) -> list[Triple]:
        return self.index_spo

    def entities(self) -> set[str]:
        """All ids occurring in subject or object position."""
        out: set[str] = set()
        for s, _, o in self.index_spo:
            out.add(s)
            out.add(o)
        return out

    def relations(self) -> set[str]:
        return {p for _, p, _ in self.index_spo}

    def label(self, ident: str) -> str:
        """Display label; ids without one fall back to the raw id."""
        return self.labels.get(ident, ident)

    def match(self, subject: str | None = None, predicate: str | None = None,
              object: str | None = None) -> Iterator[Triple]:
        """All triples matching the given bound positions.

        Picks whichever permutation index turns the bound positions into a
        contiguous prefix: (s), (s,p), (s,p,o) on SPO; (p), (p,o) on POS;
        (o), (o,s) on OSP.  A fully unbound pattern scans everything.
        """
        s, p, o = subject, predicate, object
        if s is not None:
            if p is not None:
                prefix = (s, p, o) if o is not None else (s, p)
                yield from _prefix_range(self.index_spo, prefix)
            elif o is not None:
                for obj, subj, pred in _prefix_range(self.index_osp, (o, s)):
                    yield Triple(subj, pred, obj)
            else:
                yield from _prefix_range(self.index_spo, (s,))
        elif p is not None:
            prefix = (p, o) if o is not None else (p,)
            for pred, obj, subj in _prefix_range(self.index_pos, prefix):
                yield Triple(subj, pred, obj)
        elif o is not None:
            for obj, subj, pred in _prefix_range(self.index_osp, (o,)):
                yield Triple(subj, pred, obj)
        else:
            yield from self.index_spo

    def neighborhood(self, entity: str) -> set[Triple]:
        """Every triple where `entity` is subject or object (one hop)."""
        out = set(self.match(subject=entity))
        out.update(self.match(object=entity))
        return out

    def types_of(self, entity: str) -> frozenset[str]:
        return self._types.get(entity, frozenset())

    def entities_by_label(self, normalized: str) -> set[str]:
        """Entity ids whose normalized label equals `normalized`.

        The argument must already be normalized (see :func:`normalize_label`).
        """
        return set(self._label_index.get(normalized, ()))

    def normalized_labels(self) -> Iterator[tuple[str, set[str]]]:
        for key, ids in self._label_index.items():
            yield key, set(ids)


def ingest_records(records: Iterable[tuple[str, dict]],
                   report: IngestReport | None = None
                   ) -> tuple[KnowledgeGraph, IngestReport]:
    """Build a graph from a stream of (location, record) pairs.

    Three record shapes are understood:

    * ``{"subject": Q, "predicate": P, "object": Q}`` -- a fact triple.
      Non-entity objects (dates, quantities, strings) are outside the graph
      model and are dropped with a counted diagnostic.
    * ``{"id": Q-or-P, "label": text}`` -- a display label.
    * ``{"entity": Q, "class": Q}`` -- type metadata.  When the entity ends
      up with no explicit instance-of edge, one is synthesized from this.

    Malformed records are reported and skipped; ingestion never aborts on a
    single bad record.
    """
    if report is None:
        report = IngestReport()
    triples: set[Triple] = set()
    labels: dict[str, str] = {}
    classed: dict[str, str] = {}

    for location, rec in records:
        if not isinstance(rec, dict):
            report.error(f"{location}: record is not an object")
            continue
        if "subject" in rec:
            s, p, o = rec.get("subject"), rec.get("predicate"), rec.get("object")
            if not (isinstance(s, str) and is_entity_id(s)
                    and isinstance(p, str) and is_property_id(p)):
                report.error(f"{location}: bad subject/predicate {s!r} {p!r}")
                continue
            if not (isinstance(o, str) and is_entity_id(o)):
                report.literal_objects_dropped += 1
                continue
            t = Triple(s, p, o)
            if t in triples:
                report.duplicates += 1
            else:
                triples.add(t)
                report.triples += 1
        elif "id" in rec:
            ident, label = rec.get("id"), rec.get("label")
            if not (isinstance(ident, str)
                    and (is_entity_id(ident) or is_property_id(ident))
                    and isinstance(label, str)):
                report.error(f"{location}: bad label record {rec!r}")
                continue
            labels[ident] = label
            report.labels += 1
        elif "entity" in rec:
            e, c = rec.get("entity"), rec.get("class")
            if not (isinstance(e, str) and is_entity_id(e)
                    and isinstance(c, str) and is_entity_id(c)):
                report.error(f"{location}: bad type record {rec!r}")
                continue
            classed[e] = c
        else:
            report.error(f"{location}: unrecognized record {sorted(rec)!r}")

    typed = {s for s, p, _ in triples if p == INSTANCE_OF}
    for e, c in sorted(classed.items()):
        if e not in typed:
            triples.add(Triple(e, INSTANCE_OF, c))
            report.synthesized_types += 1

    return KnowledgeGraph(triples, labels), report


# File names follow the conventional dump layout: adjacency maps
# {Q: {P: [Q...]}}, label maps {id: text}, and an entity->class map.
_ADJACENCY_GLOB = "wikidata_short_*.json"
_ADJACENCY_FULL = "wikidata_*.json"
_REVERSE_FILE = "comp_wikidata_rev.json"
_ENTITY_LABELS_FILE = "items_wikidata_n.json"
_PROPERTY_LABELS_FILE = "filtered_property_wikidata4.json"
_CLASS_FILE = "child_par.json"


def iter_source_dump(directory: str | Path) -> Iterator[tuple[str, dict]]:
    """Adapt a dump directory into the record stream `ingest_records` takes."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"source dump directory not found: {directory}")

    def load(path: Path):
        with open(path, encoding="utf-8") as f:
            return json.load(f)

    seen: set[Path] = set()
    adjacency_paths = sorted(set(directory.glob(_ADJACENCY_GLOB))
                             | set(directory.glob(_ADJACENCY_FULL)))
    for path in adjacency_paths:
        if path.name in (_REVERSE_FILE,) or path in seen:
            continue
        seen.add(path)
        data = load(path)
        for s, pmap in data.items():
            if not isinstance(pmap, dict):
                yield f"{path.name}:{s}", {"subject": s, "predicate": None,
                                           "object": None}
                continue
            for p, objs in pmap.items():
                for o in objs if isinstance(objs, list) else [objs]:
                    yield f"{path.name}:{s}", {"subject": s, "predicate": p,
                                               "object": o}
    rev = directory / _REVERSE_FILE
    if rev.exists():
        for o, pmap in load(rev).items():
            for p, subjects in pmap.items():
                for s in subjects if isinstance(subjects, list) else [subjects]:
                    yield f"{rev.name}:{o}", {"subject": s, "predicate": p,
                                              "object": o}
    for name in (_ENTITY_LABELS_FILE, _PROPERTY_LABELS_FILE):
        path = directory / name
        if path.exists():
            for ident, label in load(path).items():
                yield f"{name}:{ident}", {"id": ident, "label": label}
    cls = directory / _CLASS_FILE
    if cls.exists():
        for e, c in load(cls).items():
            yield f"{cls.name}:{e}", {"entity": e, "class": c}


def load_source_dump(directory: str | Path) -> tuple[KnowledgeGraph, IngestReport]:
    return ingest_records(iter_source_dump(directory))


def export_turtle(kg: KnowledgeGraph, sink) -> None:
    """Write the graph as Turtle to a text sink, sorted by (s, p, o).

    The output is deterministic: a byte-identical serialization for equal
    graphs.  Labels are not exported; Turtle carries the triples only.
    """
    sink.write(f"@prefix wd: <{WD_PREFIX}> .\n")
    sink.write(f"@prefix wdt: <{WDT_PREFIX}> .\n")
    sink.write("\n")
    for s, p, o in kg.index_spo:
        sink.write(f"wd:{s} wdt:{p} wd:{o} .\n")


def export_turtle_bytes(kg: KnowledgeGraph) -> bytes:
    buf = io.StringIO()
    export_turtle(kg, buf)
    return buf.getvalue().encode("utf-8")


_TURTLE_PREFIX_RE = re.compile(r"@prefix\s+(\w+):\s+<([^>]*)>\s*\.\s*\Z")
_TURTLE_TRIPLE_RE = re.compile(
    r"wd:(Q[0-9]+)\s+wdt:(P[0-9]+)\s+wd:(Q[0-9]+)\s*\.\s*\Z")


def load_turtle(source, labels: dict[str, str] | None = None) -> KnowledgeGraph:
    """Parse the Turtle subset written by :func:`export_turtle`.

    `source` may be a path, a text stream, or the serialized text/bytes.
    Ids keep raw-id labels unless a label map is supplied.  Statements
    outside the wd:/wdt: triple form raise `KGError`.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif isinstance(source, str):
        if "\n" not in source and Path(source).exists():
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = source
    else:
        text = source.read()

    triples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _TURTLE_PREFIX_RE.match(line)
        if m:
            name, uri = m.groups()
            if name == "wd" and uri != WD_PREFIX:
                raise KGError(f"line {lineno}: unexpected wd prefix <{uri}>")
            if name == "wdt" and uri != WDT_PREFIX:
                raise KGError(f"line {lineno}: unexpected wdt prefix <{uri}>")
            continue
        m = _TURTLE_TRIPLE_RE.match(line)
        if m:
            triples.append(Triple(*m.groups()))
            continue
        raise KGError(f"line {lineno}: cannot parse turtle statement: {line!r}")
    return KnowledgeGraph(triples, labels or {})
