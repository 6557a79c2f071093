"""Mention detection, inverted-index linking, and coreference resolution.

Mentions are found by greedy longest-match lookup of utterance token
spans against the label index, with demonstrative and pronominal
patterns emitted as anaphoric spans.  Linking ranks exact matches, then
prefix matches, then fuzzy matches by trigram overlap.  Anaphoric spans
resolve against the context window: answer entities first, then
question entities, most recent interaction first, filtered by the
span's head noun when it has one.
"""

from __future__ import annotations

import json
import re
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path

from .context import ContextWindow
from .kg import INSTANCE_OF, KnowledgeGraph, normalize_label
from .sparql import EntitySetAnswer

NAMED = "named"
GENERAL = "general"
ANAPHORIC = "anaphoric"

EXACT = "exact"
PREFIX = "prefix"
FUZZY = "fuzzy"
CONTEXT = "context"

FUZZY_THRESHOLD = 0.6
_MAX_SPAN_TOKENS = 6

_STOPWORDS = frozenset("""
    a an and are as at be by did do does for from has have in is it of on or
    that the this those these to was were what which who whom whose
""".split())

_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")
_DEMONSTRATIVES = {"that": False, "this": False, "those": True, "these": True}
_PRONOUNS = {"it": False, "they": True, "them": True}


class LinkingError(Exception):
    pass


@dataclass(frozen=True)
class MentionSpan:
    start: int
    end: int
    surface: str
    kind: str
    head: str | None = None
    plural: bool = False

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise LinkingError(f"bad span offsets {self.start}..{self.end}")
        if self.kind not in (NAMED, GENERAL, ANAPHORIC):
            raise LinkingError(f"bad span kind {self.kind!r}")


@dataclass(frozen=True)
class LinkCandidate:
    id: str
    score: float
    match_kind: str

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise LinkingError(f"score {self.score} out of range")
        if self.match_kind == EXACT and self.score != 1.0:
            raise LinkingError("exact matches must score 1")


def _numeric(ident: str) -> int:
    return int(ident[1:])


def _trigrams(text: str) -> frozenset[str]:
    padded = f"  {text} "
    return frozenset(padded[i:i + 3] for i in range(len(padded) - 2))


def _dice(a: frozenset[str], b: frozenset[str]) -> float:
    if not a or not b:
        return 0.0
    return 2 * len(a & b) / (len(a) + len(b))


class InvertedIndex:
    """Label lookup over the graph's entity and type labels."""

    def __init__(self, entries: list[tuple[str, str]],
                 type_ids: frozenset[str] = frozenset()):
        # entries: (normalized label, id)
        self._exact: dict[str, list[str]] = {}
        for label, ident in entries:
            self._exact.setdefault(label, []).append(ident)
        for ids in self._exact.values():
            ids.sort(key=_numeric)
        self._sorted = sorted(set(entries))
        self._trigram: dict[str, set[tuple[str, str]]] = {}
        for label, ident in self._sorted:
            for gram in _trigrams(label):
                self._trigram.setdefault(gram, set()).add((label, ident))
        self.type_ids = frozenset(type_ids)

    def __len__(self) -> int:
        return len(self._sorted)

    def __contains__(self, normalized: str) -> bool:
        return normalized in self._exact

    def lookup_exact(self, normalized: str) -> list[str]:
        return list(self._exact.get(normalized, ()))

    def lookup_prefix(self, normalized: str) -> list[tuple[str, str]]:
        """Labels strictly extending the query, as (label, id) pairs."""
        probe = normalized + " "
        out = []
        i = bisect_left(self._sorted, (probe, ""))
        while i < len(self._sorted) and self._sorted[i][0].startswith(probe):
            out.append(self._sorted[i])
            i += 1
        return out

    def lookup_fuzzy(self, normalized: str,
                     threshold: float = FUZZY_THRESHOLD
                     ) -> list[tuple[str, str, float]]:
        """(label, id, score) for labels whose trigram Dice overlap with
        the query reaches the threshold."""
        query = _trigrams(normalized)
        seen: set[tuple[str, str]] = set()
        for gram in query:
            seen.update(self._trigram.get(gram, ()))
        out = []
        for label, ident in seen:
            score = _dice(query, _trigrams(label))
            if score >= threshold:
                out.append((label, ident, score))
        out.sort(key=lambda item: (-item[2], _numeric(item[1])))
        return out

    def to_snapshot(self, path: str | Path) -> None:
        payload = {"version": 1,
                   "entries": [[label, ident] for label, ident in self._sorted],
                   "typeIds": sorted(self.type_ids)}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def from_snapshot(cls, path: str | Path) -> "InvertedIndex":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != 1:
            raise LinkingError(f"unsupported index snapshot {path}")
        return cls([(label, ident) for label, ident in payload["entries"]],
                   frozenset(payload.get("typeIds", ())))


def build_index(kg: KnowledgeGraph) -> InvertedIndex:
    entries = [(label, ident)
               for label, ids in kg.normalized_labels()
               for ident in ids]
    type_ids = frozenset(o for _, _, o in kg.match(predicate=INSTANCE_OF))
    return InvertedIndex(entries, type_ids)


# ---------------------------------------------------------------------------
# Mention detection

def _tokenize(utterance: str) -> list[tuple[str, int, int]]:
    return [(m.group(0), m.start(), m.end())
            for m in _TOKEN_RE.finditer(utterance)]


def _longest_index_match(index: InvertedIndex,
                         tokens: list[tuple[str, int, int]],
                         start: int) -> int:
    """Largest n for which tokens[start:start+n] normalizes to an indexed
    label, or 0."""
    top = min(len(tokens) - start, _MAX_SPAN_TOKENS)
    for n in range(top, 0, -1):
        words = [t[0] for t in tokens[start:start + n]]
        if n == 1 and words[0].lower() in _STOPWORDS:
            continue
        if normalize_label(" ".join(words)) in index:
            return n
    return 0


def detect_mentions(utterance: str, index: InvertedIndex) -> list[MentionSpan]:
    """Greedy longest-match scan, with anaphora patterns taking
    precedence over plain index matches."""
    tokens = _tokenize(utterance)
    spans: list[MentionSpan] = []
    i = 0
    while i < len(tokens):
        word = tokens[i][0].lower()
        if word in _DEMONSTRATIVES:
            plural = _DEMONSTRATIVES[word]
            n = _longest_index_match(index, tokens, i + 1)
            if n:
                start, end = tokens[i][1], tokens[i + n][2]
                head = " ".join(t[0] for t in tokens[i + 1:i + 1 + n])
                spans.append(MentionSpan(start, end, utterance[start:end],
                                         ANAPHORIC, head=normalize_label(head),
                                         plural=plural))
                i += 1 + n
                continue
            if i + 1 < len(tokens) and tokens[i + 1][0].lower() == "one":
                start, end = tokens[i][1], tokens[i + 1][2]
                spans.append(MentionSpan(start, end, utterance[start:end],
                                         ANAPHORIC, plural=plural))
                i += 2
                continue
        if word in _PRONOUNS:
            start, end = tokens[i][1], tokens[i][2]
            spans.append(MentionSpan(start, end, utterance[start:end],
                                     ANAPHORIC, plural=_PRONOUNS[word]))
            i += 1
            continue
        if word == "the" and i + 1 < len(tokens) \
                and tokens[i + 1][0].lower() in ("one", "former", "latter"):
            start, end = tokens[i][1], tokens[i + 1][2]
            spans.append(MentionSpan(start, end, utterance[start:end],
                                     ANAPHORIC))
            i += 2
            continue
        n = _longest_index_match(index, tokens, i)
        if n:
            start, end = tokens[i][1], tokens[i + n - 1][2]
            surface = utterance[start:end]
            ids = index.lookup_exact(normalize_label(
                " ".join(t[0] for t in tokens[i:i + n])))
            kind = GENERAL if ids and all(x in index.type_ids for x in ids) \
                else NAMED
            spans.append(MentionSpan(start, end, surface, kind))
            i += n
            continue
        i += 1
    return spans


# ---------------------------------------------------------------------------
# Linking

def link_mention(index: InvertedIndex, span: MentionSpan
                 ) -> list[LinkCandidate]:
    """Ranked candidates: exact, then prefix, then fuzzy matches."""
    if span.kind not in (NAMED, GENERAL):
        raise LinkingError(f"cannot string-link a {span.kind} span")
    normalized = normalize_label(span.surface)
    out: list[LinkCandidate] = []
    taken: set[str] = set()
    for ident in index.lookup_exact(normalized):
        out.append(LinkCandidate(ident, 1.0, EXACT))
        taken.add(ident)
    prefix = [(label, ident) for label, ident in index.lookup_prefix(normalized)
              if ident not in taken]
    prefix.sort(key=lambda item: (-len(normalized) / len(item[0]),
                                  _numeric(item[1])))
    for label, ident in prefix:
        out.append(LinkCandidate(ident, len(normalized) / len(label), PREFIX))
        taken.add(ident)
    for _, ident, score in index.lookup_fuzzy(normalized):
        if ident not in taken:
            out.append(LinkCandidate(ident, min(score, 0.999), FUZZY))
            taken.add(ident)
    return out


# ---------------------------------------------------------------------------
# Coreference

def _head_matches(kg: KnowledgeGraph, entity: str, head: str) -> bool:
    for type_id in sorted(kg.types_of(entity)):
        label = normalize_label(kg.label(type_id))
        if label == head or label + "s" == head or head + "s" == label:
            return True
    return False


def _context_entities(ctx: ContextWindow) -> list[str]:
    """Entities the window mentions: answers before question entities,
    most recent interaction first, deduplicated."""
    out: list[str] = []
    seen: set[str] = set()

    def push(ident: str) -> None:
        if ident not in seen:
            seen.add(ident)
            out.append(ident)

    for user, _ in reversed(ctx.turns):
        ann = user.annotation
        if ann is None:
            continue
        if isinstance(ann.gold_answer, EntitySetAnswer):
            for ident in sorted(ann.gold_answer.entities, key=_numeric):
                push(ident)
        for ident in ann.entities:
            push(ident)
    return out


def resolve_coreference(span: MentionSpan, ctx: ContextWindow,
                        kg: KnowledgeGraph) -> list[LinkCandidate]:
    """Ranked context entities an anaphoric span may refer to."""
    if span.kind != ANAPHORIC:
        raise LinkingError("only anaphoric spans resolve against context")
    surface = normalize_label(span.surface)
    if surface.endswith(("former", "latter")) and ctx.turns:
        ann = ctx.turns[-1][0].annotation
        mentions = ann.entities if ann else []
        if not mentions:
            return []
        ident = mentions[0] if surface.endswith("former") else mentions[-1]
        return [LinkCandidate(ident, 1.0, CONTEXT)]
    candidates = _context_entities(ctx)
    if span.head is not None:
        candidates = [c for c in candidates
                      if _head_matches(kg, c, span.head)]
    return [LinkCandidate(ident, 1.0 / (rank + 1), CONTEXT)
            for rank, ident in enumerate(candidates)]
