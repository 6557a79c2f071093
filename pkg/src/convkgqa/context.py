"""Conversation context windows, dynamic vocabularies, and linearization.

A turn's context window holds the preceding user-system interactions.
The dynamic vocabulary collects the KG symbols reachable from a set of
seed ids: named seeds contribute their one-hop neighborhood abstracted
to types, type seeds contribute the relations their instances take part
in.  Linearization renders the window plus the vocabulary as token
sequences bounded by a length budget, splitting into one chunk per
entity block when the budget overflows.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .dataset import Conversation, Turn, USER
from .kg import INSTANCE_OF, KnowledgeGraph

CLS_MARKER = "[CLS]"
CTX_MARKER = "[CTX]"
SEP_MARKER = "[SEP]"

DEFAULT_MAX_LEN = 512


class ContextError(Exception):
    pass


@dataclass
class ContextWindow:
    """The most recent user-system interactions before a turn."""
    turns: list[tuple[Turn, Turn]] = field(default_factory=list)
    window_size: int = 1

    def __post_init__(self):
        if self.window_size < 0:
            raise ContextError("window size must not be negative")
        if len(self.turns) > self.window_size:
            raise ContextError("more interactions than the window allows")

    def utterances(self) -> list[str]:
        out = []
        for user, system in self.turns:
            out.append(user.utterance)
            out.append(system.utterance)
        return out


def context_of(conversation: Conversation, t: int,
               window_size: int = 1) -> ContextWindow:
    """Window of complete interactions preceding user turn `t`,
    oldest first."""
    if not 0 <= t < len(conversation.turns):
        raise ContextError(f"turn index {t} out of range")
    if conversation.turns[t].speaker != USER:
        raise ContextError(f"turn {t} is not a user turn")
    pairs = []
    for i in range(0, t - 1, 2):
        pairs.append((conversation.turns[i], conversation.turns[i + 1]))
    kept = pairs[len(pairs) - window_size:] if window_size else []
    return ContextWindow(turns=kept, window_size=window_size)


@dataclass
class DynamicVocabulary:
    """Per-turn KG symbol sets with the typed subgraph that backs them."""
    entities: frozenset[str] = frozenset()
    relations: frozenset[str] = frozenset()
    types: frozenset[str] = frozenset()
    subgraph: frozenset[tuple[str, str, str]] = frozenset()

    def __post_init__(self):
        self.entities = frozenset(self.entities)
        self.relations = frozenset(self.relations)
        self.types = frozenset(self.types)
        self.subgraph = frozenset(self.subgraph)

    def symbols(self) -> frozenset[str]:
        return self.entities | self.relations | self.types

    def __len__(self) -> int:
        return len(self.symbols())


def dynamic_vocabulary(kg: KnowledgeGraph,
                       seeds: set[str]) -> DynamicVocabulary:
    """Collect the KG symbols related to the given seed ids.

    Every seed lands in `entities`.  Each seed's one-hop triples add
    their relations, with the far endpoint abstracted to its types.  A
    seed with instances additionally acts as a type: the relations its
    instances take part in are added with the seed standing in for the
    instance side.
    """
    entities: set[str] = set()
    relations: set[str] = set()
    types: set[str] = set()
    subgraph: set[tuple[str, str, str]] = set()

    def abstracted(node: str) -> tuple[frozenset[str], bool]:
        node_types = kg.types_of(node)
        return (node_types, True) if node_types else (frozenset({node}), False)

    def add_edges(subject: str, relation: str, far_node: str,
                  far_side: str, typed_only: bool = False) -> None:
        fars, are_types = abstracted(far_node)
        if typed_only:
            types.update(fars if are_types else ())
        relations.add(relation)
        for far in fars:
            if far_side == "object":
                subgraph.add((subject, relation, far))
            else:
                subgraph.add((far, relation, subject))

    for seed in sorted(seeds):
        entities.add(seed)
        for _, rel, obj in kg.match(subject=seed):
            if rel == INSTANCE_OF:
                types.add(obj)
                relations.add(INSTANCE_OF)
                subgraph.add((seed, INSTANCE_OF, obj))
            else:
                add_edges(seed, rel, obj, "object", typed_only=True)
        for subj, rel, _ in kg.match(object=seed):
            if rel != INSTANCE_OF:
                add_edges(seed, rel, subj, "subject", typed_only=True)

        instances = [s for s, _, _ in kg.match(predicate=INSTANCE_OF,
                                               object=seed)]
        if instances:
            types.add(seed)
            relations.add(INSTANCE_OF)
        for instance in instances:
            subgraph.add((instance, INSTANCE_OF, seed))
            for _, rel, obj in kg.match(subject=instance):
                if rel == INSTANCE_OF and obj == seed:
                    continue
                add_edges(seed, rel, obj, "object")
            for subj, rel, _ in kg.match(object=instance):
                add_edges(seed, rel, subj, "subject")

    return DynamicVocabulary(entities=frozenset(entities),
                             relations=frozenset(relations),
                             types=frozenset(types),
                             subgraph=frozenset(subgraph))


@dataclass
class LinearizedInput:
    """Token chunks sharing a common text prefix, each within max_len."""
    chunks: list[list[str]]
    max_len: int
    prefix_len: int

    def text(self) -> str:
        return "\n".join(" ".join(chunk) for chunk in self.chunks)


def _prefix_tokens(question: str, ctx: ContextWindow) -> list[str]:
    tokens = [CLS_MARKER]
    for utterance in ctx.utterances():
        tokens.extend(utterance.split())
        tokens.append(CTX_MARKER)
    tokens.extend(question.split())
    tokens.append(SEP_MARKER)
    return tokens


def _entity_block(kg: KnowledgeGraph, vocab: DynamicVocabulary,
                  entity: str) -> list[str]:
    """Label items describing one entity: its label, its types, and the
    relations its subgraph edges use."""
    items = [kg.label(entity)]
    own_types = sorted(t for (s, r, t) in vocab.subgraph
                       if s == entity and r == INSTANCE_OF)
    items.extend(kg.label(t) for t in own_types)
    rels = sorted({r for (s, r, o) in vocab.subgraph
                   if entity in (s, o) and r != INSTANCE_OF})
    items.extend(kg.label(r) for r in rels)
    return items


def linearize(kg: KnowledgeGraph, vocab: DynamicVocabulary, question: str,
              ctx: ContextWindow, max_len: int = DEFAULT_MAX_LEN,
              seed: int = 0) -> LinearizedInput:
    """Render the context plus vocabulary as bounded token chunks.

    Entity blocks are shuffled by `seed`.  If everything fits within
    max_len a single chunk carries all blocks; otherwise each entity
    gets its own chunk, dropping whole block items that do not fit.
    """
    prefix = _prefix_tokens(question, ctx)
    order = sorted(vocab.entities)
    random.Random(seed).shuffle(order)
    blocks = [_entity_block(kg, vocab, e) for e in order]

    budget = max_len - len(prefix)
    if budget < 0 or (blocks and budget < 1):
        raise ContextError(
            f"max_len {max_len} cannot hold the {len(prefix)}-token prefix "
            "plus a KG symbol")

    def block_tokens(block: list[str]) -> list[str]:
        return [token for item in block for token in item.split()]

    all_suffix = [t for block in blocks for t in block_tokens(block)]
    if len(all_suffix) <= budget:
        chunk = prefix + all_suffix
        return LinearizedInput(chunks=[chunk], max_len=max_len,
                               prefix_len=len(prefix))

    chunks = []
    for block in blocks:
        tokens = list(prefix)
        room = budget
        for item in block:
            item_tokens = item.split()
            if len(item_tokens) > room:
                break
            tokens.extend(item_tokens)
            room -= len(item_tokens)
        chunks.append(tokens)
    return LinearizedInput(chunks=chunks, max_len=max_len,
                           prefix_len=len(prefix))
