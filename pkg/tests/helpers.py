"""Randomized graph, query, and action-tree builders shared across tests."""

import random

from convkgqa import actions as ac
from convkgqa import templates as tp
from convkgqa.kg import INSTANCE_OF, KnowledgeGraph


def random_kg(rng: random.Random, max_entities: int = 50) -> KnowledgeGraph:
    """A small random graph where every entity carries an instance-of edge.

    Class ids live in a separate numeric range so they never collide with
    instance ids.
    """
    n = rng.randint(4, max_entities)
    entities = [f"Q{i}" for i in range(1, n + 1)]
    classes = [f"Q{900 + i}" for i in range(1, rng.randint(2, 4) + 1)]
    relations = [f"P{i}" for i in range(1, rng.randint(2, 5) + 1)]
    triples = {(e, INSTANCE_OF, rng.choice(classes)) for e in entities}
    for _ in range(rng.randint(n, 3 * n)):
        triples.add((rng.choice(entities), rng.choice(relations),
                     rng.choice(entities)))
    labels = {e: f"thing {e[1:]}" for e in entities}
    labels.update({c: f"kind {c[1:]}" for c in classes})
    return KnowledgeGraph.from_triples(triples, labels=labels)


def random_filled_query(rng: random.Random, kg: KnowledgeGraph):
    """A random executable query drawn from the template catalog.

    Slots are filled with symbols present in `kg`, so both evaluation
    routes always have something to chew on.
    """
    template = tp.template_for(rng.choice(sorted(tp.sub_types())))
    direction = rng.choice(tp.DIRECTIONS)
    arity = template.arity
    if template.variadic:
        arity = rng.randint(template.arity, template.arity + 2)

    entities = sorted(kg.entities())
    relations = sorted(kg.relations())
    types = sorted({t.object for t in kg.match(predicate=INSTANCE_OF)})
    assignment: dict[str, str | int] = {}
    for token in template.slot_signature(direction, arity):
        if token.startswith("ENTITY"):
            assignment[token] = rng.choice(entities)
        elif token.startswith("RELATION"):
            assignment[token] = rng.choice(relations)
        elif token.startswith("TYPE"):
            assignment[token] = rng.choice(types)
        else:
            assignment[token] = rng.randint(1, 3)
    comparator = None
    if template.allowed_comparators:
        comparator = rng.choice(sorted(template.allowed_comparators))
    return tp.fill_skeleton(template, direction, assignment,
                            comparator=comparator, arity=arity)


def random_action_tree(rng: random.Random, kg: KnowledgeGraph):
    """A random well-typed action tree over symbols drawn from `kg`."""
    entities = sorted(kg.entities())
    relations = sorted(kg.relations())
    types = sorted({t.object for t in kg.match(predicate=INSTANCE_OF)})

    def set_expr(depth: int) -> ac.SetExpr:
        kinds = ["find", "find_rev"]
        if depth > 0:
            kinds += ["filter", "union", "intersect", "diff"]
        kind = rng.choice(kinds)
        if kind == "find":
            return ac.Find(rng.choice(entities), rng.choice(relations))
        if kind == "find_rev":
            return ac.FindRev(rng.choice(entities), rng.choice(relations))
        if kind == "filter":
            return ac.FilterType(set_expr(depth - 1), rng.choice(types))
        left, right = set_expr(depth - 1), set_expr(depth - 1)
        if kind == "union":
            return ac.UnionAct(left, right)
        if kind == "intersect":
            return ac.IntersectAct(left, right)
        return ac.DifferenceAct(left, right)

    def group() -> ac.GroupCounts:
        return ac.GroupCounts(
            relation=rng.choice(relations),
            key_type=rng.choice(types + [None]),
            value_type=rng.choice(types + [None]),
            reverse=rng.random() < 0.5)

    roll = rng.random()
    if roll < 0.40:
        return set_expr(2)
    if roll < 0.55:
        return ac.CountAct(set_expr(1))
    if roll < 0.65:
        return ac.IsIn(rng.choice(entities), set_expr(1))
    if roll < 0.90:
        comparator = rng.choice(sorted(ac.COMPARATOR_ACTIONS))
        if rng.random() < 0.6:
            threshold: int | ac.CountAct = rng.randint(0, 3)
        else:
            threshold = ac.CountAct(set_expr(0))
        compare = ac.CompareCount(group(), comparator, threshold)
        if rng.random() < 0.3:
            return ac.CountAct(compare)
        return compare
    return ac.ExtremumAct(group(), rng.choice(["argmin", "argmax"]))
