"""Random schema/policy generators and brute-force oracles shared by the tests."""
from __future__ import annotations

import itertools
import random

from secdecomp.model import (
    FunctionalDependency,
    LogicalSchema,
    QualifiedAttribute,
    RelationSchema,
    load_policy,
    load_schema,
)


def random_schema_document(rng: random.Random, max_relations=4, max_arity=8, max_fds=5, fk_prob=0.5):
    n_rel = rng.randint(1, max_relations)
    rels = []
    for i in range(n_rel):
        arity = rng.randint(2, max_arity)
        attrs = [f"a{j}" for j in range(arity)]
        pk = rng.sample(attrs, rng.randint(1, 2)) if rng.random() < 0.7 else []
        rels.append({"name": f"R{i}", "attributes": attrs, "primary_key": sorted(pk, key=attrs.index)})
    fks = []
    for i in range(1, n_rel):
        targets = [r for r in rels[:i] if len(r["primary_key"]) == 1]
        if targets and rng.random() < fk_prob:
            dst = rng.choice(targets)
            src_attr = rng.choice(rels[i]["attributes"])
            fks.append({"from": {"relation": rels[i]["name"], "attributes": [src_attr]},
                        "to": {"relation": dst["name"], "attributes": dst["primary_key"]}})
    universe = [f"{r['name']}.{a}" for r in rels for a in r["attributes"]]
    fds = []
    for _ in range(rng.randint(0, max_fds)):
        if rng.random() < 0.8:
            r = rng.choice(rels)
            pool = [f"{r['name']}.{a}" for a in r["attributes"]]
        else:
            pool = universe
        lhs = rng.sample(pool, min(len(pool) - 1, rng.randint(1, 2)))
        rhs = rng.choice([a for a in pool if a not in lhs])
        fds.append({"lhs": lhs, "rhs": rhs})
    return {"relations": rels, "foreign_keys": fks, "functional_dependencies": fds}


def random_policy_document(rng: random.Random, schema: LogicalSchema, max_sets=5, max_size=4, local_prob=0.6):
    universe = sorted(a.dotted for a in schema.universe)
    sets = []
    for _ in range(rng.randint(0, max_sets)):
        if rng.random() < local_prob:
            rel = rng.choice(schema.relations)
            pool = [a.dotted for a in rel.attributes]
        else:
            pool = universe
        if len(pool) < 2:
            continue
        picked = rng.sample(pool, rng.randint(2, min(max_size, len(pool))))
        # sets naming one value through a foreign key are rejected at load
        if len({schema.fk_classes[schema.resolve(a)] for a in picked}) >= 2:
            sets.append(picked)
    return {"security_dependent_sets": sets}


def random_instance(seed: int, **kw):
    rng = random.Random(seed)
    schema = load_schema(random_schema_document(rng, **kw))
    policy = load_policy(random_policy_document(rng, schema), schema)
    return schema, policy


def random_view_layer(rng: random.Random, schema: LogicalSchema, max_views=3):
    views = []
    for rel in schema.relations:
        covered = set()
        for n in range(rng.randint(1, max_views)):
            k = rng.randint(1, len(rel.attributes))
            cols = rng.sample(list(rel.attributes), k)
            covered.update(cols)
            cols.sort(key=rel.attributes.index)
            views.append(RelationSchema(f"{rel.name}_{n + 1}", tuple(cols), base=rel.base_name))
        rest = [a for a in rel.attributes if a not in covered]
        if rest:
            views.append(RelationSchema(f"{rel.name}_rest", tuple(rest), base=rel.base_name))
    return views


def brute_closure(x, schema: LogicalSchema):
    """Naive repeated-pass closure over the declared dependencies."""
    result = set(x)
    changed = True
    while changed:
        changed = False
        for fd in schema.fds:
            if fd.lhs <= result and fd.rhs not in result:
                result.add(fd.rhs)
                changed = True
    return frozenset(result)


def powerset(items):
    items = list(items)
    return (frozenset(c) for r in range(len(items) + 1) for c in itertools.combinations(items, r))


def brute_full_identifiers(a: QualifiedAttribute, schema: LogicalSchema):
    """Every x without ``a`` whose closure holds ``a`` (no minimality filter)."""
    others = sorted(schema.universe - {a}, key=lambda q: q.canonical)
    return {x for x in powerset(others) if a in brute_closure(x, schema)}


def minimal_only(family):
    return {x for x in family if not any(y < x for y in family)}
