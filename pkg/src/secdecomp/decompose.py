"""Secure decomposition of a logical schema against security dependent sets.

Two routes produce the same per-relation families:

* :func:`decompose_reference` walks the full power set of each relation,
  removes every subset holding a security dependent set or an attribute of
  one together with an identifier of that attribute, then keeps the maximal
  survivors.
* :func:`decompose` never builds the power set. The removal conditions form
  an antichain of forbidden sets (a hypergraph on the relation's
  attributes); the output is exactly its maximal independent sets, which
  are enumerated by branch-and-reduce.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import fd
from .fd import DEFAULT_MAX_IDENTIFIER_SIZE, bits
from .model import (
    FunctionalDependency,
    LogicalSchema,
    PolicySet,
    QualifiedAttribute,
    RelationSchema,
    SecurityDependentSet,
    canonical_sorted,
    set_key,
)

REFERENCE_ARITY_LIMIT = 22

WHOLE_SDS = "whole-sds"
ATTR_WITH_IDENTIFIER = "attr-with-identifier"

AttrSet = frozenset[QualifiedAttribute]
IdentifierMap = Mapping[QualifiedAttribute, Iterable[AttrSet]]


class DecompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ForbiddenSet:
    members: AttrSet
    origin: str
    sds: SecurityDependentSet
    attribute: QualifiedAttribute | None = None
    identifier: AttrSet | None = None

    def __str__(self):
        return "{" + ", ".join(a.canonical for a in canonical_sorted(self.members)) + "}"


@dataclass
class DecompositionStats:
    pi: int = 0
    epsilon: int = 0
    eta: int = 0
    mu: int = 0
    subsets_generated: int = 0
    subsets_eliminated: int = 0
    elapsed: float = 0.0

    def as_dict(self, timings: bool = False) -> dict:
        out = {k: getattr(self, k) for k in
               ("pi", "epsilon", "eta", "mu", "subsets_generated", "subsets_eliminated")}
        if timings:
            out["elapsed"] = round(self.elapsed, 6)
        return out


@dataclass
class Decomposition:
    per_relation: dict[str, tuple[AttrSet, ...]]
    derived_fds: frozenset[FunctionalDependency]
    stats: DecompositionStats = field(default_factory=DecompositionStats)
    original: LogicalSchema | None = field(default=None, repr=False, compare=False)

    def families(self) -> dict[str, set[AttrSet]]:
        return {name: set(sets) for name, sets in self.per_relation.items()}

    def views(self) -> list[RelationSchema]:
        """Sub-relations named ``REL_1``, ``REL_2``, ... per base relation."""
        out = []
        for base in self.original.relations:
            pk = base.primary_key
            for n, members in enumerate(self.per_relation[base.name], start=1):
                cols = tuple(a for a in base.attributes if a in members)
                out.append(RelationSchema(f"{base.name}_{n}", cols, pk if pk <= members else frozenset(),
                                          base=base.base_name))
        return out

    def as_schema(self) -> LogicalSchema:
        links = tuple(fk for fk in self.original.foreign_keys
                      if all(FunctionalDependency(frozenset({a}), b) in self.derived_fds for a, b in fk.pairs()))
        return LogicalSchema(tuple(self.views()), self.derived_fds, links)


def _declaration_key(schema: LogicalSchema):
    order = schema.attribute_order
    return lambda members: tuple(sorted(order[a] for a in members))


def realized_fds(attr_sets: Iterable[AttrSet], original: LogicalSchema) -> frozenset[FunctionalDependency]:
    """Dependencies of ``original`` a projection-only view layer can still express.

    A dependency survives when its attributes sit together in one view. A
    foreign-key dependency links two relations and is realised by the equijoin
    itself, so it survives when both of its attributes are still exposed.
    """
    attr_sets = [frozenset(s) for s in attr_sets]
    exposed = frozenset().union(*attr_sets) if attr_sets else frozenset()
    keep = set()
    for dep in original.fds:
        everything = dep.attributes()
        if any(everything <= s for s in attr_sets):
            keep.add(dep)
        elif len(dep.lhs) == 1 and everything in original.fk_pairs and everything <= exposed:
            keep.add(dep)
    return frozenset(keep)


def expand_policy(schema: LogicalSchema, policy: PolicySet) -> PolicySet:
    """Add every foreign-key rewrite of each security dependent set.

    A foreign key and the key it references carry one value, so a view holding
    the foreign key exposes the referenced attribute too.
    """
    sets = [SecurityDependentSet(m) for s in policy for m in schema.equivalent_sets(s.members)]
    return PolicySet(tuple(sets))


def identifier_map(schema: LogicalSchema, policy: PolicySet,
                   max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE) -> dict[QualifiedAttribute, tuple[AttrSet, ...]]:
    members = {a for s in policy for a in s.members}
    return {a: fd.minimal_identifier_sets(a, schema, max_size).identifiers for a in canonical_sorted(members)}


def forbidden_sets_for(relation: RelationSchema, policy: PolicySet, schema: LogicalSchema,
                       max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE,
                       identifiers: IdentifierMap | None = None) -> list[ForbiddenSet]:
    """Removal conditions restricted to one relation, minimised to an antichain."""
    if identifiers is None:
        identifiers = identifier_map(schema, policy, max_size)
    attrs = relation.attribute_set
    found: list[ForbiddenSet] = []
    for sds in policy:
        if sds.members <= attrs:
            found.append(ForbiddenSet(sds.members, WHOLE_SDS, sds))
        for alpha in canonical_sorted(sds.members):
            if alpha not in attrs:
                continue
            for lam in identifiers.get(alpha, ()):
                members = frozenset(lam) | {alpha}
                if members <= attrs:
                    found.append(ForbiddenSet(members, ATTR_WITH_IDENTIFIER, sds, alpha, frozenset(lam)))
    found.sort(key=lambda f: (len(f.members), set_key(f.members), f.origin != WHOLE_SDS))
    kept: list[ForbiddenSet] = []
    for f in found:
        if not any(k.members <= f.members for k in kept):
            kept.append(f)
    return sorted(kept, key=lambda f: set_key(f.members))


def _stats_base(schema: LogicalSchema, policy: PolicySet, identifiers: IdentifierMap) -> DecompositionStats:
    return DecompositionStats(
        pi=len(schema.relations),
        epsilon=max((len(r.attributes) for r in schema.relations), default=0),
        eta=max((len(s.members) for s in policy), default=0),
        mu=max((len(tuple(v)) for v in identifiers.values()), default=0),
    )


def _finish(schema, families, stats, started) -> Decomposition:
    key = _declaration_key(schema)
    per_relation = {name: tuple(sorted(sets, key=key)) for name, sets in families.items()}
    derived = realized_fds(itertools.chain.from_iterable(per_relation.values()), schema)
    stats.elapsed = time.perf_counter() - started
    return Decomposition(per_relation, derived, stats, schema)


def _survivors(relation: RelationSchema, policy: PolicySet, identifiers: IdentifierMap) -> tuple[np.ndarray, np.ndarray]:
    """Power set of the relation as local bitmasks and the survival flags after removals."""
    local = {a: i for i, a in enumerate(relation.attributes)}

    def local_mask(attrs) -> int | None:
        m = 0
        for a in attrs:
            if a not in local:
                return None
            m |= 1 << local[a]
        return m

    subsets = np.arange(1 << len(relation.attributes), dtype=np.int64)
    alive = np.ones(subsets.shape, dtype=bool)
    for sds in policy:
        whole = local_mask(sds.members)
        if whole is not None:
            alive &= (subsets & whole) != whole
        for alpha in canonical_sorted(sds.members):
            for lam in identifiers.get(alpha, ()):
                m = local_mask(frozenset(lam) | {alpha})
                if m is not None:
                    alive &= (subsets & m) != m
    return subsets, alive


def elimination_masks(schema: LogicalSchema, policy: PolicySet,
                      identifiers: IdentifierMap | None = None,
                      max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE,
                      fk_equivalence: bool = True) -> dict[str, frozenset[int]]:
    """Per relation, the power-set members (local bitmasks) removed before the maximality pass."""
    if fk_equivalence:
        policy = expand_policy(schema, policy)
    if identifiers is None:
        identifiers = identifier_map(schema, policy, max_size)
    out = {}
    for rel in schema.relations:
        subsets, alive = _survivors(rel, policy, identifiers)
        out[rel.name] = frozenset(int(m) for m in subsets[~alive])
    return out


def decompose_reference(schema: LogicalSchema, policy: PolicySet,
                        max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE,
                        identifiers: IdentifierMap | None = None,
                        arity_limit: int = REFERENCE_ARITY_LIMIT,
                        fk_equivalence: bool = True) -> Decomposition:
    """Exhaustive power-set decomposition, one relation at a time."""
    if fk_equivalence:
        policy = expand_policy(schema, policy)
    started = time.perf_counter()
    widest = max((len(r.attributes) for r in schema.relations), default=0)
    if widest > arity_limit:
        raise DecompositionError(
            f"arity-limit-exceeded: a relation has {widest} attributes (limit {arity_limit}); "
            "use the optimized decomposition instead")
    if identifiers is None:
        identifiers = identifier_map(schema, policy, max_size)
    stats = _stats_base(schema, policy, identifiers)
    families = {}
    for rel in schema.relations:
        subsets, alive = _survivors(rel, policy, identifiers)
        stats.subsets_generated += len(subsets)
        stats.subsets_eliminated += int((~alive).sum())
        # Survivors are closed under subsets, so a survivor has a distinct
        # surviving superset iff adding a single attribute keeps it alive.
        maximal = alive.copy()
        for b in range(len(rel.attributes)):
            lacks = (subsets >> b & 1) == 0
            maximal[lacks] &= ~alive[subsets[lacks] | (1 << b)]
        families[rel.name] = {frozenset(rel.attributes[i] for i in bits(int(m))) for m in subsets[maximal]}
    return _finish(schema, families, stats, started)


def maximal_independent_sets(vertices: int, edges: list[int]) -> tuple[list[int], int, int]:
    """Maximal subsets of ``vertices`` containing no edge of the hypergraph.

    ``edges`` must be an antichain of masks with at least two bits each.
    Returns the sets plus counts of visited and pruned search nodes.
    """
    incident: dict[int, list[int]] = {}
    for e in edges:
        for v in bits(e):
            incident.setdefault(v, []).append(e)
    free = vertices & ~sum((1 << v) for v in incident)
    order = sorted(incident, key=lambda v: (-len(incident[v]), v))
    results: list[int] = []
    visited = pruned = 0

    def still_blockable(u: int, inc: int, exc: int) -> bool:
        # an excluded vertex needs an edge whose other members can all end up included
        ub = 1 << u
        return any(not (e & ~ub) & exc for e in incident[u])

    def search(pos: int, inc: int, exc: int):
        nonlocal visited, pruned
        visited += 1
        if pos == len(order):
            for u in bits(exc):
                ub = 1 << u
                if not any((e & ~ub) & ~inc == 0 for e in incident[u]):
                    pruned += 1
                    return
            results.append(inc | free)
            return
        v = order[pos]
        vb = 1 << v
        grown = inc | vb
        if not any(e & ~grown == 0 for e in incident[v]):
            search(pos + 1, grown, exc)
        else:
            pruned += 1
        shrunk = exc | vb
        if all(still_blockable(u, inc, shrunk) for u in bits(shrunk)):
            search(pos + 1, inc, shrunk)
        else:
            pruned += 1

    search(0, 0, 0)
    return results, visited, pruned


def decompose(schema: LogicalSchema, policy: PolicySet,
              max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE,
              identifiers: IdentifierMap | None = None,
              fk_equivalence: bool = True) -> Decomposition:
    """Secure decomposition via maximal independent sets of the forbidden-set hypergraph."""
    if fk_equivalence:
        policy = expand_policy(schema, policy)
    started = time.perf_counter()
    if identifiers is None:
        identifiers = identifier_map(schema, policy, max_size)
    stats = _stats_base(schema, policy, identifiers)
    families = {}
    for rel in schema.relations:
        local = {a: i for i, a in enumerate(rel.attributes)}
        forbidden = forbidden_sets_for(rel, policy, schema, max_size, identifiers)
        edges = [sum(1 << local[a] for a in f.members) for f in forbidden]
        found, visited, pruned = maximal_independent_sets((1 << len(rel.attributes)) - 1, edges)
        stats.subsets_generated += visited
        stats.subsets_eliminated += pruned
        families[rel.name] = {frozenset(rel.attributes[i] for i in bits(m)) for m in found}
    return _finish(schema, families, stats, started)


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "warning" | "info"
    code: str
    message: str
    sds: SecurityDependentSet | None = None
    details: tuple = ()

    def as_dict(self) -> dict:
        out = {"level": self.level, "code": self.code, "message": self.message}
        if self.sds is not None:
            out["sds"] = [a.dotted for a in canonical_sorted(self.sds.members)]
        if self.details:
            out["details"] = [[a.dotted for a in canonical_sorted(d)] for d in self.details]
        return out


def lint_policy(schema: LogicalSchema, policy: PolicySet,
                max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE) -> list[Diagnostic]:
    """Flag policies that do not block what they look like they block. Never raises."""
    out: list[Diagnostic] = []
    declared = {s.members for s in policy}
    for sds in policy:
        if len(sds.members) > 2:
            loose = [frozenset(p) for p in itertools.combinations(canonical_sorted(sds.members), 2)
                     if frozenset(p) not in declared]
            if loose:
                out.append(Diagnostic(
                    "warning", "only-full-set-blocked",
                    f"{sds} blocks only the joint co-occurrence of all {len(sds.members)} attributes; "
                    f"{len(loose)} pairs remain associable",
                    sds, tuple(loose)))
    for inner in policy:
        for outer in policy:
            if inner.members < outer.members:
                out.append(Diagnostic("info", "redundant-superset",
                                      f"{outer} is implied by the smaller set {inner}", outer, (inner.members,)))
    for sds in policy:
        spans = not any(sds.members <= r.attribute_set for r in schema.relations)
        if spans and not any(len(fd.minimal_identifier_sets(a, schema, max_size)) for a in sds.members):
            out.append(Diagnostic("info", "no-op",
                                  f"{sds} spans relations and none of its attributes has an identifier; "
                                  "it causes no decomposition", sds))
    return out
