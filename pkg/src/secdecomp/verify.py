"""Security checking of a schema (original, decomposed or hand-written views).

Two independent routes:

* the logical check (:func:`is_secure`): a security dependent set leaks if a
  relation contains it, or if it has a common identifier set and each of its
  attributes sits beside one of its own identifiers;
* the join-closure oracle (:func:`join_closure`): saturate the relations
  under joins whose join attributes form a superkey of one operand, then look
  for a reachable attribute set holding a security dependent set.

:func:`audit` runs both and flags any disagreement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from . import fd
from .decompose import realized_fds
from .fd import DEFAULT_MAX_IDENTIFIER_SIZE, bits
from .model import (
    FunctionalDependency,
    LogicalSchema,
    PolicySet,
    QualifiedAttribute,
    RelationSchema,
    SchemaError,
    SecurityDependentSet,
    canonical_sorted,
)

SECURE = "secure"
INSECURE = "insecure"
CONTAINED = "contained-in-relation"
INFERABLE = "inferable"
DEFAULT_MAX_JOIN_SETS = 100_000


@dataclass(frozen=True)
class Violation:
    sds: SecurityDependentSet
    kind: str
    witness: str | frozenset[QualifiedAttribute]

    def witness_text(self) -> str:
        if isinstance(self.witness, str):
            return self.witness
        return "{" + ", ".join(a.canonical for a in canonical_sorted(self.witness)) + "}"

    def as_dict(self) -> dict:
        witness = self.witness if isinstance(self.witness, str) else [a.dotted for a in canonical_sorted(self.witness)]
        return {"sds": [a.dotted for a in canonical_sorted(self.sds.members)], "kind": self.kind, "witness": witness}


@dataclass(frozen=True)
class JoinStep:
    left: frozenset[QualifiedAttribute]
    right: frozenset[QualifiedAttribute]
    on: tuple[tuple[QualifiedAttribute, QualifiedAttribute], ...]


@dataclass
class JoinClosure:
    reachable: list[frozenset[QualifiedAttribute]]
    trace: dict[frozenset[QualifiedAttribute], JoinStep]
    complete: bool = True

    def containing(self, attrs: Iterable[QualifiedAttribute]) -> frozenset[QualifiedAttribute] | None:
        attrs = frozenset(attrs)
        for s in self.reachable:
            if attrs <= s:
                return s
        return None

    def steps_to(self, target: frozenset[QualifiedAttribute]) -> list[JoinStep]:
        """Join steps that produce ``target``, base relations first."""
        out, stack, seen = [], [target], set()
        while stack:
            s = stack.pop()
            step = self.trace.get(s)
            if step is None or s in seen:
                continue
            seen.add(s)
            out.append(step)
            stack.extend((step.left, step.right))
        return out[::-1]


@dataclass
class SecurityReport:
    verdict: str
    violations: list[Violation]
    oracle: str | None = None  # agree | disagree | unverified; None when not cross-checked
    oracle_violations: list[tuple[SecurityDependentSet, frozenset[QualifiedAttribute]]] = field(default_factory=list)
    disagreements: list[SecurityDependentSet] = field(default_factory=list)

    @property
    def secure(self) -> bool:
        return self.verdict == SECURE

    @property
    def exit_code(self) -> int:
        if not self.secure:
            return 2
        if self.oracle == "unverified":
            return 3
        return 0

    def as_dict(self) -> dict:
        out = {"verdict": self.verdict, "violations": [v.as_dict() for v in self.violations]}
        if self.oracle is not None:
            out["oracle"] = self.oracle
            out["oracle_violations"] = [
                {"sds": [a.dotted for a in canonical_sorted(s.members)],
                 "reachable": [a.dotted for a in canonical_sorted(r)]}
                for s, r in self.oracle_violations]
            out["inconsistent"] = self.oracle == "disagree"
            if self.disagreements:
                out["disagreements"] = [[a.dotted for a in canonical_sorted(s.members)] for s in self.disagreements]
        return out


def _check_policy(schema: LogicalSchema, policy: PolicySet):
    for sds in policy:
        missing = sds.members - schema.universe
        if missing:
            raise SchemaError("unknown-attribute",
                              f"policy names {sorted(a.dotted for a in missing)}, absent from the schema")


def is_secure(schema: LogicalSchema, policy: PolicySet,
              max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE) -> SecurityReport:
    """Logical check; ``schema`` should already carry only its realised dependencies."""
    _check_policy(schema, policy)
    violations = []
    for sds in policy:
        # a foreign key and its referenced key are one value, so rewrites count too
        variants = schema.equivalent_sets(sds.members)
        for rel in schema.relations:
            if any(v <= rel.attribute_set for v in variants):
                violations.append(Violation(sds, CONTAINED, rel.name))
        for v in variants:
            common = fd.identifier_sets_of_set(v, schema, max_size)
            if len(common) and all(fd.identifiable(a, schema, max_size) for a in v):
                violations.append(Violation(sds, INFERABLE, common.identifiers[0]))
                break
    return SecurityReport(INSECURE if violations else SECURE, violations)


def restrict_fds(views: Iterable[RelationSchema], original: LogicalSchema) -> LogicalSchema:
    """The view layer paired with the dependencies of ``original`` it can realise."""
    views = tuple(views)
    for v in views:
        missing = v.attribute_set - original.universe
        if missing:
            raise SchemaError("unknown-attribute",
                              f"view {v.name} exposes {sorted(a.dotted for a in missing)}, unknown to the original schema")
    kept = realized_fds((v.attribute_set for v in views), original)
    links = tuple(fk for fk in original.foreign_keys
                  if all(FunctionalDependency(frozenset({a}), b) in kept for a, b in fk.pairs()))
    return LogicalSchema(views, kept, links)


def join_closure(schema: LogicalSchema, max_sets: int = DEFAULT_MAX_JOIN_SETS) -> JoinClosure:
    """Every attribute set reachable from the relations by meaningful joins.

    Two reachable sets P and Q join when they correspond on some attributes
    (identical attributes, or attributes paired by a foreign key) and the
    corresponding attributes on one side determine that whole side. Joins on
    anything else can pair unrelated rows and are never taken.
    """
    idx = fd.index(schema)
    linked: dict[int, int] = {}
    for pair in schema.fk_pairs:
        a, b = (idx.bit[x] for x in pair)
        linked[a] = linked.get(a, 0) | 1 << b
        linked[b] = linked.get(b, 0) | 1 << a

    def toward(src: int, dst: int) -> int:
        m = src & dst
        for p in bits(src):
            if linked.get(p, 0) & dst:
                m |= 1 << p
        return m

    reachable: list[int] = []
    seen: set[int] = set()
    for rel in schema.relations:
        m = idx.mask(rel.attributes)
        if m not in seen:
            seen.add(m)
            reachable.append(m)
    steps: dict[int, tuple[int, int, int, int]] = {}
    complete = True
    frontier = 0
    while frontier < len(reachable) and complete:
        p = reachable[frontier]
        frontier += 1
        for q in reachable[:frontier - 1]:
            union = p | q
            if union in seen:
                continue
            jp, jq = toward(p, q), toward(q, p)
            if not jp:
                continue
            if idx.closure(jp) & p == p or idx.closure(jq) & q == q:
                if len(reachable) >= max_sets:
                    complete = False
                    break
                seen.add(union)
                reachable.append(union)
                steps[union] = (p, q, jp, jq)

    def pairs_on(jp: int, jq: int):
        out = []
        for b in bits(jp):
            if jq >> b & 1:
                out.append((idx.attrs[b], idx.attrs[b]))
            for c in bits(linked.get(b, 0) & jq):
                out.append((idx.attrs[b], idx.attrs[c]))
        return tuple(sorted(out, key=lambda t: (t[0].canonical, t[1].canonical)))

    trace = {idx.unmask(u): JoinStep(idx.unmask(p), idx.unmask(q), pairs_on(jp, jq))
             for u, (p, q, jp, jq) in steps.items()}
    return JoinClosure([idx.unmask(m) for m in reachable], trace, complete)


def audit(views: Iterable[RelationSchema], original: LogicalSchema, policy: PolicySet,
          max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE,
          max_sets: int = DEFAULT_MAX_JOIN_SETS) -> SecurityReport:
    """Logical verdict on the realised view layer, cross-checked by the join-closure oracle."""
    restricted = restrict_fds(views, original)
    report = is_secure(restricted, policy, max_size)
    closure = join_closure(restricted, max_sets)
    flagged = {v.sds for v in report.violations}
    unsure = False
    for sds in policy:
        hit = closure.containing(sds.members)
        if hit is not None:
            report.oracle_violations.append((sds, hit))
        if (hit is not None) != (sds in flagged):
            if hit is None and not closure.complete:
                unsure = True
            else:
                report.disagreements.append(sds)
    if report.disagreements:
        report.oracle = "disagree"
    elif unsure or not closure.complete:
        report.oracle = "unverified"
    else:
        report.oracle = "agree"
    return report
