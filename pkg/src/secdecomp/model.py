"""Logical schema model: qualified attributes, relations, dependencies, policies.

External documents name attributes in dotted ``RELATION.attr`` form. Internally
every attribute is qualified by the base relation it belongs to and renders
canonically as ``attr_relation``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping


class SchemaError(ValueError):
    """Raised for malformed schema or policy documents.

    ``code`` is a short machine-readable tag (``duplicate-relation``,
    ``unknown-attribute``, ``reflexive-fd``, ``fk-arity``, ``set-too-small``,
    ``malformed``, ``name-collision``).
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class QualifiedAttribute:
    relation: str
    attr: str

    def __post_init__(self):
        for part in (self.relation, self.attr):
            if not part or "." in part or part != part.strip():
                raise SchemaError("malformed", f"bad identifier {part!r}")

    @property
    def canonical(self) -> str:
        return f"{self.attr}_{self.relation}"

    @property
    def dotted(self) -> str:
        return f"{self.relation}.{self.attr}"

    def __str__(self):
        return self.canonical

    def __repr__(self):
        return f"QA({self.dotted})"


def canonical_sorted(attrs: Iterable[QualifiedAttribute]) -> list[QualifiedAttribute]:
    return sorted(attrs, key=lambda a: a.canonical)


def set_key(attrs: Iterable[QualifiedAttribute]) -> tuple[str, ...]:
    """Sort key for attribute sets: the lexicographic list of canonical names."""
    return tuple(sorted(a.canonical for a in attrs))


@dataclass(frozen=True)
class RelationSchema:
    """A relation (or a projected view of one base relation).

    ``base`` names the relation the attributes are qualified by; it equals
    ``name`` for base relations.
    """

    name: str
    attributes: tuple[QualifiedAttribute, ...]
    primary_key: frozenset[QualifiedAttribute] = frozenset()
    base: str | None = None

    def __post_init__(self):
        if not self.attributes:
            raise SchemaError("malformed", f"relation {self.name} has no attributes")
        if len(set(self.attributes)) != len(self.attributes):
            raise SchemaError("malformed", f"relation {self.name} repeats an attribute")
        if not self.primary_key <= set(self.attributes):
            raise SchemaError("unknown-attribute", f"primary key of {self.name} not within its attributes")
        owner = self.base_name
        stray = [a for a in self.attributes if a.relation != owner]
        if stray:
            raise SchemaError("malformed", f"{self.name}: attributes {stray} not qualified by {owner}")

    @property
    def base_name(self) -> str:
        return self.base if self.base is not None else self.name

    @cached_property
    def attribute_set(self) -> frozenset[QualifiedAttribute]:
        return frozenset(self.attributes)


@dataclass(frozen=True)
class FunctionalDependency:
    lhs: frozenset[QualifiedAttribute]
    rhs: QualifiedAttribute

    def __post_init__(self):
        if not self.lhs:
            raise SchemaError("malformed", "functional dependency with empty left-hand side")
        if self.rhs in self.lhs:
            raise SchemaError("reflexive-fd", f"{self} is reflexive")

    def attributes(self) -> frozenset[QualifiedAttribute]:
        return self.lhs | {self.rhs}

    def sort_key(self):
        return (set_key(self.lhs), self.rhs.canonical)

    def __str__(self):
        lhs = ", ".join(a.canonical for a in canonical_sorted(self.lhs))
        return f"{lhs} -> {self.rhs.canonical}"


@dataclass(frozen=True)
class ForeignKeyLink:
    from_attrs: tuple[QualifiedAttribute, ...]
    to_attrs: tuple[QualifiedAttribute, ...]

    def __post_init__(self):
        if not self.from_attrs or len(self.from_attrs) != len(self.to_attrs):
            raise SchemaError("fk-arity", "foreign key sides differ in length")
        for a, b in self.pairs():
            if a.relation == b.relation:
                raise SchemaError("malformed", f"foreign key pair {a.dotted}/{b.dotted} within one relation")

    def pairs(self):
        return list(zip(self.from_attrs, self.to_attrs))

    def dependencies(self) -> list[FunctionalDependency]:
        """Both directions of each positional pair."""
        out = []
        for a, b in self.pairs():
            out.append(FunctionalDependency(frozenset({a}), b))
            out.append(FunctionalDependency(frozenset({b}), a))
        return out


@dataclass(frozen=True)
class LogicalSchema:
    """The pair (relations, dependencies). Immutable once built."""

    relations: tuple[RelationSchema, ...]
    fds: frozenset[FunctionalDependency]
    foreign_keys: tuple[ForeignKeyLink, ...] = ()

    def __post_init__(self):
        names = [r.name for r in self.relations]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise SchemaError("duplicate-relation", f"relation names repeated: {sorted(dup)}")
        universe = self.universe
        for fd in self.fds:
            missing = fd.attributes() - universe
            if missing:
                raise SchemaError("unknown-attribute", f"{fd} mentions {sorted(a.dotted for a in missing)}")
        canon: dict[str, QualifiedAttribute] = {}
        for a in universe:
            other = canon.setdefault(a.canonical, a)
            if other != a:
                raise SchemaError("name-collision", f"{a.dotted} and {other.dotted} both render as {a.canonical}")

    @cached_property
    def universe(self) -> frozenset[QualifiedAttribute]:
        return frozenset(a for r in self.relations for a in r.attributes)

    @cached_property
    def attribute_order(self) -> dict[QualifiedAttribute, int]:
        """Declaration order of attributes, used when listing view columns."""
        order: dict[QualifiedAttribute, int] = {}
        for r in self.relations:
            for a in r.attributes:
                order.setdefault(a, len(order))
        return order

    @cached_property
    def fk_pairs(self) -> frozenset[frozenset[QualifiedAttribute]]:
        """Unordered attribute pairs linked by a foreign key whose FDs are both present."""
        out = set()
        for fk in self.foreign_keys:
            for a, b in fk.pairs():
                if (FunctionalDependency(frozenset({a}), b) in self.fds
                        and FunctionalDependency(frozenset({b}), a) in self.fds):
                    out.add(frozenset({a, b}))
        return frozenset(out)

    @cached_property
    def fk_classes(self) -> dict[QualifiedAttribute, frozenset[QualifiedAttribute]]:
        """Attributes made equal by foreign keys, closed transitively."""
        parent = {a: a for a in self.universe}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for pair in self.fk_pairs:
            a, b = sorted(pair, key=lambda q: q.canonical)
            parent[find(b)] = find(a)
        groups: dict[QualifiedAttribute, set] = {}
        for a in self.universe:
            groups.setdefault(find(a), set()).add(a)
        return {a: frozenset(groups[find(a)]) for a in self.universe}

    def equivalent_sets(self, members: frozenset[QualifiedAttribute]) -> list[frozenset[QualifiedAttribute]]:
        """``members`` plus every rewrite swapping attributes for foreign-key equals.

        Rewrites that collapse below two attributes are dropped.
        """
        choices = [sorted(self.fk_classes.get(a, {a}), key=lambda q: q.canonical)
                   for a in sorted(members, key=lambda q: q.canonical)]
        out = {frozenset(members)}
        for combo in itertools.product(*choices):
            rewritten = frozenset(combo)
            if len(rewritten) >= 2:
                out.add(rewritten)
        return sorted(out, key=set_key)

    def relation(self, name: str) -> RelationSchema:
        for r in self.relations:
            if r.name == name:
                return r
        raise KeyError(name)

    def resolve(self, ref: str) -> QualifiedAttribute:
        """Resolve ``REL.attr`` (REL may be a view name) or a canonical name."""
        return _Resolver(self.relations).resolve(ref, self.universe)

    def sorted_fds(self) -> list[FunctionalDependency]:
        return sorted(self.fds, key=FunctionalDependency.sort_key)


@dataclass(frozen=True)
class SecurityDependentSet:
    members: frozenset[QualifiedAttribute]

    def __post_init__(self):
        if len(self.members) < 2:
            raise SchemaError("set-too-small", f"security dependent set {sorted(a.dotted for a in self.members)} needs at least two attributes")

    def key(self):
        return set_key(self.members)

    def __str__(self):
        return "{" + ", ".join(a.canonical for a in canonical_sorted(self.members)) + "}"


@dataclass(frozen=True)
class PolicySet:
    sets: tuple[SecurityDependentSet, ...] = field(default=())

    def __post_init__(self):
        uniq = {s.members: s for s in self.sets}
        ordered = tuple(sorted(uniq.values(), key=SecurityDependentSet.key))
        object.__setattr__(self, "sets", ordered)

    def __iter__(self):
        return iter(self.sets)

    def __len__(self):
        return len(self.sets)


class _Resolver:
    def __init__(self, relations: Iterable[RelationSchema]):
        self.base_of = {}
        for r in relations:
            self.base_of[r.name] = r.base_name
            self.base_of.setdefault(r.base_name, r.base_name)

    def resolve(self, ref: str, universe: frozenset[QualifiedAttribute]) -> QualifiedAttribute:
        if not isinstance(ref, str):
            raise SchemaError("malformed", f"attribute reference must be a string, got {ref!r}")
        if "." in ref:
            rel, _, attr = ref.partition(".")
            qa = QualifiedAttribute(self.base_of.get(rel, rel), attr)
            if qa in universe:
                return qa
        else:
            for a in universe:
                if a.canonical == ref:
                    return a
        raise SchemaError("unknown-attribute", f"{ref} is not an attribute of the schema")


def _require(doc: Mapping, key: str, kind: type, default=None):
    val = doc.get(key, default)
    if not isinstance(val, kind):
        raise SchemaError("malformed", f"field {key!r} must be a {kind.__name__}")
    return val


def load_schema(document: Mapping | str) -> LogicalSchema:
    """Build a :class:`LogicalSchema` from a schema document (dict or JSON text).

    Primary keys expand to ``key -> attr`` for each non-key attribute (the full
    composite key on the left); foreign keys expand to both directions of each
    positional attribute pair. Explicit dependencies are added as declared, then
    any partial dependency is narrowed to its minimal determining left sides.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("malformed", f"invalid JSON: {exc}") from None
    if not isinstance(document, Mapping):
        raise SchemaError("malformed", "schema document must be an object")

    relations = []
    seen = set()
    for rd in _require(document, "relations", list):
        if not isinstance(rd, Mapping):
            raise SchemaError("malformed", "relation entries must be objects")
        name = _require(rd, "name", str)
        if name in seen:
            raise SchemaError("duplicate-relation", f"relation {name} declared twice")
        seen.add(name)
        base = rd.get("base")
        owner = base or name
        attrs = tuple(_qualify(owner, a) for a in _require(rd, "attributes", list))
        pk = frozenset(_qualify(owner, a) for a in _require(rd, "primary_key", list, []))
        relations.append(RelationSchema(name, attrs, pk, base))

    resolver = _Resolver(relations)
    universe = frozenset(a for r in relations for a in r.attributes)
    for r in relations:
        missing = r.primary_key - r.attribute_set
        if missing:
            raise SchemaError("unknown-attribute", f"primary key of {r.name} names {sorted(a.dotted for a in missing)}")

    fds: set[FunctionalDependency] = set()
    for r in relations:
        if r.primary_key:
            for a in r.attributes:
                if a not in r.primary_key:
                    fds.add(FunctionalDependency(r.primary_key, a))

    fks = []
    for fd_doc in _require(document, "foreign_keys", list, []):
        src = _require(fd_doc, "from", Mapping)
        dst = _require(fd_doc, "to", Mapping)
        left = tuple(resolver.resolve(f"{_require(src, 'relation', str)}.{a}", universe)
                     for a in _require(src, "attributes", list))
        right = tuple(resolver.resolve(f"{_require(dst, 'relation', str)}.{a}", universe)
                      for a in _require(dst, "attributes", list))
        link = ForeignKeyLink(left, right)
        fks.append(link)
        fds.update(link.dependencies())

    for fd_doc in _require(document, "functional_dependencies", list, []):
        lhs = frozenset(resolver.resolve(a, universe) for a in _require(fd_doc, "lhs", list))
        rhs = resolver.resolve(_require(fd_doc, "rhs", str), universe)
        fds.add(FunctionalDependency(lhs, rhs))

    return LogicalSchema(tuple(relations), _left_reduced(fds), tuple(fks))


def _left_reduced(fds: set[FunctionalDependency]) -> frozenset[FunctionalDependency]:
    """Replace each partial ``X -> a`` by ``Y -> a`` for every minimal ``Y`` inside X that determines a.

    Closures are unchanged; afterwards every dependency is non-partial.
    """
    rules = [(fd.lhs, fd.rhs) for fd in fds]

    def closure(x):
        result = set(x)
        grew = True
        while grew:
            grew = False
            for lhs, rhs in rules:
                if rhs not in result and lhs <= result:
                    result.add(rhs)
                    grew = True
        return result

    out = set()
    for fd in fds:
        if len(fd.lhs) == 1:
            out.add(fd)
            continue
        minimal = []
        for size in range(1, len(fd.lhs) + 1):
            for combo in itertools.combinations(sorted(fd.lhs, key=lambda q: q.canonical), size):
                y = frozenset(combo)
                if any(m <= y for m in minimal):
                    continue
                if fd.rhs in closure(y):
                    minimal.append(y)
        out.update(FunctionalDependency(y, fd.rhs) for y in minimal)
    return frozenset(out)


def _qualify(owner: str, ref) -> QualifiedAttribute:
    if not isinstance(ref, str):
        raise SchemaError("malformed", f"attribute names must be strings, got {ref!r}")
    if "." in ref:
        rel, _, attr = ref.partition(".")
        if rel != owner:
            raise SchemaError("malformed", f"{ref} does not belong to {owner}")
        ref = attr
    return QualifiedAttribute(owner, ref)


def load_policy(document: Mapping | str, schema: LogicalSchema) -> PolicySet:
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("malformed", f"invalid JSON: {exc}") from None
    if not isinstance(document, Mapping):
        raise SchemaError("malformed", "policy document must be an object")
    sets = []
    for entry in _require(document, "security_dependent_sets", list):
        if not isinstance(entry, list):
            raise SchemaError("malformed", "each security dependent set must be a list")
        members = frozenset(schema.resolve(ref) for ref in entry)
        sds = SecurityDependentSet(members)
        if len({schema.fk_classes[a] for a in members}) < 2:
            raise SchemaError("set-too-small",
                              f"{sds} names one value twice: its attributes are equal through foreign keys")
        sets.append(sds)
    return PolicySet(tuple(sets))


def dump_schema(schema: LogicalSchema) -> dict:
    """Serialize to a schema document; dependencies implied by keys are omitted."""
    implied: set[FunctionalDependency] = set()
    rels = []
    for r in schema.relations:
        entry = {"name": r.name}
        if r.base is not None:
            entry["base"] = r.base
        entry["attributes"] = [a.attr for a in r.attributes]
        entry["primary_key"] = [a.attr for a in r.attributes if a in r.primary_key]
        rels.append(entry)
        if r.primary_key:
            implied.update(FunctionalDependency(r.primary_key, a) for a in r.attributes if a not in r.primary_key)
    fks = []
    for fk in schema.foreign_keys:
        implied.update(fk.dependencies())
        fks.append({
            "from": {"relation": fk.from_attrs[0].relation, "attributes": [a.attr for a in fk.from_attrs]},
            "to": {"relation": fk.to_attrs[0].relation, "attributes": [a.attr for a in fk.to_attrs]},
        })
    explicit = [fd for fd in schema.sorted_fds() if fd not in implied]
    return {
        "relations": rels,
        "foreign_keys": fks,
        "functional_dependencies": [
            {"lhs": [a.dotted for a in canonical_sorted(fd.lhs)], "rhs": fd.rhs.dotted} for fd in explicit
        ],
    }


def dump_policy(policy: PolicySet) -> dict:
    return {"security_dependent_sets": [[a.dotted for a in canonical_sorted(s.members)] for s in policy]}
