"""Reasoning over functional dependencies.

Closure, membership in the non-reflexive/non-partial closure of F, identifier
sets, inferability and identifiability. The closure of F is never
materialised; every membership question goes through attribute-set closure.

Attribute sets are handled internally as integer bitmasks over the schema's
universe in canonical order (see :class:`FDIndex`).
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Iterator

from .model import LogicalSchema, QualifiedAttribute, SchemaError, set_key

DEFAULT_MAX_IDENTIFIER_SIZE = int(os.environ.get("SECDECOMP_MAX_IDENTIFIER_SIZE", "3"))
# universes (or determinant pools) at or below this size are always swept exactly
EXHAUSTIVE_LIMIT = 16


def bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def minimize(masks: Iterable[int]) -> list[int]:
    """Keep the inclusion-minimal masks (an antichain), deduplicated."""
    kept: list[int] = []
    for m in sorted(set(masks), key=lambda m: (m.bit_count(), m)):
        if not any(k & m == k for k in kept):
            kept.append(m)
    return kept


class FDIndex:
    """Bitmask view of a schema's dependencies, with memoised closures."""

    def __init__(self, schema: LogicalSchema):
        self.schema = schema
        self.attrs = sorted(schema.universe, key=lambda a: a.canonical)
        self.bit = {a: i for i, a in enumerate(self.attrs)}
        grouped: dict[int, int] = {}
        self.by_rhs: dict[int, list[int]] = {i: [] for i in range(len(self.attrs))}
        for fd in schema.fds:
            lhs = self.mask(fd.lhs)
            r = self.bit[fd.rhs]
            grouped[lhs] = grouped.get(lhs, 0) | (1 << r)
            self.by_rhs[r].append(lhs)
        self.rules = sorted(grouped.items())
        self.lhs_pool = 0
        for lhs, _ in self.rules:
            self.lhs_pool |= lhs
        self._closures: dict[int, int] = {}
        self._determinants: dict[int | None, dict[int, list[int]]] = {}

    def mask(self, attrs: Iterable[QualifiedAttribute]) -> int:
        m = 0
        for a in attrs:
            try:
                m |= 1 << self.bit[a]
            except KeyError:
                raise SchemaError("unknown-attribute", f"{a.dotted} is outside the schema universe") from None
        return m

    def unmask(self, mask: int) -> frozenset[QualifiedAttribute]:
        return frozenset(self.attrs[i] for i in bits(mask))

    def closure(self, mask: int) -> int:
        hit = self._closures.get(mask)
        if hit is not None:
            return hit
        result = mask
        pending = self.rules
        while True:
            waiting = []
            grew = False
            for lhs, rhs in pending:
                if lhs & result == lhs:
                    if rhs & ~result:
                        result |= rhs
                        grew = True
                else:
                    waiting.append((lhs, rhs))
            if not grew:
                break
            pending = waiting
        self._closures[mask] = result
        return result

    def effective_cap(self, max_size: int | None) -> int | None:
        if max_size is None:
            return None
        if len(self.attrs) <= EXHAUSTIVE_LIMIT or self.lhs_pool.bit_count() <= EXHAUSTIVE_LIMIT:
            return None
        return max_size

    def determinants(self, max_size: int | None) -> dict[int, list[int]]:
        """Minimal determinants of every attribute, the attribute itself included.

        Least fixpoint of ``D(a) = min({a} + union-products of D(y) over y in X
        for every X -> a in F)``: the leaf sets of all derivation trees for
        ``a``. Determinants wider than the cap are pruned; that is safe because
        every subtree's leaf set lies inside the final one.
        """
        cap = self.effective_cap(max_size)
        cached = self._determinants.get(cap)
        if cached is not None:
            return cached
        det = {i: [1 << i] for i in range(len(self.attrs))}
        changed = True
        while changed:
            changed = False
            for i, lhss in self.by_rhs.items():
                found = list(det[i])
                for lhs in lhss:
                    combos = [0]
                    for b in bits(lhs):
                        combos = minimize(c | d for c in combos for d in det[b]
                                          if cap is None or (c | d).bit_count() <= cap)
                        if not combos:
                            break
                    found.extend(combos)
                found = minimize(found)
                if found != det[i]:
                    det[i] = found
                    changed = True
        self._determinants[cap] = det
        return det

    def identifier_masks(self, i: int, max_size: int | None) -> list[int]:
        return [d for d in self.determinants(max_size)[i] if d != 1 << i]

    def set_identifier_masks(self, target: int, max_size: int | None) -> list[int]:
        """Minimal x with x disjoint from target and target within closure(x)."""
        cap = self.effective_cap(max_size)
        combos = [0]
        for i in bits(target):
            options = [d for d in self.identifier_masks(i, max_size) if not d & target]
            combos = minimize(c | d for c in combos for d in options
                              if cap is None or (c | d).bit_count() <= cap)
            if not combos:
                return []
        return combos if target else []


def index(schema: LogicalSchema) -> FDIndex:
    # stored beside cached_property values; the schema itself stays immutable
    idx = schema.__dict__.get("_fd_index")
    if idx is None:
        idx = schema.__dict__["_fd_index"] = FDIndex(schema)
    return idx


@dataclass(frozen=True)
class IdentifierFamily:
    owner: QualifiedAttribute | frozenset[QualifiedAttribute]
    identifiers: tuple[frozenset[QualifiedAttribute], ...]

    def __iter__(self):
        return iter(self.identifiers)

    def __len__(self):
        return len(self.identifiers)

    def __contains__(self, item):
        return frozenset(item) in self.identifiers

    def as_sets(self) -> set[frozenset[QualifiedAttribute]]:
        return set(self.identifiers)


def _family(owner, idx: FDIndex, masks: list[int]) -> IdentifierFamily:
    sets = sorted((idx.unmask(m) for m in masks), key=set_key)
    return IdentifierFamily(owner, tuple(sets))


def attribute_closure(x: Iterable[QualifiedAttribute], schema: LogicalSchema) -> frozenset[QualifiedAttribute]:
    idx = index(schema)
    return idx.unmask(idx.closure(idx.mask(x)))


def fd_holds(x: Iterable[QualifiedAttribute], a: QualifiedAttribute, schema: LogicalSchema) -> bool:
    """Whether ``x -> a`` is a non-reflexive, non-partial member of F+."""
    idx = index(schema)
    xm = idx.mask(x)
    am = idx.mask([a])
    if xm & am or not idx.closure(xm) & am:
        return False
    # closure is monotone, so dropping one attribute at a time covers every proper subset
    return not any(idx.closure(xm & ~(1 << b)) & am for b in bits(xm))


def minimal_identifier_sets(a: QualifiedAttribute, schema: LogicalSchema,
                            max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE) -> IdentifierFamily:
    idx = index(schema)
    idx.mask([a])
    return _family(a, idx, idx.identifier_masks(idx.bit[a], max_size))


def identifier_sets_of_set(attrs: Iterable[QualifiedAttribute], schema: LogicalSchema,
                           max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE) -> IdentifierFamily:
    """Minimal sets that identify every member of ``attrs`` while avoiding all of them."""
    attrs = frozenset(attrs)
    idx = index(schema)
    return _family(attrs, idx, idx.set_identifier_masks(idx.mask(attrs), max_size))


def inferable(a1: Iterable[QualifiedAttribute], a2: Iterable[QualifiedAttribute], schema: LogicalSchema) -> bool:
    """``a1 -> a2`` in F+, rejecting reflexive and partial aggregates.

    Each member of ``a2`` must follow from ``a1`` without itself, ``a2`` may not
    lie inside ``a1``, and no proper subset of ``a1`` may already yield all of
    ``a2``.
    """
    idx = index(schema)
    m1, m2 = idx.mask(a1), idx.mask(a2)
    if m2 & m1 == m2:
        return False
    for b in bits(m2):
        if not idx.closure(m1 & ~(1 << b)) & (1 << b):
            return False
    return not any(idx.closure(m1 & ~(1 << b)) & m2 == m2 for b in bits(m1))


def identifiable(a: QualifiedAttribute, schema: LogicalSchema,
                 max_size: int | None = DEFAULT_MAX_IDENTIFIER_SIZE) -> bool:
    """Whether some relation holds ``a`` together with one of its identifier sets."""
    idx = index(schema)
    i = idx.mask([a]).bit_length() - 1
    ids = idx.identifier_masks(i, max_size)
    for r in schema.relations:
        rm = idx.mask(r.attributes)
        if rm >> i & 1 and any(d & rm == d for d in ids):
            return True
    return False

