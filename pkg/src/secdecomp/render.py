"""Document I/O and rendering: decomposition JSON, SQL views, text reports."""
from __future__ import annotations

import json
import re
from typing import Mapping

from . import fd
from .decompose import Decomposition, DecompositionStats, Diagnostic, realized_fds
from .model import LogicalSchema, SchemaError, canonical_sorted
from .verify import SecurityReport

_PLAIN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def sql_ident(name: str) -> str:
    if _PLAIN.match(name):
        return name
    return '"' + name.replace('"', '""') + '"'


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def fd_doc(dep) -> dict:
    return {"lhs": [a.dotted for a in canonical_sorted(dep.lhs)], "rhs": dep.rhs.dotted}


def decomposition_doc(dec: Decomposition, timings: bool = False) -> dict:
    views = dec.views()
    return {
        "relations": [
            {"base": rel.name,
             "views": [{"name": v.name, "attributes": [a.dotted for a in v.attributes]}
                       for v in views if v.base_name == rel.name]}
            for rel in dec.original.relations
        ],
        "derived_fds": [fd_doc(d) for d in sorted(dec.derived_fds, key=lambda d: d.sort_key())],
        "stats": dec.stats.as_dict(timings),
    }


def load_decomposition(document: Mapping | str, original: LogicalSchema) -> Decomposition:
    """Rebuild a :class:`Decomposition` from its JSON document against ``original``."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("malformed", f"invalid JSON: {exc}") from None
    per_relation = {}
    try:
        for entry in document["relations"]:
            base = original.relation(entry["base"])
            per_relation[base.name] = tuple(
                frozenset(original.resolve(a) for a in v["attributes"]) for v in entry["views"])
    except (KeyError, TypeError) as exc:
        raise SchemaError("malformed", f"decomposition document: {exc}") from None
    for rel in original.relations:
        per_relation.setdefault(rel.name, (rel.attribute_set,))
    derived = realized_fds((s for sets in per_relation.values() for s in sets), original)
    stats = DecompositionStats(**{k: v for k, v in document.get("stats", {}).items()
                                  if k in DecompositionStats.__dataclass_fields__})
    return Decomposition(per_relation, derived, stats, original)


def emit_views(dec: Decomposition, original: LogicalSchema | None = None) -> str:
    """One projection ``CREATE VIEW`` per sub-relation.

    DISTINCT appears only when the view keeps no key of its base relation,
    since only then can projected rows repeat.
    """
    original = original or dec.original
    idx = fd.index(original)
    lines = []
    for view in dec.views():
        base = original.relation(view.base_name)
        covers = idx.closure(idx.mask(view.attributes)) & idx.mask(base.attributes) == idx.mask(base.attributes)
        cols = ", ".join(sql_ident(a.attr) for a in view.attributes)
        distinct = "" if covers else "DISTINCT "
        lines.append(f"CREATE VIEW {sql_ident(view.name)} AS SELECT {distinct}{cols} FROM {sql_ident(base.name)};\n")
    return "".join(lines)


def _braced(attrs) -> str:
    return "{" + ", ".join(a.canonical for a in canonical_sorted(attrs)) + "}"


def decomposition_text(dec: Decomposition) -> str:
    out = []
    for v in dec.views():
        out.append(f"{v.name} = {{{', '.join(a.canonical for a in v.attributes)}}}")
    out.append("")
    out.append(f"derived dependencies ({len(dec.derived_fds)}):")
    out.extend(f"  {d}" for d in sorted(dec.derived_fds, key=lambda d: d.sort_key()))
    out.append("")
    out.append("stats: " + " ".join(f"{k}={v}" for k, v in dec.stats.as_dict().items()))
    return "\n".join(out) + "\n"


def report_text(report: SecurityReport) -> str:
    rows = [("sds", "kind", "witness")]
    for v in report.violations:
        rows.append((str(v.sds), v.kind, v.witness_text()))
    width = [max(len(r[i]) for r in rows) for i in range(3)]
    out = [f"verdict: {report.verdict}"]
    if report.oracle is not None:
        out.append(f"join-closure oracle: {report.oracle}")
    if len(rows) > 1:
        out.append("")
        for n, r in enumerate(rows):
            out.append("  ".join(c.ljust(w) for c, w in zip(r, width)).rstrip())
            if n == 0:
                out.append("  ".join("-" * w for w in width))
    if report.disagreements:
        out.append("")
        out.append("INCONSISTENT: logical check and join-closure oracle disagree on:")
        oracle_hits = dict(report.oracle_violations)
        for sds in report.disagreements:
            hit = oracle_hits.get(sds)
            where = f"reachable by joins in {_braced(hit)}" if hit else "flagged logically, unreachable by joins"
            out.append(f"  {sds}: {where}")
    return "\n".join(out) + "\n"


def diagnostics_text(diags: list[Diagnostic]) -> str:
    if not diags:
        return "no findings\n"
    out = []
    for d in diags:
        out.append(f"{d.level}: [{d.code}] {d.message}")
        for detail in d.details:
            out.append(f"    {_braced(detail)}")
    return "\n".join(out) + "\n"
