"""Command-line front end.

Exit status: 0 success/secure, 1 bad input or I/O failure, 2 insecure,
3 secure but the join-closure cross-check hit its size limit.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import decompose as dec
from . import fd, render, verify
from .model import SchemaError, canonical_sorted, load_policy, load_schema

log = logging.getLogger("secdecomp")

COMMANDS = ("decompose", "verify", "closure", "identifiers", "lint", "emit-views")
DEFAULT_FORMAT = {"decompose": "json", "emit-views": "sql"}


@dataclass
class RunConfig:
    command: str
    schema: Path
    policy: Path | None = None
    output: Path | None = None
    original: Path | None = None
    decomposition: Path | None = None
    emit_sql: Path | None = None
    attrs: list[str] = field(default_factory=list)
    reference: bool = False
    fk_equivalence: bool = True
    max_identifier_size: int | None = fd.DEFAULT_MAX_IDENTIFIER_SIZE
    max_join_sets: int = verify.DEFAULT_MAX_JOIN_SETS
    format: str | None = None
    timings: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command}")
        if self.format is None:
            self.format = DEFAULT_FORMAT.get(self.command, "text")


def _read(path: Path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _write(text: str, path: Path | None):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _need_policy(cfg: RunConfig):
    if cfg.policy is None:
        raise SchemaError("malformed", f"{cfg.command} needs --policy")


def _split_attrs(values: list[str]) -> list[str]:
    return [p.strip() for v in values for p in v.split(",") if p.strip()]


def _run_decompose(cfg, schema):
    _need_policy(cfg)
    policy = load_policy(_read(cfg.policy), schema)
    algo = dec.decompose_reference if cfg.reference else dec.decompose
    result = algo(schema, policy, cfg.max_identifier_size, fk_equivalence=cfg.fk_equivalence)
    log.info("decomposed %d relations in %.3fs", result.stats.pi, result.stats.elapsed)
    if cfg.format == "text":
        text = render.decomposition_text(result)
    elif cfg.format == "sql":
        text = render.emit_views(result, schema)
    else:
        text = render.dumps(render.decomposition_doc(result, cfg.timings))
    _write(text, cfg.output)
    if cfg.emit_sql is not None:
        _write(render.emit_views(result, schema), cfg.emit_sql)
    return 0


def _run_verify(cfg, schema):
    _need_policy(cfg)
    original = load_schema(_read(cfg.original)) if cfg.original else schema
    policy = load_policy(_read(cfg.policy), original)
    report = verify.audit(schema.relations if cfg.original else original.relations, original, policy,
                          cfg.max_identifier_size, cfg.max_join_sets)
    if report.oracle == "disagree":
        log.error("internal inconsistency: logical check and join-closure oracle disagree")
    text = render.dumps(report.as_dict()) if cfg.format == "json" else render.report_text(report)
    _write(text, cfg.output)
    return report.exit_code


def _run_closure(cfg, schema):
    attrs = [schema.resolve(a) for a in _split_attrs(cfg.attrs)]
    closed = fd.attribute_closure(attrs, schema)
    if cfg.format == "json":
        text = render.dumps({"attributes": [a.dotted for a in canonical_sorted(attrs)],
                             "closure": [a.dotted for a in canonical_sorted(closed)]})
    else:
        text = "{" + ", ".join(a.canonical for a in canonical_sorted(closed)) + "}\n"
    _write(text, cfg.output)
    return 0


def _run_identifiers(cfg, schema):
    refs = _split_attrs(cfg.attrs)
    if len(refs) > 1:
        target = frozenset(schema.resolve(a) for a in refs)
        families = [fd.identifier_sets_of_set(target, schema, cfg.max_identifier_size)]
    else:
        targets = [schema.resolve(refs[0])] if refs else canonical_sorted(schema.universe)
        families = [fd.minimal_identifier_sets(a, schema, cfg.max_identifier_size) for a in targets]

    def owner_name(owner):
        if isinstance(owner, frozenset):
            return "{" + ", ".join(a.canonical for a in canonical_sorted(owner)) + "}"
        return owner.canonical

    if cfg.format == "json":
        doc = [{"owner": [a.dotted for a in canonical_sorted(f.owner)] if isinstance(f.owner, frozenset) else f.owner.dotted,
                "identifiers": [[a.dotted for a in canonical_sorted(s)] for s in f]} for f in families]
        text = render.dumps(doc)
    else:
        lines = []
        for f in families:
            sets = ", ".join("{" + ", ".join(a.canonical for a in canonical_sorted(s)) + "}" for s in f)
            lines.append(f"i[{owner_name(f.owner)}] = {{{sets}}}")
        text = "\n".join(lines) + "\n"
    _write(text, cfg.output)
    return 0


def _run_lint(cfg, schema):
    _need_policy(cfg)
    policy = load_policy(_read(cfg.policy), schema)
    diags = dec.lint_policy(schema, policy, cfg.max_identifier_size)
    if cfg.format == "json":
        text = render.dumps([d.as_dict() for d in diags])
    else:
        text = render.diagnostics_text(diags)
    _write(text, cfg.output)
    return 0


def _run_emit_views(cfg, schema):
    if cfg.decomposition is not None:
        result = render.load_decomposition(_read(cfg.decomposition), schema)
    else:
        _need_policy(cfg)
        policy = load_policy(_read(cfg.policy), schema)
        result = dec.decompose(schema, policy, cfg.max_identifier_size, fk_equivalence=cfg.fk_equivalence)
    _write(render.emit_views(result, schema), cfg.output)
    return 0


_HANDLERS = {
    "decompose": _run_decompose,
    "verify": _run_verify,
    "closure": _run_closure,
    "identifiers": _run_identifiers,
    "lint": _run_lint,
    "emit-views": _run_emit_views,
}


def run(cfg: RunConfig) -> int:
    try:
        schema = load_schema(_read(cfg.schema))
        return _HANDLERS[cfg.command](cfg, schema)
    except (SchemaError, dec.DecompositionError, OSError, KeyError) as exc:
        log.error("%s", exc)
        return 1


def _cap(value: str) -> int | None:
    n = int(value)
    return None if n <= 0 else n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secdecomp", description="Secure schema decomposition and verification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policy=True):
        p.add_argument("-s", "--schema", type=Path, required=True)
        if policy:
            p.add_argument("-p", "--policy", type=Path)
        p.add_argument("-o", "--output", type=Path)
        p.add_argument("--max-identifier-size", type=_cap, default=fd.DEFAULT_MAX_IDENTIFIER_SIZE,
                       help="identifier enumeration cap on large universes (0 = unbounded; "
                            "env SECDECOMP_MAX_IDENTIFIER_SIZE)")
        return p

    p = common(sub.add_parser("decompose", help="decompose relations against a policy"))
    p.add_argument("--reference", action="store_true", help="use the exhaustive power-set algorithm")
    p.add_argument("--literal-fk", dest="fk_equivalence", action="store_false",
                   help="do not extend the policy through foreign-key equalities")
    p.add_argument("--emit-sql", type=Path)
    p.add_argument("--format", choices=("json", "text", "sql"))
    p.add_argument("--timings", action="store_true", help="include wall-clock time in the JSON stats")

    p = common(sub.add_parser("verify", help="check a schema or view layer against a policy"))
    p.add_argument("--original", type=Path, help="schema the view layer (-s) was derived from")
    p.add_argument("--max-join-sets", type=int, default=verify.DEFAULT_MAX_JOIN_SETS)
    p.add_argument("--format", choices=("json", "text"))

    for name in ("closure", "identifiers"):
        p = common(sub.add_parser(name, help=f"attribute {name}"), policy=False)
        p.add_argument("--attrs", action="append", default=[], help="REL.attr, comma separated or repeated")
        p.add_argument("--format", choices=("json", "text"))

    p = common(sub.add_parser("lint", help="flag policy definitions that block less than they appear to"))
    p.add_argument("--format", choices=("json", "text"))

    p = common(sub.add_parser("emit-views", help="CREATE VIEW statements for a decomposition"))
    p.add_argument("-d", "--decomposition", type=Path, help="decomposition JSON produced by `decompose`")
    p.add_argument("--literal-fk", dest="fk_equivalence", action="store_false")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    opts = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    if args.command in ("closure", "identifiers"):
        opts.setdefault("attrs", args.attrs)
    return run(RunConfig(**opts))


if __name__ == "__main__":
    raise SystemExit(main())
