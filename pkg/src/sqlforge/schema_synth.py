"""Database synthesis from seed web tables: prompt, parse, enhance, materialise to SQLite.

The model answers with one fenced JSON block::

    {"db_name": ..., "scenario": ...,
     "tables": [{"name", "description", "columns": [{"name", "type", "description", "examples"}],
                 "primary_key": [...]}],
     "foreign_keys": [{"table", "column", "ref_table", "ref_column"}]}

``render_schema_json`` emits exactly this format, and ``parse_schema`` reads it back.
"""
from __future__ import annotations

import json
import logging
import math
import os
import re
import sqlite3
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, InvariantError, MaterializeError, ParseError
from .llm_gateway import ChatRequest
from .table_ingest import WebTable, render_table

logger = logging.getLogger(__name__)

_SIMPLE_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_SQL_KEYWORDS = frozenset(
    "abort action add after all alter analyze and as asc attach autoincrement before begin between by cascade case "
    "cast check collate column commit conflict constraint create cross current current_date current_time "
    "current_timestamp database default deferrable deferred delete desc detach distinct do drop each else end "
    "escape except exclude exclusive exists explain fail filter first following for foreign from full generated "
    "glob group groups having if ignore immediate in index indexed initially inner insert instead intersect into "
    "is isnull join key last left like limit match materialized natural no not nothing notnull null nulls of "
    "offset on or order others outer over partition plan pragma preceding primary query raise range recursive "
    "references regexp reindex release rename replace restrict returning right rollback row rows savepoint "
    "select set table temp temporary then ties to transaction trigger unbounded union unique update using "
    "vacuum values view virtual when where window with without".split()
)


def quote_ident(name: str) -> str:
    if _SIMPLE_IDENT.match(name) and name.lower() not in _SQL_KEYWORDS:
        return name
    return '"' + name.replace('"', '""') + '"'


@dataclass
class ColumnDef:
    name: str
    sql_type: str = "TEXT"
    description: str = ""
    example_values: list[str | None] = field(default_factory=list)


@dataclass
class TableDef:
    name: str
    description: str = ""
    columns: list[ColumnDef] = field(default_factory=list)
    primary_key: list[str] = field(default_factory=list)

    def column(self, name: str) -> ColumnDef | None:
        lname = name.lower()
        return next((c for c in self.columns if c.name.lower() == lname), None)


class ForeignKey(NamedTuple):
    table: str
    column: str
    ref_table: str
    ref_column: str


@dataclass
class SchemaDef:
    db_name: str
    scenario: str = ""
    tables: list[TableDef] = field(default_factory=list)
    foreign_keys: list[ForeignKey] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list, compare=False, repr=False)

    def table(self, name: str) -> TableDef | None:
        lname = name.lower()
        return next((t for t in self.tables if t.name.lower() == lname), None)

    def to_dict(self) -> dict[str, Any]:
        return {
            "db_name": self.db_name,
            "scenario": self.scenario,
            "tables": [
                {
                    "name": t.name,
                    "description": t.description,
                    "columns": [
                        {"name": c.name, "type": c.sql_type, "description": c.description, "examples": list(c.example_values)}
                        for c in t.columns
                    ],
                    "primary_key": list(t.primary_key),
                }
                for t in self.tables
            ],
            "foreign_keys": [fk._asdict() for fk in self.foreign_keys],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SchemaDef":
        return _build_schema(d)


@dataclass
class SynthesisParams:
    mean: float = 10.0
    stddev: float = 4.0
    k_min: int = 2
    k_max: int = 20


def round_clamp(x: float, lo: int, hi: int) -> int:
    return int(min(max(math.floor(x + 0.5), lo), hi))


def draw_table_count(rng: np.random.Generator, params: SynthesisParams | None = None) -> float:
    """The unrounded, unclamped normal draw behind :func:`sample_table_count`."""
    p = params or SynthesisParams()
    return float(rng.normal(p.mean, p.stddev))


def sample_table_count(rng: np.random.Generator, params: SynthesisParams | None = None) -> int:
    p = params or SynthesisParams()
    return round_clamp(draw_table_count(rng, p), p.k_min, p.k_max)


# ---------------------------------------------------------------- rendering

def render_schema_json(schema: SchemaDef) -> str:
    return "```json\n" + json.dumps(schema.to_dict(), indent=2, ensure_ascii=False) + "\n```"


def table_ddl(schema: SchemaDef, table: TableDef) -> str:
    parts = [f"  {quote_ident(c.name)} {c.sql_type}" for c in table.columns]
    if table.primary_key:
        parts.append(f"  PRIMARY KEY ({', '.join(quote_ident(c) for c in table.primary_key)})")
    for fk in schema.foreign_keys:
        if fk.table.lower() == table.name.lower():
            parts.append(
                f"  FOREIGN KEY ({quote_ident(fk.column)}) REFERENCES {quote_ident(fk.ref_table)} ({quote_ident(fk.ref_column)})"
            )
    return f"CREATE TABLE {quote_ident(table.name)} (\n" + ",\n".join(parts) + "\n);"


def creation_order(schema: SchemaDef) -> list[TableDef]:
    """Referenced tables first; members of FK cycles keep their declared order."""
    deps = {t.name.lower(): set() for t in schema.tables}
    for fk in schema.foreign_keys:
        if fk.table.lower() != fk.ref_table.lower():
            deps[fk.table.lower()].add(fk.ref_table.lower())
    done: list[str] = []
    remaining = [t.name.lower() for t in schema.tables]
    while remaining:
        ready = [n for n in remaining if deps[n] <= set(done)]
        pick = ready[0] if ready else remaining[0]
        done.append(pick)
        remaining.remove(pick)
    return [schema.table(n) for n in done]


def render_ddl(schema: SchemaDef) -> list[str]:
    return [table_ddl(schema, t) for t in creation_order(schema)]


# ---------------------------------------------------------------- parsing

_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\n(.*?)```", re.S)


def _candidate_json_objects(text: str) -> list[Any]:
    found = []
    for _, body in _FENCE.findall(text):
        try:
            found.append(json.loads(body))
        except json.JSONDecodeError:
            continue
    if not found:
        start, end = text.find("{"), text.rfind("}")
        if start != -1 and end > start:
            try:
                found.append(json.loads(text[start : end + 1]))
            except json.JSONDecodeError:
                pass
    return found


def _as_example(v: Any) -> str | None:
    if v is None:
        return None
    if isinstance(v, bool):
        return "1" if v else "0"
    return str(v)


def _build_schema(d: dict[str, Any]) -> SchemaDef:
    warnings: list[str] = []
    db_name = str(d.get("db_name") or "").strip()
    if not db_name:
        raise InvariantError("schema has no db_name")
    raw_tables = d.get("tables")
    if not isinstance(raw_tables, list) or not raw_tables:
        raise ParseError("schema has no tables")
    tables: list[TableDef] = []
    seen_tables: set[str] = set()
    for rt in raw_tables:
        if not isinstance(rt, dict) or not str(rt.get("name") or "").strip():
            raise ParseError("table entry without a name")
        name = str(rt["name"]).strip()
        if name.lower() in seen_tables:
            raise InvariantError(f"duplicate table name {name!r}")
        seen_tables.add(name.lower())
        columns: list[ColumnDef] = []
        seen_cols: set[str] = set()
        for rc in rt.get("columns") or []:
            if not isinstance(rc, dict) or not str(rc.get("name") or "").strip():
                raise ParseError(f"table {name}: column entry without a name")
            cname = str(rc["name"]).strip()
            if cname.lower() in seen_cols:
                raise InvariantError(f"table {name}: duplicate column {cname!r}")
            seen_cols.add(cname.lower())
            ctype = str(rc.get("type") or "").strip()
            if not ctype:
                warnings.append(f"{name}.{cname}: missing type, using TEXT")
                ctype = "TEXT"
            examples = rc.get("examples", [])
            if not isinstance(examples, list):
                examples = [examples]
            columns.append(ColumnDef(cname, ctype, str(rc.get("description") or ""), [_as_example(v) for v in examples[:2]]))
        if not columns:
            raise InvariantError(f"table {name} has no columns")
        pk_raw = rt.get("primary_key") or []
        if isinstance(pk_raw, str):
            pk_raw = [pk_raw]
        by_lower = {c.name.lower(): c.name for c in columns}
        pk = []
        for p in pk_raw:
            if str(p).lower() in by_lower:
                pk.append(by_lower[str(p).lower()])
            else:
                warnings.append(f"{name}: primary key column {p!r} not found, dropped")
        tables.append(TableDef(name, str(rt.get("description") or ""), columns, pk))
    schema = SchemaDef(db_name, str(d.get("scenario") or ""), tables, [], warnings)
    for rf in d.get("foreign_keys") or []:
        try:
            fk = ForeignKey(*(str(rf[k]) for k in ("table", "column", "ref_table", "ref_column")))
        except (KeyError, TypeError):
            warnings.append(f"malformed foreign key entry {rf!r}, dropped")
            continue
        src, dst = schema.table(fk.table), schema.table(fk.ref_table)
        src_col = src.column(fk.column) if src else None
        dst_col = dst.column(fk.ref_column) if dst else None
        if not (src_col and dst_col):
            warnings.append(f"dangling foreign key {tuple(fk)}, dropped")
            continue
        fk = ForeignKey(src.name, src_col.name, dst.name, dst_col.name)
        if fk not in schema.foreign_keys:
            schema.foreign_keys.append(fk)
    for w in warnings:
        logger.warning("schema %s: %s", db_name, w)
    return schema


def parse_schema(llm_text: str) -> SchemaDef:
    objects = [o for o in _candidate_json_objects(llm_text) if isinstance(o, dict) and "tables" in o]
    if not objects:
        raise ParseError("no schema JSON block found in response")
    return _build_schema(objects[-1])


# ---------------------------------------------------------------- prompts

def load_demos(path: str | Path | None = None) -> list[dict[str, Any]]:
    try:
        if path is None:
            text = resources.files("sqlforge").joinpath("data/schema_demos.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise ConfigError(f"demonstration file not available: {path}") from exc
    demos = json.loads(text)
    if len(demos) < 2:
        raise ConfigError("two demonstrations are required")
    return demos[:2]


def build_generation_prompt(table: WebTable, k: int, demos_path: str | Path | None = None) -> ChatRequest:
    demos = load_demos(demos_path)
    demo_text = []
    for i, demo in enumerate(demos, 1):
        wt = WebTable(f"demo{i}", demo["web_table"]["headers"], [tuple(r) for r in demo["web_table"]["rows"]])
        demo_schema = SchemaDef.from_dict(demo["database"])
        demo_text.append(
            f"### Example {i}\nWeb table:\n```csv\n{render_table(wt)}\n```\n"
            f"Business scenario: {demo['scenario']}\n"
            f"Database:\n{render_schema_json(demo_schema)}"
        )
    text = (
        "## Task Instruction\n"
        "You are a database architect. Read the web table at the end, imagine the realistic business scenario "
        "hidden behind it, and design a relational database that could store the data of that scenario.\n"
        f"The database must contain exactly {k} relational tables. Give every table a name, a description, its "
        "columns (name, SQLite data type, description, two example values that form two example rows) and its "
        "primary key, and list every foreign-key relationship between tables.\n"
        "Answer with the business scenario and the database as one JSON object inside a ```json block, using "
        "the keys db_name, scenario, tables and foreign_keys exactly as in the examples.\n\n"
        "## Demonstrations\n" + "\n\n".join(demo_text) + "\n\n"
        f"## Web Table\n```csv\n{render_table(table)}\n```"
    )
    return ChatRequest([("user", text)], temperature=0.8, n_samples=1)


def build_enhance_prompt(schema: SchemaDef) -> ChatRequest:
    text = (
        "## Task Instruction\n"
        "You are a database architect. Enhance the structure of the database below: add relevant columns to "
        "each relational table so it reaches real-world complexity, and complete any missing primary keys and "
        "foreign-key relationships. Keep every existing table and column with its exact name. Provide a "
        "description and two example values for each new column.\n"
        "Answer with the complete enhanced database as one JSON object inside a ```json block with the same "
        "keys as the input.\n\n"
        f"## Database Information\nBusiness scenario: {schema.scenario}\n{render_schema_json(schema)}"
    )
    return ChatRequest([("user", text)], temperature=0.8, n_samples=1)


def _preserves(original: SchemaDef, enhanced: SchemaDef) -> str | None:
    for t in original.tables:
        nt = enhanced.table(t.name)
        if nt is None:
            return f"table {t.name} dropped"
        for c in t.columns:
            if nt.column(c.name) is None:
                return f"column {t.name}.{c.name} dropped"
        if t.primary_key and [p.lower() for p in nt.primary_key] != [p.lower() for p in t.primary_key]:
            return f"primary key of {t.name} changed"
    new_fks = {tuple(x.lower() for x in fk) for fk in enhanced.foreign_keys}
    for fk in original.foreign_keys:
        if tuple(x.lower() for x in fk) not in new_fks:
            return f"foreign key {tuple(fk)} dropped"
    return None


def enhance(schema: SchemaDef, gateway, iterations: int = 1, item_key: str | None = None) -> SchemaDef:
    """Widen tables and complete keys; any invalid response leaves the schema unchanged."""
    current = schema
    for _ in range(iterations):
        response = gateway.complete(build_enhance_prompt(current), item_key=item_key)
        if not response.texts:
            logger.warning("enhance %s: empty response, keeping schema", schema.db_name)
            break
        try:
            candidate = parse_schema(response.texts[0])
        except (ParseError, InvariantError) as exc:
            logger.warning("enhance %s: unparsable response (%s), keeping schema", schema.db_name, exc)
            break
        problem = _preserves(current, candidate)
        if problem:
            logger.warning("enhance %s: rejected (%s), keeping schema", schema.db_name, problem)
            break
        candidate.db_name, candidate.scenario = current.db_name, current.scenario
        current = candidate
    return current


# ---------------------------------------------------------------- materialisation

def _affinity(sql_type: str) -> str:
    t = sql_type.upper()
    if "INT" in t:
        return "integer"
    if any(s in t for s in ("CHAR", "CLOB", "TEXT")):
        return "text"
    if any(s in t for s in ("REAL", "FLOA", "DOUB")):
        return "real"
    return "numeric"


def materialize(schema: SchemaDef, path: str | Path) -> Path:
    """Create the SQLite file with one table per definition and the example rows.

    Rows that break a foreign key are removed so the integrity check passes;
    DDL rejection or duplicate primary keys raise :class:`MaterializeError`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        tmp.unlink()
    conn = sqlite3.connect(tmp)
    try:
        conn.execute("PRAGMA foreign_keys = OFF")
        for ddl in render_ddl(schema):
            try:
                conn.execute(ddl)
            except sqlite3.Error as exc:
                raise MaterializeError(f"DDL rejected: {exc}\n{ddl}") from exc
        _index_referenced_columns(conn, schema)
        for t in schema.tables:
            n_rows = max((len(c.example_values) for c in t.columns), default=0)
            cols = ", ".join(quote_ident(c.name) for c in t.columns)
            marks = ", ".join("?" for _ in t.columns)
            for i in range(n_rows):
                row = [c.example_values[i] if i < len(c.example_values) else None for c in t.columns]
                if all(v is None for v in row):
                    continue
                try:
                    conn.execute(f"INSERT INTO {quote_ident(t.name)} ({cols}) VALUES ({marks})", row)
                except sqlite3.IntegrityError as exc:
                    raise MaterializeError(f"{t.name}: example row {i} rejected: {exc}") from exc
            _log_affinity_mismatches(conn, schema, t)
        _drop_fk_violations(conn, schema)
        conn.commit()
        if conn.execute("PRAGMA integrity_check").fetchone()[0] != "ok":
            raise MaterializeError("integrity check failed")
    except MaterializeError:
        conn.close()
        tmp.unlink(missing_ok=True)
        raise
    except sqlite3.Error as exc:
        conn.close()
        tmp.unlink(missing_ok=True)
        raise MaterializeError(str(exc)) from exc
    conn.close()
    os.replace(tmp, path)
    return path


def _index_referenced_columns(conn: sqlite3.Connection, schema: SchemaDef) -> None:
    # SQLite requires the parent key of a foreign key to be PRIMARY KEY or UNIQUE
    done = set()
    for fk in schema.foreign_keys:
        parent = schema.table(fk.ref_table)
        key = (parent.name.lower(), fk.ref_column.lower())
        if key in done or [p.lower() for p in parent.primary_key] == [fk.ref_column.lower()]:
            continue
        done.add(key)
        idx = quote_ident(f"uq_{parent.name}_{fk.ref_column}")
        conn.execute(f"CREATE UNIQUE INDEX {idx} ON {quote_ident(parent.name)} ({quote_ident(fk.ref_column)})")


def _log_affinity_mismatches(conn, schema: SchemaDef, table: TableDef) -> None:
    for c in table.columns:
        aff = _affinity(c.sql_type)
        if aff not in ("integer", "real"):
            continue
        n = conn.execute(
            f"SELECT COUNT(*) FROM {quote_ident(table.name)} WHERE typeof({quote_ident(c.name)}) = 'text'"
        ).fetchone()[0]
        if n:
            logger.info("%s.%s.%s: %d example value(s) stored as text despite %s type",
                        schema.db_name, table.name, c.name, n, c.sql_type)


def _drop_fk_violations(conn: sqlite3.Connection, schema: SchemaDef) -> None:
    for _ in range(len(schema.tables) + 1):
        violations = conn.execute("PRAGMA foreign_key_check").fetchall()
        if not violations:
            return
        for table, rowid, parent, _ in violations:
            logger.info("%s: removing row %s of %s (no matching %s row)", schema.db_name, rowid, table, parent)
            conn.execute(f"DELETE FROM {quote_ident(table)} WHERE rowid = ?", (rowid,))
    if conn.execute("PRAGMA foreign_key_check").fetchall():
        raise MaterializeError("foreign key violations could not be resolved")


def introspect(db_path: str | Path) -> dict[str, Any]:
    """Tables, columns, primary keys and foreign keys as stored in the database file."""
    conn = sqlite3.connect(Path(db_path).resolve().as_uri() + "?mode=ro", uri=True)
    try:
        names = [r[0] for r in conn.execute(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid")]
        out: dict[str, Any] = {"tables": {}, "foreign_keys": set()}
        for name in names:
            info = conn.execute(f"PRAGMA table_info({quote_ident(name)})").fetchall()
            cols = [(r[1], r[2]) for r in info]
            pk = [r[1] for r in sorted((r for r in info if r[5]), key=lambda r: r[5])]
            out["tables"][name] = {"columns": cols, "primary_key": pk}
            for fk in conn.execute(f"PRAGMA foreign_key_list({quote_ident(name)})").fetchall():
                out["foreign_keys"].add((name, fk[3], fk[2], fk[4]))
        return out
    finally:
        conn.close()


def schema_from_db(db_path: str | Path, db_name: str | None = None) -> SchemaDef:
    """Reconstruct a description-less SchemaDef from a database file."""
    info = introspect(db_path)
    tables = [
        TableDef(name, "", [ColumnDef(c, t or "TEXT") for c, t in spec["columns"]], list(spec["primary_key"]))
        for name, spec in info["tables"].items()
    ]
    fks = [ForeignKey(*fk) for fk in sorted(info["foreign_keys"])]
    return SchemaDef(db_name or Path(db_path).stem, "", tables, fks)


def synthesize_schema(
    table: WebTable,
    gateway,
    rng: np.random.Generator,
    params: SynthesisParams | None = None,
    enhance_iterations: int = 1,
    item_key: str | None = None,
    demos_path: str | Path | None = None,
) -> SchemaDef:
    """Generation + enhancement for one seed table (raises ParseError/InvariantError)."""
    k = sample_table_count(rng, params)
    request = build_generation_prompt(table, k, demos_path)
    response = gateway.complete(request, item_key=item_key)
    if not response.texts:
        raise ParseError("empty generation response")
    schema = parse_schema(response.texts[0])
    return enhance(schema, gateway, enhance_iterations, item_key=item_key)


def sanitize_name(name: str) -> str:
    s = re.sub(r"[^A-Za-z0-9_]+", "_", name.strip()).strip("_").lower()
    return s or "db"


def column_counts(schemas: Sequence[SchemaDef]) -> dict[str, float]:
    """Average tables/db and columns/table over a set of schemas."""
    if not schemas:
        return {"tables_per_db": 0.0, "columns_per_table": 0.0}
    n_tables = sum(len(s.tables) for s in schemas)
    n_cols = sum(len(t.columns) for s in schemas for t in s.tables)
    return {"tables_per_db": n_tables / len(schemas), "columns_per_table": n_cols / n_tables if n_tables else 0.0}
