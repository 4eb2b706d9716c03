"""Training-pair export: commented DDL plus question in, chain-of-thought out."""
from __future__ import annotations

import json
import logging
import sqlite3
from dataclasses import dataclass, field
from difflib import SequenceMatcher
from pathlib import Path
from typing import Any, Sequence

from . import exec_engine
from .cot_synth import DataSample, extract_final_sql, question_block
from .schema_synth import SchemaDef, creation_order, quote_ident, schema_from_db

logger = logging.getLogger(__name__)

MATCH_FLOOR = 4
MATCH_RATIO = 0.8
MAX_MATCHES_PER_COLUMN = 2
MAX_SCAN_VALUES = 1000


def _distinct_values(conn: sqlite3.Connection, table: str, column: str) -> list[tuple[Any, int]]:
    return conn.execute(
        f"SELECT {quote_ident(column)}, COUNT(*) FROM {quote_ident(table)} "
        f"WHERE {quote_ident(column)} IS NOT NULL GROUP BY 1"
    ).fetchall()


def representative_values(db_path: str | Path, table: str, column: str, k: int = 2) -> list[Any]:
    """The ``k`` most frequent distinct non-NULL values, frequency ties broken by ``str()``."""
    conn = exec_engine.connect_readonly(db_path)
    try:
        counts = _distinct_values(conn, table, column)
    finally:
        conn.close()
    counts.sort(key=lambda vc: (-vc[1], str(vc[0])))
    return [v for v, _ in counts[:k]]


def _match_length(value: str, question: str) -> int:
    m = SequenceMatcher(None, value, question, autojunk=False).find_longest_match(0, len(value), 0, len(question))
    return m.size


def value_matches(value: str, question: str, floor: int = MATCH_FLOOR, ratio: float = MATCH_RATIO) -> int:
    """Match length if the value qualifies as mentioned in the question, else 0."""
    v, q = value.lower(), question.lower()
    need = max(floor, ratio * len(v))
    size = _match_length(v, q)
    return size if size >= need else 0


def relevant_values(
    question_text: str, db_path: str | Path, schema: SchemaDef | None = None,
    floor: int = MATCH_FLOOR, ratio: float = MATCH_RATIO,
) -> list[tuple[str, str, str]]:
    schema = schema or schema_from_db(db_path)
    conn = exec_engine.connect_readonly(db_path)
    out = []
    try:
        for table in schema.tables:
            for col in table.columns:
                rows = conn.execute(
                    f"SELECT DISTINCT {quote_ident(col.name)} FROM {quote_ident(table.name)} "
                    f"WHERE typeof({quote_ident(col.name)}) = 'text' LIMIT {MAX_SCAN_VALUES}"
                ).fetchall()
                scored = [(value_matches(v, question_text, floor, ratio), v) for (v,) in rows]
                scored = sorted((s for s in scored if s[0]), key=lambda sv: (-sv[0], sv[1]))
                out.extend((table.name, col.name, v) for _, v in scored[:MAX_MATCHES_PER_COLUMN])
    finally:
        conn.close()
    return out


@dataclass
class SchemaRendering:
    ddl_text: str
    included_comments: dict[str, dict[str, Any]] = field(default_factory=dict)


def _literal(v: Any) -> str:
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    return repr(v)


def render_schema(schema: SchemaDef, db_path: str | Path, question_text: str = "") -> SchemaRendering:
    matched: dict[tuple[str, str], list[str]] = {}
    if question_text:
        for t, c, v in relevant_values(question_text, db_path, schema):
            matched.setdefault((t.lower(), c.lower()), []).append(v)

    fk_by_table: dict[str, list] = {}
    for fk in schema.foreign_keys:
        fk_by_table.setdefault(fk.table.lower(), []).append(fk)

    comments: dict[str, dict[str, Any]] = {}
    statements = []
    for table in creation_order(schema):
        entries: list[tuple[str, str]] = []
        for col in table.columns:
            reps = representative_values(db_path, table.name, col.name)
            hits = matched.get((table.name.lower(), col.name.lower()), [])
            parts = []
            if col.description:
                parts.append(" ".join(col.description.split()))
            if reps:
                parts.append("example: " + ", ".join(_literal(v) for v in reps))
            if hits:
                parts.append("matched values: " + ", ".join(_literal(v) for v in hits))
            comments[f"{table.name}.{col.name}"] = {"description": col.description or None,
                                                    "representative": reps, "matched": hits}
            entries.append((f"  {quote_ident(col.name)} {col.sql_type}", " | ".join(parts)))
        if table.primary_key:
            entries.append((f"  PRIMARY KEY ({', '.join(quote_ident(c) for c in table.primary_key)})", ""))
        for fk in fk_by_table.get(table.name.lower(), []):
            entries.append((f"  FOREIGN KEY ({quote_ident(fk.column)}) REFERENCES "
                            f"{quote_ident(fk.ref_table)} ({quote_ident(fk.ref_column)})", ""))
        lines = []
        for i, (defn, comment) in enumerate(entries):
            sep = "," if i < len(entries) - 1 else ""
            lines.append(f"{defn}{sep}" + (f" -- {comment}" if comment else ""))
        statements.append(f"CREATE TABLE {quote_ident(table.name)} (\n" + "\n".join(lines) + "\n);")
    return SchemaRendering("\n\n".join(statements), comments)


@dataclass
class TrainExample:
    input_text: str
    output_text: str
    meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"input": self.input_text, "output": self.output_text, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainExample":
        return cls(d["input"], d["output"], d.get("meta", {}))


def build_input(rendering: SchemaRendering, sample: DataSample) -> str:
    return (
        "Task Overview:\nYou are a data science expert. Below is a database schema and a natural language "
        "question. Write a SQLite query that answers the question, reasoning step by step.\n\n"
        f"Database Engine:\nSQLite\n\nDatabase Schema:\n{rendering.ddl_text}\n\n"
        f"Question:\n{question_block(sample.question)}\n\n"
        "Output the final SQL query in a ```sql block."
    )


def to_example(sample: DataSample, schema: SchemaDef | None = None) -> TrainExample:
    schema = schema or schema_from_db(sample.db_path, sample.db_name)
    rendering = render_schema(schema, sample.db_path, sample.question.text)
    meta = {"db_name": sample.db_name, "style": sample.question.style.value, "complexity": sample.complexity,
            "sql": sample.sql, **{k: v for k, v in sample.provenance.items() if k in ("sample_id", "corrected")}}
    return TrainExample(build_input(rendering, sample), sample.cot, meta)


@dataclass
class ExportReport:
    n_input: int = 0
    n_written: int = 0
    excluded: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"n_input": self.n_input, "n_written": self.n_written, "excluded": self.excluded}


def export(
    samples: Sequence[DataSample], out_path: str | Path, schemas: dict[str, SchemaDef] | None = None,
) -> ExportReport:
    """Write one JSON line per sample whose CoT ends in its own SQL; others are excluded.

    ``schemas`` maps db_path to the synthesized SchemaDef so column descriptions
    survive; databases missing from it are introspected.
    """
    report = ExportReport(n_input=len(samples))
    schemas = dict(schemas or {})
    with open(out_path, "w", encoding="utf-8") as fh:
        for s in samples:
            ident = s.provenance.get("sample_id") or f"{s.db_name}:{len(report.excluded) + report.n_written}"
            if extract_final_sql(s.cot) != s.sql:
                logger.warning("%s: CoT final SQL differs from sql field, excluded", ident)
                report.excluded.append(ident)
                continue
            if s.db_path not in schemas:
                schemas[s.db_path] = schema_from_db(s.db_path, s.db_name)
            fh.write(json.dumps(to_example(s, schemas[s.db_path]).to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
            report.n_written += 1
    return report


def read_examples(path: str | Path) -> list[TrainExample]:
    with open(path, encoding="utf-8") as fh:
        return [TrainExample.from_dict(json.loads(line)) for line in fh if line.strip()]

