"""Complexity-aware SQL generation per database and the post-processing filter chain."""
from __future__ import annotations

import json
import logging
import re
import sqlite3
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import exec_engine
from .errors import DatabaseAborted, EmptyDatabase, ParseError, ProviderError, TransportError
from .exec_engine import ExecOutcome
from .llm_gateway import ChatRequest
from .schema_synth import SchemaDef, quote_ident, render_ddl
from .sql_analysis import is_select, parse, skeleton_of, template_of

logger = logging.getLogger(__name__)

GEOMETRIC_P = 0.6
SELECT_COUNT_CAP = 8
N_FUNCTIONS = 4
N_VALUE_COLUMNS = 5
N_VALUES_PER_COLUMN = 3


class ComplexityLevel(str, Enum):
    SIMPLE = "Simple"
    MODERATE = "Moderate"
    COMPLEX = "Complex"
    HIGHLY_COMPLEX = "Highly Complex"


LEVELS = list(ComplexityLevel)


def load_complexity_levels(path: str | Path | None = None) -> dict[ComplexityLevel, dict[str, str]]:
    if path is None:
        text = resources.files("sqlforge").joinpath("data/complexity_levels.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    raw = json.loads(text)
    levels = {ComplexityLevel(k): v for k, v in raw.items()}
    if set(levels) != set(ComplexityLevel):
        raise ValueError("complexity catalog must define exactly the four levels")
    return levels


@dataclass
class FunctionCatalog:
    entries: list[tuple[str, str]]

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("function names must be unique")

    @classmethod
    def load(cls, path: str | Path | None = None) -> "FunctionCatalog":
        if path is None:
            text = resources.files("sqlforge").joinpath("data/functions.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls([(n, d) for n, d in json.loads(text)])


@dataclass
class SqlSample:
    sql_text: str
    db_name: str
    complexity: str | None = None
    requested_select_count: int | None = None
    template: str = ""
    skeleton: str = ""
    exec: ExecOutcome | None = field(default=None, compare=False, repr=False)
    sample_id: str = ""

    def to_dict(self) -> dict[str, Any]:
        out = {
            "sample_id": self.sample_id,
            "db_name": self.db_name,
            "sql": self.sql_text,
            "complexity": self.complexity,
            "requested_select_count": self.requested_select_count,
            "template": self.template,
            "skeleton": self.skeleton,
        }
        if self.exec is not None:
            out["exec"] = {
                "status": self.exec.status,
                "row_count": len(self.exec.rows),
                "column_count": self.exec.column_count,
                "fingerprint": exec_engine.fingerprint(self.exec),
            }
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SqlSample":
        return cls(d["sql"], d["db_name"], d.get("complexity"), d.get("requested_select_count"),
                   d.get("template", ""), d.get("skeleton", ""), None, d.get("sample_id", ""))


def sample_select_count(rng: np.random.Generator, p: float = GEOMETRIC_P, cap: int | None = SELECT_COUNT_CAP) -> int:
    k = int(rng.geometric(p))
    return min(k, cap) if cap else k


def sample_complexity(rng: np.random.Generator, weights: Sequence[float] | None = None) -> ComplexityLevel:
    idx = rng.choice(len(LEVELS), p=None if weights is None else np.asarray(weights) / np.sum(weights))
    return LEVELS[int(idx)]


def sample_db_values(
    db_path: str | Path, schema: SchemaDef, rng: np.random.Generator,
    n_columns: int = N_VALUE_COLUMNS, n_values: int = N_VALUES_PER_COLUMN,
) -> list[tuple[str, str, list[Any]]]:
    pairs = [(t.name, c.name) for t in schema.tables for c in t.columns]
    if not pairs:
        return []
    picked = sorted(rng.choice(len(pairs), size=min(n_columns, len(pairs)), replace=False))
    out = []
    conn = exec_engine.connect_readonly(db_path)
    try:
        for i in picked:
            table, col = pairs[int(i)]
            try:
                vals = [r[0] for r in conn.execute(
                    f"SELECT DISTINCT {quote_ident(col)} FROM {quote_ident(table)} "
                    f"WHERE {quote_ident(col)} IS NOT NULL LIMIT 100")]
            except sqlite3.Error:
                continue
            if len(vals) > n_values:
                keep = sorted(rng.choice(len(vals), size=n_values, replace=False))
                vals = [vals[int(j)] for j in keep]
            out.append((table, col, vals))
    finally:
        conn.close()
    return out


def build_sql_prompt(
    schema: SchemaDef,
    db_path: str | Path,
    catalog: FunctionCatalog,
    complexity: ComplexityLevel,
    select_count: int,
    rng: np.random.Generator,
    levels: dict[ComplexityLevel, dict[str, str]] | None = None,
    n_functions: int = N_FUNCTIONS,
    n_value_columns: int = N_VALUE_COLUMNS,
) -> ChatRequest:
    if not schema.tables:
        raise EmptyDatabase(f"database {schema.db_name} has no tables")
    levels = levels or load_complexity_levels()
    fn_idx = sorted(rng.choice(len(catalog.entries), size=min(n_functions, len(catalog.entries)), replace=False))
    functions = [catalog.entries[int(i)] for i in fn_idx]
    values = sample_db_values(db_path, schema, rng, n_value_columns)
    level = levels[ComplexityLevel(complexity)]
    plural = "column" if select_count == 1 else "columns"

    fn_lines = "\n".join(f"- {name}: {desc}" for name, desc in functions)
    val_lines = "\n".join(
        f"- {table}.{col}: {json.dumps(vals, ensure_ascii=False, default=str)}" for table, col, vals in values
    ) or "- (no stored values)"
    text = (
        "## Task Instruction\n"
        "You are an SQLite expert. Write one meaningful SQL query over the database below that answers a "
        "realistic data-analysis need. The query must be valid SQLite, must only read data (SELECT, optionally "
        "with WITH clauses), and must match the requested complexity. You may use the listed advanced "
        "functions where they fit, and the listed stored values to write realistic predicates. Output the "
        "query inside a ```sql block.\n\n"
        "## Database Schema\n" + "\n\n".join(render_ddl(schema)) + "\n\n"
        "## Advanced SQL Functions\n" + fn_lines + "\n\n"
        "## Database Values\n" + val_lines + "\n\n"
        f"## SQL Complexity\nLevel: {complexity.value}\nCriteria: {level['criteria']}\n"
        f"Example:\n```sql\n{level['example']}\n```\n\n"
        f"## Column Selection Constraint\nThe SQL query must return exactly {select_count} {plural}."
    )
    return ChatRequest([("user", text)], temperature=0.8, n_samples=1)


_SQL_BLOCK = re.compile(r"```[ \t]*sql[ \t]*\n(.*?)```", re.S | re.I)


def extract_sql(text: str) -> str | None:
    blocks = _SQL_BLOCK.findall(text)
    if blocks:
        sql = blocks[-1].strip()
        return sql or None
    stripped = text.strip()
    if re.match(r"(?is)^(select|with)\b", stripped):
        return stripped
    return None


def postprocess(
    candidates: Sequence[str],
    db_path: str | Path,
    timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS,
    db_name: str = "",
    labels: Sequence[tuple[str | None, int | None]] | None = None,
    stats: dict[str, int] | None = None,
    workers: int = 4,
) -> list[SqlSample]:
    """SELECT-only filter, execution filter, then first-wins template dedup."""
    counts = {"input": len(candidates), "non_select": 0, "exec_error": 0, "timeout": 0, "duplicate": 0, "kept": 0}
    selectable: list[int] = []
    templates: dict[int, tuple[str, str]] = {}
    for i, sql in enumerate(candidates):
        try:
            tree = parse(sql)
        except ParseError:
            counts["exec_error"] += 1  # unparsable text is a syntax error
            continue
        if not is_select(tree):
            counts["non_select"] += 1
            continue
        try:
            templates[i] = (template_of(sql), skeleton_of(sql))
        except ParseError:
            counts["exec_error"] += 1
            continue
        selectable.append(i)

    outcomes = exec_engine.execute_many(db_path, [candidates[i] for i in selectable], timeout_ms, workers)
    seen: set[str] = set()
    kept = []
    for i, out in zip(selectable, outcomes):
        if out.status == exec_engine.TIMEOUT:
            counts["timeout"] += 1
            continue
        if out.status != exec_engine.ROWS:
            counts["exec_error"] += 1
            continue
        template, skeleton = templates[i]
        if template in seen:
            counts["duplicate"] += 1
            continue
        seen.add(template)
        complexity, k = labels[i] if labels is not None else (None, None)
        kept.append(SqlSample(candidates[i].strip(), db_name, complexity, k, template, skeleton, out))
    counts["kept"] = len(kept)
    if stats is not None:
        stats.update(counts)
    return kept


def generate_for_db(
    schema: SchemaDef,
    db_path: str | Path,
    gateway,
    rng: np.random.Generator,
    budget: int = 300,
    n_samples: int = 8,
    temperature: float = 0.8,
    timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS,
    max_consecutive_failures: int = 10,
    catalog: FunctionCatalog | None = None,
    complexity_weights: Sequence[float] | None = None,
    item_key: str | None = None,
    stats: dict[str, int] | None = None,
) -> list[SqlSample]:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    catalog = catalog or FunctionCatalog.load()
    levels = load_complexity_levels()
    raw: list[str] = []
    labels: list[tuple[str, int]] = []
    failures = 0
    n_request = 0
    while len(raw) < budget:
        complexity = sample_complexity(rng, complexity_weights)
        k = sample_select_count(rng)
        request = build_sql_prompt(schema, db_path, catalog, complexity, k, rng, levels)
        request.temperature = temperature
        request.n_samples = min(n_samples, budget - len(raw))
        key = f"{item_key or schema.db_name}:{n_request}"
        n_request += 1
        try:
            response = gateway.complete(request, item_key=key)
        except (TransportError, ProviderError) as exc:
            logger.warning("%s: SQL generation request failed: %s", schema.db_name, exc)
            sqls = []
        else:
            sqls = [s for s in (extract_sql(t) for t in response.texts) if s]
        if not sqls:
            failures += 1
            if failures >= max_consecutive_failures:
                raise DatabaseAborted(f"{schema.db_name}: {failures} consecutive failed generation requests")
            continue
        failures = 0
        sqls = sqls[: budget - len(raw)]
        raw.extend(sqls)
        labels.extend([(complexity.value, k)] * len(sqls))
    samples = postprocess(raw, db_path, timeout_ms, schema.db_name, labels, stats)
    for j, s in enumerate(samples):
        s.sample_id = f"{schema.db_name}:{j}"
    return samples
