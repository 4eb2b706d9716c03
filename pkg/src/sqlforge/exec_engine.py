"""Read-only SQLite execution with timeouts, result canonicalisation and comparison.

``same_result`` is the execution-accuracy comparator: rows are compared as a
multiset (duplicates count, order does not), columns positionally, NULL equals
NULL, floats rounded to 6 decimals.  ``fingerprint`` hashes the same canonical
form so that equal fingerprints on ``Rows`` outcomes coincide with
``same_result``.
"""
from __future__ import annotations

import hashlib
import json
import sqlite3
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import VoteFailed

ROWS = "rows"
ERROR = "error"
TIMEOUT = "timeout"

DEFAULT_TIMEOUT_MS = 30_000
MAX_ROWS = 100_000
FLOAT_DECIMALS = 6
_PROGRESS_STEPS = 1_000


def canonical_value(value: Any) -> Any:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        r = round(value, FLOAT_DECIMALS)
        if r.is_integer() and abs(r) < 2**63:
            return int(r)
        return r + 0.0  # -0.0 -> 0.0
    if isinstance(value, str):
        return value.rstrip("\x00")
    if isinstance(value, memoryview):
        return bytes(value)
    return value


def canonical_rows(rows: Iterable[Sequence[Any]]) -> tuple[tuple[Any, ...], ...]:
    return tuple(tuple(canonical_value(v) for v in row) for row in rows)


@dataclass(frozen=True)
class ExecOutcome:
    status: str
    rows: tuple[tuple[Any, ...], ...] = ()
    column_count: int = 0
    error_text: str = ""
    elapsed_ms: int = 0
    error_kind: str = field(default="", compare=False)

    @property
    def ok(self) -> bool:
        return self.status == ROWS

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[Any]], column_count: int | None = None, elapsed_ms: int = 0):
        rows = canonical_rows(rows)
        if column_count is None:
            column_count = len(rows[0]) if rows else 0
        if any(len(r) != column_count for r in rows):
            raise ValueError("every row must have column_count values")
        return cls(ROWS, rows, column_count, "", elapsed_ms)

    @classmethod
    def error(cls, text: str, kind: str = "other", elapsed_ms: int = 0):
        return cls(ERROR, (), 0, text, elapsed_ms, kind)

    @classmethod
    def timeout(cls, elapsed_ms: int = 0):
        return cls(TIMEOUT, (), 0, "timeout", elapsed_ms, "timeout")


def _error_kind(exc: BaseException) -> str:
    msg = str(exc).lower()
    if "syntax error" in msg or "incomplete input" in msg or "unrecognized token" in msg:
        sub = "syntax"
    elif "no such table" in msg or "no such column" in msg or "ambiguous column" in msg:
        sub = "schema"
    elif "no such function" in msg or "wrong number of arguments" in msg:
        sub = "function"
    elif "readonly" in msg or "read-only" in msg:
        sub = "readonly"
    elif "one statement at a time" in msg:
        sub = "multi_statement"
    else:
        sub = "other"
    return f"{type(exc).__name__}:{sub}"


def connect_readonly(db_path: str | Path) -> sqlite3.Connection:
    uri = Path(db_path).resolve().as_uri() + "?mode=ro"
    return sqlite3.connect(uri, uri=True, check_same_thread=False)


def execute(db_path: str | Path, sql: str, timeout_ms: int = DEFAULT_TIMEOUT_MS, max_rows: int = MAX_ROWS) -> ExecOutcome:
    """Run one statement on a read-only connection; errors and timeouts are encoded, never raised."""
    start = time.monotonic()

    def elapsed() -> int:
        return int((time.monotonic() - start) * 1000)

    if not Path(db_path).is_file():
        return ExecOutcome.error(f"database not found: {db_path}", "missing_db")
    deadline = start + timeout_ms / 1000.0
    conn = None
    try:
        conn = connect_readonly(db_path)
        conn.execute("PRAGMA query_only = 1")
        conn.set_progress_handler(lambda: 1 if time.monotonic() > deadline else 0, _PROGRESS_STEPS)
        cur = conn.execute(sql)
        ncols = len(cur.description) if cur.description else 0
        rows: list[tuple] = []
        while True:
            chunk = cur.fetchmany(1000)
            if not chunk:
                break
            rows.extend(chunk)
            if len(rows) > max_rows:
                return ExecOutcome.error(f"oversized result (> {max_rows} rows)", "oversized", elapsed())
        return ExecOutcome(ROWS, canonical_rows(rows), ncols, "", elapsed())
    except sqlite3.OperationalError as exc:
        if "interrupted" in str(exc).lower():
            return ExecOutcome.timeout(elapsed())
        return ExecOutcome.error(str(exc), _error_kind(exc), elapsed())
    except (sqlite3.Error, sqlite3.Warning, ValueError, OverflowError, MemoryError) as exc:
        return ExecOutcome.error(str(exc), _error_kind(exc), elapsed())
    finally:
        if conn is not None:
            conn.close()


def execute_many(
    db_path: str | Path, sqls: Sequence[str | None], timeout_ms: int = DEFAULT_TIMEOUT_MS, workers: int = 4
) -> list[ExecOutcome | None]:
    """Execute each statement on its own connection; ``None`` entries stay ``None``."""

    def run(sql):
        return None if sql is None else execute(db_path, sql, timeout_ms)

    if workers <= 1 or len(sqls) <= 1:
        return [run(s) for s in sqls]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, sqls))


def same_result(a: ExecOutcome, b: ExecOutcome) -> bool:
    if a.status != ROWS or b.status != ROWS:
        return False
    if a.column_count != b.column_count:
        return False
    if len(a.rows) != len(b.rows):
        return False
    return Counter(a.rows) == Counter(b.rows)


def _encode_value(v: Any) -> list[str]:
    if v is None:
        return ["n", ""]
    if isinstance(v, int):
        return ["i", str(v)]
    if isinstance(v, float):
        return ["f", repr(v)]
    if isinstance(v, bytes):
        return ["b", v.hex()]
    return ["s", str(v)]


def fingerprint(outcome: ExecOutcome) -> str:
    h = hashlib.sha256()
    if outcome.status == ROWS:
        encoded = sorted(json.dumps([_encode_value(v) for v in row], ensure_ascii=False) for row in outcome.rows)
        h.update(f"rows|{outcome.column_count}|".encode())
        for line in encoded:
            h.update(line.encode("utf-8"))
            h.update(b"\n")
    elif outcome.status == ERROR:
        h.update(f"error|{outcome.error_kind}".encode())
    else:
        h.update(b"timeout")
    return h.hexdigest()


@dataclass
class VoteResult:
    winner: int
    winning_group: list[int]
    groups: dict[str, list[int]]
    invalid: list[int]


def group_vote(outcomes: Sequence[ExecOutcome | None]) -> VoteResult:
    """Group successful outcomes by result fingerprint and pick the largest group.

    Ties go to the group holding the lowest candidate index; the chosen
    candidate is the lowest index inside the winning group.  ``None`` marks a
    candidate whose SQL could not be extracted.
    """
    groups: dict[str, list[int]] = {}
    invalid = []
    for i, out in enumerate(outcomes):
        if out is None or out.status != ROWS:
            invalid.append(i)
            continue
        groups.setdefault(fingerprint(out), []).append(i)
    if not groups:
        raise VoteFailed(f"all {len(outcomes)} candidates failed to execute")
    # insertion order follows lowest member index, so max() keeps the earliest on ties
    best = max(groups.values(), key=len)
    return VoteResult(best[0], best, groups, invalid)
