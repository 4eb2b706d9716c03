"""SQL fingerprints (templates, skeletons), per-query features and corpus statistics.

A *template* masks literal values only; a *skeleton* additionally masks every
table, column and alias name.  Both are rendered from the parsed tree, so
whitespace and keyword case are canonical.

Counting conventions:

* ``n_tables`` counts base-table references, not distinct names: a self-join
  counts 2, references to CTE names count 0.
* ``n_joins`` counts ``JOIN`` keywords; comma-separated FROM lists are not joins.
* ``n_functions`` counts call expressions rendered as ``NAME(...)``.
* ``n_tokens`` is the whitespace-split length of the raw text.
* A subquery is any nested SELECT other than a CTE body or a set-operation arm.
"""
from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable

import sqlglot
from sqlglot import exp
from sqlglot.errors import ParseError as _GlotParseError, TokenError
from sqlglot.tokens import TokenType

from .errors import ParseError

logger = logging.getLogger(__name__)

DIALECT = "sqlite"
MASK = "[MASK]"
_SENTINEL = "__sqlforge_mask__"
AGGREGATES = frozenset({"COUNT", "SUM", "AVG", "MIN", "MAX", "GROUP_CONCAT", "TOTAL"})
_CALL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*\(")


def parse(sql: str) -> exp.Expression:
    """Parse exactly one statement in the SQLite dialect."""
    text = sql.replace(MASK, _SENTINEL).strip()
    if not text:
        raise ParseError("empty SQL")
    try:
        trees = [t for t in sqlglot.parse(text, read=DIALECT) if t is not None]
    except (_GlotParseError, TokenError) as exc:
        raise ParseError(str(exc).splitlines()[0] if str(exc) else "parse failure") from exc
    if len(trees) != 1:
        raise ParseError(f"expected one statement, found {len(trees)}")
    return trees[0]


def is_select(tree: exp.Expression) -> bool:
    """Top-level form is SELECT, a set operation of SELECTs, or WITH ... SELECT."""
    return isinstance(tree, exp.Query)


def _mask() -> exp.Var:
    return exp.Var(this=MASK)


def _is_sentinel(node: exp.Expression) -> bool:
    return isinstance(node, exp.Column) and not node.table and node.name == _SENTINEL


def template_of(sql: str) -> str:
    def mask_values(node):
        if isinstance(node, (exp.Literal, exp.Boolean)) or _is_sentinel(node):
            return _mask()
        return node

    return parse(sql).transform(mask_values).sql(dialect=DIALECT)


def skeleton_of(sql: str) -> str:
    def mask_all(node):
        if isinstance(node, (exp.Literal, exp.Boolean, exp.Identifier)):
            return _mask()
        return node

    return parse(sql).transform(mask_all).sql(dialect=DIALECT)


@dataclass
class SqlFeatures:
    n_tables: int = 0
    n_joins: int = 0
    n_functions: int = 0
    n_tokens: int = 0
    has_aggregation: bool = False
    has_set_operator: bool = False
    has_subquery: bool = False
    has_window_function: bool = False
    has_cte: bool = False
    functions: list[str] = field(default_factory=list)


def _call_name(node: exp.Func) -> str | None:
    if isinstance(node.parent, exp.Case):
        return None  # WHEN branches are stored as If nodes
    m = _CALL_RE.match(node.sql(dialect=DIALECT))
    return m.group(1).upper() if m else None


def _is_subquery(select: exp.Select) -> bool:
    node = select.parent
    while node is not None:
        if isinstance(node, exp.CTE):
            return False
        if isinstance(node, exp.Select):
            return True
        node = node.parent
    return False


def _count_join_keywords(sql: str) -> int:
    try:
        tokens = sqlglot.Dialect.get_or_raise(DIALECT).tokenize(sql)
    except TokenError as exc:
        raise ParseError(str(exc)) from exc
    return sum(1 for t in tokens if t.token_type == TokenType.JOIN)


def features_of(sql: str) -> SqlFeatures:
    tree = parse(sql)
    f = SqlFeatures(n_tokens=len(sql.split()), n_joins=_count_join_keywords(sql))
    cte_names = {cte.alias_or_name.lower() for cte in tree.find_all(exp.CTE)}
    f.has_cte = bool(cte_names)
    for node in tree.walk():
        if isinstance(node, exp.Table):
            if isinstance(node.this, exp.Identifier) and not (not node.db and node.name.lower() in cte_names):
                f.n_tables += 1
        elif isinstance(node, exp.Func):
            name = _call_name(node)
            if name is not None:
                f.n_functions += 1
                f.functions.append(name)
                if name in AGGREGATES and not isinstance(node.parent, exp.Window):
                    f.has_aggregation = True
        elif isinstance(node, exp.Window):
            f.has_window_function = True
        elif isinstance(node, (exp.Union, exp.Intersect, exp.Except)):
            f.has_set_operator = True
        if isinstance(node, exp.Select) and _is_subquery(node):
            f.has_subquery = True
    return f


@dataclass
class CorpusStats:
    n_queries: int = 0
    n_parse_errors: int = 0
    avg_tables: float = 0.0
    avg_joins: float = 0.0
    avg_functions: float = 0.0
    avg_tokens: float = 0.0
    n_aggregation: int = 0
    n_set_operator: int = 0
    n_subquery: int = 0
    n_window_function: int = 0
    n_cte: int = 0
    n_unique_skeletons: int = 0
    n_unique_functions: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def corpus_stats(samples: Iterable[str]) -> CorpusStats:
    stats = CorpusStats()
    totals = [0, 0, 0, 0]
    skeletons: set[str] = set()
    functions: set[str] = set()
    for sql in samples:
        try:
            f = features_of(sql)
            skeleton = skeleton_of(sql)
        except ParseError as exc:
            logger.warning("skipping unparsable query: %s", exc)
            stats.n_parse_errors += 1
            continue
        stats.n_queries += 1
        for i, v in enumerate((f.n_tables, f.n_joins, f.n_functions, f.n_tokens)):
            totals[i] += v
        stats.n_aggregation += f.has_aggregation
        stats.n_set_operator += f.has_set_operator
        stats.n_subquery += f.has_subquery
        stats.n_window_function += f.has_window_function
        stats.n_cte += f.has_cte
        skeletons.add(skeleton)
        functions.update(name.upper() for name in f.functions)
    if stats.n_queries:
        n = stats.n_queries
        stats.avg_tables, stats.avg_joins, stats.avg_functions, stats.avg_tokens = (t / n for t in totals)
    stats.n_unique_skeletons = len(skeletons)
    stats.n_unique_functions = len(functions)
    return stats


_TABLE3_COLUMNS = [
    ("Tables/SQL", "avg_tables", "{:.2f}"),
    ("Joins/SQL", "avg_joins", "{:.2f}"),
    ("Func./SQL", "avg_functions", "{:.2f}"),
    ("Tokens/SQL", "avg_tokens", "{:.2f}"),
    ("Agg.", "n_aggregation", "{:,}"),
    ("Set Ops", "n_set_operator", "{:,}"),
    ("Subqueries", "n_subquery", "{:,}"),
    ("Window", "n_window_function", "{:,}"),
    ("CTEs", "n_cte", "{:,}"),
    ("Uniq. Skel.", "n_unique_skeletons", "{:,}"),
    ("Uniq. Func.", "n_unique_functions", "{:,}"),
]


def format_stats_table(rows: dict[str, CorpusStats]) -> str:
    """Aligned text table, one line per named corpus."""
    header = ["Corpus"] + [c[0] for c in _TABLE3_COLUMNS]
    body = [
        [name] + [fmt.format(getattr(s, attr)) for _, attr, fmt in _TABLE3_COLUMNS] for name, s in rows.items()
    ]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in [header] + body]
    lines.insert(1, "-" * len(lines[0]))
    lines.append("Tables/SQL counts every base-table reference (a self-join counts twice).")
    return "\n".join(lines)
