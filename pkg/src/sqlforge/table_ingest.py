"""Web-table loading and the four-stage seed filter: language, size, header dedup, LLM judgment."""
from __future__ import annotations

import csv
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .llm_gateway import ChatRequest

logger = logging.getLogger(__name__)

STAGES = ("language", "size", "dedup", "semantic")
LANGUAGE_THRESHOLD = 0.3
JUDGE_SAMPLE_ROWS = 3

ENGLISH_STOPWORDS = frozenset(
    "a about above after all also an and any are as at be been before being between both but by can could "
    "did do does each for from had has have he her his how i if in into is it its more most my no not of "
    "on or other our out over per she should so some such than that the their them then there these they "
    "this those through to under up was we were what when where which while who whom why will with would you your".split()
)
# function words of common Latin-script languages that are not English words
FOREIGN_STOPWORDS = frozenset(
    "el los las del por para con una unos sus como pero esta este "
    "le les des du une est avec dans pour sur qui que ou "
    "der die das den dem und ist nicht mit ein eine einer auf fur von zu "
    "il lo gli della dei delle degli nel nella con una sono "
    "da do dos das em um uma nao para com "
    "het een van en niet op voor".split()
)


@dataclass
class WebTable:
    table_id: str
    headers: list[str]
    rows: list[tuple[str, ...]]
    source_ref: str = ""

    def __post_init__(self):
        self.headers = [str(h) for h in self.headers]
        self.rows = [tuple("" if v is None else str(v) for v in r) for r in self.rows]
        if not self.headers:
            raise ValueError(f"table {self.table_id}: headers must be non-empty")
        width = len(self.headers)
        for i, r in enumerate(self.rows):
            if len(r) != width:
                raise ValueError(f"table {self.table_id}: row {i} has {len(r)} cells, expected {width}")

    def to_dict(self) -> dict:
        return {"table_id": self.table_id, "headers": self.headers, "rows": [list(r) for r in self.rows],
                "source_ref": self.source_ref}

    @classmethod
    def from_dict(cls, d: dict) -> "WebTable":
        return cls(str(d["table_id"]), list(d["headers"]), [tuple(r) for r in d.get("rows", [])],
                   d.get("source_ref", ""))


def _read_csv(path: Path) -> WebTable | None:
    with open(path, newline="", encoding="utf-8") as fh:
        records = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not records:
        return None
    headers, body = records[0], records[1:]
    rows = [tuple(r) for r in body if len(r) == len(headers)]
    if len(rows) < len(body):
        logger.warning("%s: dropped %d ragged rows", path, len(body) - len(rows))
    return WebTable(path.stem, headers, rows, str(path))


def load_tables(path: str | Path) -> list[WebTable]:
    """Load tables from a CSV file, a JSONL file, or a directory of either (sorted by name)."""
    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.suffix in (".csv", ".jsonl")) if path.is_dir() else [path]
    tables = []
    for f in files:
        if f.suffix == ".csv":
            t = _read_csv(f)
            if t is not None:
                tables.append(t)
        else:
            with open(f, encoding="utf-8") as fh:
                tables.extend(WebTable.from_dict(json.loads(line)) for line in fh if line.strip())
    return tables


def write_tables(tables: Iterable[WebTable], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tables:
            fh.write(json.dumps(t.to_dict(), ensure_ascii=False) + "\n")


def _is_latin(cell: str) -> bool | None:
    letters = [c for c in cell if c.isalpha()]
    if not letters:
        return None
    ascii_letters = sum(1 for c in letters if c.isascii())
    return ascii_letters / len(letters) >= 0.8


def language_score(table: WebTable) -> dict[str, float]:
    """Components of the English heuristic over headers plus the first row."""
    sample = list(table.headers) + (list(table.rows[0]) if table.rows else [])
    header_flags = [f for f in (_is_latin(h) for h in table.headers) if f is not None]
    cell_flags = [f for f in (_is_latin(c) for c in sample) if f is not None]
    words = [w for c in sample for w in re.findall(r"[a-z]+", c.lower())]
    header_nonlatin = 1.0 - sum(header_flags) / len(header_flags) if header_flags else 0.0
    latin_ratio = sum(cell_flags) / len(cell_flags) if cell_flags else 0.0
    en_rate = sum(w in ENGLISH_STOPWORDS for w in words) / len(words) if words else 0.0
    foreign_rate = sum(w in FOREIGN_STOPWORDS for w in words) / len(words) if words else 0.0
    return {
        "header_nonlatin": header_nonlatin,
        "latin_ratio": latin_ratio,
        "en_rate": en_rate,
        "foreign_rate": foreign_rate,
        "score": 0.5 * latin_ratio + 0.5 * en_rate - foreign_rate,
    }


def filter_language(table: WebTable, threshold: float = LANGUAGE_THRESHOLD) -> bool:
    s = language_score(table)
    return s["header_nonlatin"] < 0.5 and s["score"] >= threshold


def filter_size(table: WebTable, min_cols: int = 5, min_rows: int = 5) -> bool:
    return len(table.headers) >= min_cols and len(table.rows) >= min_rows


def header_key(headers: Sequence[str]) -> tuple[str, ...]:
    return tuple(sorted(" ".join(h.split()).lower() for h in headers))


def dedup_headers(tables: Iterable[WebTable]) -> list[WebTable]:
    seen: set[tuple[str, ...]] = set()
    kept = []
    for t in tables:
        key = header_key(t.headers)
        if key not in seen:
            seen.add(key)
            kept.append(t)
    return kept


def render_table(table: WebTable, max_rows: int | None = None) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.headers)
    writer.writerows(table.rows if max_rows is None else table.rows[:max_rows])
    return buf.getvalue().rstrip("\n")


def build_semantic_prompt(table: WebTable, n_rows: int = JUDGE_SAMPLE_ROWS) -> ChatRequest:
    text = (
        "## Task: web table semantic richness\n"
        "Decide whether the web table below carries enough real-world meaning to inspire a realistic "
        "relational database: meaningful column headers, coherent rows, and a recognisable domain. "
        "Tables that are navigation menus, layout fragments, raw logs or mostly empty are not rich enough.\n\n"
        f"## Web Table (headers and first {n_rows} rows)\n```csv\n{render_table(table, n_rows)}\n```\n\n"
        "Answer with a single word: YES if the table is semantically rich, NO otherwise."
    )
    return ChatRequest([("user", text)], temperature=0.0, n_samples=1, max_output_tokens=8)


def parse_verdict(text: str) -> bool | None:
    m = re.search(r"\b(yes|no)\b", text.strip().lower())
    if m is None:
        return None
    return m.group(1) == "yes"


def judge_semantics_verdict(table: WebTable, gateway) -> bool | None:
    """``True``/``False`` for a clear verdict, ``None`` when unparsable."""
    response = gateway.complete(build_semantic_prompt(table))
    return parse_verdict(response.texts[0]) if response.texts else None


def judge_semantics(table: WebTable, gateway) -> bool:
    verdict = judge_semantics_verdict(table, gateway)
    if verdict is None:
        logger.warning("table %s: unparsable semantic verdict, rejecting", table.table_id)
    return bool(verdict)


@dataclass
class FilterReport:
    input_count: int = 0
    kept_count: int = 0
    rejections: dict[str, int] = field(default_factory=lambda: {s: 0 for s in STAGES})
    per_table_verdicts: list[tuple[str, str]] = field(default_factory=list)
    unparsable: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "kept_count": self.kept_count,
            "rejections": dict(self.rejections),
            "per_table_verdicts": [list(v) for v in self.per_table_verdicts],
            "unparsable": list(self.unparsable),
        }


def run_ingest(tables: Sequence[WebTable], gateway, workers: int = 4) -> tuple[list[WebTable], FilterReport]:
    report = FilterReport(input_count=len(tables))
    verdict: dict[int, str] = {}

    stage1 = []
    for i, t in enumerate(tables):
        if not filter_language(t):
            verdict[i] = "language"
        elif not filter_size(t):
            verdict[i] = "size"
        else:
            stage1.append(i)

    seen: set[tuple[str, ...]] = set()
    stage3 = []
    for i in stage1:
        key = header_key(tables[i].headers)
        if key in seen:
            verdict[i] = "dedup"
        else:
            seen.add(key)
            stage3.append(i)

    def judge(i):
        return judge_semantics_verdict(tables[i], gateway)

    if workers > 1 and len(stage3) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            judged = list(pool.map(judge, stage3))
    else:
        judged = [judge(i) for i in stage3]
    for i, v in zip(stage3, judged):
        if v is None:
            report.unparsable.append(tables[i].table_id)
        verdict[i] = "kept" if v else "semantic"

    kept = []
    for i, t in enumerate(tables):
        v = verdict[i]
        report.per_table_verdicts.append((t.table_id, v))
        if v == "kept":
            kept.append(t)
        else:
            report.rejections[v] += 1
    report.kept_count = len(kept)
    return kept, report
