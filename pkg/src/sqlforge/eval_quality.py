"""Execution-accuracy evaluation and LLM-judged dataset quality scoring."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from . import exec_engine
from .errors import ConfigError, EmptyTally, GoldExecutionError, VoteFailed
from .llm_gateway import ChatRequest
from .schema_synth import render_ddl, schema_from_db

logger = logging.getLogger(__name__)

RATINGS = ("excellent", "good", "average", "poor")
RATING_WEIGHTS = {"excellent": 1.0, "good": 0.75, "average": 0.5, "poor": 0.25}


@dataclass
class BenchmarkItem:
    item_id: str
    db_path: str
    question: str
    gold_sql: str
    external_knowledge: str | None = None


@dataclass
class RatingTally:
    n_excellent: int = 0
    n_good: int = 0
    n_average: int = 0
    n_poor: int = 0
    n_skipped: int = 0

    def __post_init__(self):
        if min(self.n_excellent, self.n_good, self.n_average, self.n_poor, self.n_skipped) < 0:
            raise ValueError("tally counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n_excellent + self.n_good + self.n_average + self.n_poor

    def add(self, rating: str) -> None:
        attr = f"n_{rating}"
        setattr(self, attr, getattr(self, attr) + 1)

    def __iadd__(self, other: "RatingTally") -> "RatingTally":
        for name in ("n_excellent", "n_good", "n_average", "n_poor", "n_skipped"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self

    def to_dict(self) -> dict[str, int]:
        return {"excellent": self.n_excellent, "good": self.n_good, "average": self.n_average,
                "poor": self.n_poor, "skipped": self.n_skipped}


def quality_score(tally: RatingTally) -> float:
    """Weighted average of ratings; skipped criteria are left out of the denominator."""
    if tally.total < 1:
        raise EmptyTally("cannot score an empty tally")
    return (1.0 * tally.n_excellent + 0.75 * tally.n_good + 0.5 * tally.n_average
            + 0.25 * tally.n_poor) / tally.total


# ---------------------------------------------------------------- benchmarks

def _load_json(path: Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _db_file(db_root: Path, db_id: str) -> Path:
    for ext in (".sqlite", ".db"):
        p = db_root / db_id / f"{db_id}{ext}"
        if p.exists():
            return p
    raise ConfigError(f"database file for {db_id!r} not found under {db_root}")


def load_benchmark(
    root: str | Path, split_file: str = "dev.json", validate: bool = True,
    timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS,
) -> tuple[list[BenchmarkItem], list[str]]:
    """Load a Spider-style or BIRD-style directory.

    Spider: ``dev.json`` records with db_id/question/query, databases under
    ``database/<db>/<db>.sqlite``.  BIRD: records with db_id/question/evidence/SQL
    (and question_id), databases under ``dev_databases/``.  Items whose gold query
    fails are returned separately by id.
    """
    root = Path(root)
    records = _load_json(root / split_file)
    db_root = next((root / d for d in ("database", "dev_databases", "databases") if (root / d).is_dir()), None)
    if db_root is None:
        raise ConfigError(f"{root}: no database directory found")
    items, bad = [], []
    for i, r in enumerate(records):
        gold = r.get("SQL") or r.get("query") or r.get("gold_sql")
        if gold is None:
            raise ConfigError(f"{root}: record {i} has no gold query")
        item_id = str(r.get("question_id", r.get("item_id", i)))
        evidence = r.get("evidence") or None
        item = BenchmarkItem(item_id, str(_db_file(db_root, r["db_id"])), r["question"], gold, evidence)
        if validate and not exec_engine.execute(item.db_path, gold, timeout_ms).ok:
            logger.warning("benchmark item %s: gold query fails, excluded", item_id)
            bad.append(item_id)
            continue
        items.append(item)
    return items, bad


def load_predictions(path: str | Path) -> dict[str, list[str]]:
    raw = _load_json(Path(path))
    if isinstance(raw, list):
        raw = {str(i): v for i, v in enumerate(raw)}
    return {str(k): [v] if isinstance(v, str) else list(v) for k, v in raw.items()}


def eval_ex(pred_sql: str, gold_sql: str, db_path: str | Path, timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS) -> bool:
    gold = exec_engine.execute(db_path, gold_sql, timeout_ms)
    if not gold.ok:
        raise GoldExecutionError(f"gold query failed on {db_path}: {gold.error_text or gold.status}")
    pred = exec_engine.execute(db_path, pred_sql, timeout_ms)
    return exec_engine.same_result(pred, gold)


def majority_vote_infer(candidate_sqls: Sequence[str], db_path: str | Path,
                        timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS, workers: int = 4) -> str:
    if not candidate_sqls:
        raise VoteFailed("no candidates")
    outcomes = exec_engine.execute_many(db_path, list(candidate_sqls), timeout_ms, workers)
    return candidate_sqls[exec_engine.group_vote(outcomes).winner]


@dataclass
class EvalReport:
    n_items: int
    ex_greedy: float
    ex_majority: float
    verdicts: list[dict[str, Any]] = field(default_factory=list)
    gold_errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"n_items": self.n_items, "ex_greedy": self.ex_greedy, "ex_majority": self.ex_majority,
                "verdicts": self.verdicts, "gold_errors": self.gold_errors}

    def summary(self) -> str:
        lines = ["strategy\tEX", f"greedy\t{self.ex_greedy:.4f}", f"majority\t{self.ex_majority:.4f}",
                 f"items\t{self.n_items}"]
        if self.gold_errors:
            lines.append(f"gold_errors\t{len(self.gold_errors)}")
        return "\n".join(lines)


def evaluate(
    items: Sequence[BenchmarkItem], predictions: dict[str, list[str]],
    timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS, workers: int = 4,
) -> EvalReport:
    """Greedy uses each item's first candidate; majority votes over all of them."""

    def score(item: BenchmarkItem) -> dict[str, Any]:
        cands = predictions.get(item.item_id) or []
        if not exec_engine.execute(item.db_path, item.gold_sql, timeout_ms).ok:
            return {"item_id": item.item_id, "gold_error": True}
        try:
            greedy = bool(cands) and eval_ex(cands[0], item.gold_sql, item.db_path, timeout_ms)
            try:
                chosen = majority_vote_infer(cands, item.db_path, timeout_ms, workers=1)
                majority = eval_ex(chosen, item.gold_sql, item.db_path, timeout_ms)
            except VoteFailed:
                majority = False
        except GoldExecutionError:
            return {"item_id": item.item_id, "gold_error": True}
        return {"item_id": item.item_id, "greedy": greedy, "majority": majority}

    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score, items))
    else:
        results = [score(i) for i in items]
    verdicts = [r for r in results if not r.get("gold_error")]
    gold_errors = [r["item_id"] for r in results if r.get("gold_error")]
    n = len(verdicts)
    return EvalReport(
        n_items=n,
        ex_greedy=sum(v["greedy"] for v in verdicts) / n if n else 0.0,
        ex_majority=sum(v["majority"] for v in verdicts) / n if n else 0.0,
        verdicts=verdicts,
        gold_errors=gold_errors,
    )


# ---------------------------------------------------------------- LLM judge

def load_criteria(path: str | Path | None = None) -> dict[str, dict[str, Any]]:
    if path is None:
        text = resources.files("sqlforge").joinpath("data/judge_criteria.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text)
    for aspect, spec in data.items():
        if len(spec["criteria"]) != 4:
            raise ConfigError(f"aspect {aspect} must define four criteria")
    return data


def _aspect_material(aspect: str, sample) -> str:
    schema = schema_from_db(sample.db_path, sample.db_name)
    ddl = "\n\n".join(render_ddl(schema))
    question = sample.question.text
    if sample.question.external_knowledge:
        question += f"\nExternal knowledge: {sample.question.external_knowledge}"
    if aspect == "database":
        return f"## Database Schema\n{ddl}"
    if aspect == "question":
        return f"## Database Schema\n{ddl}\n\n## Question\n{question}"
    if aspect == "sql":
        return f"## Database Schema\n{ddl}\n\n## SQL Query\n```sql\n{sample.sql}\n```"
    return (f"## Database Schema\n{ddl}\n\n## Question\n{question}\n\n"
            f"## SQL Query\n```sql\n{sample.sql}\n```\n\n## Solution\n{sample.cot}")


def build_judge_prompt(aspect: str, sample, criteria: dict[str, dict[str, Any]] | None = None) -> ChatRequest:
    criteria = criteria or load_criteria()
    spec = criteria[aspect]
    crit_lines = "\n".join(f"- {name}: {desc}" for name, desc in spec["criteria"].items())
    text = (
        f"## Task: {spec['title']} quality review\n"
        "Rate the material below on each criterion as excellent, good, average or poor, and explain briefly. "
        "Answer with one line per criterion in the form `criterion_name: rating - explanation`.\n\n"
        f"## Criteria\n{crit_lines}\n\n" + _aspect_material(aspect, sample)
    )
    return ChatRequest([("user", text)], temperature=0.0, n_samples=1)


def parse_ratings(text: str, criterion_names: Sequence[str]) -> dict[str, str | None]:
    """Rating per criterion from ``name: rating`` lines; missing or unreadable → None."""
    out: dict[str, str | None] = {n: None for n in criterion_names}
    for line in text.splitlines():
        line = line.strip().lstrip("-*` ").strip()
        m = re.match(r"([A-Za-z_ ]+?)\s*[`*]*\s*:\s*[`*]*\s*(\w+)", line)
        if not m:
            continue
        key = m.group(1).strip().lower().replace(" ", "_")
        rating = m.group(2).lower()
        if key in out and out[key] is None and rating in RATINGS:
            out[key] = rating
    return out


def judge_sample(sample, gateway, criteria: dict[str, dict[str, Any]] | None = None) -> dict[str, RatingTally]:
    criteria = criteria or load_criteria()
    result = {}
    for aspect, spec in criteria.items():
        response = gateway.complete(build_judge_prompt(aspect, sample, criteria))
        ratings = parse_ratings(response.texts[0] if response.texts else "", list(spec["criteria"]))
        tally = RatingTally()
        for name, rating in ratings.items():
            if rating is None:
                tally.n_skipped += 1
                logger.debug("%s/%s: unparsable rating skipped", aspect, name)
            else:
                tally.add(rating)
        result[aspect] = tally
    return result


def judge_dataset(samples: Sequence, gateway, criteria: dict[str, dict[str, Any]] | None = None) -> dict[str, Any]:
    criteria = criteria or load_criteria()
    totals = {a: RatingTally() for a in criteria}
    for s in samples:
        for aspect, tally in judge_sample(s, gateway, criteria).items():
            totals[aspect] += tally
    report = {}
    for aspect, tally in totals.items():
        report[aspect] = {**tally.to_dict(), "score": quality_score(tally) if tally.total else None}
    return report
