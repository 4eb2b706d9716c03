"""Chain-of-thought synthesis with execution-grouped majority voting."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import exec_engine
from .errors import InvariantError, VoteFailed
from .exec_engine import ExecOutcome
from .llm_gateway import ChatRequest
from .query_synth import SqlSample
from .question_synth import StylizedQuestion
from .schema_synth import SchemaDef, render_ddl

logger = logging.getLogger(__name__)

_SQL_BLOCK = re.compile(r"```[ \t]*sql[ \t]*\n(.*?)```", re.S | re.I)


@dataclass
class CotCandidate:
    cot_text: str
    extracted_sql: str | None = None
    exec: ExecOutcome | None = field(default=None, repr=False)


@dataclass
class CotResult:
    chosen: CotCandidate
    final_sql: str
    corrected: bool = False
    chosen_index: int = 0
    group_sizes: list[int] = field(default_factory=list)


@dataclass
class DataSample:
    db_name: str
    db_path: str
    question: StylizedQuestion
    sql: str
    cot: str
    complexity: str | None = None
    provenance: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "db_name": self.db_name,
            "db_path": self.db_path,
            "question": self.question.text,
            "external_knowledge": self.question.external_knowledge,
            "style": self.question.style.value,
            "dialogue": [list(t) for t in self.question.dialogue] if self.question.dialogue is not None else None,
            "sql": self.sql,
            "cot": self.cot,
            "complexity": self.complexity,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DataSample":
        dialogue = d.get("dialogue")
        q = StylizedQuestion(d["question"], d["style"], d.get("external_knowledge"),
                             [tuple(t) for t in dialogue] if dialogue is not None else None)
        return cls(d["db_name"], d["db_path"], q, d["sql"], d["cot"], d.get("complexity"), d.get("provenance", {}))

    def check(self, timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS) -> None:
        """Raise InvariantError unless sql executes and equals the CoT's final SQL block."""
        if extract_final_sql(self.cot) != self.sql:
            raise InvariantError(f"{self.db_name}: CoT final SQL differs from sql field")
        out = exec_engine.execute(self.db_path, self.sql, timeout_ms)
        if not out.ok:
            raise InvariantError(f"{self.db_name}: sql does not execute ({out.status}: {out.error_text})")


def question_block(question: StylizedQuestion) -> str:
    text = question.text
    if question.external_knowledge:
        text += f"\nExternal knowledge: {question.external_knowledge}"
    return text


def build_cot_prompt(schema: SchemaDef, question: StylizedQuestion, sql: str) -> ChatRequest:
    text = (
        "## Task Instruction\n"
        "You are given a database schema, a natural-language question and a reference SQL query that answers "
        "it. Write a step-by-step solution that explains how to arrive at the answer: identify the relevant "
        "tables and columns, the joins, filters and aggregations needed, and check that the query returns "
        "exactly what the question asks for. If the reference query does not fully match the question, fix it "
        "in your reasoning. End with the complete final SQL query in a single ```sql block.\n\n"
        "## Database Schema\n" + "\n\n".join(render_ddl(schema)) + "\n\n"
        "## Question and SQL Query Pair\n"
        f"Question:\n{question_block(question)}\n\n"
        f"SQL query:\n```sql\n{sql}\n```"
    )
    return ChatRequest([("user", text)], temperature=0.8, n_samples=8)


def extract_final_sql(cot_text: str) -> str | None:
    blocks = _SQL_BLOCK.findall(cot_text)
    if not blocks:
        return None
    return blocks[-1].strip() or None


def majority_select(
    candidates: Sequence[CotCandidate], db_path: str | Path,
    timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS, workers: int = 4,
) -> CotResult:
    if not candidates:
        raise VoteFailed("no CoT candidates")
    outcomes = exec_engine.execute_many(db_path, [c.extracted_sql for c in candidates], timeout_ms, workers)
    for c, out in zip(candidates, outcomes):
        c.exec = out
    vote = exec_engine.group_vote(outcomes)
    chosen = candidates[vote.winner]
    return CotResult(chosen, chosen.extracted_sql, False, vote.winner, sorted((len(g) for g in vote.groups.values()), reverse=True))


def finalize_sample(
    sample: SqlSample, question: StylizedQuestion, vote: CotResult, db_path: str | Path,
    timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS,
) -> DataSample:
    final = exec_engine.execute(db_path, vote.final_sql, timeout_ms)
    if not final.ok:
        raise InvariantError(f"{sample.sample_id}: chosen SQL failed re-execution ({final.status})")
    original = sample.exec if sample.exec is not None else exec_engine.execute(db_path, sample.sql_text, timeout_ms)
    corrected = exec_engine.fingerprint(final) != exec_engine.fingerprint(original)
    vote.corrected = corrected
    return DataSample(
        db_name=sample.db_name,
        db_path=str(db_path),
        question=question,
        sql=vote.final_sql,
        cot=vote.chosen.cot_text,
        complexity=sample.complexity,
        provenance={
            "sample_id": sample.sample_id,
            "original_sql": sample.sql_text,
            "corrected": corrected,
            "cot_index": vote.chosen_index,
            "group_sizes": vote.group_sizes,
        },
    )


def synthesize_cot(
    sample: SqlSample,
    question: StylizedQuestion,
    schema: SchemaDef,
    db_path: str | Path,
    gateway,
    n_samples: int = 8,
    temperature: float = 0.8,
    timeout_ms: int = exec_engine.DEFAULT_TIMEOUT_MS,
    item_key: str | None = None,
) -> DataSample:
    """Raises VoteFailed when no candidate yields an executable final SQL."""
    request = build_cot_prompt(schema, question, sample.sql_text)
    request.n_samples, request.temperature = n_samples, temperature
    response = gateway.complete(request, item_key=item_key)
    candidates = [CotCandidate(t, extract_final_sql(t)) for t in response.texts]
    vote = majority_select(candidates, db_path, timeout_ms)
    return finalize_sample(sample, question, vote, db_path, timeout_ms)


# ---------------------------------------------------------------- correction audit

def build_audit_prompt(question: StylizedQuestion, sql_a: str, sql_b: str) -> ChatRequest:
    text = (
        "## Task: SQL preference audit\n"
        "Two SQL queries were written for the same question. Decide which one answers the question more "
        "faithfully. Reply with a single letter, A or B.\n\n"
        f"## Question\n{question_block(question)}\n\n"
        f"## SQL A\n```sql\n{sql_a}\n```\n\n## SQL B\n```sql\n{sql_b}\n```"
    )
    return ChatRequest([("user", text)], temperature=0.0, n_samples=1, max_output_tokens=8)


def audit_corrections(samples: Sequence[DataSample], gateway, limit: int | None = None) -> dict[str, Any]:
    """Ask a judge whether the adopted SQL beats the original on corrected samples.

    Option A is always the original query; a judge answer of B counts as a win
    for the corrected query.
    """
    corrected = [s for s in samples if s.provenance.get("corrected")]
    if limit is not None:
        corrected = corrected[:limit]
    wins = losses = unparsable = 0
    for s in corrected:
        resp = gateway.complete(build_audit_prompt(s.question, s.provenance["original_sql"], s.sql))
        m = re.search(r"\b([AB])\b", resp.texts[0].strip().upper()) if resp.texts else None
        if m is None:
            unparsable += 1
        elif m.group(1) == "B":
            wins += 1
        else:
            losses += 1
    judged = wins + losses
    return {"n_corrected": len(corrected), "prefer_corrected": wins, "prefer_original": losses,
            "unparsable": unparsable, "win_rate": wins / judged if judged else None}


def read_samples(path: str | Path) -> list[DataSample]:
    with open(path, encoding="utf-8") as fh:
        return [DataSample.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_samples(samples: Sequence[DataSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")

