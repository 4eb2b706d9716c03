"""SQL-to-question back-translation in nine language styles with centroid selection."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from sqlglot import exp

from .errors import ColumnResolutionError, ParseError
from .llm_gateway import ChatRequest
from .query_synth import SqlSample
from .schema_synth import ColumnDef, SchemaDef
from .sql_analysis import parse

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12


class LanguageStyle(str, Enum):
    FORMAL = "Formal"
    COLLOQUIAL = "Colloquial"
    IMPERATIVE = "Imperative"
    INTERROGATIVE = "Interrogative"
    DESCRIPTIVE = "Descriptive"
    CONCISE = "Concise"
    VAGUE = "Vague"
    METAPHORICAL = "Metaphorical"
    CONVERSATIONAL = "Conversational"

    @property
    def needs_knowledge(self) -> bool:
        return self in (LanguageStyle.VAGUE, LanguageStyle.METAPHORICAL)

    @property
    def is_dialogue(self) -> bool:
        return self is LanguageStyle.CONVERSATIONAL


STYLES = list(LanguageStyle)


def load_styles(path: str | Path | None = None) -> dict[LanguageStyle, dict[str, Any]]:
    if path is None:
        text = resources.files("sqlforge").joinpath("data/styles.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    styles = {LanguageStyle(k): v for k, v in json.loads(text).items()}
    if set(styles) != set(LanguageStyle):
        raise ValueError("style catalog must define exactly the nine styles")
    return styles


def sample_style(rng: np.random.Generator, weights: Sequence[float] | None = None) -> LanguageStyle:
    p = None if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    return STYLES[int(rng.choice(len(STYLES), p=p))]


@dataclass
class StylizedQuestion:
    text: str
    style: LanguageStyle
    external_knowledge: str | None = None
    dialogue: list[tuple[str, str]] | None = None

    def __post_init__(self):
        self.style = LanguageStyle(self.style)
        if not self.text.strip():
            raise ParseError("question text is empty")
        if (self.external_knowledge is not None) != self.style.needs_knowledge:
            raise ParseError(f"{self.style.value}: external knowledge presence violates style contract")
        if (self.dialogue is not None) != self.style.is_dialogue:
            raise ParseError(f"{self.style.value}: dialogue presence violates style contract")

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "style": self.style.value,
            "external_knowledge": self.external_knowledge,
            "dialogue": [list(t) for t in self.dialogue] if self.dialogue is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StylizedQuestion":
        dialogue = d.get("dialogue")
        return cls(d["text"], LanguageStyle(d["style"]), d.get("external_knowledge"),
                   [tuple(t) for t in dialogue] if dialogue is not None else None)


@dataclass
class CandidateSet:
    candidates: list[StylizedQuestion]
    selected_index: int = 0
    scores: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not 0 <= self.selected_index < len(self.candidates):
            raise ValueError("selected_index out of range")

    @property
    def selected(self) -> StylizedQuestion:
        return self.candidates[self.selected_index]


def referenced_columns(sql: str, schema: SchemaDef) -> list[tuple[str, ColumnDef]]:
    """Schema columns referenced by the query, in order of first appearance."""
    tree = parse(sql)
    derived = {cte.alias_or_name.lower() for cte in tree.find_all(exp.CTE)}
    derived |= {sq.alias.lower() for sq in tree.find_all(exp.Subquery) if sq.alias}
    output_aliases = {a.alias.lower() for a in tree.find_all(exp.Alias) if a.alias}
    for cte in tree.find_all(exp.CTE):
        ta = cte.args.get("alias")
        if ta is not None:
            output_aliases |= {c.name.lower() for c in ta.columns}

    alias_map: dict[str, str] = {}
    in_query: list[str] = []
    for t in tree.find_all(exp.Table):
        if t.name.lower() in derived:
            continue
        st = schema.table(t.name)
        if st is None:
            raise ColumnResolutionError(f"table {t.name!r} not in schema {schema.db_name}")
        alias_map[t.alias_or_name.lower()] = st.name
        alias_map.setdefault(t.name.lower(), st.name)
        if st.name not in in_query:
            in_query.append(st.name)

    found: list[tuple[str, ColumnDef]] = []
    seen: set[tuple[str, str]] = set()
    for col in tree.find_all(exp.Column):
        if isinstance(col.this, exp.Star):
            continue
        name = col.name
        qualifier = col.table.lower() if col.table else ""
        if qualifier:
            if qualifier in derived:
                continue
            tname = alias_map.get(qualifier)
            if tname is None:
                raise ColumnResolutionError(f"unknown table qualifier {col.table!r}")
            candidates = [tname]
        else:
            if name.lower() in output_aliases:
                continue
            candidates = in_query + [t.name for t in schema.tables if t.name not in in_query]
        hit = None
        for tname in candidates:
            c = schema.table(tname).column(name)
            if c is not None:
                hit = (tname, c)
                break
        if hit is None:
            if not qualifier and in_query == [] and derived:
                continue  # selects only from derived tables
            raise ColumnResolutionError(f"column {name!r} not found in schema {schema.db_name}")
        key = (hit[0].lower(), hit[1].name.lower())
        if key not in seen:
            seen.add(key)
            found.append(hit)
    return found


def build_question_prompt(
    sample: SqlSample, schema: SchemaDef, style: LanguageStyle,
    styles: dict[LanguageStyle, dict[str, Any]] | None = None,
) -> ChatRequest:
    styles = styles or load_styles()
    style = LanguageStyle(style)
    info = styles[style]
    columns = referenced_columns(sample.sql_text, schema)
    col_lines = "\n".join(f"- {t}.{c.name}: {c.description or '(no description)'}" for t, c in columns)

    output_format = "[EXPLANATION]\n<explanation of the SQL query>\n[QUESTION]\n<the question>"
    extra = ""
    if style.needs_knowledge:
        output_format += "\n[EXTERNAL KNOWLEDGE]\n<the knowledge needed to map the question onto the query>"
        extra = (" Because this style relies on ambiguous or figurative wording, also state the external "
                 "knowledge that explains how the question maps onto the query.")
    elif style.is_dialogue:
        extra = (" For this style, the question is a multi-turn dialogue between <User> and <Assistant>; "
                 "write one turn per line, each starting with 'User:' or 'Assistant:'.")

    style_block = f"Style: {style.value}\nDescription: {info['description']}\nExample question: {info['example']}"
    if info.get("knowledge_example"):
        style_block += f"\nExample external knowledge: {info['knowledge_example']}"

    text = (
        "## Task Instruction\n"
        "You translate SQL queries into natural-language questions. First generate an explanation of the "
        "provided SQL query, then translate it into a question that a real user would ask, written in the "
        f"desired language style. The question must ask for exactly what the query returns.{extra}\n"
        f"Use exactly this output format:\n{output_format}\n\n"
        f"## SQL Query\n```sql\n{sample.sql_text}\n```\n\n"
        f"## SQL-related Column Information\n{col_lines or '- (no columns referenced)'}\n\n"
        f"## Desired Language Style\n{style_block}"
    )
    return ChatRequest([("user", text)], temperature=0.8, n_samples=8)


_SECTION = re.compile(r"^\s*\[(EXPLANATION|QUESTION|EXTERNAL[ _]KNOWLEDGE)\]\s*$", re.M | re.I)
_TURN = re.compile(r"^\s*<?(User|Assistant)>?\s*:\s*(.*)$", re.I)


def _sections(text: str) -> dict[str, str]:
    marks = list(_SECTION.finditer(text))
    out = {}
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(text)
        key = m.group(1).upper().replace("_", " ")
        out.setdefault(key, text[m.end():end].strip())
    return out


def parse_question(llm_text: str, style: LanguageStyle) -> StylizedQuestion:
    style = LanguageStyle(style)
    sections = _sections(llm_text)
    question = sections.get("QUESTION", "").strip()
    if not question:
        raise ParseError("response has no [QUESTION] section")
    knowledge = None
    if style.needs_knowledge:
        knowledge = sections.get("EXTERNAL KNOWLEDGE", "").strip()
        if not knowledge:
            raise ParseError(f"{style.value} response lacks external knowledge")
    dialogue = None
    if style.is_dialogue:
        dialogue = []
        for line in question.splitlines():
            m = _TURN.match(line)
            if m and m.group(2).strip():
                dialogue.append((m.group(1).capitalize(), m.group(2).strip()))
        if not any(s == "User" for s, _ in dialogue):
            raise ParseError("conversational response has no User turns")
        question = "\n".join(f"{s}: {t}" for s, t in dialogue)
    return StylizedQuestion(question, style, knowledge, dialogue)


def consistency_scores(vectors: np.ndarray) -> np.ndarray:
    """Mean cosine similarity of each row with every other row."""
    v = np.asarray(vectors, dtype=float)
    n = v.shape[0]
    if n == 1:
        return np.zeros(1)
    unit = v / np.linalg.norm(v, axis=1, keepdims=True)
    sim = unit @ unit.T
    return (sim.sum(axis=1) - np.diag(sim)) / (n - 1)


def select_consistent(candidates: Sequence[StylizedQuestion], gateway) -> int:
    if not candidates:
        raise ValueError("select_consistent needs at least one candidate")
    if len(candidates) == 1:
        return 0
    vectors = np.array([e.values for e in gateway.embed([c.text for c in candidates])])
    scores = consistency_scores(vectors)
    best = scores.max()
    return int(np.flatnonzero(scores >= best - TIE_TOLERANCE)[0])


def synthesize_question(
    sample: SqlSample,
    schema: SchemaDef,
    style: LanguageStyle,
    gateway,
    n_samples: int = 8,
    temperature: float = 0.8,
    item_key: str | None = None,
    styles: dict[LanguageStyle, dict[str, Any]] | None = None,
) -> CandidateSet | None:
    """Generate candidates, drop unparsable ones, pick the centroid; ``None`` if nothing parses."""
    request = build_question_prompt(sample, schema, style, styles)
    request.n_samples, request.temperature = n_samples, temperature
    response = gateway.complete(request, item_key=item_key)
    parsed = []
    for t in response.texts:
        try:
            parsed.append(parse_question(t, style))
        except ParseError as exc:
            logger.debug("discarding question candidate: %s", exc)
    if not parsed:
        return None
    idx = select_consistent(parsed, gateway)
    return CandidateSet(parsed, idx)
