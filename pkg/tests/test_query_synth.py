from collections import Counter

import numpy as np
import pytest

from sqlforge import llm_gateway as lg
from sqlforge.errors import DatabaseAborted, EmptyDatabase
from sqlforge.query_synth import (
    LEVELS, ComplexityLevel, FunctionCatalog, SqlSample, build_sql_prompt, extract_sql, generate_for_db,
    load_complexity_levels, postprocess, sample_complexity, sample_select_count,
)
from sqlforge.schema_synth import SchemaDef
from sqlforge.sql_analysis import template_of


def test_postprocess_dedup_example(school_db):
    _, path = school_db
    kept = postprocess(["SELECT name FROM school WHERE age > 18", "SELECT name FROM school WHERE age > 55"], path)
    assert len(kept) == 1 and kept[0].sql_text.endswith("18")


@pytest.mark.parametrize("sql", ["DROP TABLE x", "SELECT * FROM nonexistent", "SELEC name FRM school",
                                 "DELETE FROM school", "SELECT 1; SELECT 2"])
def test_postprocess_rejects(school_db, sql):
    _, path = school_db
    assert postprocess([sql], path) == []


def test_postprocess_timeout_dropped(school_db):
    _, path = school_db
    stats = {}
    loop = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT COUNT(*) FROM c"
    assert postprocess([loop], path, timeout_ms=50, stats=stats) == []
    assert stats["timeout"] == 1


def test_postprocess_with_select_kept_and_stats(school_db):
    _, path = school_db
    stats = {}
    cands = ["WITH a AS (SELECT age FROM school) SELECT MAX(age) FROM a", "DROP TABLE school",
             "SELECT nope FROM school", "SELECT title FROM classes", "SELECT title  FROM classes"]
    kept = postprocess(cands, path, db_name="school_db", labels=[("Simple", 1)] * 5, stats=stats)
    assert [k.sql_text for k in kept] == [cands[0], cands[3]]
    assert stats == {"input": 5, "non_select": 1, "exec_error": 1, "timeout": 0, "duplicate": 1, "kept": 2}
    assert kept[0].complexity == "Simple" and kept[0].template == template_of(cands[0])


def test_postprocess_templates_distinct_and_order_stable(school_db):
    _, path = school_db
    cands = [f"SELECT name FROM school WHERE age > {i}" for i in range(5)] + ["SELECT age FROM school"]
    kept = postprocess(cands, path)
    assert len({k.template for k in kept}) == len(kept) == 2
    assert postprocess(cands, path) == kept


def test_sample_round_trip(school_db):
    _, path = school_db
    s = postprocess(["SELECT name FROM school"], path, db_name="school_db")[0]
    assert SqlSample.from_dict(s.to_dict()) == s
    assert s.to_dict()["exec"]["row_count"] == 2


def test_extract_sql():
    assert extract_sql("x\n```sql\nSELECT 1\n```\nthen\n```sql\nSELECT 2\n```") == "SELECT 2"
    assert extract_sql("SELECT a FROM b") == "SELECT a FROM b"
    assert extract_sql("no query here") is None


def test_select_count_pmf():
    rng = np.random.default_rng(0)
    draws = [sample_select_count(rng) for _ in range(20000)]
    assert abs(draws.count(1) / len(draws) - 0.6) < 0.015
    assert abs(draws.count(2) / len(draws) - 0.24) < 0.015
    assert max(draws) <= 8
    again = np.random.default_rng(0)
    assert [sample_select_count(again) for _ in range(50)] == draws[:50]


def test_complexity_uniform():
    rng = np.random.default_rng(1)
    counts = Counter(sample_complexity(rng) for _ in range(100_000))
    for level in LEVELS:
        assert abs(counts[level] / 100_000 - 0.25) < 0.01


def test_four_levels_bundled():
    levels = load_complexity_levels()
    assert set(levels) == set(ComplexityLevel) and len(levels) == 4
    assert all(v["criteria"] and v["example"] for v in levels.values())


def test_sql_prompt(school_db):
    schema, path = school_db
    catalog = FunctionCatalog.load()
    text = build_sql_prompt(schema, path, catalog, ComplexityLevel.HIGHLY_COMPLEX, 3, np.random.default_rng(5)).prompt
    heads = ["## Task Instruction", "## Database Schema", "## Advanced SQL Functions", "## Database Values",
             "## SQL Complexity", "## Column Selection Constraint"]
    positions = [text.index(h) for h in heads]
    assert positions == sorted(positions)
    assert "CREATE TABLE classes" in text and "CREATE TABLE school" in text
    level = load_complexity_levels()[ComplexityLevel.HIGHLY_COMPLEX]
    assert level["criteria"] in text and level["example"] in text
    assert "exactly 3 columns" in text
    fn_section = text.split("## Advanced SQL Functions\n")[1].split("\n\n")[0]
    assert len(fn_section.splitlines()) == 4
    again = build_sql_prompt(schema, path, catalog, ComplexityLevel.HIGHLY_COMPLEX, 3, np.random.default_rng(5))
    assert again.prompt == text


def test_sql_prompt_empty_db(school_db):
    _, path = school_db
    with pytest.raises(EmptyDatabase):
        build_sql_prompt(SchemaDef("e"), path, FunctionCatalog.load(), ComplexityLevel.SIMPLE, 1,
                         np.random.default_rng(0))


def test_function_catalog_unique():
    with pytest.raises(ValueError):
        FunctionCatalog([("ABS", "x"), ("ABS", "y")])
    assert len(FunctionCatalog.load().entries) >= 4


def test_generate_budget_exact(school_db):
    schema, path = school_db
    mock = lg.MockProvider({"*": ["```sql\nSELECT name FROM school\n```"] * 8})
    stats = {}
    out = generate_for_db(schema, path, mock, np.random.default_rng(0), budget=300, stats=stats)
    assert stats["input"] == 300
    assert sum(r.n_samples for r in mock.requests) == 300
    assert len(out) == 1  # identical candidates collapse to one template
    assert out[0].sample_id == "school_db:0"


def test_generate_aborts_after_failures(school_db):
    schema, path = school_db
    mock = lg.MockProvider({"*": ["nothing useful"]})
    with pytest.raises(DatabaseAborted):
        generate_for_db(schema, path, mock, np.random.default_rng(0), budget=5, max_consecutive_failures=3)
    assert len(mock.requests) == 3
