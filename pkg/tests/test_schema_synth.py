import json
import sqlite3

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sqlforge import llm_gateway as lg
from sqlforge.errors import ConfigError, InvariantError, MaterializeError, ParseError
from sqlforge.schema_synth import (
    ColumnDef, ForeignKey, SchemaDef, SynthesisParams, TableDef, build_generation_prompt, column_counts,
    creation_order, enhance, introspect, load_demos, materialize, parse_schema, render_schema_json, round_clamp,
    sample_table_count,
)
from sqlforge.table_ingest import WebTable

from conftest import school_schema


def seed_table():
    return WebTable("seed", ["Player", "Team", "Goals", "Assists", "Year"],
                    [("Ann", "Rovers", "3", "1", "2020")] * 5)


# ---------------------------------------------------------------- parsing

def test_round_trip_two_tables_one_fk():
    schema = school_schema()
    parsed = parse_schema("Here you go:\n" + render_schema_json(schema))
    assert parsed == schema
    assert len(parsed.tables) == 2 and len(parsed.foreign_keys) == 1


def test_dangling_fk_dropped_with_warning():
    d = school_schema().to_dict()
    d["foreign_keys"].append({"table": "school", "column": "class_id", "ref_table": "ghost", "ref_column": "id"})
    parsed = parse_schema("```json\n" + json.dumps(d) + "\n```")
    assert len(parsed.foreign_keys) == 1
    assert any("dangling" in w for w in parsed.warnings)


def test_no_schema_block_is_parse_error():
    with pytest.raises(ParseError):
        parse_schema("I could not design a database for this table, sorry.")


def test_duplicate_table_names_rejected():
    d = school_schema().to_dict()
    d["tables"].append(dict(d["tables"][0]))
    with pytest.raises(InvariantError):
        parse_schema(json.dumps(d))


def test_last_fenced_block_wins_and_raw_json_accepted():
    a = school_schema().to_dict()
    b = dict(a, db_name="other")
    text = "```json\n" + json.dumps(a) + "\n```\nrevised:\n```json\n" + json.dumps(b) + "\n```"
    assert parse_schema(text).db_name == "other"
    assert parse_schema("prefix " + json.dumps(a) + " suffix").db_name == "school_db"


ident = st.from_regex(r"[a-z][a-z0-9_]{0,7}", fullmatch=True)


@st.composite
def schemas(draw):
    names = draw(st.lists(ident, min_size=1, max_size=4, unique=True))
    tables = []
    for name in names:
        cols = draw(st.lists(ident, min_size=1, max_size=4, unique=True))
        columns = [ColumnDef(c, draw(st.sampled_from(["INTEGER", "TEXT", "REAL"])), draw(st.text(max_size=10)),
                             draw(st.lists(st.one_of(st.none(), st.text(max_size=5)), max_size=2))) for c in cols]
        pk = draw(st.lists(st.sampled_from(cols), max_size=1))
        tables.append(TableDef(name, draw(st.text(max_size=10)), columns, pk))
    fks = []
    for _ in range(draw(st.integers(0, 2))):
        src, dst = draw(st.sampled_from(tables)), draw(st.sampled_from(tables))
        fk = ForeignKey(src.name, draw(st.sampled_from(src.columns)).name, dst.name,
                        draw(st.sampled_from(dst.columns)).name)
        if fk not in fks:
            fks.append(fk)
    return SchemaDef(draw(ident), draw(st.text(max_size=20)), tables, fks)


@given(schemas())
def test_parse_render_round_trip_property(schema):
    assert parse_schema(render_schema_json(schema)) == schema


# ---------------------------------------------------------------- enhancement

def widened(schema, extra=2):
    d = schema.to_dict()
    for t in d["tables"]:
        for _ in range(extra):
            t["columns"].append({"name": f"extra_{len(t['columns'])}", "type": "TEXT", "description": "added", "examples": ["x", "y"]})
    return "```json\n" + json.dumps(d) + "\n```"


def test_enhance_adds_columns():
    schema = school_schema()
    out = enhance(schema, lg.MockProvider({"*": [widened(schema)]}))
    for before, after in zip(schema.tables, out.tables):
        assert len(after.columns) == len(before.columns) + 2
    assert set(schema.foreign_keys) <= set(out.foreign_keys)


def test_enhance_rejects_dropped_column():
    schema = school_schema()
    d = schema.to_dict()
    d["tables"][1]["columns"].pop(1)
    out = enhance(schema, lg.MockProvider({"*": [json.dumps(d)]}))
    assert out == schema


def test_enhance_unparsable_keeps_schema():
    schema = school_schema()
    assert enhance(schema, lg.MockProvider({"*": ["no json here"]})) == schema


def test_enhance_iterations_configurable():
    schema = school_schema()
    mock = lg.MockProvider(responder=lambda r: [widened(parse_schema(r.prompt), 1)])
    out = enhance(schema, mock, iterations=3)
    assert len(out.tables[0].columns) == len(schema.tables[0].columns) + 3


# ---------------------------------------------------------------- materialisation

def test_materialize_introspection_matches(tmp_path):
    schema = school_schema()
    path = materialize(schema, tmp_path / "s.sqlite")
    info = introspect(path)
    assert set(info["tables"]) == {"classes", "school"}
    assert [c for c, _ in info["tables"]["school"]["columns"]] == ["student_id", "name", "age", "class_id"]
    assert info["tables"]["school"]["primary_key"] == ["student_id"]
    assert info["foreign_keys"] == {("school", "class_id", "classes", "class_id")}
    conn = sqlite3.connect(path)
    assert conn.execute("PRAGMA foreign_key_check").fetchall() == []
    assert conn.execute("SELECT COUNT(*) FROM school").fetchone()[0] == 2


def test_creation_order_parents_first():
    assert [t.name for t in creation_order(school_schema())] == ["classes", "school"]
    s = school_schema()
    s.tables.reverse()
    assert [t.name for t in creation_order(s)] == ["classes", "school"]


def test_materialize_fk_cycle(tmp_path):
    s = SchemaDef("cyc", "", [
        TableDef("a", "", [ColumnDef("id", "INTEGER", "", ["1"]), ColumnDef("b_id", "INTEGER", "", ["1"])], ["id"]),
        TableDef("b", "", [ColumnDef("id", "INTEGER", "", ["1"]), ColumnDef("a_id", "INTEGER", "", ["1"])], ["id"]),
    ], [ForeignKey("a", "b_id", "b", "id"), ForeignKey("b", "a_id", "a", "id")])
    info = introspect(materialize(s, tmp_path / "c.sqlite"))
    assert len(info["foreign_keys"]) == 2


def test_affinity_mismatch_still_inserted(tmp_path):
    s = SchemaDef("aff", "", [TableDef("t", "", [ColumnDef("n", "INTEGER", "", ["not a number"])])])
    conn = sqlite3.connect(materialize(s, tmp_path / "a.sqlite"))
    assert conn.execute("SELECT n, typeof(n) FROM t").fetchone() == ("not a number", "text")


def test_duplicate_pk_is_materialize_error(tmp_path):
    s = SchemaDef("dup", "", [TableDef("t", "", [ColumnDef("id", "INTEGER", "", ["1", "1"])], ["id"])])
    with pytest.raises(MaterializeError):
        materialize(s, tmp_path / "d.sqlite")
    assert not (tmp_path / "d.sqlite").exists()


def test_bad_ddl_is_materialize_error(tmp_path):
    s = SchemaDef("bad", "", [TableDef("t", "", [ColumnDef("x", "INTEGER PRIMARY KEY PRIMARY KEY")])])
    with pytest.raises(MaterializeError):
        materialize(s, tmp_path / "b.sqlite")


def test_fk_violating_rows_removed(tmp_path):
    s = school_schema()
    s.tables[1].columns[3].example_values = ["1", "99"]
    conn = sqlite3.connect(materialize(s, tmp_path / "v.sqlite"))
    assert conn.execute("SELECT class_id FROM school").fetchall() == [(1,)]


@settings(max_examples=30, deadline=None)
@given(schemas())
def test_materialize_reproduces_schema_property(tmp_path_factory, schema):
    for t in schema.tables:
        for c in t.columns:
            c.example_values = []  # structure only
    path = materialize(schema, tmp_path_factory.mktemp("m") / "x.sqlite")
    info = introspect(path)
    assert {n.lower() for n in info["tables"]} == {t.name.lower() for t in schema.tables}
    for t in schema.tables:
        got = info["tables"][t.name]
        assert [c for c, _ in got["columns"]] == [c.name for c in t.columns]
        assert got["primary_key"] == t.primary_key
    assert info["foreign_keys"] == set(map(tuple, schema.foreign_keys))


# ---------------------------------------------------------------- sampling and prompts

@pytest.mark.parametrize("x,expected", [(10.2, 10), (-3, 2), (9.5, 10), (25.0, 20), (1.49, 2)])
def test_round_clamp(x, expected):
    assert round_clamp(x, 2, 20) == expected


def test_sample_table_count_in_range_and_reproducible():
    a = [sample_table_count(np.random.default_rng(3)) for _ in range(3)]
    assert len(set(a)) == 1
    rng = np.random.default_rng(0)
    draws = [sample_table_count(rng, SynthesisParams()) for _ in range(2000)]
    assert min(draws) >= 2 and max(draws) <= 20


def test_generation_prompt_contents():
    text = build_generation_prompt(seed_table(), 7).prompt
    assert "exactly 7 relational tables" in text
    assert text.index("## Task Instruction") < text.index("## Demonstrations") < text.index("## Web Table")
    assert "### Example 1" in text and "### Example 2" in text
    assert text == build_generation_prompt(seed_table(), 7).prompt


def test_missing_demo_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_demos(tmp_path / "nope.json")
    with pytest.raises(ConfigError):
        build_generation_prompt(seed_table(), 3, tmp_path / "nope.json")


def test_column_counts():
    assert column_counts([school_schema()]) == {"tables_per_db": 2.0, "columns_per_table": 3.0}
    assert column_counts([]) == {"tables_per_db": 0.0, "columns_per_table": 0.0}
