import json

import pytest
from hypothesis import given, strategies as st

from sqlforge import llm_gateway as lg
from sqlforge.table_ingest import (
    STAGES, WebTable, build_semantic_prompt, dedup_headers, filter_language, filter_size, header_key,
    judge_semantics, judge_semantics_verdict, language_score, load_tables, parse_verdict, run_ingest, write_tables,
)


def table(headers, n_rows=5, tid="t", cell=None):
    rows = [tuple(cell or f"{h} value {i}" for h in headers) for i in range(n_rows)]
    return WebTable(tid, headers, rows)


ENGLISH = ["name", "age", "city", "score", "date"]


def test_rows_must_match_headers():
    with pytest.raises(ValueError):
        WebTable("x", ["a", "b"], [("1",)])
    with pytest.raises(ValueError):
        WebTable("x", [], [])


def test_english_headers_pass():
    assert filter_language(table(ENGLISH))


def test_cjk_headers_fail():
    assert not filter_language(table(["名称", "年龄", "城市", "分数", "日期"], cell="数据"))


def test_mixed_majority_non_latin_headers_fail():
    t = WebTable("m", ["name", "age", "城市", "分数", "日期"], [("Ann", "17", "北京", "九十", "今天")] * 5)
    s = language_score(t)
    # 3 of 5 headers are non-Latin
    assert s["header_nonlatin"] == pytest.approx(0.6)
    assert not filter_language(t)


def test_foreign_latin_table_fails():
    t = WebTable("es", ["nombre de la ciudad", "el pais", "la poblacion", "los datos", "una fecha"],
                 [("la casa del sol", "el pais de los", "una de las", "para con el", "por la")] * 5)
    s = language_score(t)
    # hand computation: every cell is Latin so latin_ratio = 1, there are no English stop words,
    # and 12 of the 28 words are listed foreign stop words (el, los, una, del, las, para, con, por;
    # "de" and "la" are not listed), so the score is 0.5 - 12/28
    assert s["latin_ratio"] == 1.0 and s["en_rate"] == 0.0
    assert s["score"] == pytest.approx(0.5 - 12 / 28)
    assert not filter_language(t)


@pytest.mark.parametrize("cols,rows,expected", [(4, 10, False), (5, 5, True), (10, 4, False)])
def test_filter_size_examples(cols, rows, expected):
    assert filter_size(table([f"h{i}" for i in range(cols)], rows)) is expected


def test_filter_size_full_grid():
    for c in range(1, 9):
        for r in range(1, 9):
            assert filter_size(table([f"h{i}" for i in range(c)], r)) == (c >= 5 and r >= 5)


def test_dedup_case_collapse_and_first_wins():
    a = table(["A", "B", "c", "d", "e"], tid="a")
    b = table(["a", "b", "C", "D", "E"], tid="b")
    c = table(["x", "y", "z", "u", "v"], tid="c")
    assert [t.table_id for t in dedup_headers([a, b, c])] == ["a", "c"]
    assert [t.table_id for t in dedup_headers([c, c, c])] == ["c"]


def test_header_key_permutation_and_whitespace():
    assert header_key(["B ", " a  x"]) == header_key(["A X", "b"])


@given(st.lists(st.lists(st.sampled_from(["a", "B", "c", "D", " e"]), min_size=1, max_size=4), max_size=8))
def test_dedup_idempotent(header_lists):
    tables = [WebTable(str(i), h, []) for i, h in enumerate(header_lists)]
    once = dedup_headers(tables)
    assert [t.table_id for t in dedup_headers(once)] == [t.table_id for t in once]
    assert len({header_key(t.headers) for t in once}) == len(once)


def scripted(verdict):
    return lg.MockProvider({"*": [verdict]})


@pytest.mark.parametrize("text,expected", [("YES", True), ("No.", False), ("maybe?", None), ("Answer: yes", True)])
def test_parse_verdict(text, expected):
    assert parse_verdict(text) is expected


def test_judge_semantics_scripted():
    t = table(ENGLISH)
    assert judge_semantics(t, scripted("YES")) is True
    assert judge_semantics(t, scripted("NO")) is False
    assert judge_semantics(t, scripted("garbage")) is False
    assert judge_semantics_verdict(t, scripted("garbage")) is None


def test_semantic_prompt_shows_three_rows():
    t = table(ENGLISH, 10)
    text = build_semantic_prompt(t).prompt
    assert "name value 2" in text and "name value 3" not in text


def test_run_ingest_examples():
    kept, rep = run_ingest([table(ENGLISH)], scripted("YES"))
    assert len(kept) == 1 and rep.kept_count == 1

    mock = scripted("YES")
    kept, rep = run_ingest([table(["a1", "b1", "c1", "d1"], 4)], mock)
    assert kept == [] and rep.rejections["size"] == 1
    assert mock.requests == []  # never reached the judge

    a, b = table(ENGLISH, tid="a"), table([h.upper() for h in ENGLISH], tid="b")
    kept, rep = run_ingest([a, b], scripted("YES"))
    assert [t.table_id for t in kept] == ["a"] and rep.rejections["dedup"] == 1


def test_run_ingest_accounting_and_unparsable():
    tables = [table(ENGLISH, tid="ok"), table(["名称", "年龄", "城市", "分数", "日期"], tid="cjk", cell="数据"),
              table(ENGLISH[:4], tid="small"), table(ENGLISH, tid="dup")]
    kept, rep = run_ingest(tables, scripted("hmm"))
    assert rep.input_count == rep.kept_count + sum(rep.rejections.values())
    assert set(rep.rejections) == set(STAGES)
    assert dict(rep.per_table_verdicts) == {"ok": "semantic", "cjk": "language", "small": "size", "dup": "dedup"}
    assert rep.unparsable == ["ok"]


def test_load_csv_and_jsonl(tmp_path):
    (tmp_path / "a.csv").write_text("x,y\n1,2\n3\n4,5\n", encoding="utf-8")
    t = load_tables(tmp_path / "a.csv")[0]
    assert t.rows == [("1", "2"), ("4", "5")]  # ragged row dropped
    write_tables([t], tmp_path / "b.jsonl")
    assert load_tables(tmp_path / "b.jsonl")[0] == WebTable("a", ["x", "y"], [("1", "2"), ("4", "5")], str(tmp_path / "a.csv"))
    assert len(load_tables(tmp_path)) == 2
    assert json.loads((tmp_path / "b.jsonl").read_text())["headers"] == ["x", "y"]
