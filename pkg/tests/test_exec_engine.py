import hashlib

import pytest
from hypothesis import given, strategies as st

from sqlforge.errors import VoteFailed
from sqlforge.exec_engine import (
    ERROR, ROWS, TIMEOUT, ExecOutcome, canonical_value, execute, execute_many, fingerprint, group_vote, same_result,
)

from conftest import make_db


@pytest.fixture
def db(tmp_path):
    return make_db(tmp_path / "e.sqlite", """
        CREATE TABLE t (id INTEGER PRIMARY KEY, name TEXT, score REAL);
        INSERT INTO t VALUES (1, 'a', 1.5), (2, 'b', 2.0), (3, 'a', NULL);
    """)


def test_select_one(db):
    out = execute(db, "SELECT 1")
    assert out.status == ROWS and out.rows == ((1,),) and out.column_count == 1


def test_syntax_error(db):
    out = execute(db, "SELEC 1 FRM")
    assert out.status == ERROR and out.error_kind.endswith(":syntax")


def test_schema_error_kind(db):
    assert execute(db, "SELECT * FROM nonexistent").error_kind.endswith(":schema")


def test_recursive_loop_times_out(db):
    out = execute(db, "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT COUNT(*) FROM c",
                  timeout_ms=100)
    assert out.status == TIMEOUT
    assert out.elapsed_ms < 5000


def test_missing_database(tmp_path):
    assert execute(tmp_path / "none.sqlite", "SELECT 1").status == ERROR


def test_oversized_result(db):
    out = execute(db, "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c LIMIT 50) SELECT x FROM c",
                  max_rows=10)
    assert out.status == ERROR and out.error_kind == "oversized"


def test_never_mutates(db):
    before = hashlib.sha256(db.read_bytes()).hexdigest()
    for sql in ["DELETE FROM t", "DROP TABLE t", "INSERT INTO t VALUES (9, 'z', 0)", "SELECT * FROM t",
                "CREATE TABLE x (a)", "PRAGMA user_version = 7"]:
        execute(db, sql)
    assert hashlib.sha256(db.read_bytes()).hexdigest() == before
    assert execute(db, "DELETE FROM t").status == ERROR


def test_canonical_values():
    assert canonical_value(2.0) == 2 and isinstance(canonical_value(2.0), int)
    assert canonical_value(1.23456789) == 1.234568
    assert canonical_value("ab\x00\x00") == "ab"
    assert canonical_value(" ab ") == " ab "
    assert canonical_value(-0.0) == 0


def test_execute_many_preserves_none(db):
    outs = execute_many(db, ["SELECT 1", None, "SELECT 2"], workers=2)
    assert outs[1] is None and outs[2].rows == ((2,),)


def test_same_result_examples():
    a = ExecOutcome.from_rows([(1, "a"), (2, "b")])
    assert same_result(a, ExecOutcome.from_rows([(2, "b"), (1, "a")]))
    assert not same_result(ExecOutcome.from_rows([(1, 2)]), ExecOutcome.from_rows([(2, 1)]))
    assert not same_result(ExecOutcome.error("x"), ExecOutcome.error("x"))
    assert not same_result(ExecOutcome.timeout(), ExecOutcome.timeout())


def test_duplicates_and_nulls():
    assert not same_result(ExecOutcome.from_rows([(1,), (1,)]), ExecOutcome.from_rows([(1,)]))
    assert same_result(ExecOutcome.from_rows([(None,)]), ExecOutcome.from_rows([(None,)]))
    assert same_result(ExecOutcome.from_rows([(1.0000001,)]), ExecOutcome.from_rows([(1,)]))
    # empty results still compare the column count
    assert not same_result(ExecOutcome(ROWS, (), 1), ExecOutcome(ROWS, (), 2))


def test_fingerprint_examples():
    a = ExecOutcome.from_rows([(1, "a"), (2, "b")])
    assert fingerprint(a) == fingerprint(ExecOutcome.from_rows([(2, "b"), (1, "a")]))
    assert fingerprint(a) != fingerprint(ExecOutcome.timeout())
    assert fingerprint(ExecOutcome.from_rows([(1,)])) != fingerprint(ExecOutcome.from_rows([("1",)]))
    assert fingerprint(ExecOutcome.error("a", "k1")) != fingerprint(ExecOutcome.error("b", "k2"))


values = st.one_of(st.none(), st.integers(-3, 3), st.sampled_from(["a", "b", ""]), st.sampled_from([0.5, 2.0, -1.25]))


@st.composite
def outcomes(draw):
    width = draw(st.integers(1, 2))
    rows = draw(st.lists(st.tuples(*[values] * width), max_size=4))
    return ExecOutcome.from_rows(rows, width)


@given(outcomes(), outcomes(), outcomes())
def test_same_result_equivalence_and_fingerprint(a, b, c):
    assert same_result(a, a)
    assert same_result(a, b) == same_result(b, a)
    if same_result(a, b) and same_result(b, c):
        assert same_result(a, c)
    assert same_result(a, b) == (fingerprint(a) == fingerprint(b))


# ---------------------------------------------------------------- voting

A = ExecOutcome.from_rows([(1,)])
B = ExecOutcome.from_rows([(2,)])
ERR = ExecOutcome.error("boom")


def test_vote_majority():
    v = group_vote([A, A, B])
    assert v.winner == 0 and v.winning_group == [0, 1]


def test_vote_tie_goes_to_lowest_index():
    assert group_vote([A, B]).winner == 0
    assert group_vote([B, A, A, B]).winner == 0


def test_vote_skips_errors_and_none():
    v = group_vote([ERR, None, B])
    assert v.winner == 2 and v.invalid == [0, 1]


def test_vote_all_failed():
    with pytest.raises(VoteFailed):
        group_vote([ERR, ExecOutcome.timeout(), None])
