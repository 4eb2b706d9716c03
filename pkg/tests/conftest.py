import sqlite3
from pathlib import Path

import pytest

from sqlforge import llm_gateway
from sqlforge.schema_synth import ColumnDef, ForeignKey, SchemaDef, TableDef, materialize

SEED_TABLES = {
    "cities": [
        ["City", "Country", "Population", "Area km2", "Founded"],
        ["Springfield", "United States", "167000", "161", "1821"],
        ["Portland", "United States", "652000", "376", "1845"],
        ["Austin", "United States", "961000", "790", "1839"],
        ["Denver", "United States", "715000", "401", "1858"],
        ["Boston", "United States", "675000", "232", "1630"],
        ["Seattle", "United States", "737000", "369", "1851"],
    ],
    "players": [
        ["Player", "Team", "Position", "Goals", "Assists"],
        ["John Smith", "Rovers", "Forward", "12", "4"],
        ["Alan Brown", "Rovers", "Midfield", "3", "9"],
        ["Mark Lee", "United", "Forward", "15", "2"],
        ["Tom Gray", "United", "Defender", "1", "1"],
        ["Sam Hill", "City", "Goalkeeper", "0", "0"],
        ["Paul King", "City", "Midfield", "6", "7"],
    ],
    "books": [
        ["Title", "Author", "Year", "Publisher", "Pages"],
        ["The Long Road", "Mary Jones", "1999", "North Press", "320"],
        ["A Quiet Sea", "Peter Wood", "2004", "Blue House", "210"],
        ["Under the Oak", "Anna White", "2011", "North Press", "415"],
        ["The Last Train", "James Black", "1987", "Orbit Books", "290"],
        ["Winter Light", "Laura Green", "2015", "Blue House", "188"],
        ["Paper Moons", "Chris Young", "2008", "Orbit Books", "342"],
    ],
}


def write_seed_tables(directory: Path) -> Path:
    import csv

    directory.mkdir(parents=True, exist_ok=True)
    for name, records in SEED_TABLES.items():
        with open(directory / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(records)
    return directory


@pytest.fixture
def seed_dir(tmp_path):
    return write_seed_tables(tmp_path / "seed")


def school_schema() -> SchemaDef:
    return SchemaDef(
        "school_db",
        "A school tracking students and their classes",
        [
            TableDef("classes", "School classes", [
                ColumnDef("class_id", "INTEGER", "Class identifier", ["1", "2"]),
                ColumnDef("title", "TEXT", "Class title", ["Algebra", "Biology"]),
            ], ["class_id"]),
            TableDef("school", "Students", [
                ColumnDef("student_id", "INTEGER", "Student identifier", ["1", "2"]),
                ColumnDef("name", "TEXT", "Full name of the student", ["Ann", "Bob"]),
                ColumnDef("age", "INTEGER", "Age in years", ["17", "19"]),
                ColumnDef("class_id", "INTEGER", "Class the student attends", ["1", "2"]),
            ], ["student_id"]),
        ],
        [ForeignKey("school", "class_id", "classes", "class_id")],
    )


@pytest.fixture
def school_db(tmp_path):
    schema = school_schema()
    path = materialize(schema, tmp_path / "school.sqlite")
    return schema, path


def make_db(path: Path, script: str) -> Path:
    conn = sqlite3.connect(path)
    conn.executescript(script)
    conn.commit()
    conn.close()
    return path


@pytest.fixture(autouse=True)
def _no_global_mock():
    yield
    llm_gateway.uninstall_mock()
