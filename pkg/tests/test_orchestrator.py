import json

import pytest

from sqlforge import orchestrator as orch
from sqlforge.cot_synth import read_samples
from sqlforge.errors import ConfigDrift, ConfigError, Interrupted, InvariantError, PreconditionError
from sqlforge.orchestrator import PipelineConfig, StageParams
from sqlforge.schema_synth import materialize
from sqlforge.sql_analysis import corpus_stats

from conftest import SEED_TABLES, school_schema, write_seed_tables


def config(seed_dir, work, **params):
    p = {"budget": 8, "n_samples": 4, "timeout_ms": 5000, **params}
    return PipelineConfig(str(seed_dir), str(work), seed=7, params=StageParams(**p))


@pytest.fixture
def two_tables(tmp_path):
    d = tmp_path / "two"
    d.mkdir()
    import csv
    for name in ("cities", "books"):
        with open(d / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(SEED_TABLES[name])
    return d


def test_full_run_two_tables(two_tables, tmp_path):
    work = tmp_path / "w"
    manifest = orch.run(config(two_tables, work))
    assert all(manifest.stages[s]["status"] == "complete" for s in orch.STAGES)
    assert set(manifest.artifacts) == set(orch.STAGES)
    on_disk = json.loads((work / orch.MANIFEST).read_text())
    assert on_disk["stages"] == manifest.stages
    samples = read_samples(work / orch.DATASET)
    assert samples
    for s in samples:
        s.db_path = str(work / s.db_path)
        s.check()


def test_query_stage_without_schemas(two_tables, tmp_path):
    with pytest.raises(PreconditionError):
        orch.run(config(two_tables, tmp_path / "w"), ["query"])


def test_unknown_stage(two_tables, tmp_path):
    with pytest.raises(PreconditionError):
        orch.run(config(two_tables, tmp_path / "w"), ["bogus"])


def test_deterministic_reruns(two_tables, tmp_path):
    orch.run(config(two_tables, tmp_path / "a"))
    orch.run(config(two_tables, tmp_path / "b"))
    for name in (orch.DATASET, orch.TRAIN, orch.SQL_SAMPLES, orch.SCHEMAS):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_kill_and_resume_matches(two_tables, tmp_path):
    orch.run(config(two_tables, tmp_path / "full"))
    killed = tmp_path / "killed"
    with pytest.raises(Interrupted):
        orch.run(config(two_tables, killed), stop_after_items=6)
    assert not (killed / orch.DATASET).exists()
    manifest = orch.resume(killed / orch.MANIFEST)
    assert manifest.stages["export"]["status"] == "complete"
    for name in (orch.DATASET, orch.TRAIN):
        assert (killed / name).read_bytes() == (tmp_path / "full" / name).read_bytes()


def test_resume_with_edited_config(two_tables, tmp_path):
    work = tmp_path / "w"
    orch.run(config(two_tables, work), ["ingest"])
    with pytest.raises(ConfigDrift):
        orch.resume(work / orch.MANIFEST, config(two_tables, work, budget=9))
    with pytest.raises(ConfigDrift):
        orch.run(config(two_tables, work, budget=9))


def test_resume_completed_is_noop(two_tables, tmp_path):
    work = tmp_path / "w"
    orch.run(config(two_tables, work))
    before = (work / orch.MANIFEST).read_bytes()
    dataset = (work / orch.DATASET).read_bytes()
    orch.resume(work / orch.MANIFEST)
    assert (work / orch.MANIFEST).read_bytes() == before
    assert (work / orch.DATASET).read_bytes() == dataset


def test_config_hash_ignores_work_dir(two_tables, tmp_path):
    assert config(two_tables, tmp_path / "a").config_hash() == config(two_tables, tmp_path / "b").config_hash()
    assert config(two_tables, tmp_path / "a").config_hash() != config(two_tables, tmp_path / "a", budget=3).config_hash()


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"tables_path": "x", "work_dir": "y", "provider": {"kind": "carrier-pigeon"}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"tables_path": "x", "work_dir": "y", "provider": {"models": [["a", 0.3]]}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"tables_path": "x", "work_dir": "y", "nonsense": 1})
    (tmp_path / "c.yaml").write_text("tables_path: t\nwork_dir: w\nseed: 3\nparams:\n  budget: 5\n")
    c = PipelineConfig.load(tmp_path / "c.yaml")
    assert (c.seed, c.params.budget) == (3, 5)


def test_item_rng_stable():
    a = orch.item_rng(1, "query", "db1").integers(0, 10**9, 5)
    b = orch.item_rng(1, "query", "db1").integers(0, 10**9, 5)
    c = orch.item_rng(1, "query", "db2").integers(0, 10**9, 5)
    assert (a == b).all() and not (a == c).all()


def test_manifest_counts_monotone(two_tables, tmp_path):
    m = orch._new_manifest(config(two_tables, tmp_path), None)
    m.update_stage("query", done=3)
    with pytest.raises(InvariantError):
        m.update_stage("query", done=2)


# ---------------------------------------------------------------- report

def test_report_single_two_table_db(tmp_path):
    materialize(school_schema(), tmp_path / "databases" / "school" / "school.sqlite")
    result = orch.report(tmp_path)
    db = result["databases"]
    assert db["n_databases"] == 1
    assert db["tables_per_db"] == 2.0 and db["columns_per_db"] == 6.0
    assert db["pk_per_db"] == 2.0 and db["fk_per_db"] == 1.0


def test_report_accounting_identity(tmp_path):
    work = tmp_path / "w"
    orch.run(config(write_seed_tables(tmp_path / "seed"), work))
    result = orch.report(work)
    sqls = [json.loads(line)["sql"] for line in (work / orch.SQL_SAMPLES).read_text().splitlines()]
    assert result["sql"]["sql_samples"] == corpus_stats(sqls).to_dict()
    assert sum(result["style_histogram"].values()) == result["n_samples"]
    assert sum(result["complexity_histogram"].values()) == result["n_samples"]
    for fig in result["figures"]:
        with open(fig, "rb") as fh:
            assert fh.read(8) == b"\x89PNG\r\n\x1a\n"
    assert len(result["figures"]) == 2
    text = (work / "report" / "report.txt").read_text()
    assert text.startswith("metric\tvalue") and "Uniq. Skel." in text


def test_report_empty_work_dir(tmp_path):
    result = orch.report(tmp_path / "nothing")
    assert result["databases"]["n_databases"] == 0 and result["n_samples"] == 0
    assert result["sql"] == {} and result["figures"] == []


def test_stages_never_read_later_outputs(two_tables, tmp_path, monkeypatch):
    work = tmp_path / "w"
    cfg = config(two_tables, work)
    reads = []
    real = orch._read_jsonl

    def audited(path):
        reads.append(str(path.relative_to(work)) if path.is_relative_to(work) else str(path))
        return real(path)

    monkeypatch.setattr(orch, "_read_jsonl", audited)
    for i, stage in enumerate(orch.STAGES):
        reads.clear()
        orch.run(cfg, [stage])
        later = {orch.STAGE_OUTPUTS[s] for s in orch.STAGES[i + 1:]}
        assert not later & set(reads), stage
