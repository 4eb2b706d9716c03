"""Resumable end-to-end runs: config, manifest, per-item checkpoints and reporting."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import yaml

from . import cot_synth, question_synth, query_synth, schema_synth, sql_analysis, table_ingest, train_export
from .cot_synth import DataSample
from .errors import (
    ColumnResolutionError, ConfigDrift, ConfigError, DatabaseAborted, EmptyDatabase, GatewayError, Interrupted,
    InvariantError, MaterializeError, ParseError, PreconditionError, StageError, VoteFailed,
)
from .llm_gateway import Gateway, HttpProvider, ModelPool, PoolEntry, ProviderConfig, RequestLog
from .query_synth import SqlSample
from .question_synth import LanguageStyle, StylizedQuestion
from .table_ingest import WebTable

logger = logging.getLogger(__name__)

STAGES = ("ingest", "schema", "query", "question", "cot", "export")
MANIFEST = "manifest.json"

KEPT_TABLES = "tables/kept.jsonl"
INGEST_REPORT = "tables/ingest_report.json"
SCHEMAS = "schemas.jsonl"
SQL_SAMPLES = "sql_samples.jsonl"
QUESTIONS = "questions.jsonl"
DATASET = "dataset.jsonl"
TRAIN = "train.jsonl"
EXPORT_REPORT = "export_report.json"

STAGE_OUTPUTS = {
    "ingest": KEPT_TABLES, "schema": SCHEMAS, "query": SQL_SAMPLES,
    "question": QUESTIONS, "cot": DATASET, "export": TRAIN,
}

# failures that mark an item failed instead of aborting the stage
ITEM_ERRORS = (ParseError, InvariantError, MaterializeError, DatabaseAborted, VoteFailed, GatewayError,
               ColumnResolutionError, EmptyDatabase)


# ---------------------------------------------------------------- config

@dataclass
class ProviderSpec:
    kind: str = "mock"  # "mock" or "http"
    endpoint_url: str = "http://localhost:8000/v1"
    api_key_env: str = "OPENAI_API_KEY"
    models: list[list[Any]] = field(default_factory=lambda: [["default", 1.0]])
    max_in_flight: int = 8
    retry_limit: int = 3
    backoff_base_ms: int = 500
    request_timeout_s: float = 300.0
    embedding_model_id: str = "sentence-transformers/all-mpnet-base-v2"

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"provider kind must be 'mock' or 'http', got {self.kind!r}")
        self.models = [[str(m), float(w)] for m, w in self.models]
        try:
            ModelPool([PoolEntry(m, w) for m, w in self.models])  # validates weights
        except PreconditionError as exc:
            raise ConfigError(str(exc)) from exc

    def provider_config(self) -> ProviderConfig:
        return ProviderConfig(self.endpoint_url, self.api_key_env, self.max_in_flight, self.retry_limit,
                              self.backoff_base_ms, self.request_timeout_s, self.embedding_model_id)


@dataclass
class StageParams:
    budget: int = 300
    n_samples: int = 8
    temperature: float = 0.8
    timeout_ms: int = 30_000
    max_consecutive_failures: int = 10
    enhance_iterations: int = 1
    table_mean: float = 10.0
    table_stddev: float = 4.0
    table_min: int = 2
    table_max: int = 20
    complexity_weights: list[float] | None = None
    style_weights: list[float] | None = None


@dataclass
class PipelineConfig:
    tables_path: str
    work_dir: str
    seed: int = 0
    provider: ProviderSpec = field(default_factory=ProviderSpec)
    stage_providers: dict[str, ProviderSpec] = field(default_factory=dict)
    params: StageParams = field(default_factory=StageParams)
    log_requests: bool = False

    def __post_init__(self):
        if isinstance(self.provider, dict):
            self.provider = ProviderSpec(**self.provider)
        self.stage_providers = {k: ProviderSpec(**v) if isinstance(v, dict) else v
                                for k, v in self.stage_providers.items()}
        unknown = set(self.stage_providers) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages in stage_providers: {sorted(unknown)}")
        if isinstance(self.params, dict):
            self.params = StageParams(**self.params)
        if self.params.budget < 1 or self.params.n_samples < 1:
            raise ConfigError("budget and n_samples must be >= 1")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PipelineConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        """Hash of everything that shapes outputs; the work dir is left out so runs can move."""
        d = self.to_dict()
        d.pop("work_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


def build_gateway(spec: ProviderSpec, log: RequestLog | None = None) -> Gateway:
    if spec.kind == "mock":
        from .simulated import simulated_provider

        provider = simulated_provider(log=log)
    else:
        provider = HttpProvider(spec.provider_config(), log=log)
    pool = ModelPool([PoolEntry(m, w, provider) for m, w in spec.models])
    return Gateway(provider, pool=pool)


# ---------------------------------------------------------------- io helpers

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump_jsonl(records: Iterable[dict[str, Any]]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records)


def _read_jsonl(path: Path) -> list[dict[str, Any]]:
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def item_rng(seed: int, stage: str, item: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}|{stage}|{item}".encode("utf-8")).digest()
    return np.random.default_rng([int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4)])


class Checkpoint:
    """Append-only per-stage record of finished items; the last record per item wins."""

    def __init__(self, path: Path):
        self.path = path
        self.records: dict[str, dict[str, Any]] = {}
        for r in _read_jsonl(path):
            self.records[r["item"]] = r

    def get(self, item: str) -> dict[str, Any] | None:
        return self.records.get(item)

    def put(self, item: str, status: str, result: Any = None, error: str | None = None, attempts: int = 1) -> None:
        rec = {"item": item, "status": status, "result": result, "error": error, "attempts": attempts}
        self.records[item] = rec
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    config: dict[str, Any]
    config_path: str | None = None
    stages: dict[str, dict[str, Any]] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def save(self, work_dir: Path) -> None:
        _atomic_write(work_dir / MANIFEST, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def update_stage(self, stage: str, **counts) -> None:
        entry = self.stages.setdefault(stage, {"status": "pending", "done": 0, "failed": 0, "total": 0})
        for k in ("done", "failed"):
            if k in counts and counts[k] < entry[k]:
                raise InvariantError(f"checkpoint count {stage}.{k} would decrease")
        entry.update(counts)


# ---------------------------------------------------------------- runner

class Runner:
    def __init__(self, config: PipelineConfig, manifest: RunManifest, *, retry_failed: bool = False,
                 stop_after_items: int | None = None, gateway_factory: Callable[[ProviderSpec], Gateway] | None = None):
        self.config = config
        self.work = Path(config.work_dir)
        self.manifest = manifest
        self.retry_failed = retry_failed
        self.stop_after_items = stop_after_items
        self.processed = 0
        self._gateways: dict[str, Gateway] = {}
        self._gateway_factory = gateway_factory
        self._log = RequestLog(self.work / "requests.jsonl") if config.log_requests else None

    def gateway(self, stage: str) -> Gateway:
        if stage not in self._gateways:
            spec = self.config.stage_providers.get(stage, self.config.provider)
            factory = self._gateway_factory or (lambda s: build_gateway(s, self._log))
            self._gateways[stage] = factory(spec)
        return self._gateways[stage]

    def _items(self, stage: str, items: Sequence[str], fn: Callable[[str], Any]) -> dict[str, dict[str, Any]]:
        """Run ``fn`` per item with checkpointing; returns the checkpoint record per item."""
        cp = Checkpoint(self.work / "checkpoints" / f"{stage}.jsonl")
        self.manifest.update_stage(stage, status="running", total=len(items))
        self.manifest.save(self.work)
        for item in items:
            rec = cp.get(item)
            if rec is not None and (rec["status"] == "done" or not self.retry_failed or rec["attempts"] >= 2):
                continue
            attempts = 1 if rec is None else rec["attempts"] + 1
            try:
                result = fn(item)
            except ITEM_ERRORS as exc:
                logger.warning("%s item %s failed: %s", stage, item, exc)
                cp.put(item, "failed", None, f"{type(exc).__name__}: {exc}", attempts)
            else:
                cp.put(item, "done", result, None, attempts)
            self._count(stage, cp, items)
            self.processed += 1
            if self.stop_after_items is not None and self.processed >= self.stop_after_items:
                raise Interrupted(f"stopped after {self.processed} items in stage {stage}")
        self._count(stage, cp, items)
        return {i: cp.records[i] for i in items}

    def _count(self, stage: str, cp: Checkpoint, items: Sequence[str]) -> None:
        recs = [cp.records.get(i) for i in items]
        done = sum(1 for r in recs if r and r["status"] == "done")
        failed = sum(1 for r in recs if r and r["status"] == "failed")
        entry = self.manifest.stages.get(stage, {})
        # retried items move from failed to done, so only the sum is required to grow
        entry["done"], entry["failed"] = done, failed
        self.manifest.stages[stage] = entry
        self.manifest.save(self.work)

    def _finish(self, stage: str, artifact: str) -> None:
        self.manifest.update_stage(stage, status="complete")
        self.manifest.artifacts[stage] = artifact
        self.manifest.save(self.work)

    def _require(self, path: str, stage: str) -> Path:
        p = self.work / path
        if not p.exists():
            raise PreconditionError(f"stage {stage} needs {path}; run the earlier stage first")
        return p

    # -------------------------------------------------------- stages

    def stage_ingest(self) -> None:
        tables = table_ingest.load_tables(self.config.tables_path)
        ids = [t.table_id for t in tables]
        if len(set(ids)) != len(ids):
            raise StageError("seed table ids must be unique")
        prefilter: dict[str, str] = {}
        seen: set[tuple[str, ...]] = set()
        for t in tables:
            if not table_ingest.filter_language(t):
                prefilter[t.table_id] = "language"
            elif not table_ingest.filter_size(t):
                prefilter[t.table_id] = "size"
            else:
                key = table_ingest.header_key(t.headers)
                prefilter[t.table_id] = "dedup" if key in seen else ""
                seen.add(key)
        by_id = {t.table_id: t for t in tables}
        gw = self.gateway("ingest")

        def judge(item: str) -> dict[str, Any]:
            if prefilter[item]:
                return {"verdict": prefilter[item], "unparsable": False}
            v = table_ingest.judge_semantics_verdict(by_id[item], gw)
            return {"verdict": "kept" if v else "semantic", "unparsable": v is None}

        recs = self._items("ingest", ids, judge)
        report = table_ingest.FilterReport(input_count=len(tables))
        kept = []
        for t in tables:
            r = recs[t.table_id]
            verdict = r["result"]["verdict"] if r["status"] == "done" else "semantic"
            report.per_table_verdicts.append((t.table_id, verdict))
            if r["status"] == "done" and r["result"]["unparsable"]:
                report.unparsable.append(t.table_id)
            if verdict == "kept":
                kept.append(t)
            else:
                report.rejections[verdict] += 1
        report.kept_count = len(kept)
        _atomic_write(self.work / KEPT_TABLES, _dump_jsonl(t.to_dict() for t in kept))
        _atomic_write(self.work / INGEST_REPORT, json.dumps(report.to_dict(), indent=2) + "\n")
        self._finish("ingest", KEPT_TABLES)

    def stage_schema(self) -> None:
        tables = [WebTable.from_dict(d) for d in _read_jsonl(self._require(KEPT_TABLES, "schema"))]
        by_id = {t.table_id: t for t in tables}
        p = self.config.params
        params = schema_synth.SynthesisParams(p.table_mean, p.table_stddev, p.table_min, p.table_max)
        gw = self.gateway("schema")

        def synth(item: str) -> dict[str, Any]:
            rng = item_rng(self.config.seed, "schema", item)
            schema = schema_synth.synthesize_schema(by_id[item], gw, rng, params, p.enhance_iterations,
                                                    item_key=f"schema:{item}")
            tag = hashlib.sha256(item.encode("utf-8")).hexdigest()[:6]
            schema.db_name = f"{schema_synth.sanitize_name(schema.db_name)[:40]}_{tag}"
            rel = f"databases/{schema.db_name}/{schema.db_name}.sqlite"
            schema_synth.materialize(schema, self.work / rel)
            return {"db_name": schema.db_name, "db_path": rel, "source_table": item, "schema": schema.to_dict()}

        recs = self._items("schema", list(by_id), synth)
        rows = [r["result"] for r in recs.values() if r["status"] == "done"]
        _atomic_write(self.work / SCHEMAS, _dump_jsonl(rows))
        self._finish("schema", SCHEMAS)

    def _schemas(self, stage: str) -> dict[str, dict[str, Any]]:
        return {r["db_name"]: r for r in _read_jsonl(self._require(SCHEMAS, stage))}

    def stage_query(self) -> None:
        dbs = self._schemas("query")
        p = self.config.params
        gw = self.gateway("query")
        catalog = query_synth.FunctionCatalog.load()

        def synth(item: str) -> dict[str, Any]:
            rec = dbs[item]
            schema = schema_synth.SchemaDef.from_dict(rec["schema"])
            stats: dict[str, int] = {}
            samples = query_synth.generate_for_db(
                schema, self.work / rec["db_path"], gw, item_rng(self.config.seed, "query", item),
                budget=p.budget, n_samples=p.n_samples, temperature=p.temperature, timeout_ms=p.timeout_ms,
                max_consecutive_failures=p.max_consecutive_failures, catalog=catalog,
                complexity_weights=p.complexity_weights, item_key=f"query:{item}", stats=stats)
            return {"samples": [s.to_dict() for s in samples], "stats": stats}

        recs = self._items("query", list(dbs), synth)
        rows = [s for r in recs.values() if r["status"] == "done" for s in r["result"]["samples"]]
        _atomic_write(self.work / SQL_SAMPLES, _dump_jsonl(rows))
        self._finish("query", SQL_SAMPLES)

    def stage_question(self) -> None:
        dbs = self._schemas("question")
        samples = {d["sample_id"]: d for d in _read_jsonl(self._require(SQL_SAMPLES, "question"))}
        p = self.config.params
        gw = self.gateway("question")
        styles = question_synth.load_styles()
        schemas = {name: schema_synth.SchemaDef.from_dict(r["schema"]) for name, r in dbs.items()}

        def synth(item: str) -> dict[str, Any]:
            sample = SqlSample.from_dict(samples[item])
            style = question_synth.sample_style(item_rng(self.config.seed, "question", item), p.style_weights)
            cands = question_synth.synthesize_question(sample, schemas[sample.db_name], style, gw, p.n_samples,
                                                       p.temperature, item_key=f"question:{item}", styles=styles)
            if cands is None:
                return {"dropped": True, "style": style.value}
            return {"dropped": False, "question": cands.selected.to_dict(), "n_candidates": len(cands.candidates),
                    "selected_index": cands.selected_index}

        recs = self._items("question", list(samples), synth)
        rows = []
        for sid, r in recs.items():
            if r["status"] == "done" and not r["result"]["dropped"]:
                rows.append({**samples[sid], "question": r["result"]["question"]})
        _atomic_write(self.work / QUESTIONS, _dump_jsonl(rows))
        self._finish("question", QUESTIONS)

    def stage_cot(self) -> None:
        dbs = self._schemas("cot")
        rows = {d["sample_id"]: d for d in _read_jsonl(self._require(QUESTIONS, "cot"))}
        p = self.config.params
        gw = self.gateway("cot")
        schemas = {name: schema_synth.SchemaDef.from_dict(r["schema"]) for name, r in dbs.items()}

        def synth(item: str) -> dict[str, Any]:
            row = rows[item]
            sample = SqlSample.from_dict(row)
            question = StylizedQuestion.from_dict(row["question"])
            rel = dbs[sample.db_name]["db_path"]
            ds = cot_synth.synthesize_cot(sample, question, schemas[sample.db_name], self.work / rel, gw,
                                          p.n_samples, p.temperature, p.timeout_ms, item_key=f"cot:{item}")
            ds.db_path = rel
            ds.complexity = row.get("complexity")
            return ds.to_dict()

        recs = self._items("cot", list(rows), synth)
        out = [r["result"] for r in recs.values() if r["status"] == "done"]
        _atomic_write(self.work / DATASET, _dump_jsonl(out))
        self._finish("cot", DATASET)

    def stage_export(self) -> None:
        dbs = self._schemas("export")
        samples = [DataSample.from_dict(d) for d in _read_jsonl(self._require(DATASET, "export"))]
        for s in samples:
            s.db_path = str(self.work / s.db_path)
        schemas = {str(self.work / r["db_path"]): schema_synth.SchemaDef.from_dict(r["schema"]) for r in dbs.values()}

        def do_export(item: str) -> dict[str, Any]:
            tmp = self.work / (TRAIN + ".tmp")
            report = train_export.export(samples, tmp, schemas)
            os.replace(tmp, self.work / TRAIN)
            return report.to_dict()

        recs = self._items("export", ["all"], do_export)
        _atomic_write(self.work / EXPORT_REPORT, json.dumps(recs["all"]["result"], indent=2) + "\n")
        self._finish("export", TRAIN)

    def run(self, stages: Iterable[str]) -> RunManifest:
        wanted = set(stages)
        unknown = wanted - set(STAGES)
        if unknown:
            raise PreconditionError(f"unknown stages: {sorted(unknown)}")
        dirty = False  # once a stage reruns, everything downstream must rebuild its outputs
        for stage in STAGES:
            if stage not in wanted:
                continue
            complete = self.manifest.stages.get(stage, {}).get("status") == "complete"
            if complete and not dirty and not (self.retry_failed and self._has_failures(stage)):
                continue
            logger.info("stage %s", stage)
            getattr(self, f"stage_{stage}")()
            dirty = True
        return self.manifest

    def _has_failures(self, stage: str) -> bool:
        cp = Checkpoint(self.work / "checkpoints" / f"{stage}.jsonl")
        return any(r["status"] == "failed" and r["attempts"] < 2 for r in cp.records.values())


def _new_manifest(config: PipelineConfig, config_path: str | None) -> RunManifest:
    h = config.config_hash()
    return RunManifest(run_id=h[:12], config_hash=h, config=config.to_dict(), config_path=config_path,
                       stages={s: {"status": "pending", "done": 0, "failed": 0, "total": 0} for s in STAGES})


def run(config: PipelineConfig, stages: Iterable[str] = STAGES, *, config_path: str | None = None,
        stop_after_items: int | None = None, gateway_factory=None) -> RunManifest:
    """Run the given stages in pipeline order, continuing an existing run in the same work dir."""
    work = Path(config.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    mpath = work / MANIFEST
    if mpath.exists():
        manifest = RunManifest.load(mpath)
        if manifest.config_hash != config.config_hash():
            raise ConfigDrift(f"{work} holds a run with a different config; use a fresh work dir")
    else:
        manifest = _new_manifest(config, config_path)
        manifest.save(work)
    runner = Runner(config, manifest, stop_after_items=stop_after_items, gateway_factory=gateway_factory)
    return runner.run(stages)


def resume(manifest_path: str | Path, config: PipelineConfig | None = None, *,
           stop_after_items: int | None = None, gateway_factory=None) -> RunManifest:
    """Continue an interrupted run: finished items are skipped, failed ones retried once."""
    manifest_path = Path(manifest_path)
    manifest = RunManifest.load(manifest_path)
    if config is None:
        if manifest.config_path and Path(manifest.config_path).exists():
            config = PipelineConfig.load(manifest.config_path)
        else:
            config = PipelineConfig.from_dict(manifest.config)
    config.work_dir = str(manifest_path.parent)
    if config.config_hash() != manifest.config_hash:
        raise ConfigDrift("configuration changed since the run started")
    if all(manifest.stages.get(s, {}).get("status") == "complete" for s in STAGES):
        runner = Runner(config, manifest, retry_failed=True, gateway_factory=gateway_factory)
        if not any(runner._has_failures(s) for s in STAGES):
            return manifest
    runner = Runner(config, manifest, retry_failed=True, stop_after_items=stop_after_items,
                    gateway_factory=gateway_factory)
    return runner.run(STAGES)


# ---------------------------------------------------------------- report

def database_stats(work_dir: str | Path) -> dict[str, Any]:
    dbs = sorted(Path(work_dir).glob("databases/*/*.sqlite"))
    per_db = []
    for db in dbs:
        info = schema_synth.introspect(db)
        tables = info["tables"]
        per_db.append({
            "db": db.stem,
            "tables": len(tables),
            "columns": sum(len(t["columns"]) for t in tables.values()),
            "primary_keys": sum(1 for t in tables.values() if t["primary_key"]),
            "foreign_keys": len(info["foreign_keys"]),
        })
    n = len(per_db)

    def avg(key):
        return sum(d[key] for d in per_db) / n if n else 0.0

    return {"n_databases": n, "tables_per_db": avg("tables"), "columns_per_db": avg("columns"),
            "pk_per_db": avg("primary_keys"), "fk_per_db": avg("foreign_keys"), "per_db": per_db}


def _histogram(counts: dict[str, int], title: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(list(counts), list(counts.values()), color="#4c72b0")
    ax.set_title(title)
    ax.set_ylabel("samples")
    ax.tick_params(axis="x", rotation=35)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def report(work_dir: str | Path, out_dir: str | Path | None = None, plots: bool = True) -> dict[str, Any]:
    """Database stats, SQL corpus stats and style/complexity histograms for a work dir."""
    work = Path(work_dir)
    out = Path(out_dir) if out_dir else work / "report"
    samples = _read_jsonl(work / SQL_SAMPLES)
    dataset = _read_jsonl(work / DATASET)
    corpora = {}
    if samples:
        corpora["sql_samples"] = sql_analysis.corpus_stats(d["sql"] for d in samples)
    if dataset:
        corpora["dataset"] = sql_analysis.corpus_stats(d["sql"] for d in dataset)
    styles = Counter(d["style"] for d in dataset)
    complexity = Counter(d["complexity"] for d in dataset if d.get("complexity"))
    style_hist = {s.value: styles.get(s.value, 0) for s in LanguageStyle} if dataset else {}
    level_hist = {lv.value: complexity.get(lv.value, 0) for lv in query_synth.LEVELS} if dataset else {}
    result = {
        "databases": database_stats(work),
        "sql": {k: v.to_dict() for k, v in corpora.items()},
        "style_histogram": style_hist,
        "complexity_histogram": level_hist,
        "n_samples": len(dataset),
        "corrected": sum(1 for d in dataset if d.get("provenance", {}).get("corrected")),
        "figures": [],
    }
    out.mkdir(parents=True, exist_ok=True)
    if plots and dataset:
        for name, counts, title in (("style_histogram.png", style_hist, "Question styles"),
                                    ("complexity_histogram.png", level_hist, "SQL complexity")):
            _histogram(counts, title, out / name)
            result["figures"].append(str(out / name))
    _atomic_write(out / "report.json", json.dumps(result, indent=2, sort_keys=True) + "\n")
    _atomic_write(out / "report.txt", format_report(result, corpora) + "\n")
    return result


def format_report(result: dict[str, Any], corpora: dict[str, sql_analysis.CorpusStats] | None = None) -> str:
    db = result["databases"]
    lines = [
        "metric\tvalue",
        f"databases\t{db['n_databases']}",
        f"tables/db\t{db['tables_per_db']:.2f}",
        f"columns/db\t{db['columns_per_db']:.2f}",
        f"pk/db\t{db['pk_per_db']:.2f}",
        f"fk/db\t{db['fk_per_db']:.2f}",
        f"samples\t{result['n_samples']}",
        f"corrected\t{result['corrected']}",
    ]
    if corpora:
        lines += ["", sql_analysis.format_stats_table(corpora)]
    if result["style_histogram"]:
        lines += ["", "style\tcount"] + [f"{k}\t{v}" for k, v in result["style_histogram"].items()]
        lines += ["", "complexity\tcount"] + [f"{k}\t{v}" for k, v in result["complexity_histogram"].items()]
    return "\n".join(lines)

