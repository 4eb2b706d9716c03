"""Command-line entry point: ``sqlforge <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import eval_quality, orchestrator
from .errors import SqlForgeError
from .orchestrator import PipelineConfig

STAGE_COMMANDS = {
    "ingest": "ingest",
    "synth-db": "schema",
    "synth-sql": "query",
    "synth-question": "question",
    "synth-cot": "cot",
    "export": "export",
}


def _config_from_args(args) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.load(args.config)
    else:
        if not args.tables or not args.work_dir:
            raise SqlForgeError("either --config or both --tables and --work-dir are required")
        config = PipelineConfig(tables_path=args.tables, work_dir=args.work_dir)
    if args.tables:
        config.tables_path = args.tables
    if args.work_dir:
        config.work_dir = args.work_dir
    if args.seed is not None:
        config.seed = args.seed
    if args.budget is not None:
        config.params.budget = args.budget
    if args.mock:
        config.provider.kind = "mock"
        config.stage_providers = {}
    return config


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON pipeline config")
    p.add_argument("--tables", help="seed tables (CSV/JSONL file or directory)")
    p.add_argument("--work-dir", help="directory for stage outputs and the manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=int, help="SQL generation budget per database")
    p.add_argument("--mock", action="store_true", help="use the offline simulated model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqlforge", description="Text-to-SQL data synthesis and evaluation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, stage in STAGE_COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {stage} stage")
        _add_run_options(p)
    p = sub.add_parser("run", help="run every stage in order")
    _add_run_options(p)
    p.add_argument("--stages", help="comma-separated subset of " + ",".join(orchestrator.STAGES))

    p = sub.add_parser("resume", help="continue an interrupted run")
    p.add_argument("manifest", help="path to manifest.json (or its work dir)")

    p = sub.add_parser("report", help="database/SQL statistics and histograms for a work dir")
    p.add_argument("work_dir")
    p.add_argument("--out", help="output directory (default: <work_dir>/report)")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("eval", help="execution accuracy on a Spider- or BIRD-style benchmark")
    p.add_argument("--benchmark", required=True, help="benchmark directory")
    p.add_argument("--split", default="dev.json")
    p.add_argument("--pred", required=True, help="JSON mapping item_id to a list of candidate SQL")
    p.add_argument("--strategy", choices=["greedy", "majority"], default="greedy")
    p.add_argument("--timeout-ms", type=int, default=30_000)
    p.add_argument("--out", help="write the full report JSON here")

    p = sub.add_parser("judge", help="LLM-judged quality scores for a dataset file")
    p.add_argument("--dataset", required=True, help="dataset.jsonl produced by the cot stage")
    p.add_argument("--work-dir", help="base directory for relative db paths (default: dataset's directory)")
    p.add_argument("--config", help="pipeline config whose provider is used as the judge")
    p.add_argument("--mock", action="store_true")
    p.add_argument("--limit", type=int)
    p.add_argument("--audit-corrections", action="store_true",
                   help="also ask the judge whether corrected SQL beats the original")
    p.add_argument("--out")
    return parser


def _cmd_eval(args) -> int:
    items, bad = eval_quality.load_benchmark(args.benchmark, args.split, timeout_ms=args.timeout_ms)
    preds = eval_quality.load_predictions(args.pred)
    rep = eval_quality.evaluate(items, preds, args.timeout_ms)
    rep.gold_errors.extend(bad)
    score = rep.ex_greedy if args.strategy == "greedy" else rep.ex_majority
    print(f"strategy\t{args.strategy}\nEX\t{score:.4f}\nitems\t{rep.n_items}\ngold_errors\t{len(rep.gold_errors)}")
    if args.out:
        Path(args.out).write_text(json.dumps(rep.to_dict(), indent=2) + "\n", encoding="utf-8")
    return 0


def _cmd_judge(args) -> int:
    from .cot_synth import audit_corrections, read_samples

    samples = read_samples(args.dataset)[: args.limit]
    base = Path(args.work_dir) if args.work_dir else Path(args.dataset).parent
    for s in samples:
        if not Path(s.db_path).is_absolute():
            s.db_path = str(base / s.db_path)
    spec = PipelineConfig.load(args.config).provider if args.config else orchestrator.ProviderSpec()
    if args.mock:
        spec.kind = "mock"
    gateway = orchestrator.build_gateway(spec)
    result = {"aspects": eval_quality.judge_dataset(samples, gateway), "n_samples": len(samples)}
    if args.audit_corrections:
        result["audit"] = audit_corrections(samples, gateway)
    print("aspect\tscore\tskipped")
    for aspect, r in result["aspects"].items():
        score = "n/a" if r["score"] is None else f"{r['score']:.4f}"
        print(f"{aspect}\t{score}\t{r['skipped']}")
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in STAGE_COMMANDS or args.command == "run":
            config = _config_from_args(args)
            if args.command == "run":
                stages = args.stages.split(",") if args.stages else orchestrator.STAGES
            else:
                stages = [STAGE_COMMANDS[args.command]]
            manifest = orchestrator.run(config, stages, config_path=args.config)
            _print_manifest(manifest)
        elif args.command == "resume":
            path = Path(args.manifest)
            if path.is_dir():
                path = path / orchestrator.MANIFEST
            _print_manifest(orchestrator.resume(path))
        elif args.command == "report":
            result = orchestrator.report(args.work_dir, args.out, plots=not args.no_plots)
            print((Path(args.out) if args.out else Path(args.work_dir) / "report").joinpath("report.txt")
                  .read_text(encoding="utf-8"), end="")
            for fig in result["figures"]:
                print(f"figure\t{fig}")
        elif args.command == "eval":
            return _cmd_eval(args)
        elif args.command == "judge":
            return _cmd_judge(args)
    except SqlForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _print_manifest(manifest) -> None:
    print("stage\tstatus\tdone\tfailed\ttotal")
    for stage in orchestrator.STAGES:
        s = manifest.stages.get(stage, {})
        print(f"{stage}\t{s.get('status', 'pending')}\t{s.get('done', 0)}\t{s.get('failed', 0)}\t{s.get('total', 0)}")


if __name__ == "__main__":
    sys.exit(main())
