"""Batch entry points: ingest, bench, eval, timeres-eval, serve, anomaly.

Exit codes: 0 success, 1 data error, 2 usage error. Every subcommand runs
fully offline with the stub clients.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

from . import agm_adapter, anomaly as anomaly_mod, baselines, benchgen
from . import eval_harness, model_clients, qa_pipeline, time_resolution
from .event_store import ConstraintViolation, EventStore
from .qa_pipeline import PipelineDeps, QuerySession

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2


def _load_config(path: str | None) -> dict:
    path = path or os.environ.get("LARAG_CONFIG")
    if not path:
        return {}
    return json.loads(Path(path).read_text("utf-8"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="larag",
                                     description="event-grounded long-audio QA")
    parser.add_argument("--config", help="JSON config file (or LARAG_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an event log and load it into the store")
    p.add_argument("log_path")
    p.add_argument("--db", required=True)

    p = sub.add_parser("bench", help="generate a benchmark dataset and its timeline")
    p.add_argument("--domain", default="home_iot")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--complex", action="store_true", dest="complex_mode")
    p.add_argument("--per-phase", type=int, default=100)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="run a pipeline over a dataset and score it")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pipeline", choices=["larag", "rag", "text2sql"], default="larag")
    p.add_argument("--db", required=True)
    p.add_argument("--audio-id", default=None)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--stub", action="store_true", default=True,
                   help="use deterministic stub clients (default)")
    p.add_argument("--out", default=None)

    p = sub.add_parser("timeres-eval", help="score the time-resolution strategies")
    p.add_argument("--suite", default=None, help="JSON case file (default: built-in)")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--db", default=":memory:")
    p.add_argument("--domain", default="home_iot")
    p.add_argument("--addr", default=None, help="host:port (or LARAG_ADDR)")

    p = sub.add_parser("anomaly", help="print the anomaly table for an audio")
    p.add_argument("--db", required=True)
    p.add_argument("--audio-id", required=True)
    p.add_argument("--kind", choices=["both", "loudness", "start_time"], default="both")
    p.add_argument("--z", type=float, default=anomaly_mod.DEFAULT_Z)
    p.add_argument("--max-distance", type=float,
                   default=anomaly_mod.DEFAULT_MAX_DISTANCE_MINUTES)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handler = {
        "ingest": cmd_ingest,
        "bench": cmd_bench,
        "eval": cmd_eval,
        "timeres-eval": cmd_timeres_eval,
        "serve": cmd_serve,
        "anomaly": cmd_anomaly,
    }[args.command]
    return handler(args, config)


def cmd_ingest(args, config) -> int:
    log_path = Path(args.log_path)
    if not log_path.exists():
        print(f"error: no such file: {log_path}", file=sys.stderr)
        return EXIT_USAGE
    try:
        log = agm_adapter.parse_agm_log(log_path.read_bytes())
    except (agm_adapter.MalformedLog, agm_adapter.SchemaViolation) as exc:
        print(f"error: bad log: {exc}", file=sys.stderr)
        return EXIT_DATA
    store = EventStore(args.db)
    records = [
        benchgen.EventRecord(audio_id=log.audio_id, tag=e.tag, start_s=e.start_s,
                             end_s=e.end_s, confidence=e.confidence,
                             loudness_lufs=e.loudness_lufs)
        for e in log.events
    ]
    try:
        inserted, skipped = store.upsert_events(records)
    except ConstraintViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"inserted {inserted} skipped {skipped}")
    return EXIT_OK


def cmd_bench(args, config) -> int:
    try:
        domain = benchgen.load_domain(args.domain)
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    timeline = benchgen.synth_timeline(domain, args.seed)
    pairs = benchgen.generate_dataset(timeline, domain, per_phase=args.per_phase,
                                      complex_mode=args.complex_mode, seed=args.seed)
    out = Path(args.out)
    out.write_text(benchgen.dataset_to_json(pairs), "utf-8")
    log = agm_adapter.AgmLog(
        audio_id=timeline[0].audio_id,
        recording_start=datetime(2025, 1, 1, tzinfo=timezone.utc),
        events=[agm_adapter.RawEvent(tag=e.tag, start_s=e.start_s, end_s=e.end_s,
                                     confidence=e.confidence,
                                     loudness_lufs=e.loudness_lufs)
                for e in timeline],
    )
    timeline_path = out.with_suffix(".timeline.json")
    timeline_path.write_text(agm_adapter.serialize_agm_log(log), "utf-8")
    counts = Counter(p.ground_truth.category for p in pairs)
    print(f"wrote {len(pairs)} pairs to {out} "
          f"(detection {counts['detection']} / counting {counts['counting']}"
          f" / summary {counts['summary']})")
    print(f"wrote timeline ({len(timeline)} events) to {timeline_path}")
    if args.complex_mode:
        freq = Counter(p.ground_truth.time_expression_type for p in pairs)
        total = sum(freq.values())
        summary = ", ".join(f"{k}: {100.0 * v / total:.1f}%"
                            for k, v in sorted(freq.items()))
        print(f"expression types: {summary}")
    return EXIT_OK


def _stub_client():
    return model_clients.StubLlmClient()


def cmd_eval(args, config) -> int:
    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        print(f"error: no such dataset: {dataset_path}", file=sys.stderr)
        return EXIT_USAGE
    if args.db != ":memory:" and not Path(args.db).exists():
        print(f"error: no such database: {args.db}", file=sys.stderr)
        return EXIT_USAGE
    dataset = benchgen.dataset_from_json(dataset_path.read_text("utf-8"))
    store = EventStore(args.db)
    audio_ids = store.audio_ids()
    if not audio_ids:
        print("error: store has no events", file=sys.stderr)
        return EXIT_DATA
    audio_id = args.audio_id or audio_ids[0]
    client = _stub_client() if args.stub else model_clients.HttpLlmClient(
        model_clients.endpoint_from_env())

    if args.pipeline == "larag":
        deps = PipelineDeps(store=store, llm_client=client, k=args.k,
                            vocabulary=store.distinct_tags(audio_id))

        def answer_fn(pair):
            return qa_pipeline.answer(pair.question, QuerySession(audio_id), deps)

    elif args.pipeline == "rag":
        chunks = baselines.build_chunks(store.all_events(audio_id))

        def answer_fn(pair):
            return baselines.rag_answer(pair.question, chunks, llm_client=client,
                                        k=args.k)

    else:
        def answer_fn(pair):
            return baselines.text2sql_answer(pair.question, store, client,
                                             audio_id=audio_id)

    report = eval_harness.run_eval(dataset, answer_fn, judge_client=client,
                                   jobs=args.jobs)
    print(report.render_table())
    if args.out:
        doc = {
            "pipeline": args.pipeline,
            "per_category": report.per_category,
            "per_category_n": report.per_category_n,
            "overall": report.overall,
            "mean_latency_s": report.mean_latency_s,
            "per_stage_latency_ms": report.per_stage_latency_ms,
        }
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", "utf-8")
    return EXIT_OK


def cmd_timeres_eval(args, config) -> int:
    if args.suite:
        path = Path(args.suite)
        if not path.exists():
            print(f"error: no such suite: {path}", file=sys.stderr)
            return EXIT_USAGE
        cases = time_resolution.load_suite(json.loads(path.read_text("utf-8")))
    else:
        cases = time_resolution.load_default_suite()
    client = _stub_client()
    reports = {
        strategy: time_resolution.run_suite(cases, llm_client=client,
                                            strategy=strategy)
        for strategy in ("rules", "llm", "combined")
    }
    width = max(len(c) for c in time_resolution.SUITE_CATEGORIES) + 2
    print(f"{'category'.ljust(width)} rules-only  llm-only  combined")
    for category in time_resolution.SUITE_CATEGORIES:
        row = [f"{reports[s].accuracy(category):6.2f}%" for s in ("rules", "llm",
                                                                  "combined")]
        print(f"{category.ljust(width)} {row[0]}     {row[1]}   {row[2]}")
    overall = [f"{reports[s].accuracy():6.2f}%" for s in ("rules", "llm", "combined")]
    print(f"{'overall'.ljust(width)} {overall[0]}     {overall[1]}   {overall[2]}")
    return EXIT_OK


def cmd_serve(args, config) -> int:
    import uvicorn

    from .service import create_app

    addr = args.addr or os.environ.get("LARAG_ADDR") or config.get("addr",
                                                                   "127.0.0.1:8765")
    host, _, port = addr.partition(":")
    app = create_app(db_path=args.db, domain=args.domain)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8765),
                log_level="warning")
    return EXIT_OK


def cmd_anomaly(args, config) -> int:
    if args.db != ":memory:" and not Path(args.db).exists():
        print(f"error: no such database: {args.db}", file=sys.stderr)
        return EXIT_USAGE
    store = EventStore(args.db)
    if not store.has_audio(args.audio_id):
        print(f"error: no events for audio {args.audio_id!r}", file=sys.stderr)
        return EXIT_DATA
    history = store.all_events(args.audio_id)
    baseline = anomaly_mod.fit_baseline(history)
    records = []
    if args.kind in ("both", "loudness"):
        records += anomaly_mod.loudness_anomalies(history, baseline, args.z)
    if args.kind in ("both", "start_time"):
        records += anomaly_mod.start_time_anomalies(history, baseline,
                                                    args.max_distance)
    print(anomaly_mod.render_anomaly_table(records))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
