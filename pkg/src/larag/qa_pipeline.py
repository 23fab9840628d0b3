"""End-to-end query orchestration.

A query runs rephrase -> time resolution -> intent classification ->
retrieval -> prompt building -> generation, with per-stage latency in the
returned envelope. Anomaly-intent queries branch into the anomaly workflow.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from . import anomaly as anomaly_mod
from . import intent_classifier, model_clients, time_resolution
from .event_store import EventRecord, EventStore, StorageFailure, UnknownAudioId
from .hms import format_end, format_start
from .intent_classifier import Intent
from .model_clients import ChatRequest, ClientUnavailable
from .time_resolution import ShiftConfig, TimeInterval

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 5
HISTORY_WINDOW = 6
EMPTY_EVIDENCE_LINE = "no events detected in this interval"


class StoreUnavailable(Exception):
    pass


# Scaffold words carry no retrieval signal and, worse, their hashed trigrams
# collide with short tag names; strip them before embedding the query.
_STOPWORDS = frozenset("""
a an and any are at after all before between by did do for from first get give
half happened hour hours how in is it last many me minute minutes of occur
occurred off on or overview second seconds shift show summarize summarise
summary that the there this times to until was were what when whole during
day morning afternoon evening night
""".split())


def _content_query(query: str) -> str:
    words = re.findall(r"[a-z']+", query.lower())
    kept = [w for w in words if w not in _STOPWORDS]
    return " ".join(kept) or query


@dataclass
class ChatTurn:
    role: str  # user | assistant
    text: str
    timestamp: float = field(default_factory=time.time)


@dataclass
class QuerySession:
    audio_id: str
    history: list[ChatTurn] = field(default_factory=list)


@dataclass
class AnswerEnvelope:
    answer_text: str
    intent: Intent
    interval: TimeInterval
    evidence: list[EventRecord]
    latency_breakdown: dict[str, float]  # stage -> milliseconds


@dataclass
class PipelineDeps:
    store: EventStore
    llm_client: object
    embedder: object = model_clients.embed
    shift_config: ShiftConfig = field(default_factory=ShiftConfig.default)
    intent_config: intent_classifier.IntentConfig | None = None
    vocabulary: list[str] = field(default_factory=list)
    k: int = DEFAULT_TOP_K
    history_window: int = HISTORY_WINDOW
    anomaly_z: float = anomaly_mod.DEFAULT_Z
    anomaly_gap_minutes: float = anomaly_mod.DEFAULT_GAP_MINUTES
    anomaly_max_distance_minutes: float = anomaly_mod.DEFAULT_MAX_DISTANCE_MINUTES


def rephrase(query: str, history: list[ChatTurn], llm_client,
             window: int = HISTORY_WINDOW) -> str:
    """Rewrite a follow-up into a self-contained question.

    Returns the original query on any client failure or empty reply.
    """
    lines = ["History:"]
    for turn in history[-window:]:
        lines.append(f"{turn.role}: {turn.text}")
    lines.append(f"Question: {query}")
    lines.append("Rewrite the question to be self-contained, resolving references"
                 " to the history. Reply with the rewritten question only.")
    req = ChatRequest(
        messages=[("system", "#task: rephrase\nYou rewrite questions about an"
                             " audio recording to be explicit."),
                  ("user", "\n".join(lines))],
        max_tokens=128,
    )
    try:
        rewritten = llm_client.complete(req).strip()
    except ClientUnavailable as exc:
        logger.warning("rephrase client failed, passing query through: %s", exc)
        return query
    return rewritten or query


def retrieve(intent: Intent, audio_id: str, interval: TimeInterval, query: str,
             store: EventStore, embedder=model_clients.embed,
             k: int = DEFAULT_TOP_K) -> list[EventRecord]:
    """Events backing the answer.

    Summary queries are broad and take every event in the interval; other
    intents keep only events whose tag ranks in the top k by embedding
    similarity to the query.
    """
    try:
        if intent.kind == "summary":
            return store.query_interval(audio_id, interval)
        tags = store.distinct_tags(audio_id, interval)
        if not tags:
            return []
        displays = [_display_tag(t) for t in tags]
        vectors = embedder([_content_query(query)] + displays)
        query_vec, tag_vecs = vectors[0], vectors[1:]
        ranked = sorted(
            zip(tags, tag_vecs),
            key=lambda pair: (-model_clients.cosine(query_vec, pair[1]), pair[0]),
        )
        keep = [tag for tag, _ in ranked[:k]]
        return store.query_interval(audio_id, interval, tags=keep)
    except StorageFailure as exc:
        raise StoreUnavailable(str(exc)) from exc


def _display_tag(tag: str) -> str:
    return tag.replace("_", " ").replace("-", " ")


@lru_cache(maxsize=8)
def _template(name: str) -> str:
    return resources.files("larag.templates").joinpath(f"{name}.txt").read_text("utf-8")


def evidence_line(ev: EventRecord) -> str:
    loud = "n/a" if ev.loudness_lufs is None else f"{ev.loudness_lufs:.1f} LUFS"
    return (f"{format_start(ev.start_s)}–{format_end(min(ev.end_s, 86399))}"
            f" | {ev.tag} | {ev.confidence:.2f} | {loud}")


def build_prompt(intent: Intent, events: list[EventRecord], query: str,
                 interval: TimeInterval, vocabulary: list[str] | None = None) -> str:
    """Render the intent-specific prompt; deterministic for fixed inputs."""
    name = intent.kind if intent.kind in ("detection", "counting", "summary") else "summary"
    rows = [evidence_line(ev) for ev in sorted(events, key=lambda e: e.start_s)]
    evidence = "\n".join(rows) if rows else EMPTY_EVIDENCE_LINE
    vocab = ", ".join(vocabulary) if vocabulary else ", ".join(
        sorted({ev.tag for ev in events}))
    return _template(name).format(
        interval=interval.display(),
        vocabulary=vocab,
        evidence=evidence,
        question=query,
    )


def answer(query: str, session: QuerySession, deps: PipelineDeps) -> AnswerEnvelope:
    """Run the full pipeline for one query against one audio recording."""
    latency: dict[str, float] = {}
    t_total = time.perf_counter()

    # Callers may have already appended the in-flight user turn; rephrasing
    # must only see the turns that came before it.
    history = session.history
    if history and history[-1].role == "user" and history[-1].text == query:
        history = history[:-1]

    t0 = time.perf_counter()
    effective = rephrase(query, history, deps.llm_client, deps.history_window)
    latency["rephrase"] = _ms(t0)

    t0 = time.perf_counter()
    interval = time_resolution.resolve(effective, deps.shift_config, deps.llm_client)
    latency["resolve"] = _ms(t0)

    t0 = time.perf_counter()
    intent = intent_classifier.classify(effective, deps.embedder, deps.intent_config)
    latency["classify"] = _ms(t0)

    if intent.kind == "anomaly":
        envelope = _answer_anomaly(effective, session.audio_id, interval, intent,
                                   deps, latency)
        latency["total"] = _ms(t_total)
        envelope.latency_breakdown = latency
        return envelope

    t0 = time.perf_counter()
    evidence = retrieve(intent, session.audio_id, interval, effective,
                        deps.store, deps.embedder, deps.k)
    latency["retrieve"] = _ms(t0)

    t0 = time.perf_counter()
    prompt = build_prompt(intent, evidence, effective, interval,
                          deps.vocabulary or None)
    req = ChatRequest(messages=[
        ("system", "#task: answer\nYou answer questions about a day-long audio"
                   " recording using only the structured event evidence provided."),
        ("user", prompt),
    ])
    try:
        text = deps.llm_client.complete(req)
    except ClientUnavailable as exc:
        logger.warning("generation client failed: %s", exc)
        text = f"Unable to generate an answer (client error: {exc})."
    latency["generate"] = _ms(t0)

    latency["total"] = _ms(t_total)
    return AnswerEnvelope(answer_text=text, intent=intent, interval=interval,
                          evidence=evidence, latency_breakdown=latency)


def _answer_anomaly(query: str, audio_id: str, interval: TimeInterval,
                    intent: Intent, deps: PipelineDeps,
                    latency: dict[str, float]) -> AnswerEnvelope:
    qlow = query.lower()
    if "pitch" in qlow:
        latency["retrieve"] = 0.0
        latency["generate"] = 0.0
        return AnswerEnvelope(
            answer_text="Pitch anomaly analysis is not supported: it requires"
                        " raw audio, which never reaches this service.",
            intent=intent, interval=interval, evidence=[], latency_breakdown=latency,
        )

    t0 = time.perf_counter()
    try:
        history = deps.store.all_events(audio_id)
        events = deps.store.query_interval(audio_id, interval)
    except StorageFailure as exc:
        raise StoreUnavailable(str(exc)) from exc
    baseline = anomaly_mod.fit_baseline(history, deps.anomaly_gap_minutes)
    records: list[anomaly_mod.AnomalyRecord] = []
    if "loud" in qlow:
        kinds = ("loudness",)
    elif "start time" in qlow or "timing" in qlow or "schedule" in qlow:
        kinds = ("start_time",)
    else:
        kinds = ("loudness", "start_time")
    if "loudness" in kinds:
        records += anomaly_mod.loudness_anomalies(events, baseline, deps.anomaly_z)
    if "start_time" in kinds:
        records += anomaly_mod.start_time_anomalies(
            events, baseline, deps.anomaly_max_distance_minutes)
    latency["retrieve"] = _ms(t0)

    t0 = time.perf_counter()
    table = anomaly_mod.render_anomaly_table(records)
    text = anomaly_mod.explain_anomalies(table, None, deps.llm_client)
    latency["generate"] = _ms(t0)
    return AnswerEnvelope(answer_text=text, intent=intent, interval=interval,
                          evidence=[r.event for r in records], latency_breakdown=latency)


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0
