"""HTTP service: ingestion, chat sessions, anomalies, and sound enrollment.

The grounding model runs elsewhere and POSTs event logs here; raw audio
never crosses this API. Sessions are in-memory with a 24-hour TTL, one
in-flight turn per session.
"""

from __future__ import annotations

import math
import threading
import time
import uuid

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import anomaly as anomaly_mod
from . import benchgen, model_clients, qa_pipeline
from .agm_adapter import MalformedLog, SchemaViolation, parse_agm_log
from .event_store import ConstraintViolation, EventRecord, EventStore, StorageFailure, UnknownAudioId
from .hms import format_start
from .qa_pipeline import AnswerEnvelope, ChatTurn, PipelineDeps

SESSION_TTL_S = 24 * 3600.0


class AppError(Exception):
    def __init__(self, status: int, code: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.code = code
        self.detail = detail


class Session:
    def __init__(self, audio_id: str):
        self.session_id = uuid.uuid4().hex
        self.audio_id = audio_id
        self.history: list[ChatTurn] = []
        self.created_at = time.time()
        self.lock = threading.Lock()


class SessionCreate(BaseModel):
    audio_id: str


class MessageIn(BaseModel):
    text: str = ""


class SoundIn(BaseModel):
    tag: str
    example_refs: list[str] = []


def create_app(store: EventStore | None = None, *, domain: str = "home_iot",
               llm_client=None, embedder=None, db_path: str = ":memory:",
               session_ttl_s: float = SESSION_TTL_S) -> FastAPI:
    app = FastAPI(title="larag", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    store = store or EventStore(db_path)
    config = benchgen.load_domain(domain)
    vocabulary = list(config.classes)
    deps = PipelineDeps(
        store=store,
        llm_client=llm_client or _default_client(),
        embedder=embedder or model_clients.embed,
        shift_config=config.shifts,
        vocabulary=vocabulary,
    )
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()
    enrolled: dict[str, dict] = {}

    app.state.store = store
    app.state.deps = deps
    app.state.sessions = sessions

    @app.exception_handler(AppError)
    def on_app_error(request: Request, exc: AppError):
        return JSONResponse(status_code=exc.status,
                            content={"error": exc.code, "detail": exc.detail})

    def get_session(session_id: str) -> Session:
        with sessions_lock:
            _prune(sessions, session_ttl_s)
            session = sessions.get(session_id)
        if session is None:
            raise AppError(404, "unknown_session", f"no session {session_id!r}")
        return session

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/audio/{audio_id}/events")
    async def ingest(audio_id: str, request: Request):
        body = await request.body()
        try:
            log = parse_agm_log(body)
        except MalformedLog as exc:
            raise AppError(400, "malformed_log", str(exc))
        except SchemaViolation as exc:
            raise AppError(400, "schema_violation", str(exc))
        if log.audio_id and log.audio_id != audio_id:
            raise AppError(400, "audio_id_mismatch",
                           f"path says {audio_id!r}, log says {log.audio_id!r}")
        records = [
            EventRecord(audio_id=audio_id, tag=e.tag, start_s=e.start_s,
                        end_s=e.end_s, confidence=e.confidence,
                        loudness_lufs=e.loudness_lufs)
            for e in log.events
        ]
        try:
            inserted, skipped = store.upsert_events(records)
        except ConstraintViolation as exc:
            raise AppError(409, "conflict", str(exc))
        except StorageFailure as exc:
            raise AppError(503, "store_failure", str(exc))
        return {"inserted": inserted, "skipped": skipped}

    @app.get("/v1/audio/{audio_id}/events")
    def list_events(audio_id: str, start: float = 0.0, end: float = 86400.0):
        try:
            events = store.query_interval(audio_id, (start, end))
        except UnknownAudioId:
            raise AppError(404, "unknown_audio", f"no events for {audio_id!r}")
        except StorageFailure as exc:
            raise AppError(503, "store_failure", str(exc))
        return {"events": [_event_dict(ev) for ev in events]}

    @app.post("/v1/sessions")
    def create_session(body: SessionCreate):
        session = Session(body.audio_id)
        with sessions_lock:
            _prune(sessions, session_ttl_s)
            sessions[session.session_id] = session
        return {"session_id": session.session_id, "audio_id": session.audio_id}

    @app.get("/v1/sessions/{session_id}")
    def session_info(session_id: str):
        session = get_session(session_id)
        return {
            "session_id": session.session_id,
            "audio_id": session.audio_id,
            "history": [{"role": t.role, "text": t.text, "timestamp": t.timestamp}
                        for t in session.history],
        }

    @app.post("/v1/sessions/{session_id}/messages")
    def chat(session_id: str, body: MessageIn):
        if not body.text.strip():
            raise AppError(400, "empty_message", "text must be nonempty")
        session = get_session(session_id)
        with session.lock:  # one in-flight turn per session
            session.history.append(ChatTurn(role="user", text=body.text))
            try:
                envelope = qa_pipeline.answer(body.text, session, deps)
            except UnknownAudioId:
                session.history.pop()
                raise AppError(404, "unknown_audio",
                               f"no events for {session.audio_id!r}")
            except qa_pipeline.StoreUnavailable as exc:
                session.history.pop()
                raise AppError(503, "store_failure", str(exc))
            session.history.append(ChatTurn(role="assistant",
                                            text=envelope.answer_text))
        return _envelope_dict(envelope)

    @app.get("/v1/audio/{audio_id}/anomalies")
    def anomalies(audio_id: str, kind: str = "both",
                  z: float = anomaly_mod.DEFAULT_Z,
                  max_distance_minutes: float = anomaly_mod.DEFAULT_MAX_DISTANCE_MINUTES,
                  gap_minutes: float = anomaly_mod.DEFAULT_GAP_MINUTES):
        if kind not in ("both", "loudness", "start_time"):
            raise AppError(422, "not_supported",
                           f"anomaly kind {kind!r} is not supported (loudness,"
                           " start_time, or both)")
        try:
            history = store.all_events(audio_id)
        except UnknownAudioId:
            raise AppError(404, "unknown_audio", f"no events for {audio_id!r}")
        baseline = anomaly_mod.fit_baseline(history, gap_minutes)
        if not any(b.sufficient for b in baseline.values()):
            raise AppError(422, "insufficient_baseline",
                           "no tag has enough history to fit a baseline")
        records = []
        if kind in ("both", "loudness"):
            records += anomaly_mod.loudness_anomalies(history, baseline, z)
        if kind in ("both", "start_time"):
            records += anomaly_mod.start_time_anomalies(history, baseline,
                                                        max_distance_minutes)
        records.sort(key=lambda r: r.event.start_s)
        return {
            "rows": [_anomaly_dict(r) for r in records],
            "table": anomaly_mod.render_anomaly_table(records),
        }

    @app.post("/v1/sounds")
    def enroll(body: SoundIn):
        tag = body.tag.strip()
        if not tag:
            raise AppError(400, "invalid_tag", "tag must be nonempty")
        if tag in enrolled or tag in vocabulary:
            raise AppError(409, "duplicate_tag", f"{tag!r} is already registered")
        record = {
            "tag": tag,
            "example_refs": list(body.example_refs),
            "registered_at": time.time(),
        }
        enrolled[tag] = record
        vocabulary.append(tag)
        vocabulary.sort()
        return record

    @app.get("/v1/sounds")
    def list_sounds():
        return {"sounds": sorted(enrolled.values(), key=lambda r: r["tag"]),
                "vocabulary": list(vocabulary)}

    return app


def _default_client():
    cfg = model_clients.endpoint_from_env()
    if cfg is not None:
        return model_clients.HttpLlmClient(cfg)
    return model_clients.StubLlmClient()


def _prune(sessions: dict[str, Session], ttl_s: float) -> None:
    cutoff = time.time() - ttl_s
    for sid in [sid for sid, s in sessions.items() if s.created_at < cutoff]:
        del sessions[sid]


def _event_dict(ev: EventRecord) -> dict:
    return {
        "tag": ev.tag,
        "start_s": ev.start_s,
        "end_s": ev.end_s,
        "start": format_start(ev.start_s),
        "confidence": ev.confidence,
        "loudness_lufs": ev.loudness_lufs,
    }


def _envelope_dict(envelope: AnswerEnvelope) -> dict:
    interval = envelope.interval
    return {
        "answer": envelope.answer_text,
        "intent": {
            "kind": envelope.intent.kind,
            "score": envelope.intent.score,
            "method": envelope.intent.method,
        },
        "interval": {
            "start_s": interval.start_s,
            "end_s": interval.end_s,
            "display": interval.display(),
            "type": interval.expression_type,
            "source": interval.source,
        },
        "evidence": [_event_dict(ev) for ev in envelope.evidence],
        "latency_ms": {k: round(v, 3) for k, v in envelope.latency_breakdown.items()},
    }


def _anomaly_dict(rec: anomaly_mod.AnomalyRecord) -> dict:
    return {
        "time": format_start(rec.event.start_s),
        "tag": rec.event.tag,
        "kind": rec.kind,
        "observed": rec.observed,
        "expected_low": rec.expected_low,
        "expected_high": rec.expected_high,
        "deviation": None if math.isinf(rec.deviation) else rec.deviation,
    }
