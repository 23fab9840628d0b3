"""Comparison pipelines: snippet-retrieval RAG and text-to-SQL.

The RAG baseline renders events as one-line text snippets, groups them into
4-minute chunks covering the whole day, and retrieves top-k chunks by
embedding similarity. The text-to-SQL baseline asks the LLM for a single
SELECT over the events table, validates it conservatively, executes it
read-only, and asks the LLM to phrase the result.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np

from . import model_clients
from .event_store import DDL, EventRecord, EventStore, MAX_SELECT_ROWS
from .hms import DAY_SECONDS, format_start
from .model_clients import ChatRequest

logger = logging.getLogger(__name__)

CHUNK_SECONDS = 240  # 4-minute windows
DEFAULT_RAG_K = 5


class EmptyIndex(Exception):
    pass


class InvalidSQL(Exception):
    pass


class ExecutionError(Exception):
    pass


@dataclass
class Chunk:
    chunk_id: int
    start_s: float
    end_s: float
    text: str
    embedding: np.ndarray


def events_to_snippets(events: list[EventRecord]) -> list[str]:
    """One text line per event: tag, onset, duration, loudness."""
    out = []
    for ev in events:
        dur = ev.end_s - ev.start_s
        loud = "n/a" if ev.loudness_lufs is None else f"{ev.loudness_lufs:.1f}"
        out.append(f"{ev.tag} at {format_start(ev.start_s)} for {dur:.1f}s, {loud} LUFS")
    return out


def build_chunks(events: list[EventRecord], embedder=model_clients.embed,
                 duration_s: float = float(DAY_SECONDS),
                 window_s: float = CHUNK_SECONDS) -> list[Chunk]:
    """Disjoint windows covering [0, duration); the final partial window is kept."""
    ordered = sorted(events, key=lambda e: e.start_s)
    bounds = []
    lo = 0.0
    while lo < duration_s:
        bounds.append((lo, min(lo + window_s, duration_s)))
        lo += window_s
    texts = []
    i = 0
    per_window: list[list[str]] = []
    for lo, hi in bounds:
        lines = []
        while i < len(ordered) and ordered[i].start_s < hi:
            if ordered[i].start_s >= lo:
                lines.append(ordered[i])
            i += 1
        per_window.append(events_to_snippets(lines))
    texts = ["\n".join(lines) for lines in per_window]
    vectors = embedder([t if t else " " for t in texts])
    return [
        Chunk(chunk_id=idx, start_s=b[0], end_s=b[1], text=texts[idx],
              embedding=vectors[idx])
        for idx, b in enumerate(bounds)
    ]


def rag_answer(query: str, chunks: list[Chunk], embedder=model_clients.embed,
               llm_client=None, k: int = DEFAULT_RAG_K) -> str:
    """Retrieve top-k chunks by cosine and answer from their snippets."""
    if not chunks:
        raise EmptyIndex("no chunks indexed")
    query_vec = embedder([query])[0]
    ranked = sorted(
        chunks,
        key=lambda c: (-model_clients.cosine(query_vec, c.embedding), c.chunk_id),
    )
    kept = ranked[:k]
    context = "\n".join(c.text for c in kept if c.text.strip())
    prompt = "\n".join([
        "Context:",
        context if context else "(no events retrieved)",
        f"Question: {query}",
        "Answer using only the context lines above.",
    ])
    req = ChatRequest(messages=[
        ("system", "#task: answer\nYou answer questions about a day-long audio"
                   " recording from retrieved event snippets."),
        ("user", prompt),
    ])
    client = llm_client or model_clients.StubLlmClient()
    return client.complete(req)


def rank_chunks(query: str, chunks: list[Chunk],
                embedder=model_clients.embed) -> list[int]:
    """Chunk ids in retrieval order (used to cross-check the rag path)."""
    query_vec = embedder([query])[0]
    ranked = sorted(
        chunks,
        key=lambda c: (-model_clients.cosine(query_vec, c.embedding), c.chunk_id),
    )
    return [c.chunk_id for c in ranked]


# ---------------------------------------------------------------------------
# Text-to-SQL

_FORBIDDEN_TOKENS = re.compile(
    r"\b(insert|update|delete|drop|alter|create|replace|attach|detach|pragma|"
    r"vacuum|reindex|grant|revoke|begin|commit|rollback)\b",
    re.IGNORECASE,
)
_TABLE_REF = re.compile(r"\b(?:from|join)\s+([A-Za-z_][\w.]*)", re.IGNORECASE)


def validate_sql(sql: str) -> str:
    """Admit exactly one SELECT statement touching only the events table."""
    candidate = sql.strip().strip("`")
    if candidate.endswith(";"):
        candidate = candidate[:-1].rstrip()
    if not candidate:
        raise InvalidSQL("empty statement")
    if ";" in candidate:
        raise InvalidSQL("multiple statements are not allowed")
    if not re.match(r"(?i)^select\b", candidate):
        raise InvalidSQL("only SELECT statements are allowed")
    if _FORBIDDEN_TOKENS.search(candidate):
        raise InvalidSQL("statement contains a write or schema keyword")
    tables = {t.lower() for t in _TABLE_REF.findall(candidate)}
    if not tables:
        raise InvalidSQL("statement must read from the events table")
    if tables != {"events"}:
        raise InvalidSQL(f"only the events table is readable, got {sorted(tables)}")
    return candidate


def sql_prompt(query: str, tags: list[str]) -> ChatRequest:
    schema = DDL.strip()
    user = "\n".join([
        f"Schema: {schema}",
        f"Tags: {', '.join(tags)}",
        f"Question: {query}",
        "Write a single SQLite SELECT statement over the events table that"
        " answers the question. Times are seconds from the start of the day."
        " Reply with SQL only.",
    ])
    return ChatRequest(messages=[
        ("system", "#task: sql\nYou translate questions into one SQLite SELECT."),
        ("user", user),
    ])


def text2sql_answer(query: str, store: EventStore, llm_client,
                    audio_id: str | None = None) -> str:
    """Two-stage baseline: emit SQL, execute read-only, phrase the result.

    Invalid or failing SQL yields a structured failure answer rather than an
    exception.
    """
    audio_ids = store.audio_ids()
    scope = audio_id or (audio_ids[0] if audio_ids else "")
    tags = store.distinct_tags(scope) if scope else []
    raw_sql = llm_client.complete(sql_prompt(query, tags))
    try:
        sql = validate_sql(raw_sql)
    except InvalidSQL as exc:
        logger.warning("rejected SQL %r: %s", raw_sql[:120], exc)
        return f"[text2sql-error] invalid SQL rejected: {exc}"
    try:
        columns, rows = store.run_select(sql, MAX_SELECT_ROWS)
    except Exception as exc:
        logger.warning("SQL execution failed: %s", exc)
        return f"[text2sql-error] execution failed: {exc}"

    rendered = [" | ".join(columns)] if len(columns) > 1 else []
    for row in rows:
        rendered.append(" | ".join(str(v) for v in row) if len(row) > 1
                        else str(row[0]))
    result_block = "\n".join(rendered) if rendered else "(empty result)"
    user = "\n".join([
        f"Question: {query}",
        "Answer the question using only the result rows below.",
        "Result:",
        result_block,
    ])
    req = ChatRequest(messages=[
        ("system", "#task: table_answer\nYou phrase SQL results as an answer."),
        ("user", user),
    ])
    return llm_client.complete(req)
