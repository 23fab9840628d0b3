"""Boundary to external model services: chat completion and text embeddings.

Both have deterministic offline fallbacks so the whole system runs without
network access. The stub chat client dispatches on a ``#task:`` marker line
in the system message; the fallback embedder hashes character trigrams.

Environment variables for real endpoints (unset means stub/fallback):
LARAG_LLM_URL, LARAG_LLM_MODEL, LARAG_EMBED_URL, LARAG_API_KEY.
"""

from __future__ import annotations

import json
import logging
import os
import re
import zlib
from dataclasses import dataclass, field

import numpy as np
import requests

from .hms import hms_to_seconds, parse_end_bound

logger = logging.getLogger(__name__)

EMBED_DIM = 256
DEFAULT_TIMEOUT_S = 30.0


class ClientUnavailable(Exception):
    """The model endpoint could not produce a usable reply."""


class Timeout(ClientUnavailable):
    pass


class HttpError(ClientUnavailable):
    pass


class MalformedResponse(ClientUnavailable):
    pass


class EmbedderUnavailable(Exception):
    pass


@dataclass
class ChatRequest:
    """One chat-completion call. Temperature defaults to 0 for determinism."""

    messages: list[tuple[str, str]]  # (role, text)
    max_tokens: int = 512
    temperature: float = 0.0

    def system_text(self) -> str:
        return "\n".join(t for r, t in self.messages if r == "system")

    def last_user_text(self) -> str:
        for role, text in reversed(self.messages):
            if role == "user":
                return text
        return ""


@dataclass
class EndpointConfig:
    url: str
    model: str = "default"
    api_key: str | None = None
    timeout_s: float = DEFAULT_TIMEOUT_S


def endpoint_from_env() -> EndpointConfig | None:
    url = os.environ.get("LARAG_LLM_URL")
    if not url:
        return None
    return EndpointConfig(
        url=url,
        model=os.environ.get("LARAG_LLM_MODEL", "default"),
        api_key=os.environ.get("LARAG_API_KEY"),
    )


# ---------------------------------------------------------------------------
# Embeddings


def _trigrams(text: str) -> list[str]:
    t = text.lower()
    if not t:
        return []
    return [t[i : i + 3] for i in range(len(t) - 2)] if len(t) >= 3 else [t]


def trigram_embed(text: str) -> np.ndarray:
    """Hash character trigrams of the lowercased text into 256 buckets.

    Returns a unit-normalized count vector; empty text maps to the zero
    vector by convention. Uses crc32 so vectors are stable across processes.
    """
    vec = np.zeros(EMBED_DIM, dtype=np.float64)
    grams = _trigrams(text)
    if not grams:
        return vec
    for g in grams:
        vec[zlib.crc32(g.encode("utf-8")) % EMBED_DIM] += 1.0
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 0 else vec


_WORD_RE = re.compile(r"[a-z0-9']+")


def _words_match(w: str, q: str) -> bool:
    """Same word up to light inflection: prefix-of (>=3), contained suffix
    (>=4), or a shared 4-character stem ("closing"/"closed")."""
    if w == q:
        return True
    if min(len(w), len(q)) >= 3 and (w.startswith(q) or q.startswith(w)):
        return True
    if len(w) >= 4 and q.endswith(w):
        return True
    if len(q) >= 4 and w.endswith(q):
        return True
    prefix = 0
    for a, b in zip(w, q):
        if a != b:
            break
        prefix += 1
    return prefix >= 4


def word_coverage(text: str, phrase: str) -> float:
    """Fraction of the phrase's words present in the text, inflection-tolerant.

    Word-anchored on purpose: character n-grams leak across word boundaries
    ("door bell" vs "door being"), which this must not.
    """
    phrase_words = _WORD_RE.findall(phrase.lower())
    if not phrase_words:
        return 0.0
    text_words = set(_WORD_RE.findall(text.lower()))
    hits = sum(1 for w in phrase_words
               if any(_words_match(w, q) for q in text_words))
    return hits / len(phrase_words)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either vector is zero."""
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(np.dot(a, b) / (na * nb))))


def embed(texts: list[str], provider_config: EndpointConfig | None = None) -> list[np.ndarray]:
    """Embed texts via the remote provider when configured, else the fallback."""
    if not texts:
        raise ValueError("texts must be nonempty")
    if provider_config is None and os.environ.get("LARAG_EMBED_URL"):
        provider_config = EndpointConfig(
            url=os.environ["LARAG_EMBED_URL"],
            api_key=os.environ.get("LARAG_API_KEY"),
        )
    if provider_config is None:
        return [trigram_embed(t) for t in texts]
    try:
        resp = requests.post(
            provider_config.url,
            json={"input": texts, "model": provider_config.model},
            headers=_auth_headers(provider_config),
            timeout=provider_config.timeout_s,
        )
        resp.raise_for_status()
        data = resp.json()["data"]
        return [np.asarray(item["embedding"], dtype=np.float64) for item in data]
    except requests.Timeout as exc:
        raise EmbedderUnavailable(f"embedding request timed out: {exc}") from exc
    except (requests.RequestException, KeyError, TypeError, ValueError) as exc:
        raise EmbedderUnavailable(f"embedding provider failed: {exc}") from exc


def _auth_headers(cfg: EndpointConfig) -> dict[str, str]:
    return {"Authorization": f"Bearer {cfg.api_key}"} if cfg.api_key else {}


# ---------------------------------------------------------------------------
# Chat completion


class HttpLlmClient:
    """OpenAI-compatible chat endpoint: POST {model, messages, ...}."""

    def __init__(self, config: EndpointConfig):
        self.config = config

    def complete(self, req: ChatRequest) -> str:
        if not req.messages:
            raise ValueError("messages must be nonempty")
        body = {
            "model": self.config.model,
            "messages": [{"role": r, "content": t} for r, t in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        try:
            resp = requests.post(
                self.config.url,
                json=body,
                headers=_auth_headers(self.config),
                timeout=self.config.timeout_s,
            )
        except requests.Timeout as exc:
            raise Timeout(f"chat request timed out: {exc}") from exc
        except requests.RequestException as exc:
            raise HttpError(f"chat request failed: {exc}") from exc
        if resp.status_code != 200:
            raise HttpError(f"chat endpoint returned {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"unexpected reply shape: {exc}") from exc


def llm_complete(req: ChatRequest, endpoint_config: EndpointConfig | None = None) -> str:
    """Complete via the configured endpoint, or the deterministic stub."""
    cfg = endpoint_config or endpoint_from_env()
    if cfg is not None:
        return HttpLlmClient(cfg).complete(req)
    return StubLlmClient().complete(req)


class ScriptedClient:
    """Test helper: replays a fixed list of replies, then raises."""

    def __init__(self, replies: list[str]):
        self._replies = list(replies)

    def complete(self, req: ChatRequest) -> str:
        if not self._replies:
            raise ClientUnavailable("script exhausted")
        return self._replies.pop(0)


class FailingClient:
    def complete(self, req: ChatRequest) -> str:
        raise ClientUnavailable("client configured to fail")


# ---------------------------------------------------------------------------
# Deterministic stub


_MARKER_RE = re.compile(r"^#task:\s*(\w+)(?:\s+(.*))?$", re.MULTILINE)
_CLOCK_RE = re.compile(r"\b(\d{1,2}:\d{2}(?::\d{2})?)\b")
_CONJ_RE = re.compile(r"^(?:and|also|what about|how about)[\s,]+(.*)$", re.IGNORECASE)
_TRAILING_TIME_RES = [
    re.compile(p, re.IGNORECASE)
    for p in (
        r"\s+between\s+\S+(?:\s+\S+)*?\s+and\s+\S+\s*$",
        r"\s+(?:after|before|until|till|since)\s+\S+\s*$",
        r"\s+(?:this|in the|during the|during)\s+(?:morning|afternoon|evening|night|day)(?:\s+shift)?\s*$",
    )
]

# Scripted replies for the time-resolution fallback, keyed by normalized query.
DEFAULT_TIME_TABLE: dict[str, str] = {
    "around lunchtime": '{"start":"11:30:00","end":"13:30:00"}',
    "just before midnight": '{"start":"23:30:00","end":"23:59:59"}',
    "when the shift changes": '{"start":"15:45:00","end":"16:15:00"}',
    "from the 2nd hour to the 4th hour": '{"start":"02:00:00","end":"04:00:00"}',
    "halfway through the recording until the end": '{"start":"12:00:00","end":"23:59:59"}',
    "betwen 2pm and 4pm": '{"start":"14:00:00","end":"16:00:00"}',
    "aftr 17:30": '{"start":"17:30:00","end":"23:59:59"}',
    "b4 9pm": '{"start":"00:00:00","end":"21:00:00"}',
    "frm 10:00 to 11:00": '{"start":"10:00:00","end":"11:00:00"}',
    "during moring shift": '{"start":"08:00:00","end":"16:00:00"}',
    "in the afternon shift": '{"start":"16:00:00","end":"23:59:59"}',
    "betwen 1 hour and 2 hours": '{"start":"01:00:00","end":"02:00:00"}',
}

# Question/tag word coverage below this means "no tag of the vocabulary is
# being asked about" (e.g. the question names a class from another domain).
# Sharing one word of a two-word tag scores 0.5; naming the tag scores >=2/3.
TAG_MATCH_FLOOR = 0.6


def _normalize_query(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower()).strip(" ?.!")


def _display_tag(tag: str) -> str:
    return re.sub(r"[_\-]+", " ", tag).strip()


class StubLlmClient:
    """Deterministic offline chat client.

    Dispatches on the ``#task: <name>`` marker line in the system message.
    Identical requests always yield identical replies, across processes.
    """

    def __init__(self, time_table: dict[str, str] | None = None,
                 tag_match_floor: float = TAG_MATCH_FLOOR):
        self.time_table = dict(DEFAULT_TIME_TABLE if time_table is None else time_table)
        self.tag_match_floor = tag_match_floor

    def complete(self, req: ChatRequest) -> str:
        if not req.messages:
            raise ValueError("messages must be nonempty")
        marker = _MARKER_RE.search(req.system_text())
        task = marker.group(1) if marker else "answer"
        user = req.last_user_text()
        handler = getattr(self, f"_do_{task}", None)
        if handler is None:
            raise MalformedResponse(f"stub has no behavior for task {task!r}")
        return handler(user)

    # -- rephrase: merge elliptical follow-ups with the last user turn

    def _do_rephrase(self, user: str) -> str:
        query = _section(user, "Question") or user
        history_user = None
        for line in user.splitlines():
            if line.startswith("user: "):
                history_user = line[len("user: "):]
        m = _CONJ_RE.match(query.strip())
        if not m or not history_user:
            return query.strip()
        fragment = m.group(1).strip().rstrip("?. ")
        stem = history_user.strip().rstrip("?. ")
        for pat in _TRAILING_TIME_RES:
            stem = pat.sub("", stem)
        low = stem.lower()
        joint = ""
        if low.startswith("how many"):
            joint = "occurred"
        elif low.startswith("did"):
            joint = "occur"
        if joint and not low.endswith(("occur", "occurred", "happen", "happened")):
            return f"{stem} {joint} {fragment}?"
        return f"{stem} {fragment}?"

    # -- time: scripted fallback table

    def _do_time(self, user: str) -> str:
        return self.time_table.get(_normalize_query(user), "NONE")

    # -- answer: ground a reply in the evidence block

    def _do_answer(self, user: str) -> str:
        question = _section(user, "Question") or ""
        vocab_line = _section(user, "Vocabulary")
        evidence = _evidence_rows(user)
        qlow = question.lower()
        if "how many" in qlow or "count" in qlow:
            mode = "counting"
        elif any(k in qlow for k in ("was there", "is there", "did ", "were there")):
            mode = "detection"
        else:
            mode = "summary"

        if mode == "summary":
            return self._summary_bullets(evidence)

        candidates = ([t.strip() for t in vocab_line.split(",")] if vocab_line
                      else sorted({tag for tag, _ in evidence}))
        target = self._match_tag(question, candidates)
        rows = [(tag, start) for tag, start in evidence if tag == target]
        if mode == "counting":
            return str(len(rows))
        if not rows:
            return "No."
        times = ", ".join(start for _, start in rows[:5])
        return f"Yes. {len(rows)} event(s): {times}"

    def _match_tag(self, question: str, candidates: list[str]) -> str | None:
        if not candidates:
            return None
        best_tag, best_sim = None, -1.0
        for tag in sorted(candidates):
            sim = word_coverage(question, _display_tag(tag))
            if sim > best_sim:
                best_tag, best_sim = tag, sim
        if best_sim < self.tag_match_floor:
            return None
        return best_tag

    @staticmethod
    def _summary_bullets(evidence: list[tuple[str, str]]) -> str:
        by_tag: dict[str, list[str]] = {}
        for tag, start in evidence:
            by_tag.setdefault(tag, []).append(start)
        if not by_tag:
            return "No events in this interval."
        lines = []
        for tag in sorted(by_tag):
            starts = sorted(by_tag[tag])
            lines.append(f"- {tag}: {len(starts)} events, first {starts[0]}, last {starts[-1]}")
        return "\n".join(lines)

    # -- judge: recall of reference bullet lines in the answer

    def _do_judge(self, user: str) -> str:
        ref_lines = [ln.strip() for ln in _block(user, "Reference") if ln.strip().startswith("- ")]
        answer = "\n".join(_block(user, "Answer"))
        if not ref_lines:
            return "5" if _section(user, "Reference") else "1"
        hits = sum(1 for ln in ref_lines if ln in answer)
        recall = hits / len(ref_lines)
        if recall >= 1.0:
            return "5"
        if recall >= 0.75:
            return "4"
        if recall >= 0.5:
            return "3"
        if recall > 0.0:
            return "2"
        return "1"

    # -- sql: emit one SELECT over the events table

    def _do_sql(self, user: str) -> str:
        question = _section(user, "Question") or user
        tags_line = _section(user, "Tags")
        clocks = _CLOCK_RE.findall(question)
        lo, hi = 0, 86400
        qlow = question.lower()
        if len(clocks) >= 2:
            lo, hi = hms_to_seconds(clocks[0]), parse_end_bound(clocks[1])
        elif len(clocks) == 1:
            t = hms_to_seconds(clocks[0])
            if "before" in qlow or "until" in qlow:
                hi = t
            else:
                lo = t
        where = f"start_s>={lo} AND start_s<{hi}"
        if tags_line:
            target = self._match_tag(question, [t.strip() for t in tags_line.split(",")])
            if target:
                safe = target.replace("'", "''")
                where = f"tag='{safe}' AND {where}"
        return f"SELECT COUNT(*) FROM events WHERE {where}"

    # -- table_answer: read the result table back to the user

    def _do_table_answer(self, user: str) -> str:
        question = (_section(user, "Question") or "").lower()
        rows = _block(user, "Result")
        cells = [ln for ln in rows if ln.strip()]
        if len(cells) == 1 and "|" not in cells[0]:
            value = cells[0].strip()
            counting = any(k in question for k in ("how many", "count", "number of"))
            if not counting and any(k in question
                                    for k in ("was there", "is there", "did ")):
                try:
                    return "Yes" if float(value) > 0 else "No"
                except ValueError:
                    return value
            return value
        return f"{len(cells)} rows"

    # -- anomaly_explain: echo the table row count

    def _do_anomaly_explain(self, user: str) -> str:
        lines = _block(user, "Anomaly table")
        body = [ln for ln in lines
                if " | " in ln and not ln.startswith(("time ", "time|", "-"))]
        n = len(body)
        return f"{n} anomalies found. See the table above for times and expected ranges."


def _section(text: str, label: str) -> str | None:
    """Return the single-line section ``label: value``, if present."""
    for line in text.splitlines():
        if line.startswith(label + ":"):
            return line[len(label) + 1 :].strip()
    return None


def _block(text: str, label: str) -> list[str]:
    """Return the lines of a multi-line section ``label:`` up to the next label."""
    lines = text.splitlines()
    out: list[str] = []
    in_block = False
    for line in lines:
        if line.strip() == label + ":":
            in_block = True
            continue
        if in_block:
            if re.match(r"^[A-Z][\w ]*:", line):
                break
            out.append(line)
    return out


def _evidence_rows(text: str) -> list[tuple[str, str]]:
    """Parse evidence lines ``HH:MM:SS–HH:MM:SS | tag | conf | loudness``."""
    rows = []
    block = _block(text, "Evidence") or _block(text, "Context")
    for line in block:
        parts = [p.strip() for p in line.split(" | ")]
        if len(parts) >= 2 and "–" in parts[0]:
            start = parts[0].split("–")[0].strip()
            rows.append((parts[1], start))
        elif " at " in line and "|" not in line:
            # RAG snippet form: "<tag> at HH:MM:SS for <dur>s, <loudness> LUFS"
            tag, rest = line.split(" at ", 1)
            m = _CLOCK_RE.search(rest)
            if m:
                rows.append((tag.strip(), m.group(1)))
    return rows
