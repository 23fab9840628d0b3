"""Audio grounding log parsing and score-to-event post-processing.

Grounding output arrives either as ready event entries or as framewise
similarity scores. Scores are binarized at a global threshold, cleaned with
a median filter, and emitted as timestamped events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

DEFAULT_THRESHOLD = 0.8
DEFAULT_FILTER_SECONDS = 0.3
ENROLLMENT_THRESHOLD = 0.5


class MalformedLog(Exception):
    """The log is not syntactically valid."""


class SchemaViolation(Exception):
    """The log parsed but violates the schema; all violations are listed."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class InvalidWindow(Exception):
    pass


@dataclass
class RawEvent:
    tag: str
    start_s: float
    end_s: float
    confidence: float
    loudness_lufs: float | None = None


@dataclass
class FramewiseScores:
    tag: str
    scores: list[float]
    frame_rate_hz: float


@dataclass
class AgmLog:
    audio_id: str
    recording_start: datetime
    events: list[RawEvent] = field(default_factory=list)
    frame_rate_hz: float | None = None
    scores: list[FramewiseScores] = field(default_factory=list)


def parse_agm_log(data: str | bytes) -> AgmLog:
    """Parse and validate a grounding log.

    Raises MalformedLog on bad syntax and SchemaViolation with every
    offending entry listed; entries are never silently dropped.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedLog(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedLog("top-level value must be an object")

    violations: list[str] = []
    audio_id = doc.get("audio_id")
    if not isinstance(audio_id, str) or not audio_id:
        violations.append("audio_id missing or empty")
        audio_id = ""
    start_raw = doc.get("recording_start")
    recording_start = datetime.fromtimestamp(0, tz=timezone.utc)
    if not isinstance(start_raw, str):
        violations.append("recording_start missing")
    else:
        try:
            recording_start = datetime.fromisoformat(start_raw.replace("Z", "+00:00"))
            if recording_start.tzinfo is None:
                recording_start = recording_start.replace(tzinfo=timezone.utc)
        except ValueError:
            violations.append(f"recording_start not ISO-8601: {start_raw!r}")

    events: list[RawEvent] = []
    raw_events = doc.get("events", [])
    if not isinstance(raw_events, list):
        violations.append("events must be a list")
        raw_events = []
    for i, entry in enumerate(raw_events):
        problems = _check_event(entry)
        if problems:
            violations.extend(f"events[{i}]: {p}" for p in problems)
        else:
            events.append(
                RawEvent(
                    tag=entry["tag"],
                    start_s=float(entry["start_s"]),
                    end_s=float(entry["end_s"]),
                    confidence=float(entry["confidence"]),
                    loudness_lufs=None if entry.get("loudness_lufs") is None
                    else float(entry["loudness_lufs"]),
                )
            )

    frame_rate = doc.get("frame_rate_hz")
    scores: list[FramewiseScores] = []
    for i, entry in enumerate(doc.get("scores", [])):
        tag = entry.get("tag") if isinstance(entry, dict) else None
        vals = entry.get("scores") if isinstance(entry, dict) else None
        if not isinstance(tag, str) or not tag or not isinstance(vals, list):
            violations.append(f"scores[{i}]: needs tag and scores list")
            continue
        if any(not isinstance(v, (int, float)) or not 0 <= v <= 1 for v in vals):
            violations.append(f"scores[{i}]: values must be in [0,1]")
            continue
        if not isinstance(frame_rate, (int, float)) or frame_rate <= 0:
            violations.append("frame_rate_hz required and positive when scores present")
            break
        scores.append(FramewiseScores(tag=tag, scores=[float(v) for v in vals],
                                      frame_rate_hz=float(frame_rate)))

    if violations:
        raise SchemaViolation(violations)
    return AgmLog(
        audio_id=audio_id,
        recording_start=recording_start,
        events=events,
        frame_rate_hz=float(frame_rate) if isinstance(frame_rate, (int, float)) else None,
        scores=scores,
    )


def _check_event(entry: object) -> list[str]:
    if not isinstance(entry, dict):
        return ["not an object"]
    problems = []
    tag = entry.get("tag")
    if not isinstance(tag, str) or not tag:
        problems.append("tag missing or empty")
    for key in ("start_s", "end_s", "confidence"):
        if not isinstance(entry.get(key), (int, float)):
            problems.append(f"{key} missing or not numeric")
    if problems:
        return problems
    if entry["start_s"] < 0:
        problems.append("start_s negative")
    if entry["start_s"] >= entry["end_s"]:
        problems.append(f"start_s {entry['start_s']} >= end_s {entry['end_s']}")
    if not 0 <= entry["confidence"] <= 1:
        problems.append(f"confidence {entry['confidence']} outside [0,1]")
    loud = entry.get("loudness_lufs")
    if loud is not None and not isinstance(loud, (int, float)):
        problems.append("loudness_lufs must be numeric or null")
    return problems


def serialize_agm_log(log: AgmLog) -> str:
    """Inverse of parse_agm_log for event logs (scores are not re-emitted)."""
    doc = {
        "audio_id": log.audio_id,
        "recording_start": log.recording_start.isoformat().replace("+00:00", "Z"),
        "events": [
            {
                "tag": e.tag,
                "start_s": e.start_s,
                "end_s": e.end_s,
                "confidence": e.confidence,
                "loudness_lufs": e.loudness_lufs,
            }
            for e in log.events
        ],
    }
    if log.frame_rate_hz is not None:
        doc["frame_rate_hz"] = log.frame_rate_hz
    return json.dumps(doc, indent=2)


def median_filter(binary, window_frames: int):
    """Median-filter a 0/1 sequence with an odd centered window.

    Edges are padded by replicating the boundary value.
    """
    if window_frames <= 0 or window_frames % 2 == 0:
        raise InvalidWindow(f"window must be odd and positive, got {window_frames}")
    arr = np.asarray(binary, dtype=np.int64)
    if arr.size == 0:
        raise InvalidWindow("sequence must be nonempty")
    if window_frames == 1:
        return arr.tolist()
    half = window_frames // 2
    padded = np.pad(arr, half, mode="edge")
    # For 0/1 input the window median is a majority vote over the window sum.
    window_sums = np.convolve(padded, np.ones(window_frames, dtype=np.int64), mode="valid")
    return (window_sums * 2 > window_frames).astype(np.int64).tolist()


def scores_to_events(
    s: FramewiseScores,
    threshold: float = DEFAULT_THRESHOLD,
    filter_seconds: float = DEFAULT_FILTER_SECONDS,
) -> list[tuple[float, float]]:
    """Binarize framewise scores, median-filter, and emit (start_s, end_s) runs.

    The filter window is round(filter_seconds * frame_rate_hz) forced up to
    the next odd count. Interval ends are exclusive.
    """
    if s.frame_rate_hz <= 0:
        raise ValueError("frame_rate_hz must be positive")
    window = int(round(filter_seconds * s.frame_rate_hz))
    if window % 2 == 0:
        window += 1
    window = max(window, 1)
    if not s.scores:
        return []
    binary = [1 if v >= threshold else 0 for v in s.scores]
    filtered = median_filter(binary, window)
    rate = s.frame_rate_hz
    return [(start / rate, end / rate) for start, end in _runs(filtered)]


def enrollment_scores_to_events(
    per_second_scores, threshold: float = ENROLLMENT_THRESHOLD
) -> list[tuple[int, int]]:
    """Threshold per-second enrollment scores and emit whole-second runs."""
    binary = [1 if v >= threshold else 0 for v in per_second_scores]
    return list(_runs(binary))


def _runs(binary) -> list[tuple[int, int]]:
    """Maximal runs of 1s as (start, end_exclusive) index pairs."""
    runs = []
    start = None
    for i, v in enumerate(binary):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(binary)))
    return runs
