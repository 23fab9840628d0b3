"""Attribute-based anomaly detection over event logs.

Baselines are fitted per tag from historical events: loudness mean/std and
start-time clusters (1-D gap clustering). Detectors flag loudness z-score
outliers and onsets far from every historical cluster, and results render
as a fixed-width table that can be handed to an LLM for explanation.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field

from .event_store import EventRecord
from .hms import format_start
from .model_clients import ChatRequest, ClientUnavailable

logger = logging.getLogger(__name__)

DEFAULT_GAP_MINUTES = 30.0
DEFAULT_Z = 3.0
DEFAULT_MAX_DISTANCE_MINUTES = 45.0


class MissingBaseline(Exception):
    pass


@dataclass
class StartCluster:
    center_s: float
    min_s: float
    max_s: float
    size: int


@dataclass
class TagBaseline:
    tag: str
    loudness_mean: float | None
    loudness_std: float | None
    start_clusters: list[StartCluster]
    sufficient: bool = True


@dataclass
class AnomalyRecord:
    event: EventRecord
    kind: str  # loudness | start_time
    observed: float
    expected_low: float
    expected_high: float
    deviation: float  # z-score for loudness, minutes to nearest cluster for start_time


def fit_baseline(historical: list[EventRecord],
                 gap_minutes: float = DEFAULT_GAP_MINUTES) -> dict[str, TagBaseline]:
    """Per-tag loudness statistics and start-time clusters.

    Tags with fewer than two events are kept but marked insufficient.
    Clusters split wherever consecutive sorted onsets are more than
    gap_minutes apart.
    """
    by_tag: dict[str, list[EventRecord]] = {}
    for ev in historical:
        by_tag.setdefault(ev.tag, []).append(ev)

    baselines: dict[str, TagBaseline] = {}
    gap_s = gap_minutes * 60.0
    for tag, events in by_tag.items():
        loudness = [e.loudness_lufs for e in events if e.loudness_lufs is not None]
        mean = statistics.fmean(loudness) if loudness else None
        std = statistics.pstdev(loudness) if len(loudness) >= 2 else (0.0 if loudness else None)
        starts = sorted(e.start_s for e in events)
        clusters: list[StartCluster] = []
        run = [starts[0]]
        for s in starts[1:]:
            if s - run[-1] > gap_s:
                clusters.append(_cluster(run))
                run = [s]
            else:
                run.append(s)
        clusters.append(_cluster(run))
        baselines[tag] = TagBaseline(
            tag=tag,
            loudness_mean=mean,
            loudness_std=std,
            start_clusters=clusters,
            sufficient=len(events) >= 2,
        )
    return baselines


def _cluster(starts: list[float]) -> StartCluster:
    return StartCluster(
        center_s=statistics.fmean(starts),
        min_s=starts[0],
        max_s=starts[-1],
        size=len(starts),
    )


def loudness_anomalies(events: list[EventRecord], baseline: dict[str, TagBaseline],
                       z: float = DEFAULT_Z) -> list[AnomalyRecord]:
    """Flag events whose loudness deviates more than z standard deviations.

    A zero-std baseline flags any deviation at all. Events without loudness
    or without a usable baseline are skipped with a warning.
    """
    out: list[AnomalyRecord] = []
    for ev in events:
        base = baseline.get(ev.tag)
        if base is None or not base.sufficient or base.loudness_mean is None:
            logger.warning("no loudness baseline for tag %r; skipping", ev.tag)
            continue
        if ev.loudness_lufs is None:
            continue
        mean, std = base.loudness_mean, base.loudness_std or 0.0
        diff = abs(ev.loudness_lufs - mean)
        if std > 0.0:
            if diff > z * std:
                out.append(AnomalyRecord(
                    event=ev, kind="loudness", observed=ev.loudness_lufs,
                    expected_low=mean - z * std, expected_high=mean + z * std,
                    deviation=diff / std,
                ))
        elif diff > 0.0:
            out.append(AnomalyRecord(
                event=ev, kind="loudness", observed=ev.loudness_lufs,
                expected_low=mean, expected_high=mean, deviation=math.inf,
            ))
    return out


def start_time_anomalies(events: list[EventRecord], baseline: dict[str, TagBaseline],
                         max_distance_minutes: float = DEFAULT_MAX_DISTANCE_MINUTES,
                         ) -> list[AnomalyRecord]:
    """Flag events whose onset is far from every historical start cluster."""
    out: list[AnomalyRecord] = []
    for ev in events:
        base = baseline.get(ev.tag)
        if base is None or not base.sufficient or not base.start_clusters:
            logger.warning("no start-time baseline for tag %r; skipping", ev.tag)
            continue
        nearest = min(base.start_clusters,
                      key=lambda c: _range_distance(ev.start_s, c.min_s, c.max_s))
        distance_s = _range_distance(ev.start_s, nearest.min_s, nearest.max_s)
        minutes = distance_s / 60.0
        if minutes > max_distance_minutes:
            out.append(AnomalyRecord(
                event=ev, kind="start_time", observed=ev.start_s,
                expected_low=nearest.min_s, expected_high=nearest.max_s,
                deviation=minutes,
            ))
    return out


def _range_distance(x: float, lo: float, hi: float) -> float:
    if x < lo:
        return lo - x
    if x > hi:
        return x - hi
    return 0.0


def render_anomaly_table(records: list[AnomalyRecord]) -> str:
    """Fixed-width table sorted by event time; header always present."""
    header = ("time", "tag", "kind", "observed", "expected", "deviation")
    rows = []
    for rec in sorted(records, key=lambda r: r.event.start_s):
        if rec.kind == "loudness":
            observed = f"{rec.observed:.1f} LUFS"
            expected = f"[{rec.expected_low:.1f}, {rec.expected_high:.1f}] LUFS"
            deviation = "inf" if math.isinf(rec.deviation) else f"z={rec.deviation:.1f}"
        else:
            observed = format_start(rec.observed)
            expected = f"[{format_start(rec.expected_low)}, {format_start(rec.expected_high)}]"
            deviation = f"{rec.deviation:.0f} min"
        rows.append((format_start(rec.event.start_s), rec.event.tag, rec.kind,
                     observed, expected, deviation))
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
              for i in range(len(header))]
    lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    for row in rows:
        lines.append(" | ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def explain_prompt(table: str, manual_text: str | None) -> ChatRequest:
    system = ("#task: anomaly_explain\n"
              "You explain detected acoustic anomalies. Ground every statement"
              " in the table; do not invent events.")
    parts = ["Anomaly table:", table]
    if manual_text:
        parts += ["Manual:", manual_text]
    parts.append("Explain what stands out, grounded only in the table above.")
    return ChatRequest(messages=[("system", system), ("user", "\n".join(parts))])


def explain_anomalies(table: str, manual_text: str | None, llm_client) -> str:
    """LLM explanation of the rendered table; degrades to the table itself."""
    try:
        return llm_client.complete(explain_prompt(table, manual_text))
    except ClientUnavailable as exc:
        logger.warning("explanation client failed: %s", exc)
        return f"{table}\n(no explanation available: generation client failed)"
