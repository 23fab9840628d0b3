"""Synthetic event timelines and QA benchmark generation.

A timeline is drawn per tag as a Poisson process with same-tag overlap
rejection. Question-answer pairs come out of five phases: detection and
counting with original labels, with synonyms, and with unrelated event
classes, then specific and generic summaries. Every pair carries structured
ground truth that can be recomputed from the timeline.
"""

from __future__ import annotations

import bisect
import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources

from .event_store import EventRecord
from .hms import DAY_SECONDS, format_end, format_start, hms_to_seconds, parse_end_bound
from .time_resolution import ShiftConfig, TimeInterval

MIN_INTERVAL_SECONDS = 10
MAX_PLACEMENT_RETRIES = 10_000
ATTEMPT_FACTOR = 10  # per-phase retry budget = factor * target
TRIES_PER_PAIR = 10

# Complex-mode temporal expression distribution; h24 takes the remainder.
EXPRESSION_DISTRIBUTION = {
    "full_day": 0.05,
    "shift": 0.15,
    "before_after": 0.10,
    "duration": 0.10,
    "half": 0.05,
    "h12": 0.20,
}

PHASES = ("original_labels", "synonym_variations", "unrelated_events",
          "specific_summary", "generic_summary")


class PlacementFailure(Exception):
    pass


class GenerationExhausted(Exception):
    def __init__(self, phase: str):
        super().__init__(f"retry budget exhausted in phase {phase!r}")
        self.phase = phase


@dataclass
class DomainConfig:
    name: str
    classes: list[str]
    synonyms: dict[str, list[str]]
    unrelated: list[str]
    shifts: ShiftConfig = field(default_factory=ShiftConfig.default)
    shift_queries_enabled: bool = True

    def __post_init__(self):
        if not self.classes or len(set(self.classes)) != len(self.classes):
            raise ValueError("classes must be nonempty and unique")
        unknown = set(self.synonyms) - set(self.classes)
        if unknown:
            raise ValueError(f"synonyms for unknown classes: {sorted(unknown)}")

    @staticmethod
    def display(tag: str) -> str:
        return tag.replace("_", " ").replace("-", " ")


def load_domain(name: str) -> DomainConfig:
    raw = resources.files("larag.data").joinpath("domains.json").read_text("utf-8")
    doc = json.loads(raw)
    if name not in doc:
        raise KeyError(f"unknown domain {name!r}; have {sorted(doc)}")
    other = [d for d in doc if d != name]
    unrelated: list[str] = []
    for d in other:
        unrelated.extend(doc[d]["classes"])
    entry = doc[name]
    return DomainConfig(
        name=name,
        classes=list(entry["classes"]),
        synonyms={k: list(v) for k, v in entry["synonyms"].items()},
        unrelated=unrelated,
        shift_queries_enabled=bool(entry.get("shift_queries_enabled", True)),
    )


@dataclass
class GroundTruthStats:
    detected: bool
    count: int
    first: str | None  # HH:MM:SS
    last: str | None

    def to_dict(self) -> dict:
        return {"detected": self.detected, "count": self.count,
                "first": self.first, "last": self.last}


@dataclass
class GroundTruth:
    category: str  # detection | counting | summary
    subcategory: str  # generation phase
    start: str  # HH:MM:SS
    end: str
    tags: list[str]
    time_expression_type: str
    stats: GroundTruthStats

    def interval(self) -> tuple[int, int]:
        return hms_to_seconds(self.start), parse_end_bound(self.end)

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "subcategory": self.subcategory,
            "start": self.start,
            "end": self.end,
            "tags": self.tags,
            "time_expression_type": self.time_expression_type,
            "stats": self.stats.to_dict(),
        }


@dataclass
class QAPair:
    question: str
    reference_answer: str
    ground_truth: GroundTruth

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "reference_answer": self.reference_answer,
            "ground_truth": self.ground_truth.to_dict(),
        }


# ---------------------------------------------------------------------------
# Timeline synthesis


def _poisson(rng: random.Random, lam: float) -> int:
    if lam <= 0:
        return 0
    limit = math.exp(-lam)
    k, p = 0, 1.0
    while p > limit:
        k += 1
        p *= rng.random()
    return k - 1


def synth_timeline(
    config: DomainConfig,
    seed: int,
    duration_s: float = float(DAY_SECONDS),
    rates: dict[str, float] | None = None,
    dur_range_s: tuple[float, float] = (1.0, 8.0),
    loudness_dist: tuple[float, float] = (-22.0, 4.0),
    audio_id: str | None = None,
) -> list[EventRecord]:
    """Draw a deterministic event timeline for one recording day.

    Per tag, the event count is Poisson(rate * duration in hours) and events
    are placed uniformly, rejecting same-tag overlaps.
    """
    if dur_range_s[0] <= 0 or dur_range_s[0] > dur_range_s[1]:
        raise ValueError(f"invalid duration range {dur_range_s}")
    rates = rates or {tag: 1.0 for tag in config.classes}
    if any(r < 0 for r in rates.values()):
        raise ValueError("rates must be nonnegative")
    audio_id = audio_id or f"{config.name}-{seed}"
    rng = random.Random(seed)
    mean_lufs, std_lufs = loudness_dist

    events: list[EventRecord] = []
    hours = duration_s / 3600.0
    for tag in config.classes:
        rate = rates.get(tag, 0.0)
        n = _poisson(rng, rate * hours)
        placed: list[tuple[float, float]] = []
        for _ in range(n):
            for attempt in range(MAX_PLACEMENT_RETRIES + 1):
                if attempt == MAX_PLACEMENT_RETRIES:
                    raise PlacementFailure(
                        f"could not place event for {tag!r} after"
                        f" {MAX_PLACEMENT_RETRIES} retries")
                dur = rng.uniform(*dur_range_s)
                if dur >= duration_s:
                    continue
                start = rng.uniform(0.0, duration_s - dur)
                end = start + dur
                if all(not (start < e and s < end) for s, e in placed):
                    placed.append((start, end))
                    break
            events.append(EventRecord(
                audio_id=audio_id,
                tag=tag,
                start_s=round(placed[-1][0], 3),
                end_s=round(placed[-1][1], 3),
                confidence=round(rng.uniform(0.6, 0.99), 3),
                loudness_lufs=round(rng.gauss(mean_lufs, std_lufs), 2),
            ))
    events.sort(key=lambda e: (e.start_s, e.tag))
    return events


# ---------------------------------------------------------------------------
# Temporal expression sampling


def _h12_phrase(t: int) -> str:
    h24, rem = divmod(t, 3600)
    minute = rem // 60
    meridiem = "am" if h24 < 12 else "pm"
    h = h24 % 12 or 12
    return f"{h}:{minute:02d} {meridiem}"


def sample_time_expression(
    rng: random.Random, config: DomainConfig, complex_mode: bool = False
) -> tuple[str, TimeInterval, str]:
    """Draw (phrase, interval, type). Simple mode always uses HH:MM:SS ranges."""
    if not complex_mode:
        return _draw_h24(rng)

    roll = rng.random()
    cum = 0.0
    kind = "h24"
    for name, mass in EXPRESSION_DISTRIBUTION.items():
        cum += mass
        if roll < cum:
            kind = name
            break
    if kind == "shift" and not config.shift_queries_enabled:
        kind = "h24"

    if kind == "h24":
        return _draw_h24(rng)
    if kind == "full_day":
        return "", TimeInterval(0, DAY_SECONDS, "full_day", "rules"), "full_day"
    if kind == "h12":
        start = rng.randrange(0, 23 * 3600, 900)
        length = rng.randrange(900, min(6 * 3600, (23 * 3600 + 3300) - start) + 1, 900)
        end = start + length
        phrase = f"from {_h12_phrase(start)} to {_h12_phrase(end)}"
        return phrase, TimeInterval(start, end, "h12", "rules"), "h12"
    if kind == "shift":
        name = rng.choice(sorted(config.shifts.shifts))
        interval = config.shifts.interval(name)
        if interval.segments is not None:
            return _draw_h24(rng)  # wrapped shifts are not used for QA intervals
        return f"during the {name} shift", interval, "shift"
    if kind == "before_after":
        t = rng.randrange(1800, DAY_SECONDS - 1800, 60)
        if rng.random() < 0.5:
            return (f"after {format_start(t)}",
                    TimeInterval(t, DAY_SECONDS, "before_after", "rules"), "before_after")
        return (f"before {format_start(t)}",
                TimeInterval(0, t, "before_after", "rules"), "before_after")
    if kind == "duration":
        which = rng.choice(["first", "last"])
        n = rng.randint(1, 3)
        unit = "hour" if n == 1 else "hours"
        if config.shift_queries_enabled:
            name = rng.choice(sorted(config.shifts.shifts))
            spans = config.shifts.spans(name)
            if len(spans) == 1:
                lo, hi = spans[0]
                phrase = f"{which} {n} {unit} of the {name} shift"
                if which == "first":
                    iv = TimeInterval(lo, min(lo + n * 3600, hi), "duration", "rules")
                else:
                    iv = TimeInterval(max(hi - n * 3600, lo), hi, "duration", "rules")
                return phrase, iv, "duration"
        phrase = f"{which} {n} {unit} of the day"
        if which == "first":
            return phrase, TimeInterval(0, n * 3600, "duration", "rules"), "duration"
        return phrase, TimeInterval(DAY_SECONDS - n * 3600, DAY_SECONDS,
                                    "duration", "rules"), "duration"
    # kind == "half": the remaining branch (relative-duration phrasing exists
    # in the resolver but carries no mass in the sampling distribution)
    which = rng.choice(["first", "second"])
    if config.shift_queries_enabled:
        name = rng.choice(sorted(config.shifts.shifts))
        spans = config.shifts.spans(name)
        if len(spans) == 1:
            lo, hi = spans[0]
            mid = (lo + hi) // 2
            phrase = f"{which} half of the {name} shift"
            iv = (TimeInterval(lo, mid, "half", "rules") if which == "first"
                  else TimeInterval(mid, hi, "half", "rules"))
            return phrase, iv, "half"
    mid = DAY_SECONDS // 2
    phrase = f"{which} half of the day"
    iv = (TimeInterval(0, mid, "half", "rules") if which == "first"
          else TimeInterval(mid, DAY_SECONDS, "half", "rules"))
    return phrase, iv, "half"


def _draw_h24(rng: random.Random) -> tuple[str, TimeInterval, str]:
    start = rng.randrange(0, DAY_SECONDS - MIN_INTERVAL_SECONDS)
    max_len = min(4 * 3600, DAY_SECONDS - start)
    length = rng.randint(MIN_INTERVAL_SECONDS, max_len)
    end = start + length
    phrase = f"between {format_start(start)} and {format_end(end)}"
    # Canonicalize through the rendered bounds so stored text and interval agree.
    start_c, end_c = hms_to_seconds(format_start(start)), parse_end_bound(format_end(end))
    return phrase, TimeInterval(start_c, end_c, "h24", "rules"), "h24"


# ---------------------------------------------------------------------------
# Ground truth


class _TimelineIndex:
    def __init__(self, timeline: list[EventRecord]):
        self.starts: dict[str, list[float]] = {}
        for ev in sorted(timeline, key=lambda e: e.start_s):
            self.starts.setdefault(ev.tag, []).append(ev.start_s)

    def stats(self, tags: list[str], lo: float, hi: float) -> GroundTruthStats:
        count = 0
        first: float | None = None
        last: float | None = None
        for tag in tags:
            starts = self.starts.get(tag, [])
            i = bisect.bisect_left(starts, lo)
            j = bisect.bisect_left(starts, hi)
            if j > i:
                count += j - i
                first = starts[i] if first is None else min(first, starts[i])
                last = starts[j - 1] if last is None else max(last, starts[j - 1])
        return GroundTruthStats(
            detected=count > 0,
            count=count,
            first=None if first is None else format_start(first),
            last=None if last is None else format_start(last),
        )

    def tags_present(self, lo: float, hi: float) -> list[str]:
        out = []
        for tag, starts in self.starts.items():
            if bisect.bisect_left(starts, hi) > bisect.bisect_left(starts, lo):
                out.append(tag)
        return sorted(out)


def compute_ground_truth(timeline: list[EventRecord], category: str,
                         interval: tuple[float, float] | TimeInterval,
                         tags: list[str]) -> GroundTruthStats:
    """Detection status, onset count, and first/last onsets for the interval."""
    if isinstance(interval, TimeInterval):
        lo, hi = interval.start_s, interval.end_s
    else:
        lo, hi = interval
    return _TimelineIndex(timeline).stats(tags, lo, hi)


def summary_bullets(index: _TimelineIndex, tags: list[str], lo: float, hi: float) -> str:
    """Canonical reference form for summaries: one bullet per tag with events."""
    lines = []
    for tag in sorted(tags):
        s = index.stats([tag], lo, hi)
        if s.count > 0:
            lines.append(f"- {tag}: {s.count} events, first {s.first}, last {s.last}")
    return "\n".join(lines) if lines else "No events in this interval."


# ---------------------------------------------------------------------------
# Dataset generation


def generate_dataset(timeline: list[EventRecord], config: DomainConfig,
                     per_phase: int = 100, complex_mode: bool = False,
                     seed: int = 0) -> list[QAPair]:
    """Five-phase QA generation; deterministic for fixed inputs.

    Phases 1-3 emit paired detection and counting questions, phases 4-5 emit
    summaries, so the default target of 100 per phase yields 800 pairs split
    300/300/200.
    """
    if not timeline:
        raise ValueError("timeline must be nonempty")
    rng = random.Random(seed)
    index = _TimelineIndex(timeline)
    pairs: list[QAPair] = []
    pairs += _phase_det_count(rng, index, config, per_phase, complex_mode,
                              "original_labels")
    pairs += _phase_det_count(rng, index, config, per_phase, complex_mode,
                              "synonym_variations")
    pairs += _phase_det_count(rng, index, config, per_phase, complex_mode,
                              "unrelated_events")
    pairs += _phase_summary(rng, index, config, per_phase, complex_mode,
                            "specific_summary")
    pairs += _phase_summary(rng, index, config, per_phase, complex_mode,
                            "generic_summary")
    return pairs


class _Budget:
    def __init__(self, phase: str, target: int):
        self.phase = phase
        self.left = ATTEMPT_FACTOR * target

    def spend(self) -> None:
        self.left -= 1
        if self.left < 0:
            raise GenerationExhausted(self.phase)


def _phase_det_count(rng, index, config, per_phase, complex_mode, phase) -> list[QAPair]:
    budget = _Budget(phase, per_phase)
    unrelated = phase == "unrelated_events"
    pairs: list[QAPair] = []
    for i in range(per_phase):
        want_positive = (i % 2 == 0) and not unrelated
        tag, phrase_noun, time_phrase, interval, etype = _draw_case(
            rng, index, config, complex_mode, phase, want_positive, budget)
        stats = index.stats([tag], interval.start_s, interval.end_s)
        suffix = f" {time_phrase}" if time_phrase else ""
        gt_common = dict(
            subcategory=phase,
            start=format_start(interval.start_s),
            end=format_end(interval.end_s),
            tags=[tag],
            time_expression_type=etype,
        )
        detection_q = f"Was there any {phrase_noun}{suffix}?"
        pairs.append(QAPair(
            question=detection_q,
            reference_answer="Yes" if stats.detected else "No",
            ground_truth=GroundTruth(category="detection", stats=stats, **gt_common),
        ))
        counting_q = f"How many times did {phrase_noun} occur{suffix}?"
        pairs.append(QAPair(
            question=counting_q,
            reference_answer=str(stats.count),
            ground_truth=GroundTruth(category="counting", stats=stats, **gt_common),
        ))
    return pairs


def _draw_case(rng, index, config, complex_mode, phase, want_positive, budget):
    """Pick (tag, noun, time phrase, interval, type) honoring desired polarity."""
    last = None
    for _ in range(TRIES_PER_PAIR):
        budget.spend()
        if phase == "unrelated_events":
            tag = rng.choice(config.unrelated)
            noun = DomainConfig.display(tag)
        else:
            tag = rng.choice(config.classes)
            if phase == "synonym_variations" and config.synonyms.get(tag):
                noun = rng.choice(config.synonyms[tag])
            else:
                noun = DomainConfig.display(tag)
        if want_positive and not complex_mode and index.starts.get(tag):
            phrase, interval, etype = _anchored_interval(rng, index.starts[tag])
        else:
            phrase, interval, etype = sample_time_expression(rng, config, complex_mode)
        last = (tag, noun, phrase, interval, etype)
        if phase == "unrelated_events":
            return last
        detected = index.stats([tag], interval.start_s, interval.end_s).detected
        if detected == want_positive:
            return last
    return last  # polarity is best-effort; the ground truth stays exact


def _anchored_interval(rng, starts: list[float]) -> tuple[str, TimeInterval, str]:
    """An HH:MM:SS range guaranteed to contain one onset of the tag."""
    onset = rng.choice(starts)
    lo = max(0, int(onset) - rng.randint(0, 3600))
    hi = min(DAY_SECONDS, int(onset) + rng.randint(MIN_INTERVAL_SECONDS, 3600))
    lo_c = hms_to_seconds(format_start(lo))
    hi_c = parse_end_bound(format_end(hi))
    phrase = f"between {format_start(lo_c)} and {format_end(hi_c)}"
    return phrase, TimeInterval(lo_c, hi_c, "h24", "rules"), "h24"


def _phase_summary(rng, index, config, per_phase, complex_mode, phase) -> list[QAPair]:
    budget = _Budget(phase, per_phase)
    specific = phase == "specific_summary"
    pairs: list[QAPair] = []
    present_tags = [t for t in config.classes if index.starts.get(t)]
    for _ in range(per_phase):
        for _ in range(TRIES_PER_PAIR):
            budget.spend()
            tag = rng.choice(present_tags or config.classes) if specific else None
            if not complex_mode and specific and index.starts.get(tag):
                time_phrase, interval, etype = _anchored_interval(rng, index.starts[tag])
            else:
                time_phrase, interval, etype = sample_time_expression(rng, config,
                                                                      complex_mode)
            tags = [tag] if specific else index.tags_present(interval.start_s,
                                                             interval.end_s)
            stats = index.stats(tags, interval.start_s, interval.end_s)
            if stats.detected or not present_tags:
                break
        suffix = f" {time_phrase}" if time_phrase else ""
        if specific:
            noun = DomainConfig.display(tag)
            question = f"Summarize the {noun} events{suffix}."
        else:
            template = rng.choice(["Summarize all events{s}.", "What happened{s}?"])
            question = template.format(s=suffix)
        reference = summary_bullets(index, tags, interval.start_s, interval.end_s)
        pairs.append(QAPair(
            question=question,
            reference_answer=reference,
            ground_truth=GroundTruth(
                category="summary",
                subcategory=phase,
                start=format_start(interval.start_s),
                end=format_end(interval.end_s),
                tags=tags,
                time_expression_type=etype,
                stats=stats,
            ),
        ))
    return pairs


# ---------------------------------------------------------------------------
# Serialization


def dataset_to_json(pairs: list[QAPair]) -> str:
    return json.dumps([p.to_dict() for p in pairs], indent=2) + "\n"


def dataset_from_json(text: str) -> list[QAPair]:
    out = []
    for doc in json.loads(text):
        gt = doc["ground_truth"]
        out.append(QAPair(
            question=doc["question"],
            reference_answer=doc["reference_answer"],
            ground_truth=GroundTruth(
                category=gt["category"],
                subcategory=gt["subcategory"],
                start=gt["start"],
                end=gt["end"],
                tags=list(gt["tags"]),
                time_expression_type=gt["time_expression_type"],
                stats=GroundTruthStats(**gt["stats"]),
            ),
        ))
    return out
