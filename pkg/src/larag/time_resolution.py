"""Resolve natural-language time expressions into concrete day intervals.

A pattern-rule engine handles explicit ranges, 12/24-hour clock forms,
shift references, before/after bounds, duration and half-of-period phrases,
and relative offsets from recording start. Anything the rules miss can go
to an LLM fallback; the final default is the full day.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .hms import DAY_SECONDS, hms_to_seconds, parse_end_bound, format_start, format_end
from .model_clients import ChatRequest, ClientUnavailable

logger = logging.getLogger(__name__)

EXPRESSION_TYPES = (
    "full_day", "h24", "h12", "shift", "before_after", "duration", "half", "relative",
)

SUITE_CATEGORIES = (
    "explicit_time_ranges", "shift_based", "relative_durations", "before_after",
    "half_periods", "full_day_implicit", "typos_and_variations", "edge_cases",
)


@dataclass
class TimeInterval:
    """Half-open [start_s, end_s) within the recording day.

    Cross-midnight shifts carry their pieces in ``segments``; ``spans()`` is
    what query layers should iterate.
    """

    start_s: int
    end_s: int
    expression_type: str = "full_day"
    source: str = "default"
    segments: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if not 0 <= self.start_s <= self.end_s <= DAY_SECONDS:
            raise ValueError(f"invalid interval [{self.start_s}, {self.end_s}]")
        if self.expression_type not in EXPRESSION_TYPES:
            raise ValueError(f"unknown expression type {self.expression_type!r}")

    def spans(self) -> list[tuple[int, int]]:
        if self.segments is not None:
            return list(self.segments)
        return [(self.start_s, self.end_s)]

    def display(self) -> str:
        parts = [f"{format_start(lo)}–{format_end(hi)}" for lo, hi in self.spans()]
        return " and ".join(parts)


def full_day(source: str = "default") -> TimeInterval:
    return TimeInterval(0, DAY_SECONDS, "full_day", source)


@dataclass
class ShiftConfig:
    """Named daily shifts; start > end means the shift wraps past midnight."""

    shifts: dict[str, tuple[int, int]]

    def __post_init__(self):
        for name, (lo, hi) in self.shifts.items():
            if name != name.lower().strip():
                raise ValueError(f"shift names must be lowercase: {name!r}")
            if not (0 <= lo <= DAY_SECONDS and 0 <= hi <= DAY_SECONDS and lo != hi):
                raise ValueError(f"invalid shift bounds for {name!r}: ({lo}, {hi})")

    @classmethod
    def default(cls) -> "ShiftConfig":
        morning = (8 * 3600, 16 * 3600)
        evening = (16 * 3600, 24 * 3600)
        night = (0, 8 * 3600)
        return cls(shifts={
            "morning": morning, "day": morning,
            "afternoon": evening, "evening": evening,
            "night": night,
        })

    def spans(self, name: str) -> list[tuple[int, int]]:
        lo, hi = self.shifts[name]
        if lo < hi:
            return [(lo, hi)]
        return [(lo, DAY_SECONDS), (0, hi)]

    def interval(self, name: str, source: str = "rules") -> TimeInterval:
        spans = self.spans(name)
        if len(spans) == 1:
            return TimeInterval(spans[0][0], spans[0][1], "shift", source)
        return TimeInterval(spans[0][0], DAY_SECONDS, "shift", source,
                            segments=tuple(spans))


# ---------------------------------------------------------------------------
# Rule engine

_T24 = r"(\d{1,2}:\d{2}(?::\d{2})?)"
_H12 = r"(\d{1,2})(?::(\d{2}))?\s*(am|pm)?"
_UNIT = r"(hours?|hrs?|minutes?|mins?)"
_COUNT = r"(\d+|an|a|one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve)"

_WORD_NUMBERS = {
    "a": 1, "an": 1, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11,
    "twelve": 12,
}

_FULL_DAY_PHRASES = (
    "all day", "whole day", "the whole day", "entire day", "the entire day",
    "throughout the day", "over the day", "the full day",
)


def normalize(text: str) -> str:
    t = text.lower()
    t = re.sub(r"\b([ap])\.\s*m\.?", r"\1m", t)
    t = re.sub(r"\s+", " ", t).strip().strip("?.!,;")
    return t


def _count_value(token: str) -> int:
    return _WORD_NUMBERS.get(token, 0) or int(token)


def _unit_seconds(unit: str) -> int:
    return 3600 if unit.startswith(("hour", "hr")) else 60


def _clock24(token: str) -> int | None:
    try:
        return hms_to_seconds(token)
    except ValueError:
        return None


def _clock12(hour: str, minute: str | None, meridiem: str) -> int | None:
    h = int(hour)
    m = int(minute) if minute else 0
    if not 1 <= h <= 12 or m > 59:
        return None
    if meridiem == "am":
        h = 0 if h == 12 else h
    else:
        h = 12 if h == 12 else h + 12
    return h * 3600 + m * 60


@lru_cache(maxsize=8)
def _shift_patterns(names: tuple[str, ...]):
    alt = "|".join(re.escape(n) for n in sorted(names, key=len, reverse=True))
    return {
        "named_shift": re.compile(rf"\b({alt})\s+shift\b"),
        "prep_period": re.compile(
            r"\b(?:during|in|at|over|this)\s+(?:the\s+)?"
            r"(morning|afternoon|evening|night)\b"
        ),
        "boundary": re.compile(
            rf"\b(after|before)\s+(?:the\s+)?({alt})\s+shift\b"
        ),
        # Bare "day" means the whole day; a shift called "day" needs "shift".
        "of_base": re.compile(
            rf"of\s+(?:the\s+)?(?:({alt})\s+shift"
            r"|(morning|afternoon|evening|night)|day|recording)\b"
        ),
    }


_RANGE_24 = [
    re.compile(rf"\bbetween\s+{_T24}\s+and\s+{_T24}"),
    re.compile(rf"\bfrom\s+{_T24}\s+to\s+{_T24}"),
    re.compile(rf"{_T24}\s+(?:to|through|-|–)\s+{_T24}"),
]
_RANGE_12 = [
    re.compile(rf"\bbetween\s+{_H12}\s+and\s+{_H12}"),
    re.compile(rf"\bfrom\s+{_H12}\s+to\s+{_H12}"),
    re.compile(rf"\b{_H12}\s+(?:to|through|-|–)\s+{_H12}"),
]
# The 24-hour branch must not swallow "6:15" out of "6:15 pm".
_T24_BARE = _T24 + r"(?!\s*[ap]m)"
_AFTER_CLOCK = re.compile(
    rf"\b(?:after|since|from|starting\s+at)\s+(?:{_T24_BARE}|{_H12})")
_BEFORE_CLOCK = re.compile(rf"\b(?:before|until|till|by)\s+(?:{_T24_BARE}|{_H12})")
_DURATION = re.compile(rf"\b(first|last)\s+(?:{_COUNT}\s+)?{_UNIT}\s+(?=of\b)")
_HALF = re.compile(r"\b(first|second)\s+half\s+(?=of\b)")
_REL_RANGE = re.compile(rf"\bbetween\s+(\d+)\s*{_UNIT}\s+and\s+(\d+)\s*{_UNIT}")
_REL_FIRST = re.compile(rf"\b(?:within|in|during)\s+the\s+first\s+(\d+)\s*{_UNIT}")
_REL_AFTER = re.compile(rf"\b(after|before)\s+(\d+)\s*{_UNIT}\b")


def resolve_rules(text: str, config: ShiftConfig | None = None) -> TimeInterval | None:
    """Match the supported expression patterns; None when nothing applies.

    When several patterns could fire, the most specific wins:
    h24 > h12 > before/after > duration > half > shift > relative.
    """
    if not text or not text.strip():
        return None
    config = config or ShiftConfig.default()
    t = normalize(text)
    pats = _shift_patterns(tuple(config.shifts))

    for rx in _RANGE_24:
        m = rx.search(t)
        if m:
            lo = _clock24(m.group(1))
            hi = _clock24(m.group(2)) if m.group(2) else None
            if lo is not None and hi is not None:
                hi = DAY_SECONDS if hi == DAY_SECONDS - 1 else hi
                if lo < hi:
                    return TimeInterval(lo, hi, "h24", "rules")

    for rx in _RANGE_12:
        m = rx.search(t)
        if m:
            h1, m1, mer1, h2, m2, mer2 = m.groups()
            if mer1 or mer2:
                lo = _clock12(h1, m1, mer1 or mer2)
                hi = _clock12(h2, m2, mer2 or mer1)
                if lo is not None and hi is not None:
                    hi = DAY_SECONDS if hi == 0 else hi
                    if lo < hi:
                        return TimeInterval(lo, hi, "h12", "rules")

    interval = _resolve_before_after(t, config, pats)
    if interval:
        return interval
    interval = _resolve_duration(t, config, pats)
    if interval:
        return interval
    interval = _resolve_half(t, config, pats)
    if interval:
        return interval

    if any(p in t for p in _FULL_DAY_PHRASES):
        return TimeInterval(0, DAY_SECONDS, "full_day", "rules")

    m = pats["named_shift"].search(t) or pats["prep_period"].search(t)
    if m and m.group(1) in config.shifts:
        return config.interval(m.group(1))

    return _resolve_relative(t)


def _clock_groups(m: re.Match) -> int | None:
    t24, h12, m12, mer = m.groups()
    if t24:
        return _clock24(t24)
    if mer:
        return _clock12(h12, m12, mer)
    return None


def _resolve_before_after(t, config, pats) -> TimeInterval | None:
    m = pats["boundary"].search(t)
    if m:
        word, name = m.group(1), m.group(2)
        spans = config.spans(name)
        if word == "after":
            return TimeInterval(spans[-1][1], DAY_SECONDS, "before_after", "rules")
        return TimeInterval(0, spans[0][0], "before_after", "rules")
    m = _AFTER_CLOCK.search(t)
    if m:
        at = _clock_groups(m)
        if at is not None and at < DAY_SECONDS:
            return TimeInterval(at, DAY_SECONDS, "before_after", "rules")
    m = _BEFORE_CLOCK.search(t)
    if m:
        at = _clock_groups(m)
        if at is not None:
            at = DAY_SECONDS if at == DAY_SECONDS - 1 else at
            if at > 0:
                return TimeInterval(0, at, "before_after", "rules")
    return None


def _base_bounds(t, start, config, pats) -> tuple[int, int] | None:
    """Bounds of the 'of <shift/day>' base anchored at offset ``start``."""
    m = pats["of_base"].match(t, start)
    if not m:
        return None
    name = m.group(1) or m.group(2)
    if name is None:
        return (0, DAY_SECONDS)
    if name not in config.shifts:
        return None
    spans = config.spans(name)
    if len(spans) > 1:
        return None  # wrapped shifts have no single arithmetic base
    return spans[0]


def _resolve_duration(t, config, pats) -> TimeInterval | None:
    m = _DURATION.search(t)
    if not m:
        return None
    base = _base_bounds(t, m.end(), config, pats)
    if base is None:
        return None
    which, count_tok, unit = m.group(1), m.group(2), m.group(3)
    n = _count_value(count_tok) if count_tok else 1
    span = n * _unit_seconds(unit)
    lo, hi = base
    if which == "first":
        return TimeInterval(lo, min(lo + span, hi), "duration", "rules")
    return TimeInterval(max(hi - span, lo), hi, "duration", "rules")


def _resolve_half(t, config, pats) -> TimeInterval | None:
    m = _HALF.search(t)
    if not m:
        return None
    base = _base_bounds(t, m.end(), config, pats)
    if base is None:
        return None
    lo, hi = base
    mid = (lo + hi) // 2
    if m.group(1) == "first":
        return TimeInterval(lo, mid, "half", "rules")
    return TimeInterval(mid, hi, "half", "rules")


def _resolve_relative(t) -> TimeInterval | None:
    m = _REL_RANGE.search(t)
    if m:
        lo = int(m.group(1)) * _unit_seconds(m.group(2))
        hi = int(m.group(3)) * _unit_seconds(m.group(4))
        if lo < hi <= DAY_SECONDS:
            return TimeInterval(lo, hi, "relative", "rules")
    m = _REL_FIRST.search(t)
    if m:
        hi = int(m.group(1)) * _unit_seconds(m.group(2))
        if 0 < hi <= DAY_SECONDS:
            return TimeInterval(0, hi, "relative", "rules")
    m = _REL_AFTER.search(t)
    if m:
        at = int(m.group(2)) * _unit_seconds(m.group(3))
        if 0 < at <= DAY_SECONDS:
            if m.group(1) == "after":
                return TimeInterval(at, DAY_SECONDS, "relative", "rules")
            return TimeInterval(0, at, "relative", "rules")
    return None


# ---------------------------------------------------------------------------
# LLM fallback

_REPLY_RE = re.compile(r"^\{.*\}$", re.DOTALL)


def fallback_prompt(text: str, config: ShiftConfig) -> ChatRequest:
    shift_lines = "\n".join(
        f"- {name}: {format_start(lo)}–{format_end(hi)}"
        for name, (lo, hi) in sorted(config.shifts.items())
    )
    system = (
        "#task: time\n"
        "You map time expressions in a question to a concrete interval within"
        " one recording day (00:00:00 to 23:59:59).\n"
        f"Shifts:\n{shift_lines}\n"
        'Reply with exactly {"start":"HH:MM:SS","end":"HH:MM:SS"} or the word'
        " NONE if the question has no time constraint."
    )
    return ChatRequest(messages=[("system", system), ("user", text)], max_tokens=64)


def resolve_llm(text: str, config: ShiftConfig | None = None,
                llm_client=None) -> TimeInterval | None:
    """Ask the fallback client for a start-end pair; strict reply parsing.

    Raises ClientUnavailable if the client cannot be reached; malformed
    replies are treated as no answer.
    """
    if llm_client is None:
        return None
    config = config or ShiftConfig.default()
    reply = llm_client.complete(fallback_prompt(text, config)).strip()
    if reply.upper() == "NONE":
        return None
    if not _REPLY_RE.match(reply):
        return None
    try:
        doc = json.loads(reply)
        start = hms_to_seconds(doc["start"])
        end = parse_end_bound(doc["end"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return None
    if not 0 <= start < end <= DAY_SECONDS:
        return None
    expr = "full_day" if (start, end) == (0, DAY_SECONDS) else "h24"
    return TimeInterval(start, end, expr, "llm")


def resolve(text: str, config: ShiftConfig | None = None,
            llm_client=None) -> TimeInterval:
    """Rules first, then the LLM fallback, then the full-day default."""
    config = config or ShiftConfig.default()
    interval = resolve_rules(text, config)
    if interval is not None:
        return interval
    if llm_client is not None:
        try:
            interval = resolve_llm(text, config, llm_client)
        except ClientUnavailable as exc:
            logger.warning("time fallback unavailable: %s", exc)
            interval = None
        if interval is not None:
            return interval
    return full_day()


# ---------------------------------------------------------------------------
# Category suite

@dataclass
class SuiteCase:
    question: str
    expected_start: int
    expected_end: int
    category: str
    difficulty: str


@dataclass
class SuiteReport:
    strategy: str
    per_category: dict[str, tuple[int, int]]  # category -> (correct, total)
    per_difficulty: dict[str, tuple[int, int]]
    overall: tuple[int, int]

    def accuracy(self, category: str | None = None) -> float:
        correct, total = self.per_category[category] if category else self.overall
        return 100.0 * correct / total if total else 0.0


def load_default_suite() -> list[SuiteCase]:
    raw = resources.files("larag.data").joinpath("timeres_suite.json").read_text("utf-8")
    return load_suite(json.loads(raw))


def load_suite(items: list[dict]) -> list[SuiteCase]:
    cases = []
    for item in items:
        if item["category"] not in SUITE_CATEGORIES:
            raise ValueError(f"unknown category {item['category']!r}")
        cases.append(SuiteCase(
            question=item["question"],
            expected_start=hms_to_seconds(item["expected_start"]),
            expected_end=parse_end_bound(item["expected_end"]),
            category=item["category"],
            difficulty=item["difficulty"],
        ))
    return cases


def run_suite(cases: list[SuiteCase], config: ShiftConfig | None = None,
              llm_client=None, strategy: str = "combined") -> SuiteReport:
    """Score a strategy on the suite; accuracy is exact interval equality."""
    config = config or ShiftConfig.default()
    per_cat: dict[str, list[int]] = {}
    per_diff: dict[str, list[int]] = {}
    correct_all = 0
    for case in cases:
        if strategy == "rules":
            interval = resolve_rules(case.question, config) or full_day()
        elif strategy == "llm":
            try:
                interval = resolve_llm(case.question, config, llm_client) or full_day()
            except ClientUnavailable:
                interval = full_day()
        elif strategy == "combined":
            interval = resolve(case.question, config, llm_client)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
        ok = (interval.start_s, interval.end_s) == (case.expected_start, case.expected_end)
        per_cat.setdefault(case.category, [0, 0])
        per_diff.setdefault(case.difficulty, [0, 0])
        per_cat[case.category][1] += 1
        per_diff[case.difficulty][1] += 1
        if ok:
            per_cat[case.category][0] += 1
            per_diff[case.difficulty][0] += 1
            correct_all += 1
    return SuiteReport(
        strategy=strategy,
        per_category={k: (v[0], v[1]) for k, v in per_cat.items()},
        per_difficulty={k: (v[0], v[1]) for k, v in per_diff.items()},
        overall=(correct_all, len(cases)),
    )
