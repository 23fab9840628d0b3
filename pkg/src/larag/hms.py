"""HH:MM:SS rendering and parsing for second offsets within a recording day.

The day is the half-open range [0, 86400). End bounds use a display
convention: 86400 renders as "23:59:59", and "23:59:59" parses back to
86400 when read as an end bound, so full-day intervals round-trip.
"""

from __future__ import annotations

import re

DAY_SECONDS = 86400

_HMS_RE = re.compile(r"^(\d{1,2}):(\d{2})(?::(\d{2}))?$")


def seconds_to_hms(seconds: float) -> str:
    """Render a second offset as HH:MM:SS, flooring fractional seconds."""
    s = int(seconds)
    if s < 0:
        raise ValueError(f"negative offset: {seconds}")
    h, rem = divmod(s, 3600)
    m, sec = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{sec:02d}"


def format_start(seconds: float) -> str:
    return seconds_to_hms(min(int(seconds), DAY_SECONDS - 1))


def format_end(seconds: float) -> str:
    """Render an end bound; the day end 86400 displays as 23:59:59."""
    if seconds >= DAY_SECONDS:
        return seconds_to_hms(DAY_SECONDS - 1)
    return seconds_to_hms(seconds)


def hms_to_seconds(text: str) -> int:
    """Parse HH:MM or HH:MM:SS into a second offset. 24:00[:00] is allowed."""
    m = _HMS_RE.match(text.strip())
    if not m:
        raise ValueError(f"not a clock time: {text!r}")
    h = int(m.group(1))
    minute = int(m.group(2))
    sec = int(m.group(3)) if m.group(3) else 0
    if h > 24 or minute > 59 or sec > 59 or (h == 24 and (minute or sec)):
        raise ValueError(f"clock time out of range: {text!r}")
    return h * 3600 + minute * 60 + sec


def parse_end_bound(text: str) -> int:
    """Parse an end bound; "23:59:59" means the day end 86400."""
    t = hms_to_seconds(text)
    return DAY_SECONDS if t == DAY_SECONDS - 1 else t
