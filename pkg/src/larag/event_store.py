"""SQLite-backed store of timestamped acoustic events.

One writer at a time; reads share the connection behind a lock. Interval
membership is by event onset: an event belongs to [start, end) iff its
start_s falls inside, which keeps counts additive over partitions of the day.
"""

from __future__ import annotations

import sqlite3
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

DDL = """
CREATE TABLE IF NOT EXISTS events(
    id INTEGER PRIMARY KEY,
    audio_id TEXT,
    tag TEXT,
    start_s REAL,
    end_s REAL,
    confidence REAL,
    loudness_lufs REAL
);
CREATE UNIQUE INDEX IF NOT EXISTS idx_events_key ON events(audio_id, tag, start_s);
CREATE INDEX IF NOT EXISTS idx_events_span ON events(audio_id, start_s);
"""

MAX_SELECT_ROWS = 1000


class ConstraintViolation(Exception):
    pass


class StorageFailure(Exception):
    pass


class UnknownAudioId(Exception):
    pass


@dataclass
class EventRecord:
    audio_id: str
    tag: str
    start_s: float
    end_s: float
    confidence: float
    loudness_lufs: float | None = None
    id: int | None = None

    def validate(self) -> None:
        if not self.tag:
            raise ConstraintViolation("tag must be nonempty")
        if not self.start_s < self.end_s:
            raise ConstraintViolation(
                f"start_s {self.start_s} must be < end_s {self.end_s} ({self.tag})"
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise ConstraintViolation(f"confidence {self.confidence} outside [0,1]")


@dataclass
class IntervalStats:
    count: int
    first_s: float | None
    last_s: float | None


def _spans(interval) -> list[tuple[float, float]]:
    """Accepts a TimeInterval-like object or a (start, end) pair."""
    if hasattr(interval, "spans"):
        return list(interval.spans())
    start, end = interval
    return [(float(start), float(end))]


class EventStore:
    def __init__(self, path: str = ":memory:"):
        self.path = path
        self._lock = threading.RLock()
        try:
            self._conn = sqlite3.connect(path, check_same_thread=False)
            if path != ":memory:":
                self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.executescript(DDL)
            self._conn.commit()
        except sqlite3.Error as exc:
            raise StorageFailure(f"could not open event store at {path}: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- writes ------------------------------------------------------------

    def insert_events(self, records: Iterable[EventRecord]) -> int:
        """All-or-nothing insert. Duplicate keys abort the whole batch."""
        records = list(records)
        for rec in records:
            rec.validate()
        with self._lock:
            try:
                with self._conn:
                    self._conn.executemany(
                        "INSERT INTO events(audio_id, tag, start_s, end_s, confidence,"
                        " loudness_lufs) VALUES (?,?,?,?,?,?)",
                        [
                            (r.audio_id, r.tag, r.start_s, r.end_s, r.confidence,
                             r.loudness_lufs)
                            for r in records
                        ],
                    )
            except sqlite3.IntegrityError as exc:
                raise ConstraintViolation(f"duplicate (audio_id, tag, start_s): {exc}") from exc
            except sqlite3.Error as exc:
                raise StorageFailure(str(exc)) from exc
        return len(records)

    def upsert_events(self, records: Iterable[EventRecord]) -> tuple[int, int]:
        """Insert records, skipping exact duplicates of stored rows.

        Returns (inserted, skipped). A key clash with differing attributes is
        a ConstraintViolation and nothing is written.
        """
        records = list(records)
        for rec in records:
            rec.validate()
        fresh: list[EventRecord] = []
        skipped = 0
        with self._lock:
            cur = self._conn.cursor()
            for rec in records:
                row = cur.execute(
                    "SELECT end_s, confidence, loudness_lufs FROM events"
                    " WHERE audio_id=? AND tag=? AND start_s=?",
                    (rec.audio_id, rec.tag, rec.start_s),
                ).fetchone()
                if row is None:
                    fresh.append(rec)
                elif row == (rec.end_s, rec.confidence, rec.loudness_lufs):
                    skipped += 1
                else:
                    raise ConstraintViolation(
                        f"({rec.audio_id}, {rec.tag}, {rec.start_s}) already stored"
                        " with different attributes"
                    )
            if fresh:
                self.insert_events(fresh)
        return len(fresh), skipped

    # -- reads -------------------------------------------------------------

    def has_audio(self, audio_id: str) -> bool:
        with self._lock:
            row = self._conn.execute(
                "SELECT 1 FROM events WHERE audio_id=? LIMIT 1", (audio_id,)
            ).fetchone()
        return row is not None

    def audio_ids(self) -> list[str]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT DISTINCT audio_id FROM events ORDER BY audio_id"
            ).fetchall()
        return [r[0] for r in rows]

    def _require_audio(self, audio_id: str) -> None:
        if not self.has_audio(audio_id):
            raise UnknownAudioId(audio_id)

    def query_interval(
        self, audio_id: str, interval, tags: Sequence[str] | None = None
    ) -> list[EventRecord]:
        """Events whose onset lies in the interval, ordered by start time."""
        self._require_audio(audio_id)
        out: list[EventRecord] = []
        with self._lock:
            for lo, hi in _spans(interval):
                sql = ("SELECT id, audio_id, tag, start_s, end_s, confidence, loudness_lufs"
                       " FROM events WHERE audio_id=? AND start_s>=? AND start_s<?")
                params: list = [audio_id, lo, hi]
                if tags is not None:
                    if not tags:
                        continue
                    sql += f" AND tag IN ({','.join('?' * len(tags))})"
                    params.extend(tags)
                sql += " ORDER BY start_s"
                for row in self._conn.execute(sql, params):
                    out.append(EventRecord(
                        id=row[0], audio_id=row[1], tag=row[2], start_s=row[3],
                        end_s=row[4], confidence=row[5], loudness_lufs=row[6],
                    ))
        out.sort(key=lambda r: r.start_s)
        return out

    def aggregate(self, audio_id: str, interval, tag: str) -> IntervalStats:
        """Count plus earliest/latest onset of one tag within the interval."""
        self._require_audio(audio_id)
        count, first, last = 0, None, None
        with self._lock:
            for lo, hi in _spans(interval):
                row = self._conn.execute(
                    "SELECT COUNT(*), MIN(start_s), MAX(start_s) FROM events"
                    " WHERE audio_id=? AND tag=? AND start_s>=? AND start_s<?",
                    (audio_id, tag, lo, hi),
                ).fetchone()
                count += row[0]
                if row[1] is not None:
                    first = row[1] if first is None else min(first, row[1])
                    last = row[2] if last is None else max(last, row[2])
        return IntervalStats(count=count, first_s=first, last_s=last)

    def distinct_tags(self, audio_id: str, interval=None) -> list[str]:
        self._require_audio(audio_id)
        tags: set[str] = set()
        spans = _spans(interval) if interval is not None else [(0.0, float("inf"))]
        with self._lock:
            for lo, hi in spans:
                rows = self._conn.execute(
                    "SELECT DISTINCT tag FROM events WHERE audio_id=?"
                    " AND start_s>=? AND start_s<?",
                    (audio_id, lo, hi),
                ).fetchall()
                tags.update(r[0] for r in rows)
        return sorted(tags)

    def all_events(self, audio_id: str) -> list[EventRecord]:
        self._require_audio(audio_id)
        return self.query_interval(audio_id, (0.0, float("inf")))

    def count(self, audio_id: str | None = None) -> int:
        with self._lock:
            if audio_id is None:
                return self._conn.execute("SELECT COUNT(*) FROM events").fetchone()[0]
            return self._conn.execute(
                "SELECT COUNT(*) FROM events WHERE audio_id=?", (audio_id,)
            ).fetchone()[0]

    # -- guarded raw SQL (text-to-SQL baseline surface) ----------------------

    def run_select(self, sql: str, max_rows: int = MAX_SELECT_ROWS):
        """Execute one read-only SELECT over the events table.

        Statement-type validation happens in the caller; this adds a
        defense-in-depth authorizer so nothing but reads can run.
        Returns (column_names, rows) with at most max_rows rows.
        """
        def authorizer(action, arg1, arg2, db, trigger):
            if action in (sqlite3.SQLITE_SELECT, sqlite3.SQLITE_READ):
                return sqlite3.SQLITE_OK
            if action == 31:  # SQLITE_FUNCTION
                return sqlite3.SQLITE_OK
            return sqlite3.SQLITE_DENY

        with self._lock:
            self._conn.set_authorizer(authorizer)
            try:
                cur = self._conn.execute(sql)
                rows = cur.fetchmany(max_rows)
                columns = [d[0] for d in cur.description] if cur.description else []
            finally:
                # set_authorizer(None) only works on 3.11+; allow-all restores.
                self._conn.set_authorizer(lambda *args: sqlite3.SQLITE_OK)
        return columns, rows
