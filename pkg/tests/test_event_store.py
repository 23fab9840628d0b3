import random

import pytest

from larag.event_store import (ConstraintViolation, EventRecord, EventStore,
                               UnknownAudioId)
from tests.conftest import make_event


@pytest.fixture()
def store():
    s = EventStore()
    yield s
    s.close()


def test_insert_and_count(store):
    n = store.insert_events([make_event(start_s=i * 10.0, end_s=i * 10 + 1)
                             for i in range(3)])
    assert n == 3
    assert store.count("a1") == 3


def test_duplicate_batch_is_atomic(store):
    ev = make_event()
    with pytest.raises(ConstraintViolation):
        store.insert_events([ev, make_event()])
    assert store.count() == 0


def test_invariants_checked_before_insert(store):
    with pytest.raises(ConstraintViolation):
        store.insert_events([make_event(start_s=5, end_s=5)])
    with pytest.raises(ConstraintViolation):
        store.insert_events([make_event(confidence=1.5)])
    with pytest.raises(ConstraintViolation):
        store.insert_events([make_event(tag="")])
    assert store.count() == 0


def test_round_trip_large_batch(store):
    records = [make_event(start_s=float(i), end_s=i + 0.5) for i in range(10_000)]
    assert store.insert_events(records) == 10_000
    assert store.count("a1") == 10_000


def test_query_boundary_semantics(store):
    store.insert_events([make_event(start_s=100, end_s=101),
                         make_event(start_s=200, end_s=201)])
    got = store.query_interval("a1", (0, 150))
    assert [e.start_s for e in got] == [100]
    # start is inclusive, end exclusive
    assert [e.start_s for e in store.query_interval("a1", (100, 200))] == [100]


def test_full_day_returns_everything(store):
    store.insert_events([make_event(start_s=i * 1000.0, end_s=i * 1000 + 1)
                         for i in range(10)])
    assert len(store.query_interval("a1", (0, 86400))) == 10


def test_unknown_audio_raises(store):
    store.insert_events([make_event()])
    with pytest.raises(UnknownAudioId):
        store.query_interval("nope", (0, 86400))
    with pytest.raises(UnknownAudioId):
        store.aggregate("nope", (0, 86400), "dog_bark")


def _random_store(n=1000, seed=11):
    rng = random.Random(seed)
    tags = [f"tag{i}" for i in range(8)]
    records = []
    seen = set()
    while len(records) < n:
        tag = rng.choice(tags)
        start = round(rng.uniform(0, 86300), 3)
        if (tag, start) in seen:
            continue
        seen.add((tag, start))
        records.append(make_event(tag=tag, start_s=start, end_s=start + 1))
    store = EventStore()
    store.insert_events(records)
    return store, records, tags, rng


def test_query_matches_linear_scan_oracle():
    store, records, tags, rng = _random_store()
    for _ in range(100):
        lo = rng.uniform(0, 86000)
        hi = lo + rng.uniform(0, 86400 - lo)
        tag_filter = rng.choice([None, [rng.choice(tags)], tags[:3]])
        got = store.query_interval("a1", (lo, hi), tags=tag_filter)
        expected = sorted(
            (r for r in records
             if lo <= r.start_s < hi and (tag_filter is None or r.tag in tag_filter)),
            key=lambda r: r.start_s)
        assert [(e.tag, e.start_s) for e in got] == [(e.tag, e.start_s)
                                                     for e in expected]
    store.close()


def test_aggregate_equals_fold_over_query():
    store, records, tags, rng = _random_store(seed=12)
    for _ in range(100):
        lo = rng.uniform(0, 86000)
        hi = lo + rng.uniform(0, 86400 - lo)
        tag = rng.choice(tags)
        stats = store.aggregate("a1", (lo, hi), tag)
        events = store.query_interval("a1", (lo, hi), tags=[tag])
        assert stats.count == len(events)
        if events:
            assert stats.first_s == events[0].start_s
            assert stats.last_s == events[-1].start_s
        else:
            assert stats.first_s is None and stats.last_s is None
    store.close()


def test_aggregate_examples(store):
    store.insert_events([make_event(start_s=100, end_s=101),
                         make_event(start_s=300, end_s=301)])
    stats = store.aggregate("a1", (0, 86400), "dog_bark")
    assert (stats.count, stats.first_s, stats.last_s) == (2, 100, 300)
    empty = store.aggregate("a1", (0, 86400), "cat")
    assert (empty.count, empty.first_s, empty.last_s) == (0, None, None)


def test_partition_additivity():
    store, records, _, _ = _random_store(seed=13)
    whole = store.query_interval("a1", (0, 86400))
    cuts = [0, 9000, 25000, 50000, 70000, 86400]
    parts = []
    for lo, hi in zip(cuts, cuts[1:]):
        parts.extend(store.query_interval("a1", (lo, hi)))
    assert sorted((e.tag, e.start_s) for e in parts) == \
        sorted((e.tag, e.start_s) for e in whole)
    store.close()


def test_upsert_skips_exact_duplicates(store):
    records = [make_event(start_s=1, end_s=2), make_event(start_s=5, end_s=6)]
    assert store.upsert_events(records) == (2, 0)
    again = [make_event(start_s=1, end_s=2), make_event(start_s=5, end_s=6),
             make_event(start_s=9, end_s=10)]
    assert store.upsert_events(again) == (1, 2)


def test_upsert_conflicting_attributes_rejected(store):
    store.upsert_events([make_event(start_s=1, end_s=2, confidence=0.9)])
    with pytest.raises(ConstraintViolation):
        store.upsert_events([make_event(start_s=1, end_s=2, confidence=0.5)])
    assert store.count() == 1


def test_run_select_is_read_only(store):
    store.insert_events([make_event()])
    cols, rows = store.run_select("SELECT COUNT(*) FROM events")
    assert rows[0][0] == 1
    import sqlite3
    with pytest.raises(sqlite3.DatabaseError):
        store.run_select("DELETE FROM events")
    assert store.count() == 1


def test_run_select_row_cap(store):
    store.insert_events([make_event(start_s=float(i), end_s=i + 0.5)
                         for i in range(50)])
    _, rows = store.run_select("SELECT * FROM events", max_rows=10)
    assert len(rows) == 10


def test_interval_object_with_spans(store):
    store.insert_events([make_event(start_s=100, end_s=101),
                         make_event(start_s=80000, end_s=80001)])

    class Wrapped:
        @staticmethod
        def spans():
            return [(79000, 86400), (0, 200)]

    got = store.query_interval("a1", Wrapped())
    assert {e.start_s for e in got} == {100, 80000}
