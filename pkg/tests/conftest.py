from __future__ import annotations

import pytest

from larag import benchgen
from larag.event_store import EventRecord, EventStore
from larag.model_clients import StubLlmClient


@pytest.fixture()
def stub_client():
    return StubLlmClient()


@pytest.fixture(scope="session")
def home_domain():
    return benchgen.load_domain("home_iot")


@pytest.fixture(scope="session")
def industrial_domain():
    return benchgen.load_domain("industrial_iot")


@pytest.fixture(scope="session")
def home_timeline(home_domain):
    return benchgen.synth_timeline(home_domain, seed=7)


def store_from_timeline(timeline) -> EventStore:
    store = EventStore()
    store.insert_events([
        EventRecord(audio_id=e.audio_id, tag=e.tag, start_s=e.start_s,
                    end_s=e.end_s, confidence=e.confidence,
                    loudness_lufs=e.loudness_lufs)
        for e in timeline
    ])
    return store


@pytest.fixture()
def home_store(home_timeline):
    store = store_from_timeline(home_timeline)
    yield store
    store.close()


def make_event(audio_id="a1", tag="dog_bark", start_s=100.0, end_s=102.0,
               confidence=0.9, loudness_lufs=-21.0) -> EventRecord:
    return EventRecord(audio_id=audio_id, tag=tag, start_s=start_s, end_s=end_s,
                       confidence=confidence, loudness_lufs=loudness_lufs)
