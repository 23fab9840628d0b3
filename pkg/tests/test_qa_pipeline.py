import pytest

from larag import qa_pipeline
from larag.event_store import EventStore
from larag.intent_classifier import Intent
from larag.model_clients import FailingClient, ScriptedClient, StubLlmClient
from larag.qa_pipeline import (ChatTurn, PipelineDeps, QuerySession, answer,
                               build_prompt, rephrase, retrieve)
from larag.time_resolution import TimeInterval
from tests.conftest import make_event


@pytest.fixture()
def store():
    s = EventStore()
    yield s
    s.close()


def _deps(store, client=None, **kwargs):
    return PipelineDeps(store=store, llm_client=client or StubLlmClient(), **kwargs)


# -- rephrase ----------------------------------------------------------------

def test_rephrase_merges_followup(stub_client):
    history = [ChatTurn("user", "How many dog barks this morning?"),
               ChatTurn("assistant", "3")]
    got = rephrase("and in the afternoon?", history, stub_client)
    assert got == "How many dog barks occurred in the afternoon?"


def test_rephrase_identity_without_history(stub_client):
    got = rephrase("Was there any siren after 17:30?", [], stub_client)
    assert got == "Was there any siren after 17:30?"


def test_rephrase_passthrough_on_client_failure():
    got = rephrase("and in the afternoon?", [ChatTurn("user", "x")], FailingClient())
    assert got == "and in the afternoon?"


def test_rephrase_passthrough_on_empty_reply():
    got = rephrase("original", [], ScriptedClient([""]))
    assert got == "original"


# -- retrieve ----------------------------------------------------------------

def _populate(store):
    rows = [
        ("dog_bark", 29700.0), ("dog_bark", 30000.0),
        ("cat", 29800.0), ("snoring", 29900.0),
    ]
    store.insert_events([make_event(tag=t, start_s=s, end_s=s + 2)
                         for t, s in rows])


def test_retrieve_summary_is_broad(store):
    _populate(store)
    got = retrieve(Intent("summary", 1.0, "keyword"), "a1",
                   TimeInterval(29000, 31000, "h24", "rules"), "what happened",
                   store)
    assert len(got) == 4


def test_retrieve_topk_filters_tags(store):
    _populate(store)
    got = retrieve(Intent("detection", 1.0, "keyword"), "a1",
                   TimeInterval(29000, 31000, "h24", "rules"),
                   "was there a dog bark", store, k=1)
    assert {e.tag for e in got} == {"dog_bark"}
    assert len(got) == 2


def test_retrieve_k_exceeding_tag_count_keeps_all(store):
    _populate(store)
    got = retrieve(Intent("counting", 1.0, "keyword"), "a1",
                   TimeInterval(29000, 31000, "h24", "rules"),
                   "how many dog barks", store, k=5)
    assert len(got) == 4


def test_retrieve_empty_interval(store):
    _populate(store)
    got = retrieve(Intent("detection", 1.0, "keyword"), "a1",
                   TimeInterval(0, 100, "h24", "rules"), "was there a dog bark",
                   store)
    assert got == []


# -- build_prompt ------------------------------------------------------------

def test_prompt_empty_evidence_states_absence():
    prompt = build_prompt(Intent("detection", 1.0, "keyword"), [], "q?",
                          TimeInterval(0, 3600, "h24", "rules"), ["dog_bark"])
    assert "no events detected in this interval" in prompt


def test_prompt_evidence_lines_in_start_order():
    events = [make_event(start_s=200, end_s=202), make_event(start_s=100, end_s=101)]
    prompt = build_prompt(Intent("detection", 1.0, "keyword"), events, "q?",
                          TimeInterval(0, 3600, "h24", "rules"), ["dog_bark"])
    lines = [ln for ln in prompt.splitlines() if " | dog_bark | " in ln]
    assert len(lines) == 2
    assert lines[0].startswith("00:01:40–")
    assert lines[1].startswith("00:03:20–")


def test_prompt_contains_vocabulary_and_interval():
    prompt = build_prompt(Intent("counting", 1.0, "keyword"), [], "q?",
                          TimeInterval(28800, 57600, "shift", "rules"),
                          ["dog_bark", "cat"])
    assert "Vocabulary: dog_bark, cat" in prompt
    assert "Interval: 08:00:00–16:00:00" in prompt


def test_prompt_deterministic():
    events = [make_event(start_s=100, end_s=101, loudness_lufs=None)]
    args = (Intent("summary", 1.0, "keyword"), events, "what happened?",
            TimeInterval(0, 86400, "full_day", "default"), ["dog_bark"])
    assert build_prompt(*args) == build_prompt(*args)


def test_prompt_null_loudness_rendered():
    events = [make_event(start_s=100, end_s=101, loudness_lufs=None)]
    prompt = build_prompt(Intent("detection", 1.0, "keyword"), events, "q?",
                          TimeInterval(0, 86400, "full_day", "default"), None)
    assert " | n/a" in prompt


# -- answer ------------------------------------------------------------------

def test_answer_detection_yes_with_evidence(store):
    store.insert_events([make_event(start_s=29700, end_s=29703)])  # 08:15
    deps = _deps(store, vocabulary=["dog_bark", "cat"])
    env = answer("Did a dog bark occur between 08:00:00 and 09:00:00?",
                 QuerySession("a1"), deps)
    assert env.answer_text.startswith("Yes")
    assert [e.start_s for e in env.evidence] == [29700]
    assert env.intent.kind == "detection"
    assert (env.interval.start_s, env.interval.end_s) == (28800, 32400)


def test_answer_detection_no_on_empty_interval(store):
    store.insert_events([make_event(start_s=50000, end_s=50001)])
    deps = _deps(store, vocabulary=["dog_bark"])
    env = answer("Did a dog bark occur between 08:00:00 and 09:00:00?",
                 QuerySession("a1"), deps)
    assert env.answer_text == "No."
    assert env.evidence == []


def test_answer_counting_matches_aggregate(store):
    events = [make_event(tag="sirens", start_s=1000.0 * i + 500, end_s=1000.0 * i + 501)
              for i in range(7)]
    store.insert_events(events)
    deps = _deps(store, vocabulary=["sirens"])
    env = answer("How many times did sirens occur?", QuerySession("a1"), deps)
    assert env.answer_text == "7"
    stats = store.aggregate("a1", (0, 86400), "sirens")
    assert stats.count == 7


def test_answer_latency_breakdown_sums(store):
    store.insert_events([make_event()])
    deps = _deps(store, vocabulary=["dog_bark"])
    env = answer("Was there any dog bark?", QuerySession("a1"), deps)
    stages = {k: v for k, v in env.latency_breakdown.items() if k != "total"}
    assert abs(env.latency_breakdown["total"] - sum(stages.values())) <= 5.0
    assert all(v >= 0 for v in env.latency_breakdown.values())


def test_answer_evidence_lies_in_interval(store, home_timeline):
    store.insert_events([make_event(tag=e.tag, start_s=e.start_s, end_s=e.end_s)
                         for e in home_timeline[:80]])
    deps = _deps(store)
    env = answer("How many dog barks between 00:10:00 and 02:00:00?",
                 QuerySession("a1"), deps)
    for ev in env.evidence:
        assert any(lo <= ev.start_s < hi for lo, hi in env.interval.spans())


def test_answer_generation_failure_is_structured(store):
    store.insert_events([make_event()])

    class RephraseOnly:
        def complete(self, req):
            if "#task: rephrase" in req.system_text():
                return ""
            raise qa_pipeline.ClientUnavailable("boom")

    deps = _deps(store, client=RephraseOnly(), vocabulary=["dog_bark"])
    env = answer("Was there any dog bark?", QuerySession("a1"), deps)
    assert "Unable to generate an answer" in env.answer_text
    assert env.evidence  # evidence still attached


def test_answer_anomaly_branch(store):
    history = [make_event(tag="machine", start_s=100.0 * i + 50, end_s=100.0 * i + 51,
                          loudness_lufs=-20.0) for i in range(20)]
    history.append(make_event(tag="machine", start_s=40000, end_s=40001,
                              loudness_lufs=-60.0))
    store.insert_events(history)
    deps = _deps(store, vocabulary=["machine"])
    env = answer("Report unusual loudness events.", QuerySession("a1"), deps)
    assert env.intent.kind == "anomaly"
    assert "anomalies found" in env.answer_text
    assert any(e.loudness_lufs == -60.0 for e in env.evidence)


def test_answer_pitch_anomaly_not_supported(store):
    store.insert_events([make_event()])
    deps = _deps(store)
    env = answer("Show the pitch anomaly report.", QuerySession("a1"), deps)
    assert env.intent.kind == "anomaly"
    assert "not supported" in env.answer_text
    assert env.evidence == []


def test_second_turn_uses_history(store):
    store.insert_events([make_event(start_s=29700, end_s=29703),
                         make_event(start_s=64800, end_s=64802)])  # 18:00
    deps = _deps(store, vocabulary=["dog_bark"])
    session = QuerySession("a1")
    first = answer("Did a dog bark occur between 08:00:00 and 09:00:00?",
                   session, deps)
    session.history += [ChatTurn("user", "Did a dog bark occur between 08:00:00"
                                         " and 09:00:00?"),
                        ChatTurn("assistant", first.answer_text)]
    second = answer("and after 17:30?", session, deps)
    assert (second.interval.start_s, second.interval.end_s) == (63000, 86400)
    assert second.answer_text.startswith("Yes")
    assert [e.start_s for e in second.evidence] == [64800]
