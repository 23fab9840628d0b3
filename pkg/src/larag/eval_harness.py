"""Score system answers against ground truth and produce report tables.

Detection and counting are scored deterministically on a 1-5 rubric;
summaries go to an LLM judge when one is available, otherwise to a
deterministic recall scorer over the reference bullets. Accuracy percent is
mean(score)/5 * 100.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Callable

from .benchgen import QAPair
from .model_clients import ChatRequest, ClientUnavailable

logger = logging.getLogger(__name__)

CATEGORIES = ("detection", "counting", "summary")

_YES_WORDS = {"yes", "yeah", "yep", "correct", "affirmative", "present", "detected"}
_NO_WORDS = {"no", "nope", "none", "absent", "never"}
_INT_RE = re.compile(r"-?\d+")
_WORD_RE = re.compile(r"[a-z']+")

SUMMARY_RUBRIC = (
    "Score the answer 1-5. 5: covers all key points of the reference with"
    " accurate times and counts. 3-4: partial coverage with minor omissions"
    " or inaccuracies. 1-2: mostly wrong, fabricated, or empty."
)
DETECTION_RUBRIC = (
    "Score the answer 1-5. The question is yes/no. Correct polarity scores"
    " 4-5 (5 with supporting detail); incorrect polarity is capped at 2;"
    " unparseable answers score 1."
)
COUNTING_RUBRIC = (
    "Score the answer 1-5 on numeric accuracy. Exact count: 5. Off-by-one or"
    " within 10 percent: 3. Order-of-magnitude errors: 1."
)

RUBRICS = {
    "summary": SUMMARY_RUBRIC,
    "detection": DETECTION_RUBRIC,
    "counting": COUNTING_RUBRIC,
}


@dataclass
class Score:
    value: int
    method: str  # deterministic | judge
    rationale: str

    def __post_init__(self):
        if not 1 <= self.value <= 5:
            raise ValueError(f"score {self.value} outside 1..5")


def _polarity(text: str) -> tuple[bool | None, bool]:
    """Returns (is_yes, unambiguous); (None, _) when unparseable."""
    words = _WORD_RE.findall(text.lower())
    if not words:
        return None, False
    if words[0] in _YES_WORDS:
        return True, True
    if words[0] in _NO_WORDS:
        return False, True
    has_yes = any(w in _YES_WORDS for w in words)
    has_no = any(w in _NO_WORDS for w in words)
    if has_yes == has_no:
        return None, False
    return has_yes, False


def score_detection(answer_text: str, gt) -> Score:
    """Polarity of the first unambiguous yes/no token against gt.detected."""
    expected = gt.stats.detected if hasattr(gt, "stats") else bool(gt)
    polarity, unambiguous = _polarity(answer_text)
    if polarity is None:
        return Score(1, "deterministic", "no yes/no polarity found")
    if polarity != expected:
        return Score(2, "deterministic", f"wrong polarity (expected {expected})")
    if unambiguous:
        return Score(5, "deterministic", "correct polarity stated up front")
    return Score(4, "deterministic", "correct polarity, ambiguous phrasing")


def score_counting(answer_text: str, gt) -> Score:
    """First integer in the answer against gt count."""
    expected = gt.stats.count if hasattr(gt, "stats") else int(gt)
    m = _INT_RE.search(answer_text)
    if not m:
        return Score(1, "deterministic", "no integer in answer")
    predicted = int(m.group())
    if predicted == expected:
        return Score(5, "deterministic", "exact count")
    delta = abs(predicted - expected)
    if delta == 1 or (expected > 0 and delta / expected <= 0.10):
        return Score(3, "deterministic", f"near miss: {predicted} vs {expected}")
    if expected > 0:
        ratio = predicted / expected
        if ratio >= 10 or ratio <= 0.1:
            return Score(1, "deterministic", f"order of magnitude off: {predicted}")
    elif predicted >= 10:
        return Score(1, "deterministic", f"order of magnitude off: {predicted}")
    return Score(2, "deterministic", f"wrong count: {predicted} vs {expected}")


def score_summary_recall(answer_text: str, reference_answer: str) -> Score:
    """Deterministic summary fallback: recall of reference bullet lines."""
    ref_lines = [ln.strip() for ln in reference_answer.splitlines()
                 if ln.strip().startswith("- ")]
    if not ref_lines:
        hit = reference_answer.strip() in answer_text
        return Score(5 if hit else 1, "deterministic", "reference text match")
    recall = sum(1 for ln in ref_lines if ln in answer_text) / len(ref_lines)
    value = 5 if recall >= 1.0 else 4 if recall >= 0.75 else 3 if recall >= 0.5 \
        else 2 if recall > 0.0 else 1
    return Score(value, "deterministic", f"bullet recall {recall:.2f}")


def judge_prompt(question: str, answer: str, reference: str, rubric: str) -> ChatRequest:
    user = "\n".join([
        f"Rubric: {rubric}",
        f"Question: {question}",
        "Reference:",
        reference,
        "Answer:",
        answer,
        "Reply with a single integer score from 1 to 5.",
    ])
    system = "#task: judge\nYou are a strict grader. Reply with one integer."
    return ChatRequest(messages=[("system", system), ("user", user)], max_tokens=8)


def judge(question: str, answer: str, gt_reference: str, rubric: str,
          llm_client) -> Score:
    """LLM-scored 1-5; one retry on an unparseable reply, then score 1."""
    req = judge_prompt(question, answer, gt_reference, rubric)
    for attempt in (1, 2):
        reply = llm_client.complete(req)
        m = re.search(r"[1-5]", reply)
        if m:
            return Score(int(m.group()), "judge", f"judge reply: {reply.strip()[:60]}")
        logger.warning("judge reply unparseable (attempt %d): %r", attempt, reply[:80])
    return Score(1, "judge", "judge reply unparseable twice")


@dataclass
class Report:
    per_category: dict[str, float]  # accuracy percent
    per_category_n: dict[str, int]
    overall: float
    mean_latency_s: float
    per_stage_latency_ms: dict[str, float] = field(default_factory=dict)
    scores: list[tuple[str, int]] = field(default_factory=list)

    def render_table(self) -> str:
        cols = [f"{c.capitalize()} (%) (n={self.per_category_n.get(c, 0)})"
                for c in CATEGORIES]
        header = " | ".join(cols + ["Overall (%)", "Latency (s)"])
        values = [f"{self.per_category.get(c, 0.0):.2f}" for c in CATEGORIES]
        row = " | ".join(values + [f"{self.overall:.2f}", f"{self.mean_latency_s:.3f}"])
        return f"{header}\n{row}"


DEFAULT_SCORERS: dict[str, Callable] = {
    "detection": score_detection,
    "counting": score_counting,
}


def _timed_answer(answer_fn: Callable[[QAPair], object], pair: QAPair):
    t0 = time.perf_counter()
    try:
        result = answer_fn(pair)
    except Exception as exc:  # per-pair isolation
        logger.warning("answer_fn failed on %r: %s", pair.question[:60], exc)
        result = None
    return result, time.perf_counter() - t0


def run_eval(dataset: list[QAPair], answer_fn: Callable[[QAPair], object],
             scorers: dict[str, Callable] | None = None,
             judge_client=None, jobs: int = 1) -> Report:
    """Answer and score every pair; per-pair failures score 1 and the run continues.

    With jobs > 1 the answers run on a thread pool; scoring and aggregation
    stay in dataset order either way.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    scorers = scorers or DEFAULT_SCORERS
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    stage_sums: dict[str, float] = {}
    stage_counts: dict[str, int] = {}
    latencies: list[float] = []
    scores: list[tuple[str, int]] = []

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            answered = list(pool.map(lambda p: _timed_answer(answer_fn, p), dataset))
    else:
        answered = [_timed_answer(answer_fn, pair) for pair in dataset]

    for pair, (result, elapsed) in zip(dataset, answered):
        category = pair.ground_truth.category
        latencies.append(elapsed)
        answer_text = result if isinstance(result, str) else \
            getattr(result, "answer_text", "")
        breakdown = getattr(result, "latency_breakdown", None)
        if breakdown:
            for stage, ms in breakdown.items():
                stage_sums[stage] = stage_sums.get(stage, 0.0) + ms
                stage_counts[stage] = stage_counts.get(stage, 0) + 1

        if result is None:
            score = Score(1, "deterministic", "pipeline failure")
        elif category in scorers:
            score = scorers[category](answer_text, pair.ground_truth)
        elif category == "summary" and judge_client is not None:
            try:
                score = judge(pair.question, answer_text, pair.reference_answer,
                              RUBRICS["summary"], judge_client)
            except ClientUnavailable as exc:
                logger.warning("judge unavailable (%s); using recall scorer", exc)
                score = score_summary_recall(answer_text, pair.reference_answer)
        else:
            score = score_summary_recall(answer_text, pair.reference_answer)
        sums[category] = sums.get(category, 0.0) + score.value
        counts[category] = counts.get(category, 0) + 1
        scores.append((category, score.value))

    per_category = {c: sums[c] / counts[c] / 5.0 * 100.0 for c in counts}
    total_n = sum(counts.values())
    overall = sum(sums.values()) / total_n / 5.0 * 100.0
    return Report(
        per_category=per_category,
        per_category_n=counts,
        overall=overall,
        mean_latency_s=sum(latencies) / len(latencies),
        per_stage_latency_ms={s: stage_sums[s] / stage_counts[s] for s in stage_sums},
        scores=scores,
    )
