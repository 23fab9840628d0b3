"""Route queries to summary, detection, counting, or anomaly workflows.

Keyword matching answers fast and never touches the embedder; paraphrased
queries fall back to cosine similarity against a small exemplar bank. The
final default is summary, the broadest workflow.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from . import model_clients

INTENT_KINDS = ("summary", "detection", "counting", "anomaly")

# Cosine below this falls back to the summary default. The shipped trigram
# embedder always accepts the argmax; raise to ~0.35 for real embedders.
DEFAULT_MIN_SCORE = 0.0


class EmbedderUnavailable(Exception):
    pass


@dataclass
class Intent:
    kind: str
    score: float
    method: str  # keyword | embedding

    def __post_init__(self):
        if self.kind not in INTENT_KINDS:
            raise ValueError(f"unknown intent kind {self.kind!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0,1]")


@dataclass
class IntentConfig:
    priority: list[str]
    keywords: dict[str, list[re.Pattern]]
    exemplars: dict[str, list[str]]

    @classmethod
    def from_dict(cls, doc: dict) -> "IntentConfig":
        keywords: dict[str, list[re.Pattern]] = {}
        for kind, spec in doc["keywords"].items():
            pats = [re.compile(rf"\b{re.escape(p)}\b") for p in spec.get("phrases", [])]
            pats += [re.compile(p) for p in spec.get("patterns", [])]
            keywords[kind] = pats
        exemplars = {k: list(v) for k, v in doc["exemplars"].items()}
        for kind, bank in exemplars.items():
            if len(bank) < 5:
                raise ValueError(f"need >=5 exemplars for {kind}, got {len(bank)}")
        return cls(priority=list(doc["priority"]), keywords=keywords, exemplars=exemplars)


@lru_cache(maxsize=1)
def default_config() -> IntentConfig:
    raw = resources.files("larag.data").joinpath("intents.json").read_text("utf-8")
    return IntentConfig.from_dict(json.loads(raw))


def classify_keywords(text: str, config: IntentConfig | None = None) -> Intent | None:
    """First keyword hit in priority order; None when nothing matches."""
    config = config or default_config()
    t = re.sub(r"\s+", " ", text.lower())
    for kind in config.priority:
        for pat in config.keywords.get(kind, []):
            if pat.search(t):
                return Intent(kind=kind, score=1.0, method="keyword")
    return None


def classify_embedding(text: str, embedder=None,
                       config: IntentConfig | None = None) -> Intent:
    """Intent of the exemplar most similar to the query.

    ``embedder`` maps a list of strings to vectors; defaults to the offline
    trigram fallback.
    """
    config = config or default_config()
    embedder = embedder or model_clients.embed
    pairs = [(kind, ex) for kind in config.priority for ex in config.exemplars[kind]]
    try:
        vectors = embedder([text] + [ex for _, ex in pairs])
    except model_clients.EmbedderUnavailable as exc:
        raise EmbedderUnavailable(str(exc)) from exc
    query_vec, exemplar_vecs = vectors[0], vectors[1:]
    best_kind, best_score = "summary", -1.0
    for (kind, _), vec in zip(pairs, exemplar_vecs):
        score = model_clients.cosine(query_vec, vec)
        if score > best_score:
            best_kind, best_score = kind, score
    return Intent(kind=best_kind, score=max(0.0, min(1.0, best_score)), method="embedding")


def classify(text: str, embedder=None, config: IntentConfig | None = None,
             min_score: float = DEFAULT_MIN_SCORE) -> Intent:
    """Keyword hit wins; embedding backstop; summary on total miss."""
    config = config or default_config()
    hit = classify_keywords(text, config)
    if hit is not None:
        return hit
    if text.strip():
        try:
            intent = classify_embedding(text, embedder, config)
            if intent.score >= min_score:
                return intent
        except EmbedderUnavailable:
            pass
    return Intent(kind="summary", score=0.0, method="embedding")
