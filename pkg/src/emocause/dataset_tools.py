"""Corpus construction tooling: conversation modeling, cumulative clip
concatenation, duplicate-frame removal, the annotation agreement gate with
majority vote, and corpus statistics.

The corpus lives in JSON-lines files, one conversation object per line:

    {"id": "...",
     "utterances": [{"id", "speaker", "text", "emotion", "video_ref",
                     "start", "end"}, ...],
     "annotations": [{"utterance_id", "annotator_a", "annotator_b",
                      "votes"?, "final"?}, ...]}

Context utterances may be neutral; annotation targets carry one of the
six emotion labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, InputError
from .gen_metrics import Embedder, semantic_score, tokenize

SIX_EMOTIONS = ("anger", "disgust", "fear", "joy", "sadness", "surprise")
AGREEMENT_THRESHOLD = 0.75

__all__ = [
    "SIX_EMOTIONS",
    "AGREEMENT_THRESHOLD",
    "Utterance",
    "Conversation",
    "ClipSpec",
    "AgreementDecision",
    "AnnotationRecord",
    "CorpusStats",
    "CorpusEntry",
    "cumulative_clips",
    "dedup_indices",
    "dedup_frames",
    "route_for_score",
    "agreement_gate",
    "resolve_vote",
    "corpus_stats",
    "load_corpus",
]


@dataclass(frozen=True)
class Utterance:
    id: str
    speaker: str
    text: str
    emotion: str
    video_ref: str
    start: float
    end: float

    def __post_init__(self):
        if self.end <= self.start:
            raise InputError(
                f"utterance {self.id!r}: end {self.end} not after start {self.start}"
            )
        if self.emotion not in SIX_EMOTIONS + ("neutral",):
            raise InputError(
                f"utterance {self.id!r}: unknown emotion {self.emotion!r}"
            )


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        ids = [u.id for u in self.utterances]
        if len(set(ids)) != len(ids):
            raise InputError(f"conversation {self.id!r}: duplicate utterance ids")
        starts = [u.start for u in self.utterances]
        if any(b < a for a, b in zip(starts, starts[1:])):
            raise InputError(
                f"conversation {self.id!r}: utterances out of temporal order"
            )

    def utterance(self, utterance_id: str) -> Utterance:
        for u in self.utterances:
            if u.id == utterance_id:
                return u
        raise InputError(
            f"conversation {self.id!r} has no utterance {utterance_id!r}"
        )


@dataclass(frozen=True)
class ClipSpec:
    """Clip ``index`` concatenates utterances 0..index of the conversation."""

    conversation_id: str
    index: int
    utterance_ids: tuple[str, ...]
    start: float
    end: float

    def to_dict(self) -> dict:
        return {
            "conversation": self.conversation_id,
            "index": self.index,
            "utterance_ids": list(self.utterance_ids),
            "start": self.start,
            "end": self.end,
        }


def cumulative_clips(conversation: Conversation) -> list[ClipSpec]:
    """One clip per utterance; clip k covers utterances 0..k inclusive."""
    if not conversation.utterances:
        raise InputError(f"conversation {conversation.id!r} has no utterances")
    clips = []
    for k, utt in enumerate(conversation.utterances):
        ids = tuple(u.id for u in conversation.utterances[: k + 1])
        clips.append(
            ClipSpec(
                conversation.id,
                k,
                ids,
                conversation.utterances[0].start,
                utt.end,
            )
        )
    return clips


def dedup_indices(frames: Sequence[np.ndarray], threshold: float) -> list[int]:
    """Indices of frames kept by near-duplicate removal.

    Frame i survives iff it is the first frame or its mean absolute pixel
    difference to the last kept frame exceeds the threshold.
    """
    if threshold < 0:
        raise ContractViolation(f"threshold must be >= 0, got {threshold}")
    kept: list[int] = []
    last = None
    for i, frame in enumerate(frames):
        arr = np.asarray(frame, dtype=np.float64)
        if last is None or float(np.abs(arr - last).mean()) > threshold:
            kept.append(i)
            last = arr
    return kept


def dedup_frames(frames: Sequence[np.ndarray], threshold: float) -> list[np.ndarray]:
    """The surviving frames themselves, order preserved."""
    return [np.asarray(frames[i]) for i in dedup_indices(frames, threshold)]


def route_for_score(score: float) -> str:
    """Vote iff the agreement score strictly exceeds the 0.75 gate;
    the boundary itself goes to discussion."""
    return "vote" if score > AGREEMENT_THRESHOLD else "discussion"


@dataclass(frozen=True)
class AgreementDecision:
    score: float
    route: str


def agreement_gate(a: str, b: str, embedder: Embedder) -> AgreementDecision:
    """Score two independent annotations and route them."""
    if not a.strip() or not b.strip():
        raise InputError("annotations must be non-empty")
    score = semantic_score(tokenize(a), tokenize(b), embedder)
    return AgreementDecision(score, route_for_score(score))


def resolve_vote(candidates: tuple[str, str], votes: Sequence[str]) -> str:
    """Majority vote of three evaluators over two candidate annotations."""
    if len(votes) != 3:
        raise InputError(f"expected exactly 3 votes, got {len(votes)}")
    bad = [v for v in votes if v not in ("a", "b")]
    if bad:
        raise InputError(f"votes must be 'a' or 'b', got {bad}")
    return candidates[0] if votes.count("a") >= 2 else candidates[1]


@dataclass(frozen=True)
class AnnotationRecord:
    """A fully resolved annotation for one utterance."""

    utterance_id: str
    annotator_a: str
    annotator_b: str
    agreement: float
    route: str
    final: str
    votes: tuple[str, str, str] | None = None

    def __post_init__(self):
        expected = route_for_score(self.agreement)
        if self.route != expected:
            raise ContractViolation(
                f"route {self.route!r} inconsistent with agreement "
                f"{self.agreement} (expected {expected!r})"
            )
        if not self.final:
            raise ContractViolation("resolved annotation must have final text")


@dataclass(frozen=True)
class CorpusStats:
    emotion_histogram: dict[str, int]
    length_stats: dict[str, dict[str, float]]
    instance_count: int

    def to_dict(self) -> dict:
        return {
            "emotion_histogram": self.emotion_histogram,
            "instance_count": self.instance_count,
            "length_stats": self.length_stats,
        }


def corpus_stats(records: Sequence[tuple[str, str]]) -> CorpusStats:
    """Histogram and per-emotion word-length min/max/mean.

    ``records`` holds (emotion, final cause text) pairs; word counts use
    the shared tokenizer so one rule applies corpus-wide.
    """
    histogram = {label: 0 for label in SIX_EMOTIONS}
    lengths: dict[str, list[int]] = {label: [] for label in SIX_EMOTIONS}
    for emotion, cause in records:
        if emotion not in SIX_EMOTIONS:
            raise InputError(f"unknown emotion label {emotion!r}")
        histogram[emotion] += 1
        lengths[emotion].append(len(tokenize(cause)))
    length_stats = {
        label: {
            "min": float(min(vals)),
            "max": float(max(vals)),
            "mean": sum(vals) / len(vals),
        }
        for label, vals in lengths.items()
        if vals
    }
    return CorpusStats(histogram, length_stats, len(records))


@dataclass(frozen=True)
class CorpusEntry:
    """One corpus line: the conversation plus its raw annotation dicts."""

    conversation: Conversation
    annotations: tuple[dict, ...] = field(default_factory=tuple)


def _utterance_from_json(obj: dict, line_no: int) -> Utterance:
    try:
        return Utterance(
            id=str(obj["id"]),
            speaker=str(obj["speaker"]),
            text=str(obj["text"]),
            emotion=str(obj["emotion"]),
            video_ref=str(obj.get("video_ref", "")),
            start=float(obj["start"]),
            end=float(obj["end"]),
        )
    except KeyError as exc:
        raise InputError(f"line {line_no}: utterance missing field {exc}") from exc


def load_corpus(path: str | Path) -> list[CorpusEntry]:
    """Parse a JSON-lines corpus; schema violations report the line number."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "utterances" not in obj:
                raise InputError(
                    f"line {line_no}: conversation object needs 'id' and 'utterances'"
                )
            utterances = tuple(
                _utterance_from_json(u, line_no) for u in obj["utterances"]
            )
            try:
                conversation = Conversation(str(obj["id"]), utterances)
            except InputError as exc:
                raise InputError(f"line {line_no}: {exc}") from exc
            annotations = tuple(obj.get("annotations", ()))
            for ann in annotations:
                if "utterance_id" not in ann:
                    raise InputError(
                        f"line {line_no}: annotation missing 'utterance_id'"
                    )
            entries.append(CorpusEntry(conversation, annotations))
    return entries
