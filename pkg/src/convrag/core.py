"""Domain types for conversations, passages and pipeline configuration.

Everything here is immutable after construction and safe to share across
threads. Validation never raises for bad data: it returns a ValidationResult
listing violations, so callers can surface all problems at once.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, Iterable, Iterator, Optional

from .errors import DataError

# A passage reference is the passage id; texts live in the corpus.
PassageRef = str


class Role(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Turn:
    role: Role
    text: str
    attached_passage_ids: tuple[PassageRef, ...] = ()
    gold_passage_ids: Optional[tuple[str, ...]] = None

    def to_dict(self) -> dict:
        d: dict = {"role": self.role.value, "text": self.text}
        if self.attached_passage_ids:
            d["attached_passage_ids"] = list(self.attached_passage_ids)
        if self.gold_passage_ids is not None:
            d["gold_passage_ids"] = list(self.gold_passage_ids)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Turn":
        try:
            role = Role(d["role"])
            text = d["text"]
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad turn record: {exc}") from exc
        gold = d.get("gold_passage_ids")
        return cls(
            role=role,
            text=text,
            attached_passage_ids=tuple(d.get("attached_passage_ids", ())),
            gold_passage_ids=tuple(gold) if gold is not None else None,
        )


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple[Turn, ...] = ()

    def append(self, turn: Turn) -> "Conversation":
        return replace(self, turns=self.turns + (turn,))

    @property
    def last_user_text(self) -> str:
        for turn in reversed(self.turns):
            if turn.role is Role.USER:
                return turn.text
        return ""

    def to_dict(self) -> dict:
        return {"id": self.id, "turns": [t.to_dict() for t in self.turns]}

    @classmethod
    def from_dict(cls, d: dict) -> "Conversation":
        if "id" not in d:
            raise DataError("conversation record missing id")
        return cls(id=d["id"], turns=tuple(Turn.from_dict(t) for t in d.get("turns", ())))


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str

    def index_text(self) -> str:
        """Text used for indexing and embedding: title prepended when present."""
        return f"{self.title} {self.text}" if self.title else self.text

    def to_dict(self) -> dict:
        return {"id": self.id, "title": self.title, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> "Passage":
        if "id" not in d or "text" not in d:
            raise DataError("passage record requires id and text")
        return cls(id=d["id"], title=d.get("title", ""), text=d["text"])


@dataclass(frozen=True)
class ScoringWeights:
    """Weights of the relevance / groundedness / utility terms in the composite score."""

    w1: float = 1.0
    w2: float = 1.0
    w3: float = 0.5

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w1, self.w2, self.w3)

    def to_dict(self) -> dict:
        return {"w1": self.w1, "w2": self.w2, "w3": self.w3}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoringWeights":
        return cls(w1=float(d.get("w1", 1.0)), w2=float(d.get("w2", 1.0)), w3=float(d.get("w3", 0.5)))


class RetrieverKind(str, Enum):
    BM25 = "bm25"
    DENSE = "dense"


class GroupScoreMode(str, Enum):
    """How a token group's distribution collapses to a scalar score."""

    MOST_DESIRABLE = "most_desirable"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class PipelineConfig:
    top_k: int = 5
    beam_size: int = 2
    weights: ScoringWeights = field(default_factory=ScoringWeights)
    max_segments: int = 4
    retriever_kind: RetrieverKind = RetrieverKind.BM25
    # Evidence reuse window: passages attached within the last N assistant turns.
    continue_window: int = 2
    score_mode: GroupScoreMode = GroupScoreMode.MOST_DESIRABLE
    # Used as p_norm when a backend cannot report sequence log-probabilities.
    p_unavailable: float = 0.5

    def to_dict(self) -> dict:
        return {
            "top_k": self.top_k,
            "beam_size": self.beam_size,
            "weights": self.weights.to_dict(),
            "max_segments": self.max_segments,
            "retriever_kind": self.retriever_kind.value,
            "continue_window": self.continue_window,
            "score_mode": self.score_mode.value,
            "p_unavailable": self.p_unavailable,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        base = cls()
        try:
            return cls(
                top_k=int(d.get("top_k", base.top_k)),
                beam_size=int(d.get("beam_size", base.beam_size)),
                weights=ScoringWeights.from_dict(d.get("weights", {})),
                max_segments=int(d.get("max_segments", base.max_segments)),
                retriever_kind=RetrieverKind(d.get("retriever_kind", base.retriever_kind.value)),
                continue_window=int(d.get("continue_window", base.continue_window)),
                score_mode=GroupScoreMode(d.get("score_mode", base.score_mode.value)),
                p_unavailable=float(d.get("p_unavailable", base.p_unavailable)),
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"bad pipeline config: {exc}") from exc


@dataclass(frozen=True)
class Violation:
    where: str
    message: str

    def __str__(self) -> str:  # pragma: no cover - display helper
        return f"{self.where}: {self.message}"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]


def validate_conversation(
    conv: Conversation,
    corpus=None,
    require_user_last: bool = False,
) -> ValidationResult:
    """Check conversation invariants.

    Alternation must start with a user turn; turn texts must be non-empty
    after trimming. `require_user_last` adds the pre-pipeline requirement
    that the final turn is a user turn (a stored conversation legitimately
    ends with the assistant's reply). When a corpus is given, attached
    passage ids must resolve in it.
    """
    violations: list[Violation] = []
    if not conv.id:
        violations.append(Violation("conversation", "id must be non-empty"))
    for i, turn in enumerate(conv.turns):
        where = f"turn {i}"
        expected = Role.USER if i % 2 == 0 else Role.ASSISTANT
        if turn.role is not expected:
            if i == 0:
                violations.append(Violation(where, "must start with user"))
            else:
                violations.append(Violation(where, f"roles must alternate (expected {expected.value})"))
        if not turn.text.strip():
            violations.append(Violation(where, "empty turn text"))
        if corpus is not None:
            for pid in turn.attached_passage_ids:
                if pid not in corpus:
                    violations.append(Violation(where, f"attached passage id {pid!r} not in corpus"))
    if require_user_last:
        if not conv.turns:
            violations.append(Violation("conversation", "no turns"))
        elif conv.turns[-1].role is not Role.USER:
            violations.append(Violation(f"turn {len(conv.turns) - 1}", "final turn must be a user turn"))
    return ValidationResult(tuple(violations))


def validate_config(cfg: PipelineConfig) -> ValidationResult:
    violations: list[Violation] = []
    if cfg.top_k < 1:
        violations.append(Violation("top_k", "top_k ≥ 1"))
    if cfg.beam_size < 1:
        violations.append(Violation("beam_size", "beam_size ≥ 1"))
    if cfg.max_segments < 1:
        violations.append(Violation("max_segments", "max_segments ≥ 1"))
    for name, value in zip(("w1", "w2", "w3"), cfg.weights.as_tuple()):
        if not math.isfinite(value):
            violations.append(Violation(name, "weights finite"))
    if cfg.continue_window < 1:
        violations.append(Violation("continue_window", "continue_window ≥ 1"))
    if not math.isfinite(cfg.p_unavailable) or not 0.0 <= cfg.p_unavailable <= 1.0:
        violations.append(Violation("p_unavailable", "p_unavailable in [0,1]"))
    return ValidationResult(tuple(violations))


def read_conversations(stream: IO[str] | Iterable[str]) -> Iterator[Conversation]:
    """Parse line-delimited conversation records."""
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid record: {exc}") from exc
        yield Conversation.from_dict(record)


def write_conversations(conversations: Iterable[Conversation], stream: IO[str]) -> None:
    for conv in conversations:
        stream.write(json.dumps(conv.to_dict(), sort_keys=True) + "\n")


def load_conversations(path) -> list[Conversation]:
    with open(path, encoding="utf-8") as fh:
        return list(read_conversations(fh))
