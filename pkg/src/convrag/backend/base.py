"""Language-model access contract.

Two capabilities cover everything the pipeline needs: free-text generation
with per-token log-probabilities, and constrained scoring of candidate
continuations (how reflection-token probabilities are obtained).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Protocol, runtime_checkable

from ..errors import DataError

NEG_INF = float("-inf")


def prompt_digest(prompt: str) -> str:
    """Short stable digest used in error messages instead of whole prompts."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = 256
    stop: tuple[str, ...] = ()
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise DataError("max_tokens must be ≥ 1")
        if self.temperature < 0:
            raise DataError("temperature must be ≥ 0")


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"


@dataclass(frozen=True)
class Generation:
    text: str
    token_logprobs: tuple[tuple[str, float], ...]
    finish: FinishReason = FinishReason.STOP
    # False when the backend reported no per-token log-probabilities and the
    # token list is synthetic; scorers then fall back to a configured p_norm.
    logprobs_available: bool = True

    def __post_init__(self):
        joined = "".join(t for t, _ in self.token_logprobs)
        if joined != self.text:
            raise DataError("token texts must concatenate to the generation text")
        if any(lp > 0 for _, lp in self.token_logprobs):
            raise DataError("log-probabilities must be ≤ 0")


@dataclass(frozen=True)
class ScoreRequest:
    prompt: str
    candidates: tuple[str, ...]

    def __post_init__(self):
        if not self.candidates:
            raise DataError("candidates must be non-empty")
        if len(set(self.candidates)) != len(self.candidates):
            raise DataError("candidates must be distinct")


@runtime_checkable
class Backend(Protocol):
    def generate(self, req: GenerationRequest) -> Generation:
        ...

    def score_continuations(self, req: ScoreRequest) -> dict[str, float]:
        """One entry per candidate; -inf marks a candidate the backend could
        not score. Keys always equal the request's candidate set."""
        ...


def sequence_logprob_norm(g: Generation) -> float:
    """Length-normalized sequence probability: exp of the mean token log-prob."""
    if not g.token_logprobs:
        raise DataError("cannot normalize a generation with zero tokens")
    lps = [lp for _, lp in g.token_logprobs]
    if any(math.isinf(lp) for lp in lps):
        return 0.0
    return math.exp(sum(lps) / len(lps))


def truncate_generation(g: Generation, stop: tuple[str, ...], max_tokens: int) -> Generation:
    """Apply stop sequences and the token budget to a raw generation.

    The text is cut at the earliest stop occurrence (stop text excluded) and
    the token list is clipped so it still concatenates to the text; a token
    straddling the cut is split, keeping its log-probability.
    """
    text = g.text
    finish = g.finish
    cut = min((i for i in (text.find(s) for s in stop) if i >= 0), default=-1)
    if cut >= 0:
        text = text[:cut]
        finish = FinishReason.STOP

    tokens: list[tuple[str, float]] = []
    consumed = 0
    for tok, lp in g.token_logprobs:
        if consumed >= len(text) or len(tokens) >= max_tokens:
            break
        piece = tok[: len(text) - consumed]
        tokens.append((piece, lp))
        consumed += len(piece)
    if len(tokens) == max_tokens and consumed < len(text):
        text = text[:consumed]
        finish = FinishReason.LENGTH
    return Generation(
        text=text,
        token_logprobs=tuple(tokens),
        finish=finish,
        logprobs_available=g.logprobs_available,
    )


@dataclass
class CallLog:
    """Lightweight instrumentation shared by backends in tests."""

    generate_calls: int = 0
    score_calls: int = 0
    prompts: list[str] = field(default_factory=list)


def complete_scores(raw: Mapping[str, float], candidates: tuple[str, ...]) -> dict[str, float]:
    """Ensure the score map covers exactly the requested candidates, filling
    unscored ones with the -inf sentinel."""
    return {c: float(raw.get(c, NEG_INF)) for c in candidates}
