"""Reflection-token vocabulary, group normalization and the composite score.

Reflection tokens are bracketed markers a critic emits to self-assess the
pipeline: whether to retrieve, whether a passage is relevant, how well a
response segment is grounded in its passage, and how useful the response is.
All functions here are pure.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

from .core import GroupScoreMode, ScoringWeights
from .errors import DataError

# Version of the canonical token table; bump on any vocabulary change.
TOKEN_TABLE_VERSION = 1

RETRIEVE = "[Retrieve]"
NO_RETRIEVE = "[No Retrieve]"
CONTINUE_EVIDENCE = "[Continue to Use Evidence]"
RELEVANT = "[Relevant]"
NON_RELEVANT = "[Non Relevant]"
FULLY_SUPPORTED = "[Fully supported]"
PARTIALLY_SUPPORTED = "[Partially supported]"
NO_SUPPORT = "[No support]"
UTILITY_TOKENS = tuple(f"[Utility:{n}]" for n in range(1, 6))

# Alternate surface forms that appear in judge replies; mapped to canon on parse.
TOKEN_ALIASES = {
    "[Retrieval]": RETRIEVE,
    "[No Retrieval]": NO_RETRIEVE,
    "[Continue to use evidence]": CONTINUE_EVIDENCE,
    "[Irrelevant]": NON_RELEVANT,
    "[No support / Contradictory]": NO_SUPPORT,
}


class TokenGroup(Enum):
    RETRIEVAL3 = "retrieval3"
    RELEVANCE = "relevance"
    GROUNDEDNESS = "groundedness"
    UTILITY = "utility"

    @property
    def tokens(self) -> tuple[str, ...]:
        return _GROUP_TOKENS[self]

    @property
    def most_desirable(self) -> Optional[str]:
        """The token whose probability defines the group's score; None for the
        retrieval decision group, which is a choice rather than a quality axis."""
        return _MOST_DESIRABLE.get(self)


_GROUP_TOKENS: dict[TokenGroup, tuple[str, ...]] = {
    TokenGroup.RETRIEVAL3: (RETRIEVE, NO_RETRIEVE, CONTINUE_EVIDENCE),
    TokenGroup.RELEVANCE: (RELEVANT, NON_RELEVANT),
    TokenGroup.GROUNDEDNESS: (FULLY_SUPPORTED, PARTIALLY_SUPPORTED, NO_SUPPORT),
    TokenGroup.UTILITY: UTILITY_TOKENS,
}

_MOST_DESIRABLE = {
    TokenGroup.RELEVANCE: RELEVANT,
    TokenGroup.GROUNDEDNESS: FULLY_SUPPORTED,
    TokenGroup.UTILITY: UTILITY_TOKENS[-1],
}

ALL_TOKENS: tuple[str, ...] = tuple(t for g in TokenGroup for t in g.tokens)

_TOKEN_TO_GROUP = {t: g for g, toks in _GROUP_TOKENS.items() for t in toks}


def group_of(token: str) -> Optional[TokenGroup]:
    return _TOKEN_TO_GROUP.get(token)


@dataclass(frozen=True)
class GroupScores:
    group: TokenGroup
    probs: Mapping[str, float]

    def top(self) -> str:
        """Highest-probability token; ties broken by the group's token order."""
        return max(self.group.tokens, key=lambda t: self.probs[t])


def normalize_group(raw: Mapping[str, float], group: TokenGroup) -> GroupScores:
    """Softmax raw log-probabilities into a distribution over the group's tokens.

    Every group token must be present in `raw`; unscorable tokens are passed
    as -inf. Raises DataError when no token carries finite mass.
    """
    missing = [t for t in group.tokens if t not in raw]
    if missing:
        raise DataError(f"missing log-probabilities for {missing} in group {group.value}")
    values = [raw[t] for t in group.tokens]
    finite = [v for v in values if not math.isinf(v)]
    if not finite:
        raise DataError(f"all log-probabilities are -inf for group {group.value}")
    if any(math.isnan(v) or v == math.inf for v in values):
        raise DataError(f"log-probabilities must be finite or -inf for group {group.value}")
    peak = max(finite)
    exps = [math.exp(v - peak) if not math.isinf(v) else 0.0 for v in values]
    total = sum(exps)
    return GroupScores(group=group, probs={t: e / total for t, e in zip(group.tokens, exps)})


def desirable_score(gs: GroupScores) -> float:
    """Probability of the group's most desirable token."""
    token = gs.group.most_desirable
    if token is None:
        raise DataError("the retrieval decision group has no desirability score")
    return gs.probs[token]


def weighted_score(gs: GroupScores) -> float:
    """Partial-credit alternative: expected quality over the group's scale.

    Groundedness credits partial support at half weight; utility maps the
    1-5 scale linearly onto [0,1].
    """
    if gs.group is TokenGroup.RELEVANCE:
        return gs.probs[RELEVANT]
    if gs.group is TokenGroup.GROUNDEDNESS:
        return gs.probs[FULLY_SUPPORTED] + 0.5 * gs.probs[PARTIALLY_SUPPORTED]
    if gs.group is TokenGroup.UTILITY:
        return sum(gs.probs[t] * (n - 1) / 4.0 for n, t in enumerate(UTILITY_TOKENS, start=1))
    raise DataError("the retrieval decision group has no desirability score")


def group_score(gs: GroupScores, mode: GroupScoreMode = GroupScoreMode.MOST_DESIRABLE) -> float:
    return desirable_score(gs) if mode is GroupScoreMode.MOST_DESIRABLE else weighted_score(gs)


def compose_score(p_norm: float, s_rel: float, s_grd: float, s_utl: float, w: ScoringWeights) -> float:
    """Linear combination of sequence probability and the three group scores."""
    return p_norm + w.w1 * s_rel + w.w2 * s_grd + w.w3 * s_utl


@dataclass(frozen=True)
class CandidateScore:
    p_norm: float
    s_rel: float
    s_grd: float
    s_utl: float
    composite: float
    # True when the backend could not report sequence log-probabilities and
    # p_norm is the configured fallback constant.
    p_unavailable: bool = False

    @classmethod
    def compute(
        cls,
        p_norm: float,
        s_rel: float,
        s_grd: float,
        s_utl: float,
        w: ScoringWeights,
        p_unavailable: bool = False,
    ) -> "CandidateScore":
        return cls(
            p_norm=p_norm,
            s_rel=s_rel,
            s_grd=s_grd,
            s_utl=s_utl,
            composite=compose_score(p_norm, s_rel, s_grd, s_utl, w),
            p_unavailable=p_unavailable,
        )

    def to_dict(self) -> dict:
        d = {
            "p_norm": self.p_norm,
            "s_rel": self.s_rel,
            "s_grd": self.s_grd,
            "s_utl": self.s_utl,
            "composite": self.composite,
        }
        if self.p_unavailable:
            d["p_unavailable"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateScore":
        return cls(
            p_norm=d["p_norm"],
            s_rel=d["s_rel"],
            s_grd=d["s_grd"],
            s_utl=d["s_utl"],
            composite=d["composite"],
            p_unavailable=bool(d.get("p_unavailable", False)),
        )


@dataclass(frozen=True)
class TokenOccurrence:
    token: str
    # Character offset into the segment's stripped text where the token sat.
    position: int
    # Character span of the token in the original annotated string.
    source_span: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class Segment:
    text: str
    tokens: tuple[TokenOccurrence, ...]
    # Span of this segment in the original annotated string (inclusive, exclusive).
    span: tuple[int, int]


@dataclass(frozen=True)
class AnnotatedOutput:
    segments: tuple[Segment, ...]

    def plain_text(self) -> str:
        return "".join(s.text for s in self.segments)

    def all_tokens(self) -> list[str]:
        return [occ.token for s in self.segments for occ in s.tokens]


_BRACKET_RE = re.compile(r"\[[^\[\]]*\]")


def parse_annotated(text: str) -> AnnotatedOutput:
    """Split annotated generator output into segments and reflection tokens.

    Bracketed spans matching the vocabulary are extracted; anything else stays
    literal text. A groundedness token closes the current segment: trailing
    tokens and whitespace still attach to it, and the next non-whitespace
    literal opens a new segment. Lenient by design, this never raises.
    """
    segments: list[Segment] = []
    cur_text: list[str] = []
    cur_tokens: list[TokenOccurrence] = []
    cur_len = 0
    cur_start = 0
    closed = False
    pos = 0

    def flush(end: int) -> None:
        nonlocal cur_text, cur_tokens, cur_len, closed
        segments.append(Segment(text="".join(cur_text), tokens=tuple(cur_tokens), span=(cur_start, end)))
        cur_text, cur_tokens, cur_len, closed = [], [], 0, False

    def add_literal(chunk: str, start: int) -> None:
        nonlocal cur_len, cur_start
        if not chunk:
            return
        if closed and chunk.strip():
            flush(start)
            cur_start = start
        cur_text.append(chunk)
        cur_len += len(chunk)

    for match in _BRACKET_RE.finditer(text):
        token = match.group(0)
        canonical = TOKEN_ALIASES.get(token, token)
        if canonical not in _TOKEN_TO_GROUP:
            continue  # unknown bracketed span: stays literal, handled below
        add_literal(text[pos:match.start()], pos)
        cur_tokens.append(
            TokenOccurrence(token=canonical, position=cur_len, source_span=(match.start(), match.end()))
        )
        if _TOKEN_TO_GROUP[canonical] is TokenGroup.GROUNDEDNESS:
            closed = True
        pos = match.end()
    add_literal(text[pos:], pos)

    if cur_text or cur_tokens or not segments:
        flush(len(text))
    return AnnotatedOutput(segments=tuple(segments))
