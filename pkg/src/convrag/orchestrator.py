"""The per-turn pipeline: decide whether to retrieve, summarize the
conversation into a query when retrieving, generate one candidate response
per passage, score candidates with reflection-token probabilities, and pick
the best one by segment-level beam search.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Protocol, Sequence

from .backend.base import (
    NEG_INF,
    Backend,
    Generation,
    GenerationRequest,
    ScoreRequest,
)
from .core import (
    Conversation,
    GroupScoreMode,
    Passage,
    PipelineConfig,
    Role,
    Turn,
    validate_config,
    validate_conversation,
)
from .errors import BackendError, DataError, PipelineError
from .prompts import (
    render_decision_prompt,
    render_generation_prompt,
    render_groundedness_prompt,
    render_relevance_prompt,
    render_utility_prompt,
)
from .reflection import (
    CONTINUE_EVIDENCE,
    NO_RETRIEVE,
    RETRIEVE,
    CandidateScore,
    GroupScores,
    TokenGroup,
    group_score,
    normalize_group,
    parse_annotated,
)
from .retrieval import Bm25Index, Corpus, DenseIndex, RankedList, bm25_search, dense_search
from .retrieval.dense import EmbeddingBackend


class RetrievalChoice(str, Enum):
    RETRIEVE = "Retrieve"
    NO_RETRIEVE = "NoRetrieve"
    CONTINUE = "ContinueToUseEvidence"


_CHOICE_BY_TOKEN = {
    RETRIEVE: RetrievalChoice.RETRIEVE,
    NO_RETRIEVE: RetrievalChoice.NO_RETRIEVE,
    CONTINUE_EVIDENCE: RetrievalChoice.CONTINUE,
}

# Tie order when decision probabilities are exactly equal.
_DECISION_PRIORITY = (RETRIEVE, CONTINUE_EVIDENCE, NO_RETRIEVE)


@dataclass(frozen=True)
class RetrievalDecision:
    choice: RetrievalChoice
    group_scores: GroupScores

    def to_dict(self) -> dict:
        return {"choice": self.choice.value, "probs": dict(self.group_scores.probs)}


@dataclass(frozen=True)
class RetrievalQuery:
    summary: str
    question: str
    combined: str

    @classmethod
    def from_parts(cls, summary: str, question: str) -> "RetrievalQuery":
        return cls(summary=summary, question=question, combined=f"{summary} {question}")

    @classmethod
    def fallback(cls, text: str) -> "RetrievalQuery":
        """Marker-free generator output: the whole text becomes the query."""
        return cls(summary="", question="", combined=text)

    def to_dict(self) -> dict:
        return {"summary": self.summary, "question": self.question, "combined": self.combined}

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalQuery":
        return cls(summary=d["summary"], question=d["question"], combined=d["combined"])


@dataclass(frozen=True)
class CandidateSegment:
    text: str
    score: CandidateScore

    def to_dict(self) -> dict:
        return {"text": self.text, "score": self.score.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSegment":
        return cls(text=d["text"], score=CandidateScore.from_dict(d["score"]))


@dataclass(frozen=True)
class CandidateResponse:
    passage: Optional[Passage]
    segments: tuple[CandidateSegment, ...]
    total: float
    rank: int
    failed: bool = False
    error: Optional[str] = None

    def text(self) -> str:
        return "".join(s.text for s in self.segments)

    def breakdown(self) -> dict:
        """Per-candidate display values: mean of each component over segments."""
        if not self.segments:
            return {"p_norm": 0.0, "s_rel": 0.0, "s_grd": 0.0, "s_utl": 0.0}
        n = len(self.segments)
        return {
            "p_norm": sum(s.score.p_norm for s in self.segments) / n,
            "s_rel": sum(s.score.s_rel for s in self.segments) / n,
            "s_grd": sum(s.score.s_grd for s in self.segments) / n,
            "s_utl": sum(s.score.s_utl for s in self.segments) / n,
        }

    def to_dict(self) -> dict:
        return {
            "passage_id": self.passage.id if self.passage else None,
            "rank": self.rank,
            "failed": self.failed,
            "error": self.error,
            "segments": [s.to_dict() for s in self.segments],
            "total": self.total,
            "text": self.text(),
            "breakdown": self.breakdown(),
        }


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "payload": self.payload}


@dataclass(frozen=True)
class TurnResult:
    decision: RetrievalDecision
    query: Optional[RetrievalQuery]
    retrieved: RankedList
    candidates: tuple[CandidateResponse, ...]
    selected_index: int
    events: tuple[Event, ...]

    @property
    def selected(self) -> CandidateResponse:
        return self.candidates[self.selected_index]

    def to_dict(self) -> dict:
        return {
            "decision": self.decision.to_dict(),
            "query": self.query.to_dict() if self.query else None,
            "retrieved": self.retrieved.to_list(),
            "candidates": [c.to_dict() for c in self.candidates],
            "selected_index": self.selected_index,
            "selected_text": self.selected.text(),
            "events": [e.to_dict() for e in self.events],
        }


EventSink = Callable[[Event], None]


class Retriever(Protocol):
    kind: str
    calls: int

    def search(self, query: str, k: int) -> RankedList:
        ...


class Bm25Retriever:
    kind = "bm25"

    def __init__(self, index: Bm25Index):
        self.index = index
        self.calls = 0
        self._lock = threading.Lock()

    def search(self, query: str, k: int) -> RankedList:
        with self._lock:
            self.calls += 1
        return bm25_search(self.index, query, k)


class DenseRetriever:
    kind = "dense"

    def __init__(self, embedder: EmbeddingBackend, index: DenseIndex):
        self.embedder = embedder
        self.index = index
        self.calls = 0
        self._lock = threading.Lock()

    def search(self, query: str, k: int) -> RankedList:
        with self._lock:
            self.calls += 1
        return dense_search(self.embedder, self.index.corpus, query, k, index=self.index)


def gather_prior_passages(
    conv: Conversation, corpus: Corpus, window: int = 2, cap: Optional[int] = None
) -> list[Passage]:
    """Passages already in the conversation context, most recent first.

    Walks back over the last `window` assistant turns; user-attached passages
    (a passage pasted into a question) count the same as assistant-attached
    ones. Capped at `cap` when given.
    """
    ids: list[str] = []
    seen: set[str] = set()
    assistants = 0
    for turn in reversed(conv.turns):
        if turn.role is Role.ASSISTANT:
            assistants += 1
            if assistants > window:
                break
        for pid in turn.attached_passage_ids:
            if pid not in seen:
                seen.add(pid)
                ids.append(pid)
    if cap is not None:
        ids = ids[:cap]
    return corpus.resolve(ids)


def decide_retrieval(
    history: Conversation, prior_passages: Sequence[Passage], backend: Backend
) -> RetrievalDecision:
    """Score the three decision tokens and take the argmax.

    [Continue to Use Evidence] is only eligible when prior passages exist;
    without them its raw score is masked to -inf before normalization.
    """
    prompt = render_decision_prompt(history, prior_passages)
    raw = backend.score_continuations(
        ScoreRequest(prompt=prompt, candidates=TokenGroup.RETRIEVAL3.tokens)
    )
    if not prior_passages:
        raw = dict(raw)
        raw[CONTINUE_EVIDENCE] = NEG_INF
    scores = normalize_group(raw, TokenGroup.RETRIEVAL3)
    best = max(scores.probs.values())
    for token in _DECISION_PRIORITY:
        if scores.probs[token] == best:
            return RetrievalDecision(choice=_CHOICE_BY_TOKEN[token], group_scores=scores)
    raise PipelineError("unreachable: no decision token at max probability")


def summarize_for_retrieval(
    history: Conversation, backend: Backend, max_tokens: int = 256
) -> RetrievalQuery:
    """Generate a conversation summary plus a question and join them into the
    retrieval query. Marker-free output falls back to the whole text."""
    from .datagen import CriticTask, TaskInstance, render_prompt

    prompt = render_prompt(CriticTask.SUMMARIZATION, TaskInstance(conversation=history))
    generation = backend.generate(GenerationRequest(prompt=prompt, max_tokens=max_tokens))
    text = generation.text.strip()
    if not text:
        raise PipelineError("empty query: summarizer returned no text")
    import re

    match = re.search(r"summary\s*:\s*(.*?)\s*question\s*:\s*(.*)", text, re.IGNORECASE | re.DOTALL)
    if match:
        return RetrievalQuery.from_parts(match.group(1).strip(), match.group(2).strip())
    return RetrievalQuery.fallback(text)


def _segment_p_norms(generation: Generation, parsed, p_unavailable: float) -> list[tuple[float, bool]]:
    """Length-normalized probability per parsed segment.

    Generation tokens are assigned to segments by their first character's
    offset; tokens that sit inside a reflection-marker span are the marker
    itself and count toward no segment. Segments without any generation token
    fall back to the configured constant and are flagged.
    """
    import math

    if not generation.logprobs_available:
        return [(p_unavailable, True) for _ in parsed.segments]
    marker_spans = [occ.source_span for seg in parsed.segments for occ in seg.tokens]
    spans = [seg.span for seg in parsed.segments]
    per_segment: list[list[float]] = [[] for _ in parsed.segments]
    offset = 0
    for tok, lp in generation.token_logprobs:
        start = offset
        offset += len(tok)
        if any(a <= start < b for a, b in marker_spans):
            continue
        for i, (a, b) in enumerate(spans):
            if a <= start < b:
                per_segment[i].append(lp)
                break
    out: list[tuple[float, bool]] = []
    for lps in per_segment:
        if not lps:
            out.append((p_unavailable, True))
        elif any(math.isinf(lp) for lp in lps):
            out.append((0.0, False))
        else:
            out.append((math.exp(sum(lps) / len(lps)), False))
    return out


def _score_group(
    backend: Backend, prompt: str, group: TokenGroup, mode: GroupScoreMode
) -> float:
    raw = backend.score_continuations(ScoreRequest(prompt=prompt, candidates=group.tokens))
    return group_score(normalize_group(raw, group), mode)


def _generate_one(
    history: Conversation,
    passage: Optional[Passage],
    rank: int,
    cfg: PipelineConfig,
    backend: Backend,
) -> CandidateResponse:
    prompt = render_generation_prompt(history, passage, "")
    generation = backend.generate(GenerationRequest(prompt=prompt))
    if not generation.text.strip():
        raise PipelineError(f"candidate {rank}: empty generation")
    parsed = parse_annotated(generation.text)
    p_norms = _segment_p_norms(generation, parsed, cfg.p_unavailable)

    s_rel = 0.0
    if passage is not None:
        s_rel = _score_group(
            backend, render_relevance_prompt(history, passage), TokenGroup.RELEVANCE, cfg.score_mode
        )

    segments: list[CandidateSegment] = []
    so_far = ""
    for i, seg in enumerate(parsed.segments[: cfg.max_segments]):
        s_grd = 0.0
        if passage is not None:
            s_grd = _score_group(
                backend,
                render_groundedness_prompt(history, passage, so_far, seg.text),
                TokenGroup.GROUNDEDNESS,
                cfg.score_mode,
            )
        s_utl = _score_group(
            backend, render_utility_prompt(history, so_far + seg.text), TokenGroup.UTILITY, cfg.score_mode
        )
        p_norm, p_missing = p_norms[i]
        score = CandidateScore.compute(
            p_norm, s_rel if passage is not None else 0.0, s_grd, s_utl, cfg.weights, p_unavailable=p_missing
        )
        segments.append(CandidateSegment(text=seg.text, score=score))
        so_far += seg.text
    return CandidateResponse(
        passage=passage,
        segments=tuple(segments),
        total=sum(s.score.composite for s in segments),
        rank=rank,
    )


def generate_candidates(
    history: Conversation,
    passages: Sequence[Optional[Passage]],
    cfg: PipelineConfig,
    backend: Backend,
) -> list[CandidateResponse]:
    """One candidate per passage (None = the direct, passage-free candidate).

    A failing candidate is kept as a failure marker without aborting its
    siblings; only all-failed aborts the turn. Output order follows passage
    rank."""
    if not passages:
        raise PipelineError("no passages to generate from")
    candidates: list[CandidateResponse] = []
    for rank, passage in enumerate(passages):
        try:
            candidates.append(_generate_one(history, passage, rank, cfg, backend))
        except (BackendError, PipelineError, DataError) as exc:
            candidates.append(
                CandidateResponse(
                    passage=passage,
                    segments=(),
                    total=NEG_INF,
                    rank=rank,
                    failed=True,
                    error=str(exc),
                )
            )
    if all(c.failed for c in candidates):
        raise PipelineError(f"all {len(candidates)} candidates failed: {candidates[0].error}")
    return candidates


@dataclass(frozen=True)
class SegmentChoice:
    """One node of a candidate continuation tree: a scored segment plus the
    alternatives that may follow it. No children means the path is complete."""

    text: str
    score: CandidateScore
    children: tuple["SegmentChoice", ...] = ()


@dataclass(frozen=True)
class BeamPath:
    choices: tuple[SegmentChoice, ...]
    total: float


def beam_select(roots: Sequence[SegmentChoice], beam_size: int) -> BeamPath:
    """Segment-level beam search over a continuation tree.

    Keeps the top `beam_size` partial paths by cumulative composite score at
    each step; completed paths leave the beam and the best completed path
    wins. With beam_size at or above the branching factor everywhere this
    equals exhaustive enumeration. Ties keep expansion order (deterministic).
    """
    if not roots:
        raise PipelineError("beam_select needs at least one candidate")
    if beam_size < 1:
        raise DataError("beam_size must be ≥ 1")
    completed: list[tuple[float, tuple[SegmentChoice, ...]]] = []
    frontier: list[tuple[float, tuple[SegmentChoice, ...]]] = [(0.0, ())]

    def expand(path: tuple[SegmentChoice, ...]) -> Sequence[SegmentChoice]:
        return path[-1].children if path else roots

    while frontier:
        grown: list[tuple[float, tuple[SegmentChoice, ...]]] = []
        for total, path in frontier:
            for child in expand(path):
                new = (total + child.score.composite, path + (child,))
                if child.children:
                    grown.append(new)
                else:
                    completed.append(new)
        grown.sort(key=lambda item: -item[0])
        frontier = grown[:beam_size]

    best_total, best_path = completed[0]
    for total, path in completed[1:]:
        if total > best_total:
            best_total, best_path = total, path
    return BeamPath(choices=best_path, total=best_total)


def select_candidate(
    candidates: Sequence[CandidateResponse], beam_size: int
) -> int:
    """Pick the winning candidate via beam search over candidates-as-branches.

    Each live candidate is a linear chain of segments; the branch point is the
    passage choice at step one, so beam_size below the candidate count prunes
    greedily by first-segment score (documented behavior)."""
    roots: list[SegmentChoice] = []
    root_owner: list[int] = []
    for i, cand in enumerate(candidates):
        if cand.failed or not cand.segments:
            continue
        node: Optional[SegmentChoice] = None
        for seg in reversed(cand.segments):
            node = SegmentChoice(
                text=seg.text, score=seg.score, children=(node,) if node else ()
            )
        assert node is not None
        roots.append(node)
        root_owner.append(i)
    if not roots:
        raise PipelineError("no live candidates to select from")
    path = beam_select(roots, beam_size)
    for root, owner in zip(roots, root_owner):
        if path.choices[0] is root:
            return owner
    raise PipelineError("unreachable: beam returned an unknown root")


def run_turn(
    conversation: Conversation,
    user_message: str,
    cfg: PipelineConfig,
    backend: Backend,
    retriever: Retriever,
    corpus: Corpus,
    event_sink: Optional[EventSink] = None,
) -> tuple[TurnResult, Conversation]:
    """Run one full pipeline turn and return the result plus the conversation
    with the user message and selected assistant reply appended.

    Any failure propagates before state is returned, so callers' session
    state stays unchanged on error."""
    cfg_check = validate_config(cfg)
    if not cfg_check.ok:
        raise DataError("invalid pipeline config: " + "; ".join(cfg_check.messages()))
    if not user_message.strip():
        raise DataError("empty user message")

    history = conversation.append(Turn(role=Role.USER, text=user_message))
    check = validate_conversation(history, require_user_last=True)
    if not check.ok:
        raise DataError("invalid conversation: " + "; ".join(check.messages()))

    events: list[Event] = []

    def emit(kind: str, payload: dict) -> None:
        event = Event(seq=len(events), kind=kind, payload=payload)
        events.append(event)
        if event_sink is not None:
            event_sink(event)

    prior = gather_prior_passages(history, corpus, window=cfg.continue_window, cap=cfg.top_k)
    decision = decide_retrieval(history, prior, backend)
    emit("decision", decision.to_dict())

    query: Optional[RetrievalQuery] = None
    retrieved = RankedList(entries=())
    if decision.choice is RetrievalChoice.RETRIEVE:
        query = summarize_for_retrieval(history, backend)
        emit("query", query.to_dict())
        retrieved = retriever.search(query.combined, cfg.top_k)
        emit("retrieved", {"entries": retrieved.to_list()})
        if not retrieved.entries:
            raise PipelineError("retrieval returned no passages")
        passages: list[Optional[Passage]] = list(corpus.resolve(retrieved.ids()))
    elif decision.choice is RetrievalChoice.CONTINUE:
        passages = list(prior)
        if not passages:
            raise PipelineError("continue-to-use-evidence chosen with no prior passages")
    else:
        passages = [None]

    candidates = generate_candidates(history, passages, cfg, backend)
    for cand in candidates:
        emit("candidate", cand.to_dict())

    selected_index = select_candidate(candidates, cfg.beam_size)
    selected = candidates[selected_index]
    emit("selected", {"index": selected_index, "text": selected.text(), "total": selected.total})

    attached = (selected.passage.id,) if selected.passage else ()
    updated = history.append(
        Turn(role=Role.ASSISTANT, text=selected.text(), attached_passage_ids=attached)
    )
    result = TurnResult(
        decision=decision,
        query=query,
        retrieved=retrieved,
        candidates=tuple(candidates),
        selected_index=selected_index,
        events=tuple(events),
    )
    return result, updated
