"""Prompt rendering for the turn pipeline.

Every prompt starts with a distinct "Task:" line so scripted backends can
match requests unambiguously, and passage blocks carry their ids for the same
reason. Few-shot judge templates used for label collection live in datagen;
these are the lean inference-time prompts.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .core import Conversation, Passage


def render_history(conv: Conversation) -> str:
    return "\n".join(f"{turn.role.value}: {turn.text}" for turn in conv.turns)


def render_passage(passage: Passage) -> str:
    header = f"Passage (id={passage.id}):"
    if passage.title:
        header += f" {passage.title}"
    return f"{header}\n{passage.text}"


def render_decision_prompt(history: Conversation, prior_passages: Sequence[Passage]) -> str:
    parts = [
        "Task: retrieval-decision",
        "Decide whether answering the latest user message needs newly retrieved passages.",
        "Reply with exactly one of [Retrieve], [No Retrieve], [Continue to Use Evidence].",
        "",
        "Conversation:",
        render_history(history),
    ]
    if prior_passages:
        parts.append("")
        parts.append("Evidence already in the conversation:")
        parts.extend(render_passage(p) for p in prior_passages)
    return "\n".join(parts)


def render_generation_prompt(
    history: Conversation, passage: Optional[Passage], response_so_far: str
) -> str:
    parts = [
        "Task: respond",
        "Continue the assistant's answer to the latest user message.",
        "",
        "Conversation:",
        render_history(history),
    ]
    if passage is not None:
        parts.extend(["", render_passage(passage)])
    parts.extend(["", "Response so far:", response_so_far if response_so_far else "(none)"])
    return "\n".join(parts)


def render_relevance_prompt(history: Conversation, passage: Passage) -> str:
    return "\n".join(
        [
            "Task: judge-relevance",
            "Is the passage relevant and useful for answering the latest user message?",
            "Reply [Relevant] or [Non Relevant].",
            "",
            "Conversation:",
            render_history(history),
            "",
            render_passage(passage),
        ]
    )


def render_groundedness_prompt(
    history: Conversation, passage: Passage, response_so_far: str, segment_text: str
) -> str:
    return "\n".join(
        [
            "Task: judge-groundedness",
            "Is the response segment supported by the passage?",
            "Reply [Fully supported], [Partially supported] or [No support].",
            "",
            "Conversation:",
            render_history(history),
            "",
            render_passage(passage),
            "",
            "Response so far:",
            response_so_far if response_so_far else "(none)",
            "",
            "Segment:",
            segment_text,
        ]
    )


def render_utility_prompt(history: Conversation, response_text: str) -> str:
    return "\n".join(
        [
            "Task: judge-utility",
            "Rate how useful the assistant response is for the conversation,",
            "from [Utility:1] (lowest) to [Utility:5] (highest).",
            "",
            "Conversation:",
            render_history(history),
            "",
            "Response:",
            response_text,
        ]
    )


def render_rewrite_prompt(history: Conversation) -> str:
    return "\n".join(
        [
            "Task: rewrite-query",
            "Rewrite the conversation into one self-contained search question.",
            "",
            "Conversation:",
            render_history(history),
        ]
    )
