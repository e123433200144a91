"""Shared scripted fixtures: the Retrieve scenario over the three-doc corpus,
the reuse-prior-evidence scenario, the no-retrieval scenario, and the planted
benchmark where only early turns carry the gold passage's terms.
"""

from __future__ import annotations

import math

from convrag.backend import ScriptedBackend, script_from_rules
from convrag.core import Conversation, Role, Turn
from convrag.retrieval import Corpus, ingest_corpus

TOY_DOCS = [
    {"id": "d1", "title": "", "text": "boer war gold mining"},
    {"id": "d2", "title": "", "text": "boer commandos volunteer militia"},
    {"id": "d3", "title": "", "text": "olmec civilization origins"},
]

# Hand-checked expectations for the shared Retrieve scenario (w = 1, 1, 0.5).
D2_P_NORM = math.exp(-0.075)
D2_S_REL = math.exp(-0.5) / (math.exp(-0.5) + math.exp(-1.5))
D2_TOTAL = D2_P_NORM + D2_S_REL + 1.0 + 0.5 * 0.2
D1_P_NORM = math.exp(-0.3)
D1_S_REL = math.exp(-1.5) / (math.exp(-0.5) + math.exp(-1.5))
D1_TOTAL = D1_P_NORM + D1_S_REL + 0.0 + 0.5 * 0.2


def toy_corpus() -> Corpus:
    return ingest_corpus(TOY_DOCS)


def uniform_utility() -> dict:
    return {f"[Utility:{n}]": -1.0 for n in range(1, 6)}


def retrieve_rules() -> list[dict]:
    """Script for one turn that retrieves [d2, d1] and selects the d2 candidate."""
    return [
        {
            "match": "Task: retrieval-decision",
            "kind": "score",
            "payload": {"[Retrieve]": -0.1, "[No Retrieve]": -3.0, "[Continue to Use Evidence]": -3.0},
        },
        {
            "match": "summarise the conversation history",
            "kind": "generate",
            "payload": {
                "text": "Summary: Boer commandos. Question: What were they?",
                "tokens": [["Summary: Boer commandos.", -0.2], [" Question: What were they?", -0.1]],
            },
        },
        {
            "match": "(id=d2)",
            "kind": "generate",
            "payload": {
                "text": "The Boer commandos were volunteer militia units.",
                "tokens": [["The Boer commandos", -0.1], [" were volunteer militia units.", -0.05]],
            },
        },
        {
            "match": "(id=d1)",
            "kind": "generate",
            "payload": {
                "text": "The war was about gold mining control.",
                "tokens": [["The war was about gold mining control.", -0.3]],
            },
        },
        {
            "match": r"judge-relevance.*id=d2",
            "regex": True,
            "kind": "score",
            "payload": {"[Relevant]": -0.5, "[Non Relevant]": -1.5},
        },
        {
            "match": r"judge-relevance.*id=d1",
            "regex": True,
            "kind": "score",
            "payload": {"[Relevant]": -1.5, "[Non Relevant]": -0.5},
        },
        {
            "match": r"judge-groundedness.*id=d2",
            "regex": True,
            "kind": "score",
            "payload": {"[Fully supported]": 0.0, "[Partially supported]": "-inf", "[No support]": "-inf"},
        },
        {
            "match": r"judge-groundedness.*id=d1",
            "regex": True,
            "kind": "score",
            "payload": {"[Fully supported]": "-inf", "[Partially supported]": "-inf", "[No support]": 0.0},
        },
        {"match": "Task: judge-utility", "kind": "score", "payload": uniform_utility()},
    ]


def retrieve_backend() -> ScriptedBackend:
    return ScriptedBackend(script_from_rules(retrieve_rules()))


RETRIEVE_QUESTION = "How did the Boer war start?"


def figure_one_conversation() -> Conversation:
    """History whose first answer already carries the passage that answers the
    follow-up, so no new retrieval is needed."""
    return Conversation(
        id="fig1",
        turns=(
            Turn(role=Role.USER, text="How did the Boer war start?"),
            Turn(
                role=Role.ASSISTANT,
                text="The contest was over control of the gold mining complex.",
                attached_passage_ids=("d1",),
            ),
        ),
    )


FIGURE_ONE_QUESTION = "What was the war really about?"


def figure_one_rules() -> list[dict]:
    return [
        {
            "match": "Evidence already in the conversation",
            "kind": "score",
            "payload": {"[Continue to Use Evidence]": -0.1, "[Retrieve]": -2.0, "[No Retrieve]": -3.0},
        },
        {
            "match": "(id=d1)",
            "kind": "generate",
            "payload": {
                "text": "It was fought over the gold mining complex.",
                "tokens": [["It was fought over the gold mining complex.", -0.2]],
            },
        },
        {
            "match": r"judge-relevance.*id=d1",
            "regex": True,
            "kind": "score",
            "payload": {"[Relevant]": -0.3, "[Non Relevant]": -1.8},
        },
        {
            "match": r"judge-groundedness.*id=d1",
            "regex": True,
            "kind": "score",
            "payload": {"[Fully supported]": 0.0, "[Partially supported]": "-inf", "[No support]": "-inf"},
        },
        {"match": "Task: judge-utility", "kind": "score", "payload": uniform_utility()},
    ]


def figure_one_backend() -> ScriptedBackend:
    return ScriptedBackend(script_from_rules(figure_one_rules()))


NO_RETRIEVE_QUESTION = "Write a short haiku about rivers."


def no_retrieve_rules() -> list[dict]:
    return [
        {
            "match": "Task: retrieval-decision",
            "kind": "score",
            "payload": {"[No Retrieve]": -0.1, "[Retrieve]": -3.0, "[Continue to Use Evidence]": -3.0},
        },
        {
            "match": "Task: respond",
            "kind": "generate",
            "payload": {
                "text": "Rivers carve the stone.",
                "tokens": [["Rivers carve the stone.", -0.15]],
            },
        },
        {"match": "Task: judge-utility", "kind": "score", "payload": uniform_utility()},
    ]


def no_retrieve_backend() -> ScriptedBackend:
    return ScriptedBackend(script_from_rules(no_retrieve_rules()))


PLANTED_DOCS = [
    {"id": "g1", "title": "", "text": "zanthor crystal mining asteroid operations"},
    {"id": "x1", "title": "", "text": "coastal weather patterns and seasonal storms"},
    {"id": "x2", "title": "", "text": "sourdough bread fermentation techniques"},
    {"id": "x3", "title": "", "text": "violin bow maintenance and rosin care"},
    {"id": "x4", "title": "", "text": "marathon training schedules for beginners"},
    {"id": "x5", "title": "", "text": "ancient pottery kiln firing methods"},
]

PLANTED_SUMMARY = (
    "Summary: The user asked about zanthor crystal mining on asteroids."
    " Question: What happened after the zanthor mining boom?"
)


def planted_benchmark_record() -> dict:
    """One conversation whose final question's gold terms appear only in the
    earlier turns: last-turn queries must miss, whole-history queries must hit."""
    return {
        "id": "planted",
        "turns": [
            {"role": "user", "text": "Tell me about zanthor crystal mining on asteroids."},
            {"role": "assistant", "text": "Zanthor crystal mining expanded across asteroid belts."},
            {"role": "user", "text": "What happened after that?", "gold_passage_ids": ["g1"]},
        ],
    }


def planted_corpus() -> Corpus:
    return ingest_corpus(PLANTED_DOCS)


def planted_rules() -> list[dict]:
    return [
        {
            "match": "summarise the conversation history",
            "kind": "generate",
            "payload": {"text": PLANTED_SUMMARY},
        },
        {
            "match": "Task: rewrite-query",
            "kind": "generate",
            "payload": {"text": "What happened after the zanthor mining boom?"},
        },
    ]


def planted_backend() -> ScriptedBackend:
    return ScriptedBackend(script_from_rules(planted_rules()))


def judge_69_31_rules(n: int = 100, n_positive: int = 69) -> list[dict]:
    rules = []
    for i in range(n):
        label = "[Retrieval]" if i < n_positive else "[No Retrieval]"
        rules.append(
            {
                "match": f"instance {i:03d}",
                "kind": "generate",
                "payload": {"text": f"GPT-4-Rating: {label}"},
            }
        )
    return rules


def single_user_conversation(conv_id: str, text: str) -> Conversation:
    return Conversation(id=conv_id, turns=(Turn(role=Role.USER, text=text),))
