"""Judge-prompt templates, label parsing and label collection.

The few-shot preambles ship as versioned template assets; every dataset
record carries the template content hash so collected data is reproducible
across runs and template edits are detectable.
"""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import IO, Iterable, Optional, Sequence

from .backend.base import Backend, GenerationRequest
from .core import Conversation, Passage, Role
from .errors import BackendError, ConvragError, DataError
from .reflection import (
    CONTINUE_EVIDENCE,
    FULLY_SUPPORTED,
    NO_RETRIEVE,
    NO_SUPPORT,
    NON_RELEVANT,
    PARTIALLY_SUPPORTED,
    RELEVANT,
    RETRIEVE,
    TOKEN_ALIASES,
    UTILITY_TOKENS,
)


class CriticTask(Enum):
    RETRIEVAL2 = "retrieval2"
    RETRIEVAL3 = "retrieval3"
    RELEVANCE = "relevance"
    GROUNDEDNESS = "groundedness"
    UTILITY = "utility"
    SUMMARIZATION = "summarization"
    JUDGE_EVAL = "judge_eval"

    @property
    def alphabet(self) -> tuple[str, ...]:
        """Canonical labels the task can produce; empty for free-text tasks."""
        return _ALPHABETS[self]

    @property
    def required_fields(self) -> tuple[str, ...]:
        return _REQUIRED[self]


_ALPHABETS: dict[CriticTask, tuple[str, ...]] = {
    CriticTask.RETRIEVAL2: (RETRIEVE, NO_RETRIEVE),
    CriticTask.RETRIEVAL3: (RETRIEVE, NO_RETRIEVE, CONTINUE_EVIDENCE),
    CriticTask.RELEVANCE: (RELEVANT, NON_RELEVANT),
    CriticTask.GROUNDEDNESS: (FULLY_SUPPORTED, PARTIALLY_SUPPORTED, NO_SUPPORT),
    CriticTask.UTILITY: UTILITY_TOKENS,
    CriticTask.SUMMARIZATION: (),
    CriticTask.JUDGE_EVAL: tuple(str(n) for n in range(6)),
}

_REQUIRED: dict[CriticTask, tuple[str, ...]] = {
    CriticTask.RETRIEVAL2: ("conversation",),
    CriticTask.RETRIEVAL3: ("conversation", "evidence", "response"),
    CriticTask.RELEVANCE: ("conversation", "evidence"),
    CriticTask.GROUNDEDNESS: ("conversation", "evidence", "response"),
    CriticTask.UTILITY: ("conversation", "response"),
    CriticTask.SUMMARIZATION: ("conversation",),
    CriticTask.JUDGE_EVAL: ("conversation", "response"),
}


@dataclass(frozen=True)
class TaskInstance:
    conversation: Conversation
    evidence: Optional[Passage] = None
    response: Optional[str] = None
    preceding: Optional[str] = None
    # Opaque provenance tag carried through to the dataset record.
    source: Optional[str] = None

    def to_dict(self) -> dict:
        d: dict = {"conversation": self.conversation.to_dict()}
        if self.evidence is not None:
            d["evidence"] = self.evidence.to_dict()
        if self.response is not None:
            d["response"] = self.response
        if self.preceding is not None:
            d["preceding"] = self.preceding
        if self.source is not None:
            d["source"] = self.source
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskInstance":
        if "conversation" not in d:
            raise DataError("instance record missing conversation")
        evidence = d.get("evidence")
        return cls(
            conversation=Conversation.from_dict(d["conversation"]),
            evidence=Passage.from_dict(evidence) if evidence else None,
            response=d.get("response"),
            preceding=d.get("preceding"),
            source=d.get("source"),
        )


def template_text(task: CriticTask) -> str:
    return resources.files("convrag.templates").joinpath(f"{task.value}.txt").read_text("utf-8")


def template_hash(task: CriticTask) -> str:
    return hashlib.sha256(template_text(task).encode("utf-8")).hexdigest()


def _check_fields(task: CriticTask, instance: TaskInstance) -> None:
    for name in task.required_fields:
        if getattr(instance, name) is None:
            raise DataError(f"{name} required for {task.value}")
    if not instance.conversation.turns:
        raise DataError(f"conversation required for {task.value}")


def _render_conversation_block(conv: Conversation) -> str:
    return "\n\n".join(turn.text for turn in conv.turns)


def _render_instance(task: CriticTask, instance: TaskInstance) -> str:
    parts = ["Conversation History", _render_conversation_block(instance.conversation)]
    if task is CriticTask.RETRIEVAL3:
        if instance.preceding:
            parts.append(f"Preceding sentences: {instance.preceding}")
        parts.append(f"Evidence: {instance.evidence.index_text()}")
        parts.append(f"Response: {instance.response}")
    elif task is CriticTask.RELEVANCE:
        parts.append(f"Evidence: {instance.evidence.index_text()}")
    elif task is CriticTask.GROUNDEDNESS:
        parts.append(f"Response: {instance.response}")
        parts.append(f"Evidence: {instance.evidence.index_text()}")
    elif task is CriticTask.UTILITY:
        parts.append(f"Response: {instance.response}")
    return "\n\n".join(parts)


def render_prompt(task: CriticTask, instance: TaskInstance) -> str:
    """Fixed few-shot preamble plus the instance in the exemplars' layout."""
    _check_fields(task, instance)
    template = template_text(task)
    if task is CriticTask.JUDGE_EVAL:
        question = instance.conversation.last_user_text
        # The last question and the answer under judgment are presented
        # separately from the preceding history.
        turns = instance.conversation.turns
        last_user = max(i for i, t in enumerate(turns) if t.role is Role.USER) if question else 0
        rendered = "\n".join(f"{t.role.value}: {t.text}" for t in turns[:last_user])
        return (
            template.replace("{conversation}", rendered)
            .replace("{question}", question)
            .replace("{response}", instance.response or "")
        )
    return template.rstrip("\n") + "\n\n" + _render_instance(task, instance) + "\n"


_BRACKET_RE = re.compile(r"\[[^\[\]]*\]")
_INT_RE = re.compile(r"\d+")
_ANSWER_LINE = ("gpt-4-rating", "rating", "perceived utility")


def _integer_label(task: CriticTask, space: str) -> Optional[str]:
    low, high = (1, 5) if task is CriticTask.UTILITY else (0, 5)
    for match in _INT_RE.finditer(space):
        value = int(match.group(0))
        if low <= value <= high:
            return f"[Utility:{value}]" if task is CriticTask.UTILITY else str(value)
    return None


def parse_judge_label(task: CriticTask, text: str) -> str:
    """Extract the task's label from a judge reply.

    Scans the whole reply but prefers an answer line ("Rating", "GPT-4-Rating",
    "Perceived utility"); bracketed tokens are canonicalized through the alias
    table; utility and overall-score replies may answer with a bare integer.
    """
    if task is CriticTask.SUMMARIZATION:
        stripped = text.strip()
        if not stripped:
            raise DataError("no parseable label: empty summarization output")
        return stripped

    spaces = [
        line for line in text.splitlines() if line.strip().lower().startswith(_ANSWER_LINE)
    ]
    spaces.append(text)
    for space in spaces:
        for match in _BRACKET_RE.finditer(space):
            canonical = TOKEN_ALIASES.get(match.group(0), match.group(0))
            if canonical in task.alphabet:
                return canonical
        if task in (CriticTask.UTILITY, CriticTask.JUDGE_EVAL):
            label = _integer_label(task, space)
            if label is not None:
                return label
    raise DataError(f"no parseable label for {task.value} in reply: {text!r}")


@dataclass(frozen=True)
class LabeledInstance:
    task: CriticTask
    instance: TaskInstance
    label: Optional[str]
    raw_judge_output: str
    failed: bool = False
    error: Optional[str] = None
    template_hash: str = ""
    judge_id: str = ""

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            **self.instance.to_dict(),
            "label": self.label,
            "raw_judge_output": self.raw_judge_output,
            "failed": self.failed,
            "error": self.error,
            "template_hash": self.template_hash,
            "judge_id": self.judge_id,
        }


@dataclass
class LabelStats:
    task: CriticTask
    n_total: int = 0
    n_failed: int = 0
    counts: dict = field(default_factory=dict)

    @property
    def n_labeled(self) -> int:
        return self.n_total - self.n_failed

    def percentages(self) -> dict[str, float]:
        if not self.n_labeled:
            return {}
        return {label: 100.0 * c / self.n_labeled for label, c in sorted(self.counts.items())}

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "n_total": self.n_total,
            "n_labeled": self.n_labeled,
            "n_failed": self.n_failed,
            "counts": dict(sorted(self.counts.items())),
            "percentages": self.percentages(),
        }

    def render_table(self) -> str:
        lines = ["task\tinstances\ttoken\tpercentage"]
        for label, pct in self.percentages().items():
            lines.append(f"{self.task.value}\t{self.n_labeled}\t{label}\t{pct:.1f}%")
        if self.n_failed:
            lines.append(f"{self.task.value}\t{self.n_failed}\t(unparseable)\t-")
        return "\n".join(lines)


class CollectAborted(ConvragError):
    """Judge backend became unreachable; carries the labels gathered so far."""

    def __init__(self, message: str, partial: list[LabeledInstance]):
        super().__init__(message)
        self.partial = partial


def collect_labels(
    judge: Backend,
    task: CriticTask,
    instances: Sequence[TaskInstance],
    parallelism: int = 1,
    max_tokens: int = 256,
) -> tuple[list[LabeledInstance], LabelStats]:
    """Render, call the judge and parse each instance, in input order.

    Parse failures are retained as failure-marked records, never dropped;
    an unreachable judge aborts with the partial results attached.
    """
    digest = template_hash(task)
    judge_id = getattr(judge, "identity", type(judge).__name__)

    def one(instance: TaskInstance) -> LabeledInstance:
        prompt = render_prompt(task, instance)
        reply = judge.generate(GenerationRequest(prompt=prompt, max_tokens=max_tokens))
        try:
            label = parse_judge_label(task, reply.text)
            return LabeledInstance(
                task=task,
                instance=instance,
                label=label,
                raw_judge_output=reply.text,
                template_hash=digest,
                judge_id=judge_id,
            )
        except DataError as exc:
            return LabeledInstance(
                task=task,
                instance=instance,
                label=None,
                raw_judge_output=reply.text,
                failed=True,
                error=str(exc),
                template_hash=digest,
                judge_id=judge_id,
            )

    labeled: list[LabeledInstance] = []
    try:
        if parallelism > 1:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                labeled = list(pool.map(one, instances))
        else:
            for instance in instances:
                labeled.append(one(instance))
    except BackendError as exc:
        raise CollectAborted(str(exc), partial=labeled) from exc

    stats = LabelStats(task=task, n_total=len(labeled))
    for record in labeled:
        if record.failed:
            stats.n_failed += 1
        else:
            stats.counts[record.label] = stats.counts.get(record.label, 0) + 1
    return labeled, stats


def read_instances(stream: IO[str] | Iterable[str]) -> list[TaskInstance]:
    instances = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            instances.append(TaskInstance.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataError(f"instances line {lineno}: {exc}") from exc
    return instances


def write_dataset(records: Iterable[LabeledInstance], stream: IO[str]) -> None:
    for record in records:
        stream.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
