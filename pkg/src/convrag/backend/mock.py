"""Deterministic scripted backend: the test oracle for the whole pipeline.

A script is an ordered rule list; the first rule whose match hits the prompt
answers the request. Scripts must be exhaustive: an unmatched request is an
error carrying the prompt digest, never a silent default.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from typing import IO, Iterable

from ..errors import DataError, ScriptMissError
from .base import (
    NEG_INF,
    FinishReason,
    Generation,
    GenerationRequest,
    ScoreRequest,
    complete_scores,
    prompt_digest,
    truncate_generation,
)


@dataclass(frozen=True)
class MockRule:
    match: str
    kind: str  # "generate" | "score"
    payload: dict
    regex: bool = False

    def matches(self, prompt: str) -> bool:
        if self.regex:
            return re.search(self.match, prompt, re.DOTALL) is not None
        return self.match in prompt


@dataclass(frozen=True)
class MockScript:
    rules: tuple[MockRule, ...]

    def find(self, prompt: str, kind: str) -> MockRule:
        for rule in self.rules:
            if rule.kind == kind and rule.matches(prompt):
                return rule
        raise ScriptMissError(
            f"no {kind} rule matched the prompt", prompt_digest=prompt_digest(prompt)
        )


def _parse_logprob(value) -> float:
    if value is None or value == "-inf":
        return NEG_INF
    return float(value)


def rule_from_dict(d: dict) -> MockRule:
    try:
        return MockRule(
            match=d["match"],
            kind=d["kind"],
            payload=d["payload"],
            regex=bool(d.get("regex", False)),
        )
    except KeyError as exc:
        raise DataError(f"script rule missing field {exc}") from exc


def load_script(stream: IO[str] | Iterable[str]) -> MockScript:
    """Line-delimited rule records {match, kind, payload, regex?}."""
    rules = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rules.append(rule_from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataError(f"script line {lineno}: {exc}") from exc
    return MockScript(rules=tuple(rules))


def load_script_file(path) -> MockScript:
    with open(path, encoding="utf-8") as fh:
        return load_script(fh)


def script_from_rules(rules: Iterable[dict]) -> MockScript:
    return MockScript(rules=tuple(rule_from_dict(r) for r in rules))


class ScriptedBackend:
    """Pure function of (script, request); repeated calls are byte-identical."""

    def __init__(self, script: MockScript):
        self.script = script
        self._lock = threading.Lock()
        self.generate_calls = 0
        self.score_calls = 0

    def generate(self, req: GenerationRequest) -> Generation:
        with self._lock:
            self.generate_calls += 1
        rule = self.script.find(req.prompt, "generate")
        payload = rule.payload
        text = payload.get("text", "")
        raw_tokens = payload.get("tokens")
        if raw_tokens is None:
            tokens = ((text, _parse_logprob(payload.get("logprob", 0.0))),) if text else ()
        else:
            tokens = tuple((t, _parse_logprob(lp)) for t, lp in raw_tokens)
        generation = Generation(
            text=text,
            token_logprobs=tokens,
            finish=FinishReason(payload.get("finish", "stop")),
        )
        return truncate_generation(generation, req.stop, req.max_tokens)

    def score_continuations(self, req: ScoreRequest) -> dict[str, float]:
        with self._lock:
            self.score_calls += 1
        rule = self.script.find(req.prompt, "score")
        raw = {c: _parse_logprob(lp) for c, lp in rule.payload.items()}
        return complete_scores(raw, req.candidates)
