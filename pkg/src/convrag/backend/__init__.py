"""Language-model backends: contract, scripted mock, remote HTTP client."""

from .base import (
    NEG_INF,
    Backend,
    CallLog,
    FinishReason,
    Generation,
    GenerationRequest,
    ScoreRequest,
    complete_scores,
    prompt_digest,
    sequence_logprob_norm,
    truncate_generation,
)
from .http import RemoteBackend
from .mock import MockRule, MockScript, ScriptedBackend, load_script, load_script_file, script_from_rules

__all__ = [
    "NEG_INF",
    "Backend",
    "CallLog",
    "FinishReason",
    "Generation",
    "GenerationRequest",
    "MockRule",
    "MockScript",
    "RemoteBackend",
    "ScoreRequest",
    "ScriptedBackend",
    "complete_scores",
    "load_script",
    "load_script_file",
    "prompt_digest",
    "script_from_rules",
    "sequence_logprob_norm",
    "truncate_generation",
]
