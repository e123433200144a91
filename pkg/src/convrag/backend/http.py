"""HTTP client for a remote generation service.

Wire protocol: POST {base}/v1/generate with {prompt, max_tokens, stop[],
temperature} returning {text, tokens:[{t, lp}], finish}; POST {base}/v1/score
with {prompt, candidates[]} returning {scores:{candidate: lp}}. A 4xx is
terminal; a 5xx or connection failure retries with exponential backoff up to
the configured limit.
"""

from __future__ import annotations

import logging
import time

import httpx

from ..errors import BackendError
from .base import (
    FinishReason,
    Generation,
    GenerationRequest,
    ScoreRequest,
    complete_scores,
    prompt_digest,
    truncate_generation,
)

logger = logging.getLogger(__name__)


class RemoteBackend:
    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict, digest: str) -> dict:
        url = f"{self.base_url}{path}"
        attempt = 0
        while True:
            try:
                response = self._client.post(url, json=payload)
            except httpx.HTTPError as exc:
                if attempt >= self.retries:
                    raise BackendError(f"backend unreachable: {exc}", prompt_digest=digest) from exc
                logger.warning("backend request failed (%s), retrying", exc)
            else:
                if response.status_code < 400:
                    return response.json()
                if response.status_code < 500:
                    raise BackendError(
                        f"backend rejected request: {response.status_code} {response.text}",
                        prompt_digest=digest,
                    )
                if attempt >= self.retries:
                    raise BackendError(
                        f"backend failed after {attempt + 1} attempts: {response.status_code}",
                        prompt_digest=digest,
                    )
                logger.warning("backend returned %s, retrying", response.status_code)
            time.sleep(self.backoff * (2**attempt))
            attempt += 1

    def generate(self, req: GenerationRequest) -> Generation:
        digest = prompt_digest(req.prompt)
        data = self._post(
            "/v1/generate",
            {
                "prompt": req.prompt,
                "max_tokens": req.max_tokens,
                "stop": list(req.stop),
                "temperature": req.temperature,
            },
            digest,
        )
        try:
            text = data["text"]
            tokens = tuple((t["t"], float(t["lp"])) for t in data.get("tokens", ()))
            available = bool(tokens) or not text
            if not available:
                # Backend reported no log-probabilities: synthesize one token
                # so downstream math stays total; scorers see the flag and use
                # the configured p_norm fallback instead.
                tokens = ((text, 0.0),)
            generation = Generation(
                text=text,
                token_logprobs=tokens,
                finish=FinishReason(data.get("finish", "stop")),
                logprobs_available=available,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed generate response: {exc}", prompt_digest=digest) from exc
        return truncate_generation(generation, req.stop, req.max_tokens)

    def score_continuations(self, req: ScoreRequest) -> dict[str, float]:
        digest = prompt_digest(req.prompt)
        data = self._post(
            "/v1/score", {"prompt": req.prompt, "candidates": list(req.candidates)}, digest
        )
        raw = data.get("scores", {})
        # Missing or null entries mean the backend could not score that
        # candidate; they become the -inf sentinel, never absent keys.
        cleaned = {c: (float(v) if v is not None else float("-inf")) for c, v in raw.items()}
        return complete_scores(cleaned, req.candidates)
