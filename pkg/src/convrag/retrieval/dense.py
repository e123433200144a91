"""Brute-force dense retrieval over a pluggable embedding backend.

No neural model ships here: the backends below are deterministic term-count
embedders good enough to exercise the dense path end to end. Real encoders
plug in through the same EmbeddingBackend protocol.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..errors import DataError
from .corpus import Corpus, tokenize
from .ranking import RankedList, rank_positions

logger = logging.getLogger(__name__)


class EmbeddingBackend(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray:
        """Deterministic per text; returns a finite vector of length dim."""
        ...


class VocabCountEmbedder:
    """L2-normalized term counts over a fixed vocabulary; zero vector when no
    vocabulary term occurs. Intended for hand-checkable tests."""

    def __init__(self, vocab: tuple[str, ...]):
        if not vocab:
            raise DataError("vocabulary must be non-empty")
        self.vocab = vocab
        self.dim = len(vocab)
        self._slot = {t: i for i, t in enumerate(vocab)}

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for term in tokenize(text):
            slot = self._slot.get(term)
            if slot is not None:
                v[slot] += 1.0
        norm = float(np.linalg.norm(v))
        return v / norm if norm > 0 else v


class HashingEmbedder:
    """Feature-hashed term counts, L2-normalized. Stable across processes
    (md5-based bucketing, independent of PYTHONHASHSEED)."""

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise DataError("dim must be ≥ 1")
        self.dim = dim

    def _bucket(self, term: str) -> int:
        digest = hashlib.md5(term.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for term in tokenize(text):
            v[self._bucket(term)] += 1.0
        norm = float(np.linalg.norm(v))
        return v / norm if norm > 0 else v


@dataclass
class DenseIndex:
    corpus: Corpus
    backend: EmbeddingBackend
    # Row-normalized embedding per passage; zero rows marked invalid.
    matrix: np.ndarray
    valid: np.ndarray
    warnings: list[str]


def build_dense(corpus: Corpus, backend: EmbeddingBackend) -> DenseIndex:
    n = len(corpus)
    matrix = np.zeros((n, backend.dim), dtype=np.float64)
    valid = np.ones(n, dtype=bool)
    warnings: list[str] = []
    for pos, passage in enumerate(corpus.passages):
        v = np.asarray(backend.embed(passage.index_text()), dtype=np.float64)
        if v.shape != (backend.dim,):
            raise DataError(f"embedding for {passage.id!r} has shape {v.shape}, expected ({backend.dim},)")
        if not np.all(np.isfinite(v)):
            raise DataError(f"non-finite embedding for passage {passage.id!r}")
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            valid[pos] = False
            msg = f"zero-norm embedding for passage {passage.id!r}; excluded from dense search"
            warnings.append(msg)
            logger.warning(msg)
        else:
            matrix[pos] = v / norm
    return DenseIndex(corpus=corpus, backend=backend, matrix=matrix, valid=valid, warnings=warnings)


def dense_search(
    backend: EmbeddingBackend,
    corpus: Corpus,
    query: str,
    k: int,
    index: DenseIndex | None = None,
) -> RankedList:
    """Top-k by cosine similarity, brute force over the corpus. Ties break by
    ascending corpus position. Pass a prebuilt DenseIndex to skip re-embedding."""
    if k < 1:
        raise DataError("k must be ≥ 1")
    if len(corpus) == 0:
        return RankedList(entries=())
    if index is None:
        index = build_dense(corpus, backend)
    q = np.asarray(backend.embed(query), dtype=np.float64)
    qnorm = float(np.linalg.norm(q))
    if qnorm == 0.0:
        logger.warning("zero-norm query embedding; dense search returns no results")
        return RankedList(entries=())
    sims = index.matrix @ (q / qnorm)
    top = rank_positions(sims, index.valid, k)
    return RankedList(entries=tuple((corpus.passages[p].id, float(sims[p])) for p in top))
