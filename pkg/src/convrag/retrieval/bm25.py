"""Self-contained BM25 inverted index.

Scoring uses the non-negative idf variant ln((N - df + 0.5)/(df + 0.5) + 1),
so a document scores above zero iff it contains a query term. Query terms are
taken as tokenized (repeats contribute once per occurrence). The per-posting
accumulation runs through the compiled kernel when available.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from . import kernels
from .corpus import Corpus, tokenize
from .ranking import RankedList, rank_positions

SNAPSHOT_MAGIC = "convrag-bm25"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75


@dataclass
class Bm25Index:
    corpus: Corpus
    params: Bm25Params
    # term -> (corpus positions int32, term frequencies int32), positions ascending
    postings: dict[str, tuple[np.ndarray, np.ndarray]]
    doc_lengths: list[int]
    avg_doc_length: float
    doc_count: int
    idf: dict[str, float] = field(default_factory=dict)
    # k1 * (1 - b + b * dl / avgdl) per document, precomputed for the kernel
    doc_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def df(self, term: str) -> int:
        entry = self.postings.get(term)
        return 0 if entry is None else len(entry[0])


def build_bm25(corpus: Corpus, params: Bm25Params = Bm25Params()) -> Bm25Index:
    doc_count = len(corpus)
    doc_lengths: list[int] = []
    counts: dict[str, list[tuple[int, int]]] = {}
    for pos, passage in enumerate(corpus.passages):
        terms = tokenize(passage.index_text())
        doc_lengths.append(len(terms))
        freq: dict[str, int] = {}
        for t in terms:
            freq[t] = freq.get(t, 0) + 1
        for t, tf in freq.items():
            counts.setdefault(t, []).append((pos, tf))

    avg = (sum(doc_lengths) / doc_count) if doc_count else 0.0
    postings = {
        t: (
            np.array([p for p, _ in plist], dtype=np.int32),
            np.array([tf for _, tf in plist], dtype=np.int32),
        )
        for t, plist in counts.items()
    }
    idf = {
        t: math.log((doc_count - len(plist[0]) + 0.5) / (len(plist[0]) + 0.5) + 1.0)
        for t, plist in postings.items()
    }
    if doc_count:
        lengths = np.array(doc_lengths, dtype=np.float64)
        doc_norms = params.k1 * (1.0 - params.b + params.b * lengths / avg)
    else:
        doc_norms = np.zeros(0)
    return Bm25Index(
        corpus=corpus,
        params=params,
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        doc_count=doc_count,
        idf=idf,
        doc_norms=doc_norms,
    )


def bm25_scores(index: Bm25Index, query: str) -> np.ndarray:
    """Raw BM25 score per corpus position."""
    scores = np.zeros(index.doc_count, dtype=np.float64)
    for term in tokenize(query):
        entry = index.postings.get(term)
        if entry is None:
            continue
        positions, tfs = entry
        kernels.add_term_scores(scores, positions, tfs, index.idf[term], index.params.k1, index.doc_norms)
    return scores


def bm25_search(index: Bm25Index, query: str, k: int) -> RankedList:
    """Top-k by BM25 score. Zero-score documents are excluded; ties break by
    ascending corpus position. An empty or out-of-vocabulary query yields an
    empty list."""
    if k < 1:
        raise DataError("k must be ≥ 1")
    if index.doc_count == 0:
        return RankedList(entries=())
    scores = bm25_scores(index, query)
    top = rank_positions(scores, scores > 0.0, k)
    ids = index.corpus.passages
    return RankedList(entries=tuple((ids[p].id, float(scores[p])) for p in top))


def save_index(index: Bm25Index, path) -> None:
    """Versioned snapshot, self-contained: embeds params and the corpus."""
    snapshot = {
        "magic": SNAPSHOT_MAGIC,
        "version": SNAPSHOT_VERSION,
        "params": {"k1": index.params.k1, "b": index.params.b},
        "doc_count": index.doc_count,
        "passages": [p.to_dict() for p in index.corpus.passages],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, sort_keys=True)
        fh.write("\n")


def load_index(path) -> Bm25Index:
    """Rebuild an index from a snapshot; fails fast on version or magic mismatch."""
    from .corpus import ingest_corpus

    with open(path, encoding="utf-8") as fh:
        try:
            snapshot = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt index snapshot {path}: {exc}") from exc
    if snapshot.get("magic") != SNAPSHOT_MAGIC:
        raise DataError(f"not a bm25 index snapshot: {path}")
    if snapshot.get("version") != SNAPSHOT_VERSION:
        raise DataError(
            f"index snapshot version {snapshot.get('version')} unsupported (expected {SNAPSHOT_VERSION})"
        )
    corpus = ingest_corpus(snapshot["passages"])
    params = Bm25Params(k1=snapshot["params"]["k1"], b=snapshot["params"]["b"])
    index = build_bm25(corpus, params)
    if index.doc_count != snapshot["doc_count"]:
        raise DataError("index snapshot doc_count mismatch")
    return index
