"""Corpus ingestion, BM25 and dense search, recall metrics."""

from .bm25 import Bm25Index, Bm25Params, bm25_search, build_bm25, load_index, save_index
from .corpus import Corpus, ingest_corpus, load_corpus, tokenize
from .dense import DenseIndex, EmbeddingBackend, HashingEmbedder, VocabCountEmbedder, build_dense, dense_search
from .kernels import kernel_backend
from .metrics import hit_at_k, recall_at_k
from .ranking import RankedList

__all__ = [
    "Bm25Index",
    "Bm25Params",
    "Corpus",
    "DenseIndex",
    "EmbeddingBackend",
    "HashingEmbedder",
    "RankedList",
    "VocabCountEmbedder",
    "bm25_search",
    "build_bm25",
    "build_dense",
    "dense_search",
    "hit_at_k",
    "ingest_corpus",
    "kernel_backend",
    "load_corpus",
    "load_index",
    "recall_at_k",
    "save_index",
    "tokenize",
]
