"""Recall metrics over ranked lists."""

from __future__ import annotations

from typing import Collection

from ..errors import DataError
from .ranking import RankedList


def recall_at_k(ranked: RankedList, gold: Collection[str], k: int) -> float:
    """Fraction of gold passage ids found in the top k results.

    Questions without gold labels are undefined and must be skipped by the
    caller, hence the error on empty gold.
    """
    if not gold:
        raise DataError("undefined recall: empty gold set")
    top = set(ranked.ids()[:k])
    return len(set(gold) & top) / len(set(gold))


def hit_at_k(ranked: RankedList, gold: Collection[str], k: int) -> float:
    """1.0 if any gold id appears in the top k, else 0.0. Reported alongside
    recall so multi-gold questions are readable both ways."""
    if not gold:
        raise DataError("undefined hit rate: empty gold set")
    top = set(ranked.ids()[:k])
    return 1.0 if set(gold) & top else 0.0
