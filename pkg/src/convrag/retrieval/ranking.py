"""Ranked result lists and the shared ordering rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RankedList:
    """Search results ordered by non-increasing score, no duplicate ids."""

    entries: tuple[tuple[str, float], ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ids(self) -> list[str]:
        return [pid for pid, _ in self.entries]

    def to_list(self) -> list[dict]:
        return [{"id": pid, "score": score} for pid, score in self.entries]

    @classmethod
    def from_list(cls, items: list[dict]) -> "RankedList":
        return cls(entries=tuple((d["id"], d["score"]) for d in items))


def rank_positions(scores: np.ndarray, keep: np.ndarray, k: int) -> list[int]:
    """Top-k corpus positions by descending score, ties by ascending position.

    `keep` masks eligible documents (zero-score or invalid ones are excluded
    by the callers before ranking).
    """
    positions = np.flatnonzero(keep)
    if positions.size == 0:
        return []
    # lexsort: last key is primary, so sort by -score then position.
    order = np.lexsort((positions, -scores[positions]))
    return [int(positions[i]) for i in order[:k]]
