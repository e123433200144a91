"""Corpus ingestion and the shared tokenizer."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Mapping, Optional

from ..core import Passage
from ..errors import DataError

# Alphanumeric runs, lowercased; underscores and any punctuation split.
_TERM_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str, stopwords: Optional[frozenset[str]] = None) -> list[str]:
    """Lowercase and split on non-alphanumeric runs. No stemming by default;
    a stopword set may be supplied but is off unless configured."""
    terms = _TERM_RE.findall(text.lower())
    if stopwords:
        terms = [t for t in terms if t not in stopwords]
    return terms


@dataclass(frozen=True)
class Corpus:
    passages: tuple[Passage, ...]
    id_index: Mapping[str, int]

    def __len__(self) -> int:
        return len(self.passages)

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self.id_index

    def get(self, passage_id: str) -> Passage:
        try:
            return self.passages[self.id_index[passage_id]]
        except KeyError as exc:
            raise DataError(f"unknown passage id {passage_id!r}") from exc

    def resolve(self, ids: Iterable[str]) -> list[Passage]:
        return [self.get(pid) for pid in ids]


def ingest_corpus(records: Iterable[dict]) -> Corpus:
    """Build a corpus from record dicts, preserving input order.

    Rejects duplicate ids (naming the id) and empty texts (naming the record
    index). An empty stream yields a valid empty corpus.
    """
    passages: list[Passage] = []
    id_index: dict[str, int] = {}
    for i, record in enumerate(records):
        passage = Passage.from_dict(record)
        if not passage.text.strip():
            raise DataError(f"record {i}: empty passage text")
        if passage.id in id_index:
            raise DataError(f"duplicate passage id {passage.id!r}")
        id_index[passage.id] = len(passages)
        passages.append(passage)
    return Corpus(passages=tuple(passages), id_index=id_index)


def read_passage_records(stream: IO[str] | Iterable[str]) -> Iterator[dict]:
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid passage record: {exc}") from exc


def load_corpus(path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return ingest_corpus(read_passage_records(fh))


def write_corpus(corpus: Corpus, stream: IO[str]) -> None:
    for passage in corpus.passages:
        stream.write(json.dumps(passage.to_dict(), sort_keys=True) + "\n")
