"""Sentence-level overlap between evaluation sets and LM training corpora."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO, Union

from .text_norm import DEFAULT_OPTIONS, NormalizationOptions, normalize, segment_sentences

__all__ = [
    "EmptyEvalSet",
    "NormalizedSentenceSet",
    "OverlapRow",
    "build_corpus_set",
    "overlap_percent",
    "iter_corpus_lines",
    "write_overlap_report",
]


class EmptyEvalSet(ValueError):
    pass


@dataclass
class NormalizedSentenceSet:
    """Hash set of sentences, stored only in normalized form."""

    opts: NormalizationOptions = DEFAULT_OPTIONS
    _items: set[str] = field(default_factory=set, repr=False)

    def add(self, sentence: str) -> None:
        norm = normalize(sentence, self.opts)
        if norm:
            self._items.add(norm)

    def __contains__(self, sentence: str) -> bool:
        return normalize(sentence, self.opts) in self._items

    def __len__(self) -> int:
        return len(self._items)

    @property
    def count(self) -> int:
        return len(self._items)


def build_corpus_set(
    sentences: Iterable[str], opts: NormalizationOptions = DEFAULT_OPTIONS
) -> NormalizedSentenceSet:
    """Single pass over *sentences*; duplicates after normalization collapse.

    Sentences that normalize to the empty string are skipped.
    """
    out = NormalizedSentenceSet(opts)
    items = out._items
    for s in sentences:
        norm = normalize(s, opts)
        if norm:
            items.add(norm)
    return out


def overlap_percent(eval_sentences: Sequence[str], corpus: NormalizedSentenceSet) -> float:
    """Percentage of evaluation sentences found verbatim (post-normalization)
    in *corpus*. Repeated evaluation sentences are counted each time."""
    if len(eval_sentences) == 0:
        raise EmptyEvalSet("overlap needs at least one evaluation sentence")
    hits = sum(1 for s in eval_sentences if s in corpus)
    return 100.0 * hits / len(eval_sentences)


def iter_corpus_lines(stream: TextIO, segment: bool = False) -> Iterator[str]:
    """Yield one sentence per line, or run each line through the sentence
    segmenter when the corpus is raw running text."""
    for line in stream:
        line = line.strip()
        if not line:
            continue
        if segment:
            yield from segment_sentences(line)
        else:
            yield line


@dataclass(frozen=True)
class OverlapRow:
    language: str
    dataset: str
    corpus: str
    overlap_percent: float


def write_overlap_report(rows: Iterable[OverlapRow], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["language", "dataset", "corpus", "overlap_percent"])
        for r in rows:
            w.writerow([r.language, r.dataset, r.corpus, f"{r.overlap_percent:.4f}"])
