"""ARPA back-off n-gram models: parsing, serialization and querying.

Probabilities are kept in log10 exactly as written in the file. Lookups use
one hash map per order keyed by token-id tuples.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO, Union

__all__ = [
    "ArpaError",
    "MalformedHeader",
    "CountMismatch",
    "BadEntry",
    "MissingEnd",
    "UnknownWordNoUnk",
    "EmptyCorpus",
    "NGramEntry",
    "ArpaModel",
    "parse_arpa",
    "load_arpa",
]

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"


class ArpaError(ValueError):
    """Base class for malformed ARPA input."""


class MalformedHeader(ArpaError):
    pass


class CountMismatch(ArpaError):
    pass


class BadEntry(ArpaError):
    pass


class MissingEnd(ArpaError):
    pass


class UnknownWordNoUnk(KeyError):
    """A word outside the vocabulary was queried and the model has no <unk>."""


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class NGramEntry:
    log10_prob: float
    log10_backoff: float = 0.0


_NGRAM_COUNT = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")
_SECTION = re.compile(r"^\\(\d+)-grams:$")


@dataclass(eq=False)
class ArpaModel:
    order: int
    vocab: list[str]
    tables: list[dict[tuple[int, ...], NGramEntry]]  # tables[k-1] holds k-grams
    ids: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        self.ids = {w: i for i, w in enumerate(self.vocab)}

    @property
    def has_unk(self) -> bool:
        return UNK in self.ids

    @property
    def bos_id(self) -> Optional[int]:
        return self.ids.get(BOS)

    @property
    def eos_id(self) -> Optional[int]:
        return self.ids.get(EOS)

    def counts(self) -> list[int]:
        return [len(t) for t in self.tables]

    def index(self, word: str) -> int:
        """Map *word* to its id, falling back to <unk>."""
        i = self.ids.get(word)
        if i is None:
            i = self.ids.get(UNK)
            if i is None:
                raise UnknownWordNoUnk(word)
        return i

    def entry(self, ngram: Sequence[str]) -> Optional[NGramEntry]:
        key = tuple(self.ids[w] for w in ngram if w in self.ids)
        if len(key) != len(ngram) or not 1 <= len(key) <= self.order:
            return None
        return self.tables[len(key) - 1].get(key)

    def score_word(self, history: Sequence[int], word: int) -> float:
        """log10 P(word | history) with back-off recursion.

        Only the last ``order - 1`` history ids are consulted.
        """
        ctx = tuple(history[len(history) - self.order + 1 :]) if self.order > 1 else ()
        acc = 0.0
        while True:
            hit = self.tables[len(ctx)].get(ctx + (word,))
            if hit is not None:
                return acc + hit.log10_prob
            if not ctx:
                # every vocabulary id has a unigram, so this is an out-of-range id
                raise UnknownWordNoUnk(word)
            bo = self.tables[len(ctx) - 1].get(ctx)
            if bo is not None:
                acc += bo.log10_backoff
            ctx = ctx[1:]

    def score_sequence(
        self, words: Sequence[str], add_bos: bool = True, add_eos: bool = False
    ) -> float:
        history = [self.ids[BOS]] if add_bos else []
        total = 0.0
        for w in words:
            i = self.index(w)
            total += self.score_word(history, i)
            history.append(i)
        if add_eos:
            total += self.score_word(history, self.ids[EOS])
        return total

    def perplexity(self, sentences: Iterable[Sequence[str]]) -> float:
        total = 0.0
        n = 0
        for sent in sentences:
            total += self.score_sequence(sent, add_bos=True, add_eos=True)
            n += len(sent) + 1
        if n == 0:
            raise EmptyCorpus("no tokens to score")
        return 10.0 ** (-total / n)

    def conditional_distribution(self, history: Sequence[int]) -> dict[int, float]:
        """P(w | history) for every predictable vocabulary entry (all but <s>)."""
        bos = self.bos_id
        return {
            i: 10.0 ** self.score_word(history, i)
            for i in range(len(self.vocab))
            if i != bos
        }

    def write(self, stream: TextIO) -> None:
        """Serialize in ARPA text format; floats are written with ``repr``."""
        stream.write("\\data\\\n")
        for k, table in enumerate(self.tables, 1):
            stream.write(f"ngram {k}={len(table)}\n")
        for k, table in enumerate(self.tables, 1):
            stream.write(f"\n\\{k}-grams:\n")
            for key, e in table.items():
                words = " ".join(self.vocab[i] for i in key)
                line = f"{e.log10_prob!r}\t{words}"
                if k < self.order and e.log10_backoff != 0.0:
                    line += f"\t{e.log10_backoff!r}"
                stream.write(line + "\n")
        stream.write("\n\\end\\\n")

    def to_string(self) -> str:
        buf = io.StringIO()
        self.write(buf)
        return buf.getvalue()


def parse_arpa(stream: Union[TextIO, Iterable[str]]) -> ArpaModel:
    lines = (ln.rstrip("\r\n").strip() for ln in stream)

    for ln in lines:
        if ln == "\\data\\":
            break
    else:
        raise MalformedHeader("missing \\data\\ header")

    declared: dict[int, int] = {}
    section: Optional[int] = None
    for ln in lines:
        if not ln:
            continue
        m = _NGRAM_COUNT.match(ln)
        if m:
            declared[int(m.group(1))] = int(m.group(2))
            continue
        m = _SECTION.match(ln)
        if m:
            section = int(m.group(1))
            break
        raise MalformedHeader(f"unexpected header line: {ln!r}")
    if not declared:
        raise MalformedHeader("no 'ngram N=count' lines")
    order = max(declared)
    if sorted(declared) != list(range(1, order + 1)):
        raise MalformedHeader(f"ngram orders not contiguous: {sorted(declared)}")

    vocab: list[str] = []
    ids: dict[str, int] = {}
    tables: list[dict[tuple[int, ...], NGramEntry]] = [{} for _ in range(order)]
    seen_end = False
    while section is not None:
        if section not in declared:
            raise MalformedHeader(f"section \\{section}-grams: not declared in header")
        table = tables[section - 1]
        nxt: Optional[int] = None
        for ln in lines:
            if not ln:
                continue
            if ln == "\\end\\":
                seen_end = True
                break
            m = _SECTION.match(ln)
            if m:
                nxt = int(m.group(1))
                break
            fields = ln.split()
            if len(fields) not in (section + 1, section + 2):
                raise BadEntry(f"{section}-gram line has {len(fields)} fields: {ln!r}")
            try:
                prob = float(fields[0])
                backoff = float(fields[section + 1]) if len(fields) == section + 2 else 0.0
            except ValueError:
                raise BadEntry(f"non-numeric value in {ln!r}") from None
            toks = fields[1 : section + 1]
            if section == 1:
                if toks[0] in ids:
                    raise BadEntry(f"duplicate unigram {toks[0]!r}")
                ids[toks[0]] = len(vocab)
                vocab.append(toks[0])
                key: tuple[int, ...] = (ids[toks[0]],)
            else:
                try:
                    key = tuple(ids[t] for t in toks)
                except KeyError as e:
                    raise BadEntry(f"word {e.args[0]!r} missing from unigrams") from None
                if key[:-1] not in tables[section - 2]:
                    raise BadEntry(f"context of {' '.join(toks)!r} has no lower-order entry")
            table[key] = NGramEntry(prob, backoff)
        section = nxt
    if not seen_end:
        raise MissingEnd("missing \\end\\ terminator")

    for k, n in declared.items():
        if len(tables[k - 1]) != n:
            raise CountMismatch(f"header declares {n} {k}-grams, parsed {len(tables[k - 1])}")
    return ArpaModel(order=order, vocab=vocab, tables=tables)


def load_arpa(path: Union[str, Path]) -> ArpaModel:
    with open(path, encoding="utf-8", newline="") as f:
        return parse_arpa(f)
