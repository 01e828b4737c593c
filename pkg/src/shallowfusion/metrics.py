"""Error-rate metrics, relative error reduction, effective robustness and the
Wilcoxon signed-rank test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Optional, Sequence

from .text_norm import DEFAULT_OPTIONS, NormalizationOptions, normalize

__all__ = [
    "EditCounts",
    "ErrorRate",
    "EmptyReferenceCorpus",
    "ZeroBaseline",
    "EmptyOodList",
    "AllZeroDifferences",
    "WilcoxonResult",
    "edit_distance",
    "error_rate",
    "corpus_wer",
    "corpus_cer",
    "sentence_wers",
    "rer",
    "effective_robustness",
    "erer",
    "wilcoxon_signed_rank",
    "significance_band",
]


class EmptyReferenceCorpus(ValueError):
    pass


class ZeroBaseline(ZeroDivisionError):
    pass


class EmptyOodList(ValueError):
    pass


class AllZeroDifferences(ValueError):
    pass


@dataclass(frozen=True)
class EditCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    hits: int = 0

    @property
    def ref_len(self) -> int:
        return self.hits + self.substitutions + self.deletions

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.hits + other.hits,
        )


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> EditCounts:
    """Unit-cost Levenshtein alignment of *hyp* against *ref*.

    When several alignments have minimal cost the backtrace prefers a
    diagonal move (hit/substitution), then an insertion, then a deletion.
    """
    n, m = len(ref), len(hyp)
    prev = list(range(m + 1))
    rows = [prev]
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        r = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (r != hyp[j - 1])
            cur[j] = min(diag, cur[j - 1] + 1, prev[j] + 1)
        rows.append(cur)
        prev = cur

    s = ins = dels = hits = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = rows[i][j]
        if i > 0 and j > 0 and here == rows[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                hits += 1
            else:
                s += 1
            i -= 1
            j -= 1
        elif j > 0 and here == rows[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return EditCounts(s, ins, dels, hits)


@dataclass(frozen=True)
class ErrorRate:
    """Pooled error rate over a corpus plus the per-sentence rates."""

    percent: float
    counts: EditCounts
    per_sentence: tuple[float, ...]


def _units(text: str, unit: str, opts: NormalizationOptions) -> list[str]:
    norm = normalize(text, opts)
    return norm.split() if unit == "word" else list(norm)


def error_rate(
    pairs: Sequence[tuple[str, str]],
    normalizer: NormalizationOptions = DEFAULT_OPTIONS,
    unit: str = "word",
) -> ErrorRate:
    """Normalize both sides, align, and pool errors over all reference units.

    A sentence with an empty reference gets ``100 * errors`` as its own rate.
    """
    if unit not in ("word", "char"):
        raise ValueError(f"unit must be 'word' or 'char', got {unit!r}")
    total = EditCounts()
    per = []
    for ref, hyp in pairs:
        c = edit_distance(_units(ref, unit, normalizer), _units(hyp, unit, normalizer))
        total = total + c
        per.append(100.0 * c.errors / max(c.ref_len, 1))
    if total.ref_len == 0:
        raise EmptyReferenceCorpus("all references are empty after normalization")
    return ErrorRate(100.0 * total.errors / total.ref_len, total, tuple(per))


def corpus_wer(
    pairs: Sequence[tuple[str, str]], normalizer: NormalizationOptions = DEFAULT_OPTIONS
) -> float:
    return error_rate(pairs, normalizer, "word").percent


def corpus_cer(
    pairs: Sequence[tuple[str, str]], normalizer: NormalizationOptions = DEFAULT_OPTIONS
) -> float:
    return error_rate(pairs, normalizer, "char").percent


def sentence_wers(
    pairs: Sequence[tuple[str, str]], normalizer: NormalizationOptions = DEFAULT_OPTIONS
) -> list[float]:
    return list(error_rate(pairs, normalizer, "word").per_sentence)


def rer(wer_baseline: float, wer_intervention: float) -> float:
    """Relative error reduction in percent; positive means the intervention helped."""
    if wer_baseline == 0:
        raise ZeroBaseline("relative error reduction undefined for a zero baseline")
    return (1.0 - wer_intervention / wer_baseline) * 100.0


def effective_robustness(
    acc_id: float, acc_ood: float, baseline_fn: Callable[[float], float] = lambda a: a
) -> float:
    return acc_ood - baseline_fn(acc_id)


def erer(rer_id: float, rer_ood: Sequence[float]) -> float:
    """Mean gap between out-of-distribution and in-distribution RER."""
    if len(rer_ood) == 0:
        raise EmptyOodList("ERER needs at least one out-of-distribution RER")
    return sum(effective_robustness(rer_id, r) for r in rer_ood) / len(rer_ood)


@dataclass(frozen=True)
class WilcoxonResult:
    w_statistic: float
    p_value: float
    n_effective: int
    method: str  # "exact" or "normal"
    w_plus: float = 0.0
    w_minus: float = 0.0


def _average_ranks(values: Sequence[float]) -> tuple[list[float], list[int]]:
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    ties = []
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        if j > i:
            ties.append(j - i + 1)
        i = j + 1
    return ranks, ties


def _exact_p(ranks: Sequence[float], w: float) -> float:
    """Two-sided p: share of the 2**n sign assignments with min(W+, W-) <= w.

    Counted by dynamic programming over doubled (integer) ranks, which is the
    same count a literal enumeration of all assignments would give.
    """
    doubled = [int(round(2 * r)) for r in ranks]
    total = sum(doubled)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    w2 = int(round(2 * w))
    hits = sum(c for s, c in enumerate(counts) if min(s, total - s) <= w2)
    return min(1.0, hits / 2 ** len(ranks))


def wilcoxon_signed_rank(
    pairs: Sequence[tuple[float, float]],
    alternative: str = "two-sided",
    correction: bool = True,
    exact_max_n: int = 25,
    method: Optional[str] = None,
) -> WilcoxonResult:
    """Paired Wilcoxon signed-rank test on ``d = a - b``.

    Zero differences are dropped, |d| gets average ranks, and
    ``W = min(W+, W-)``. The p-value is exact for up to *exact_max_n*
    non-zero pairs, otherwise from the normal approximation with tie
    correction (and a 0.5 continuity correction when *correction* is set).
    """
    if alternative != "two-sided":
        raise ValueError("only the two-sided alternative is supported")
    diffs = [a - b for a, b in pairs]
    d = [x for x in diffs if x != 0]
    n = len(d)
    if n == 0:
        raise AllZeroDifferences("every paired difference is zero")
    ranks, ties = _average_ranks([abs(x) for x in d])
    w_plus = float(sum(r for r, x in zip(ranks, d) if x > 0))
    w_minus = float(sum(r for r, x in zip(ranks, d) if x < 0))
    w = min(w_plus, w_minus)

    if method is None:
        method = "exact" if n <= exact_max_n else "normal"
    if method == "exact":
        p = _exact_p(ranks, w)
    elif method == "normal":
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - sum(t**3 - t for t in ties) / 48.0
        dev = abs(w - mean)
        if correction:
            dev = max(dev - 0.5, 0.0)
        p = 1.0 if var <= 0 else min(1.0, math.erfc(dev / math.sqrt(2.0 * var)))
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(w, p, n, method, w_plus, w_minus)


def significance_band(p: float) -> str:
    """Superscript label: 'c' p<0.001, 'b' p<0.01, 'a' p<0.05, else 'none'."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p-value out of range: {p}")
    if p < 0.001:
        return "c"
    if p < 0.01:
        return "b"
    if p < 0.05:
        return "a"
    return "none"
