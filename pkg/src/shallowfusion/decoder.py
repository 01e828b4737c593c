"""Beam-search decoding with shallow LM fusion at word boundaries.

Hypotheses are ranked by

    Q = acoustic_lp + alpha * lm_lp + beta * words

where ``lm_lp`` and ``words`` are refreshed only when a hypothesis crosses a
word boundary and already holds at least ``min_tokens`` tokens. Between
boundaries a hypothesis keeps its previous LM contribution.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .scorers import LmScorer
from .text_norm import DEFAULT_OPTIONS, NormalizationOptions, words as norm_words

__all__ = [
    "SPACE_MARKER",
    "Tokenizer",
    "AcousticSource",
    "TableAcousticSource",
    "EmissionFormatError",
    "ScorerFailure",
    "load_emissions",
    "save_emissions",
    "FusionParams",
    "QualityGate",
    "BoundaryRecord",
    "Hypothesis",
    "Attempt",
    "Diagnostics",
    "DecodeResult",
    "is_word_boundary",
    "fused_score",
    "beam_decode",
    "greedy_decode",
    "sample_decode",
    "decode_with_fallback",
    "compression_ratio",
]

log = logging.getLogger(__name__)

SPACE_MARKER = "▁"


class EmissionFormatError(ValueError):
    pass


class ScorerFailure(RuntimeError):
    pass


class Tokenizer:
    """Subword inventory whose word-initial pieces carry a leading space marker."""

    def __init__(
        self,
        vocab: Sequence[str],
        eos_id: int,
        bos_id: Optional[int] = None,
        marker: str = SPACE_MARKER,
    ):
        if not 0 <= eos_id < len(vocab):
            raise ValueError(f"eos_id {eos_id} outside vocabulary of size {len(vocab)}")
        self.vocab = list(vocab)
        self.eos_id = eos_id
        self.bos_id = bos_id
        self.marker = marker
        self._special = {eos_id} | ({bos_id} if bos_id is not None else set())
        self._by_surface = {
            s: i for i, s in enumerate(self.vocab) if i not in self._special
        }
        self._max_len = max((len(s) for s in self._by_surface), default=0)

    def __len__(self) -> int:
        return len(self.vocab)

    def surface(self, token: int) -> str:
        return self.vocab[token]

    def starts_word(self, token: int) -> bool:
        return self.vocab[token].startswith(self.marker)

    def detokenize(self, tokens: Sequence[int]) -> str:
        text = "".join(self.vocab[t] for t in tokens if t not in self._special)
        text = text.replace(self.marker, " ")
        return text[1:] if text.startswith(" ") else text

    def tokenize(self, text: str) -> list[int]:
        """Greedy longest-match segmentation of *text*."""
        encoded = self.marker + text.replace(" ", self.marker)
        try:
            return self._greedy(encoded)
        except ValueError:
            return self._greedy(text.replace(" ", self.marker))

    def _greedy(self, s: str) -> list[int]:
        out = []
        pos = 0
        while pos < len(s):
            for n in range(min(self._max_len, len(s) - pos), 0, -1):
                tok = self._by_surface.get(s[pos : pos + n])
                if tok is not None:
                    out.append(tok)
                    pos += n
                    break
            else:
                raise ValueError(f"cannot tokenize {s[pos:]!r}")
        return out


class AcousticSource(Protocol):
    eos_id: int

    def next_logprobs(self, prefix: Sequence[int]) -> np.ndarray:
        """Natural-log next-token probabilities given the decoded prefix."""
        ...


class TableAcousticSource:
    """Context-independent per-step distributions read from an emission table.

    Past the last step the source emits end-of-sequence with certainty.
    """

    def __init__(self, steps: np.ndarray, eos_id: int):
        self.steps = np.asarray(steps, dtype=float)
        self.eos_id = eos_id
        self._final = np.full(self.steps.shape[1], -np.inf)
        self._final[eos_id] = 0.0

    def __len__(self) -> int:
        return len(self.steps)

    def next_logprobs(self, prefix: Sequence[int]) -> np.ndarray:
        t = len(prefix)
        return self.steps[t] if t < len(self.steps) else self._final


def load_emissions(
    path: Union[str, Path], tol: float = 1e-6
) -> tuple[TableAcousticSource, Tokenizer]:
    """Read an emission-table JSON document and validate each step."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        vocab = doc["vocab"]
        eos_id = int(doc["eos_id"])
        raw = doc["steps"]
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise EmissionFormatError(f"{path}: {e}") from None
    if not raw:
        raise EmissionFormatError(f"{path}: no steps")
    rows = []
    for t, row in enumerate(raw):
        if len(row) != len(vocab):
            raise EmissionFormatError(f"{path}: step {t} has {len(row)} entries, vocab has {len(vocab)}")
        arr = np.array([-np.inf if v is None else v for v in row], dtype=float)
        mass = float(np.exp(arr).sum())
        if abs(mass - 1.0) > tol:
            raise EmissionFormatError(f"{path}: step {t} sums to {mass}, not 1")
        rows.append(arr)
    tok = Tokenizer(vocab, eos_id)
    return TableAcousticSource(np.vstack(rows), eos_id), tok


def save_emissions(
    path: Union[str, Path], vocab: Sequence[str], eos_id: int, steps: np.ndarray
) -> None:
    """Write log-probability rows in the format read by :func:`load_emissions`."""
    rows = [[None if not np.isfinite(v) else float(v) for v in row] for row in np.asarray(steps, dtype=float)]
    doc = {"vocab": list(vocab), "eos_id": int(eos_id), "steps": rows}
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class FusionParams:
    alpha: float = 0.0
    beta: float = 0.0
    beam_size: int = 5
    min_tokens: int = 4
    max_tokens: int = 224
    temperature_schedule: tuple[float, ...] = (0.0,)
    apply_final_eos_rescore: bool = False

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        object.__setattr__(self, "temperature_schedule", tuple(self.temperature_schedule))

    def replace(self, **changes) -> "FusionParams":
        return FusionParams(**{**self.__dict__, **changes})


@dataclass(frozen=True)
class QualityGate:
    avg_logprob_threshold: float = -1.0
    compression_ratio_threshold: float = 2.4


@dataclass(frozen=True)
class BoundaryRecord:
    n_tokens: int
    acoustic_lp: float
    lm_lp: float
    words: int
    fused: float


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...] = ()
    acoustic_lp: float = 0.0
    lm_lp: float = 0.0
    words: int = 0
    fused_score: float = 0.0
    finished: bool = False
    lm_applied: bool = False
    trace: tuple[BoundaryRecord, ...] = ()

    @property
    def avg_logprob(self) -> float:
        return self.acoustic_lp / (len(self.tokens) + 1)


@dataclass(frozen=True)
class Attempt:
    temperature: float
    avg_logprob: float
    compression_ratio: float
    passed: bool
    seed: Optional[int] = None


@dataclass
class Diagnostics:
    steps: int = 0
    lm_evaluations: int = 0
    # smallest token count at which any candidate received an LM contribution
    min_lm_tokens: Optional[int] = None
    no_finished_hypothesis: bool = False
    temperature: float = 0.0
    attempts: list[Attempt] = field(default_factory=list)
    exhausted: bool = False
    seed: Optional[int] = None


@dataclass
class DecodeResult:
    hypothesis: Hypothesis
    text: str
    diagnostics: Diagnostics

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.hypothesis.tokens


def is_word_boundary(tok: Tokenizer, prev_tokens: Sequence[int], new_token: int) -> bool:
    """True when *new_token* closes the word in progress.

    That happens when the token carries the leading-space marker or when it is
    end-of-sequence after a non-empty prefix.
    """
    if new_token == tok.eos_id:
        return len(prev_tokens) > 0
    return tok.starts_word(new_token)


def fused_score(acoustic_lp: float, lm_lp: float, words: int, p: FusionParams) -> float:
    return acoustic_lp + p.alpha * lm_lp + p.beta * words


class _Fuser:
    """Per-call state: LM cache and diagnostics counters."""

    def __init__(self, tok, scorer, p, normalizer, diag):
        self.tok = tok
        self.scorer = scorer
        self.p = p
        self.normalizer = normalizer
        self.diag = diag
        self.active = scorer is not None or p.beta != 0.0
        self._cache: dict[tuple[tuple[str, ...], bool], float] = {}

    def _lm(self, ws: tuple[str, ...], final: bool) -> float:
        if self.scorer is None:
            return 0.0
        key = (ws, final)
        hit = self._cache.get(key)
        if hit is None:
            try:
                if final and hasattr(self.scorer, "score_final"):
                    hit = self.scorer.score_final(ws)
                else:
                    hit = self.scorer.score(ws)
            except Exception as e:
                raise ScorerFailure(f"LM scorer failed on {' '.join(ws)!r}: {e}") from e
            self._cache[key] = hit
        return hit

    def extend(self, h: Hypothesis, token: int, logprob: float) -> Hypothesis:
        finished = token == self.tok.eos_id
        tokens = h.tokens if finished else h.tokens + (token,)
        acoustic = h.acoustic_lp + float(logprob)
        lm_lp, n_words, applied, trace = h.lm_lp, h.words, h.lm_applied, h.trace
        fired = False
        if (
            self.active
            and len(tokens) >= self.p.min_tokens
            and is_word_boundary(self.tok, h.tokens, token)
        ):
            # score only completed words; a space-marked token opens a new one
            ws = tuple(norm_words(self.tok.detokenize(h.tokens), self.normalizer))
            if ws:
                lm_lp = self._lm(ws, finished and self.p.apply_final_eos_rescore)
            else:
                lm_lp = 0.0
            n_words = len(ws)
            applied = fired = True
            self.diag.lm_evaluations += 1
            if self.diag.min_lm_tokens is None or len(tokens) < self.diag.min_lm_tokens:
                self.diag.min_lm_tokens = len(tokens)
        fused = fused_score(acoustic, lm_lp, n_words, self.p) if applied else acoustic
        if fired:
            trace = trace + (BoundaryRecord(len(tokens), acoustic, lm_lp, n_words, fused),)
        return Hypothesis(tokens, acoustic, lm_lp, n_words, fused, finished, applied, trace)


def _rank_key(h: Hypothesis):
    return (-h.fused_score, h.tokens, h.finished)


def _top_tokens(logprobs: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(-logprobs, kind="stable")[:k]
    return order[np.isfinite(logprobs[order])]


def beam_decode(
    acoustic: AcousticSource,
    tok: Tokenizer,
    scorer: Optional[LmScorer],
    p: FusionParams,
    normalizer: NormalizationOptions = DEFAULT_OPTIONS,
) -> DecodeResult:
    """Beam search over *acoustic* with word-boundary shallow fusion.

    Each step expands every live hypothesis with its ``beam_size`` best
    acoustic continuations, then keeps the ``beam_size`` best unfinished
    candidates by fused score. Candidates ending in end-of-sequence are set
    aside. The search stops when nothing is live, when ``max_tokens`` steps
    have run, or when ``beam_size`` hypotheses have finished and the best of
    them outranks every live one.
    """
    diag = Diagnostics()
    fuser = _Fuser(tok, scorer, p, normalizer, diag)
    live = [Hypothesis()]
    finished: list[Hypothesis] = []
    for step in range(p.max_tokens):
        diag.steps = step + 1
        candidates = []
        for h in live:
            lp = np.asarray(acoustic.next_logprobs(h.tokens), dtype=float)
            for t in _top_tokens(lp, p.beam_size):
                candidates.append(fuser.extend(h, int(t), lp[t]))
        candidates.sort(key=_rank_key)
        live = []
        for c in candidates:
            if c.finished:
                finished.append(c)
            elif len(live) < p.beam_size:
                live.append(c)
        if not live:
            break
        if len(finished) >= p.beam_size:
            best_done = min(finished, key=_rank_key)
            if best_done.fused_score >= live[0].fused_score:
                break
    if finished:
        best = min(finished, key=_rank_key)
    else:
        log.warning("no hypothesis reached end-of-sequence within %d tokens", p.max_tokens)
        diag.no_finished_hypothesis = True
        best = live[0] if live else Hypothesis()
    return DecodeResult(best, tok.detokenize(best.tokens), diag)


def greedy_decode(
    acoustic: AcousticSource, tok: Tokenizer, p: FusionParams = FusionParams()
) -> DecodeResult:
    """Per-step argmax decoding without any LM (lowest id wins ties)."""
    diag = Diagnostics()
    tokens: list[int] = []
    total = 0.0
    done = False
    for step in range(p.max_tokens):
        diag.steps = step + 1
        lp = np.asarray(acoustic.next_logprobs(tokens), dtype=float)
        t = int(np.argmax(lp))
        total += float(lp[t])
        if t == acoustic.eos_id:
            done = True
            break
        tokens.append(t)
    if not done:
        log.warning("greedy decode hit max_tokens=%d without end-of-sequence", p.max_tokens)
        diag.no_finished_hypothesis = True
    hyp = Hypothesis(tuple(tokens), total, 0.0, 0, total, done)
    return DecodeResult(hyp, tok.detokenize(hyp.tokens), diag)


def sample_decode(
    acoustic: AcousticSource,
    tok: Tokenizer,
    p: FusionParams,
    temperature: float,
    rng: np.random.Generator,
) -> DecodeResult:
    """Ancestral sampling from the acoustic distribution annealed by *temperature*.

    The returned acoustic log-probability uses the unannealed distribution.
    """
    if temperature <= 0:
        raise ValueError("sampling needs a positive temperature")
    diag = Diagnostics(temperature=temperature)
    tokens: list[int] = []
    total = 0.0
    done = False
    for step in range(p.max_tokens):
        diag.steps = step + 1
        lp = np.asarray(acoustic.next_logprobs(tokens), dtype=float)
        z = lp / temperature
        z = z - np.max(z)
        probs = np.exp(z)
        probs /= probs.sum()
        t = int(rng.choice(len(probs), p=probs))
        total += float(lp[t])
        if t == acoustic.eos_id:
            done = True
            break
        tokens.append(t)
    diag.no_finished_hypothesis = not done
    hyp = Hypothesis(tuple(tokens), total, 0.0, 0, total, done)
    return DecodeResult(hyp, tok.detokenize(hyp.tokens), diag)


def compression_ratio(text: str) -> float:
    raw = text.encode("utf-8")
    if not raw:
        return 0.0
    return len(raw) / len(zlib.compress(raw))


def decode_with_fallback(
    acoustic: AcousticSource,
    tok: Tokenizer,
    scorer: Optional[LmScorer],
    p: FusionParams,
    gate: QualityGate = QualityGate(),
    normalizer: NormalizationOptions = DEFAULT_OPTIONS,
    seed: int = 0,
) -> DecodeResult:
    """Decode at temperature 0, re-decoding by sampling while the quality gate fails.

    The gate fails when the mean per-token acoustic log-probability is below
    ``avg_logprob_threshold`` or the text compression ratio exceeds
    ``compression_ratio_threshold``. The first passing attempt is returned,
    otherwise the last one with ``diagnostics.exhausted`` set.
    """
    sched = p.temperature_schedule
    if not sched or sched[0] != 0.0 or any(b <= a for a, b in zip(sched, sched[1:])):
        raise ValueError(f"temperature schedule must start at 0.0 and ascend: {sched}")
    attempts: list[Attempt] = []
    result: Optional[DecodeResult] = None
    passed = False
    for i, temp in enumerate(sched):
        attempt_seed = None
        if temp == 0.0:
            result = beam_decode(acoustic, tok, scorer, p, normalizer)
        else:
            attempt_seed = seed
            rng = np.random.default_rng([seed, i])
            result = sample_decode(acoustic, tok, p, temp, rng)
        avg = result.hypothesis.avg_logprob
        ratio = compression_ratio(result.text)
        passed = avg >= gate.avg_logprob_threshold and ratio <= gate.compression_ratio_threshold
        attempts.append(Attempt(temp, avg, ratio, passed, attempt_seed))
        if passed:
            break
    assert result is not None
    result.diagnostics.attempts = attempts
    result.diagnostics.temperature = attempts[-1].temperature
    result.diagnostics.exhausted = not passed
    result.diagnostics.seed = seed
    return result
