"""Language-model scorers consumed by the fusion decoder.

All scorers return natural-log values; ARPA log10 scores are converted here.
"""

from __future__ import annotations

import math
from typing import Protocol, Sequence

import numpy as np

from .arpa import ArpaModel

__all__ = [
    "LmScorer",
    "NeuralLm",
    "EmptyTranscript",
    "NgramScorer",
    "NeuralProxyScorer",
    "MockNeuralLm",
    "ngram_score",
    "neural_proxy_score",
    "make_mock_neural_lm",
]

LN10 = math.log(10.0)


class EmptyTranscript(ValueError):
    pass


class LmScorer(Protocol):
    def score(self, words: Sequence[str]) -> float:
        """Natural-log LM score of a (normalized) word prefix."""
        ...


class NeuralLm(Protocol):
    def next_token_distribution(self, partial_transcript: str) -> np.ndarray:
        """Probabilities over the LM's token inventory; non-negative, sums to 1."""
        ...


def ngram_score(model: ArpaModel, words: Sequence[str]) -> float:
    return LN10 * model.score_sequence(words, add_bos=True, add_eos=False)


def neural_proxy_score(lm: NeuralLm, partial_transcript: str) -> float:
    """ln of the largest next-token probability after *partial_transcript*.

    This is a confidence proxy, not a sequence probability: it is recomputed
    on the whole prefix and does not telescope.
    """
    if not partial_transcript.strip():
        raise EmptyTranscript("neural proxy score needs a non-empty transcript")
    probs = lm.next_token_distribution(partial_transcript)
    return math.log(float(np.max(probs)))


class NgramScorer:
    def __init__(self, model: ArpaModel):
        self.model = model

    def score(self, words: Sequence[str]) -> float:
        return ngram_score(self.model, words)

    def score_final(self, words: Sequence[str]) -> float:
        """Score including the end-of-sentence event."""
        return LN10 * self.model.score_sequence(words, add_bos=True, add_eos=True)


class NeuralProxyScorer:
    def __init__(self, lm: NeuralLm):
        self.lm = lm

    def score(self, words: Sequence[str]) -> float:
        return neural_proxy_score(self.lm, " ".join(words))


class MockNeuralLm:
    """Deterministic stand-in for a causal LM, backed by an ARPA model.

    The next-token distribution is the n-gram conditional over the vocabulary
    (minus <s>) given the last ``order - 1`` context words. Mass the model does
    not assign (non-normalized fixtures) goes to one extra residual slot so the
    vector always sums to one; a context word outside the vocabulary cuts the
    history when the model has no <unk>.
    """

    def __init__(self, model: ArpaModel):
        self.model = model
        bos = model.bos_id
        self.inventory = [i for i in range(len(model.vocab)) if i != bos]

    @property
    def labels(self) -> list[str]:
        return [self.model.vocab[i] for i in self.inventory] + ["<residual>"]

    def _history(self, text: str) -> list[int]:
        hist: list[int] = []
        for w in text.split():
            i = self.model.ids.get(w)
            if i is None and self.model.has_unk:
                i = self.model.ids["<unk>"]
            if i is None:
                hist = []
            else:
                hist.append(i)
        return hist

    def next_token_distribution(self, partial_transcript: str) -> np.ndarray:
        hist = self._history(partial_transcript)
        logp = np.array([self.model.score_word(hist, i) for i in self.inventory])
        probs = np.power(10.0, logp)
        total = float(probs.sum())
        if total > 1.0:
            return np.append(probs / total, 0.0)
        return np.append(probs, 1.0 - total)


def make_mock_neural_lm(model: ArpaModel) -> MockNeuralLm:
    return MockNeuralLm(model)
