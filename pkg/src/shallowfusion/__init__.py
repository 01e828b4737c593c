"""Shallow fusion of language models into seq2seq speech decoding, with the
evaluation, optimization and statistics tooling around it."""

from .arpa import ArpaModel, load_arpa, parse_arpa
from .decoder import (
    FusionParams,
    QualityGate,
    Tokenizer,
    beam_decode,
    decode_with_fallback,
    greedy_decode,
    load_emissions,
)
from .metrics import corpus_cer, corpus_wer, erer, rer, wilcoxon_signed_rank
from .scorers import MockNeuralLm, NeuralProxyScorer, NgramScorer
from .text_norm import NormalizationOptions, normalize

__all__ = [
    "ArpaModel",
    "load_arpa",
    "parse_arpa",
    "FusionParams",
    "QualityGate",
    "Tokenizer",
    "beam_decode",
    "decode_with_fallback",
    "greedy_decode",
    "load_emissions",
    "corpus_cer",
    "corpus_wer",
    "erer",
    "rer",
    "wilcoxon_signed_rank",
    "MockNeuralLm",
    "NeuralProxyScorer",
    "NgramScorer",
    "NormalizationOptions",
    "normalize",
]

__version__ = "0.1.0"
