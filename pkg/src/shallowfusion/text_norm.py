"""Multilingual text normalization and rule-based sentence segmentation.

The normalizer mirrors the basic (non-English) Whisper normalizer closely
enough for WER computation, LM corpus preparation and overlap analysis:
lowercasing, punctuation/symbol removal, diacritic folding and whitespace
collapsing.  Digits and word-internal apostrophes/hyphens are kept.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass

import regex

__all__ = ["DEFAULT_OPTIONS", "NormalizationOptions", "normalize", "segment_sentences", "words"]


@dataclass(frozen=True)
class NormalizationOptions:
    lowercase: bool = True
    strip_punctuation: bool = True
    remove_diacritics: bool = True
    collapse_whitespace: bool = True

    def replace(self, **changes) -> "NormalizationOptions":
        return NormalizationOptions(**{**self.__dict__, **changes})


DEFAULT_OPTIONS = NormalizationOptions()

# Joiners survive only between two word characters ("l'aigua", "euskal-herria").
_JOINERS = "'’‐‑-"
_WORDCHAR = r"(?:[\p{L}\p{N}]|\p{M})"
_PUNCT = regex.compile(
    rf"[\p{{P}}\p{{S}}--[{_JOINERS}]]"
    rf"|(?<!{_WORDCHAR})[{_JOINERS}]"
    rf"|[{_JOINERS}](?!{_WORDCHAR})",
    flags=regex.V1,
)
_COMBINING = regex.compile(r"\p{Mn}+")

_TERMINATOR = regex.compile(r"[.!?…‽]+[\"'»”’)\]]*\s+")


def normalize(text: str, opts: NormalizationOptions = DEFAULT_OPTIONS) -> str:
    """Normalize *text* according to *opts*.

    The transformation is idempotent for every option combination, and with
    every flag disabled it returns *text* unchanged.
    """
    if opts.lowercase:
        text = text.lower()
    if opts.remove_diacritics and not text.isascii():
        text = unicodedata.normalize(
            "NFC", _COMBINING.sub("", unicodedata.normalize("NFD", text))
        )
    if opts.strip_punctuation:
        text = _PUNCT.sub(" ", text)
    if opts.collapse_whitespace:
        text = " ".join(text.split())
    return text


def words(text: str, opts: NormalizationOptions = DEFAULT_OPTIONS) -> list[str]:
    """Normalize and split on whitespace."""
    return normalize(text, opts).split()


def segment_sentences(text: str) -> list[str]:
    """Split *text* after sentence-final punctuation followed by whitespace.

    >>> segment_sentences("A b. C d!")
    ['A b.', 'C d!']
    """
    out = []
    start = 0
    for m in _TERMINATOR.finditer(text):
        piece = text[start : m.end()].strip()
        if piece:
            out.append(piece)
        start = m.end()
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out
