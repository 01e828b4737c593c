"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import functools
import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest

from shallowfusion.arpa import parse_arpa
from shallowfusion.decoder import SPACE_MARKER, TableAcousticSource, Tokenizer, save_emissions

DATA = Path(__file__).parent / "data"

BIGRAM_ARPA = """\\data\\
ngram 1=4
ngram 2=2

\\1-grams:
-99\t<s>\t-0.30103
-0.60206\ta\t-0.30103
-0.60206\tb\t0
-0.60206\t</s>\t0

\\2-grams:
-0.17609\t<s> a
-0.30103\ta b

\\end\\
"""


@pytest.fixture
def bigram_text() -> str:
    return BIGRAM_ARPA


@pytest.fixture
def bigram_model():
    return parse_arpa(BIGRAM_ARPA.splitlines(True))


# ---------------------------------------------------------------- oracles


def brute_edit_distance(ref: tuple, hyp: tuple) -> int:
    """Plain recursive Levenshtein distance (memoized), no backtrace."""

    @functools.lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            d(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]),
            d(i - 1, j) + 1,
            d(i, j - 1) + 1,
        )

    return d(len(ref), len(hyp))


def random_normalized_arpa(rng: np.random.Generator, n_words: int = 4, order: int = 2, unk: bool = True) -> str:
    """ARPA text whose conditionals sum to one in every context.

    Explicit entries for a context take mass m; the back-off weight is
    (1 - m) / (1 - sum of lower-order probabilities of the explicit words).
    """
    words = [f"w{i}" for i in range(n_words)] + (["<unk>"] if unk else [])
    predict = words + ["</s>"]
    contexts = ["<s>"] + words
    uni = dict(zip(predict, rng.dirichlet(np.ones(len(predict)))))

    def lower(ctx: tuple, w: str, tables) -> float:
        # log10 P(w | ctx) under the orders built so far
        acc = 0.0
        while True:
            hit = tables[len(ctx)].get(ctx + (w,))
            if hit is not None:
                return acc + hit[0]
            bo = tables[len(ctx) - 1].get(ctx) if ctx else None
            if bo is not None:
                acc += bo[1]
            ctx = ctx[1:]

    tables: list[dict] = [dict() for _ in range(order)]
    tables[0][("<s>",)] = [-99.0, 0.0]
    for w in predict:
        tables[0][(w,)] = [math.log10(uni[w]), 0.0]
    prev_ctxs = [(c,) for c in contexts]
    for k in range(2, order + 1):
        new_ctxs = []
        for ctx in prev_ctxs:
            # choose a strict subset of continuations to list explicitly
            n_exp = int(rng.integers(0, len(predict)))
            if n_exp == 0:
                continue
            chosen = [predict[i] for i in sorted(rng.choice(len(predict), n_exp, replace=False))]
            lower_mass = sum(10 ** lower(ctx[1:], w, tables) for w in chosen)
            m = float(rng.uniform(0.3, 0.9))
            shares = rng.dirichlet(np.ones(n_exp)) * m
            for w, s in zip(chosen, shares):
                tables[k - 1][ctx + (w,)] = [math.log10(s), 0.0]
                if w != "</s>":
                    new_ctxs.append(ctx + (w,))
            tables[k - 2][ctx][1] = math.log10((1 - m) / (1 - lower_mass))
        prev_ctxs = new_ctxs
    lines = ["\\data\\"] + [f"ngram {k + 1}={len(t)}" for k, t in enumerate(tables)]
    for k, t in enumerate(tables):
        lines += ["", f"\\{k + 1}-grams:"]
        for key, (p, bo) in t.items():
            row = f"{p!r}\t{' '.join(key)}"
            if k + 1 < order and bo != 0.0:
                row += f"\t{bo!r}"
            lines.append(row)
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)


def random_emissions(rng: np.random.Generator, n_words: int, horizon: int, sharp: float = 1.0) -> np.ndarray:
    """Per-step log-probabilities over [eos, word tokens]; strictly positive."""
    probs = rng.dirichlet(np.full(n_words + 1, sharp), size=horizon)
    probs = np.clip(probs, 1e-9, None)
    probs /= probs.sum(axis=1, keepdims=True)
    return np.log(probs)


def word_tokenizer(n_words: int) -> Tokenizer:
    return Tokenizer(["<eos>"] + [f"{SPACE_MARKER}w{i}" for i in range(n_words)], eos_id=0)


def enumerate_paths(steps: np.ndarray):
    """Every complete token path (without eos) and its acoustic log-prob."""
    horizon, v = steps.shape
    for length in range(horizon + 1):
        for seq in itertools.product(range(1, v), repeat=length):
            a = sum(steps[t, tok] for t, tok in enumerate(seq))
            a += steps[length, 0] if length < horizon else 0.0
            yield seq, a


def write_utterance(path: Path, vocab, eos_id: int, steps) -> Path:
    save_emissions(path, vocab, eos_id, np.asarray(steps))
    return path


def forcing_steps(vocab: list[str], text_tokens: list[int], eos_id: int = 0, p: float = 0.9) -> np.ndarray:
    """Emission table whose argmax path spells *text_tokens* then eos."""
    n = len(text_tokens) + 1
    v = len(vocab)
    rows = np.full((n, v), (1 - p) / (v - 1))
    for t, tok in enumerate(text_tokens + [eos_id]):
        rows[t, tok] = p
    return np.log(rows)


def write_manifest(path: Path, entries: list[dict]) -> Path:
    path.write_text("".join(json.dumps(e) + "\n" for e in entries), encoding="utf-8")
    return path


# ------------------------------------------------------------ toy corpus

TOY_VOCAB = ["<eos>"] + [f"{SPACE_MARKER}{w}" for w in ("el", "gato", "come", "pescado", "que", "bebe", "agua")]

TOY_ARPA = """\\data\\
ngram 1=9
ngram 2=10

\\1-grams:
-99\t<s>\t-0.5
-1.5\tel\t-0.5
-1.5\tgato\t-0.5
-1.5\tcome\t-0.5
-1.5\tpescado\t-0.5
-1.5\tque\t-0.5
-1.5\tbebe\t-0.5
-1.5\tagua\t-0.5
-1.5\t</s>

\\2-grams:
-0.1\t<s> el
-0.5\t<s> que
-0.05\tel gato
-0.1\tque gato
-0.3\tgato come
-0.3\tgato bebe
-0.05\tcome pescado
-0.05\tbebe agua
-0.05\tpescado </s>
-0.05\tagua </s>

\\end\\
"""

# (id, role, dataset, reference, spoken words, position the acoustics get wrong, wrong word)
TOY_UTTERANCES = [
    ("u1", "train", "toyA", "El gato come pescado.", "el gato come pescado", 3, "agua"),
    ("u2", "validation", "toyA", "el gato bebe agua", "el gato bebe agua", 2, "come"),
    ("u3", "test", "toyA", "¿Qué gato come pescado?", "que gato come pescado", None, None),
    ("u4", "test", "toyB", "el gato come pescado", "el gato come pescado", 3, "agua"),
    ("u5", "train", "toyB", "el gato bebe agua", "el gato bebe agua", None, None),
]

# At a flipped step the wrong word gets ~0.7, the right one 0.3 and every
# other token TOY_FLIP_REST. The LM prefers the right sentence by 1.95 log10
# units, so below this weight it cannot overturn the acoustic preference.
TOY_FLIP_REST = 0.001
TOY_ALPHA_THRESHOLD = math.log((0.7 - 6 * TOY_FLIP_REST) / 0.3) / (1.95 * math.log(10))


def toy_steps(words: list[str], flip_at=None, wrong=None, p: float = 0.97) -> np.ndarray:
    ids = [TOY_VOCAB.index(SPACE_MARKER + w) for w in words]
    steps = np.exp(forcing_steps(TOY_VOCAB, ids, 0, p))
    if flip_at is not None:
        bad = TOY_VOCAB.index(SPACE_MARKER + wrong)
        row = np.full(len(TOY_VOCAB), TOY_FLIP_REST)
        row[ids[flip_at]] = 0.3
        row[bad] = 1.0 - row.sum() + TOY_FLIP_REST
        steps[flip_at] = row
    return np.log(steps)


def build_toy_corpus(root: Path) -> dict:
    """Emission files, manifest and ARPA model for a five-utterance corpus in
    which an LM weight above TOY_ALPHA_THRESHOLD fixes two acoustic errors."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "em").mkdir(exist_ok=True)
    entries = []
    for uid, role, ds, ref, spoken, flip, wrong in TOY_UTTERANCES:
        write_utterance(root / "em" / f"{uid}.json", TOY_VOCAB, 0, toy_steps(spoken.split(), flip, wrong))
        entries.append({"id": uid, "reference": ref, "emissions_path": f"em/{uid}.json", "role": role, "dataset": ds})
    manifest = write_manifest(root / "manifest.jsonl", entries)
    arpa = root / "toy.arpa"
    arpa.write_text(TOY_ARPA, encoding="utf-8")
    return {"manifest": manifest, "arpa": arpa, "root": root}


@pytest.fixture
def toy_corpus(tmp_path) -> dict:
    return build_toy_corpus(tmp_path / "toy")


# ------------------------------------------------------- acceptance report

# (criterion number, passed, detail) appended by test_acceptance.py
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


__all__ = [
    "BIGRAM_ARPA",
    "brute_edit_distance",
    "random_normalized_arpa",
    "random_emissions",
    "word_tokenizer",
    "enumerate_paths",
    "forcing_steps",
    "write_manifest",
    "write_utterance",
    "TableAcousticSource",
    "TOY_ALPHA_THRESHOLD",
    "build_toy_corpus",
]
