import math

import numpy as np
import pytest
from conftest import random_normalized_arpa

from shallowfusion.arpa import parse_arpa
from shallowfusion.scorers import (
    LN10,
    EmptyTranscript,
    NeuralProxyScorer,
    NgramScorer,
    make_mock_neural_lm,
    neural_proxy_score,
    ngram_score,
)


class FixedLm:
    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def next_token_distribution(self, partial_transcript):
        return self.probs


def test_ngram_score_natural_log(bigram_model):
    assert ngram_score(bigram_model, ["a", "b"]) == pytest.approx(-1.0986, abs=1e-4)
    assert ngram_score(bigram_model, ["a", "b"]) == pytest.approx(math.log(1 / 3), abs=1e-4)
    assert ngram_score(bigram_model, []) == 0.0
    assert ngram_score(bigram_model, ["b", "a"]) == ngram_score(bigram_model, ["b", "a"])


def test_prefix_consistency():
    rng = np.random.default_rng(3)
    m = parse_arpa(random_normalized_arpa(rng, 5, 3).splitlines(True))
    words = [m.vocab[i] for i in rng.integers(0, len(m.vocab), 30) if m.vocab[i] not in ("<s>", "</s>")]
    hist = [m.ids["<s>"]]
    for n in range(1, len(words) + 1):
        delta = ngram_score(m, words[:n]) - ngram_score(m, words[: n - 1])
        assert delta == pytest.approx(LN10 * m.score_word(hist, m.ids[words[n - 1]]), abs=1e-12)
        hist.append(m.ids[words[n - 1]])


def test_final_rescore_includes_eos(bigram_model):
    s = NgramScorer(bigram_model)
    assert s.score_final(["a"]) == pytest.approx(LN10 * (-0.17609 - 0.30103 - 0.60206))
    assert s.score_final(["a"]) < s.score(["a"])


def test_proxy_uniform_and_onehot():
    assert neural_proxy_score(FixedLm(np.full(8, 1 / 8)), "x") == pytest.approx(math.log(1 / 8))
    assert neural_proxy_score(FixedLm([0, 1, 0]), "x") == 0.0


def test_proxy_rejects_empty():
    with pytest.raises(EmptyTranscript):
        neural_proxy_score(FixedLm([1.0]), "   ")


def test_proxy_lower_bound():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = int(rng.integers(2, 50))
        p = rng.dirichlet(np.ones(v))
        assert neural_proxy_score(FixedLm(p), "ctx") >= math.log(1 / v) - 1e-12


def test_mock_lm_matches_fixture(bigram_model):
    lm = make_mock_neural_lm(bigram_model)
    dist = dict(zip(lm.labels, lm.next_token_distribution("a")))
    assert dist["b"] == pytest.approx(0.5, abs=1e-6)
    # brute force: max over the fixture vocabulary given context "a"
    m = bigram_model
    brute = max(10 ** m.score_word([m.ids["a"]], i) for i in range(len(m.vocab)) if m.vocab[i] != "<s>")
    brute = max(brute, 1 - sum(10 ** m.score_word([m.ids["a"]], i) for i in range(len(m.vocab)) if m.vocab[i] != "<s>"))
    assert neural_proxy_score(lm, "a") == pytest.approx(math.log(brute))


def test_mock_lm_empty_context_is_unigram(bigram_model):
    lm = make_mock_neural_lm(bigram_model)
    dist = dict(zip(lm.labels, lm.next_token_distribution("")))
    assert dist["a"] == pytest.approx(10 ** -0.60206)


def test_mock_lm_distributions_sum_to_one():
    rng = np.random.default_rng(11)
    m = parse_arpa(random_normalized_arpa(rng, 6, 3).splitlines(True))
    lm = make_mock_neural_lm(m)
    vocab = ["w0", "w1", "w2", "w3", "w4", "w5", "oov"]
    for _ in range(100):
        ctx = " ".join(rng.choice(vocab, size=int(rng.integers(0, 6))))
        p = lm.next_token_distribution(ctx)
        assert (p >= 0).all()
        assert p.sum() == pytest.approx(1.0, abs=1e-9)


def test_proxy_is_not_additive(bigram_model):
    s = NeuralProxyScorer(make_mock_neural_lm(bigram_model))
    whole = s.score(["a", "b"])
    parts = s.score(["a"]) + s.score(["b"])
    assert whole != pytest.approx(parts)
