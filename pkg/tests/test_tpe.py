import json
import math
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shallowfusion.tpe import (
    NEURAL_SPACE,
    NGRAM_SPACE,
    DuplicateReport,
    EmptySpace,
    SearchSpace,
    Study,
    TpeConfig,
    TrialRecord,
    UnknownTrial,
    ask,
    optimize,
    tell,
)


def quadratic(a, b):
    return (a - 1) ** 2 + (b - 2) ** 2


def completed(points, f=quadratic):
    return [TrialRecord(i, a, b, f(a, b), "complete") for i, (a, b) in enumerate(points)]


def test_space_defaults_and_validation():
    assert NGRAM_SPACE.alpha_range == (0.0, 5.0) and NGRAM_SPACE.beta_range == (0.0, 5.0)
    assert NEURAL_SPACE.alpha_range == (0.0, 3.0)
    with pytest.raises(EmptySpace):
        SearchSpace((1.0, 1.0), (0.0, 1.0))
    with pytest.raises(ValueError):
        TpeConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TpeConfig(n_startup=0)


def test_startup_is_uniform_and_seeded():
    cfg = TpeConfig(seed=3)
    a = ask([], NGRAM_SPACE, cfg)
    assert a == ask([], NGRAM_SPACE, cfg)
    assert 0 <= a[0] <= 5 and 0 <= a[1] <= 5
    two = completed([(1, 1), (2, 2)])
    pts = np.array([ask(two, NGRAM_SPACE, TpeConfig(seed=s)) for s in range(2000)])
    # still the startup phase: roughly uniform on the square
    assert abs(pts.mean() - 2.5) < 0.1
    assert abs(pts[:, 0].std() - 5 / math.sqrt(12)) < 0.1


def test_proposals_follow_good_cluster():
    rng = np.random.default_rng(0)
    good = [(1.0 + rng.normal(0, 0.1), rng.uniform(0, 5)) for _ in range(10)]
    bad = [(rng.uniform(2.5, 5), rng.uniform(0, 5)) for _ in range(30)]
    hist = [TrialRecord(i, a, b, 0.1 if i < 10 else 10.0, "complete") for i, (a, b) in enumerate(good + bad)]
    cfg = TpeConfig(seed=0)
    alphas = [ask(hist, NGRAM_SPACE, cfg, np.random.default_rng(k))[0] for k in range(1000)]
    assert abs(np.mean(alphas) - 1.0) < 0.5
    # brute-force check: proposals land where good-density / rest-density is large
    assert np.mean(np.abs(np.array(alphas) - 1.0) < 0.5) > 0.8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["neighbor", "scott"]))
def test_proposals_stay_in_space(seed, bw):
    rng = np.random.default_rng(seed)
    space = SearchSpace((0.0, 3.0), (1.0, 1.5))
    # observations piled up on the edges stress the truncation
    pts = [(float(rng.choice([0.0, 3.0])), float(rng.choice([1.0, 1.5]))) for _ in range(20)]
    hist = completed(pts, lambda a, b: float(rng.uniform()))
    for k in range(20):
        a, b = ask(hist, space, TpeConfig(seed=seed, bandwidth=bw), np.random.default_rng(k))
        assert 0.0 <= a <= 3.0 and 1.0 <= b <= 1.5


def test_gamma_near_one_tracks_overall_density():
    rng = np.random.default_rng(1)
    pts = [(float(rng.normal(4, 0.2)) % 5, float(rng.uniform(0, 5))) for _ in range(40)]
    hist = completed(pts, lambda a, b: float(rng.uniform()))
    alphas = [ask(hist, NGRAM_SPACE, TpeConfig(gamma=0.99), np.random.default_rng(k))[0] for k in range(300)]
    assert abs(np.median(alphas) - np.median([p[0] for p in pts])) < 0.5


def test_tell_contract():
    hist = [TrialRecord(0, 1.0, 1.0)]
    hist = tell(hist, 0, 3.5)
    assert hist[0].state == "complete" and hist[0].objective == 3.5
    with pytest.raises(DuplicateReport):
        tell(hist, 0, 1.0)
    with pytest.raises(UnknownTrial):
        tell(hist, 7, 1.0)
    with pytest.raises(ValueError):
        tell([TrialRecord(0, 1.0, 1.0)], 0, -1.0)


def test_serial_reproducibility():
    a = Study(cfg=TpeConfig(seed=5))
    b = Study(cfg=TpeConfig(seed=5))
    optimize(quadratic, n_trials=30, study=a)
    optimize(quadratic, n_trials=30, study=b)
    assert a.history == b.history


def test_concurrent_workers_unique_ids():
    study = Study(cfg=TpeConfig(seed=0))
    seen = []
    lock = threading.Lock()

    def slow(a, b):
        time.sleep(0.001)
        with lock:
            seen.append((a, b))
        return quadratic(a, b)

    optimize(slow, n_trials=100, workers=8, study=study)
    ids = [r.trial_id for r in study.history]
    assert sorted(ids) == list(range(100))
    assert len(study.completed) == 100


def test_constant_objective_and_single_trial():
    best = optimize(lambda a, b: 7.0, n_trials=20, cfg=TpeConfig(seed=1))
    assert best.objective == 7.0 and best.trial_id == 0
    one = optimize(quadratic, n_trials=1, cfg=TpeConfig(seed=2))
    assert one.trial_id == 0
    assert (one.alpha, one.beta) == ask([], NGRAM_SPACE, TpeConfig(seed=2))


def test_failed_trials_are_excluded():
    calls = {"n": 0}

    def flaky(a, b):
        calls["n"] += 1
        if calls["n"] % 3 == 0:
            raise RuntimeError("decode crashed")
        return quadratic(a, b)

    study = Study(cfg=TpeConfig(seed=4))
    best = optimize(flaky, n_trials=30, study=study)
    failed = [r for r in study.history if r.state == "failed"]
    assert len(failed) == 10
    assert best.state == "complete"
    assert all(r.objective is None for r in failed)


def test_journal_and_resume(tmp_path):
    journal = tmp_path / "j.jsonl"
    optimize(quadratic, n_trials=5, journal=journal, cfg=TpeConfig(seed=0))
    lines = journal.read_text().splitlines()
    assert len(lines) == 5
    assert json.loads(lines[0])["trial_id"] == 0
    study = Study(NGRAM_SPACE, TpeConfig(seed=0), journal)
    assert len(study.history) == 5
    optimize(quadratic, n_trials=3, study=study)
    ids = [json.loads(x)["trial_id"] for x in journal.read_text().splitlines()]
    assert ids == list(range(8))


def test_beats_random_search_on_quadratic():
    bests, randoms = [], []
    for seed in range(20):
        bests.append(optimize(quadratic, n_trials=100, cfg=TpeConfig(seed=seed)))
        pts = np.random.default_rng([seed, 12345]).uniform(0, 5, (100, 2))
        randoms.append(min(quadratic(a, b) for a, b in pts))
    assert np.median([math.hypot(b.alpha - 1, b.beta - 2) for b in bests]) < 0.2
    assert np.median([b.objective for b in bests]) < np.median(randoms)
