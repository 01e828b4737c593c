"""Tree-structured Parzen Estimator search over the fusion weights (alpha, beta).

Completed trials are split at the gamma-quantile of their objective into a
"good" and a "rest" group. Each group gets an independent per-dimension
mixture of truncated Gaussians; candidates are drawn from the good mixture
and the one maximizing good-density / rest-density is proposed.
"""

from __future__ import annotations

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from statistics import NormalDist
from typing import Callable, Optional, Sequence, Union

import numpy as np

_STD = NormalDist()
_cdf = np.vectorize(_STD.cdf, otypes=[float])
_ppf = np.vectorize(_STD.inv_cdf, otypes=[float])

__all__ = [
    "SearchSpace",
    "TrialRecord",
    "TpeConfig",
    "EmptySpace",
    "UnknownTrial",
    "DuplicateReport",
    "ask",
    "tell",
    "Study",
    "optimize",
    "NGRAM_SPACE",
    "NEURAL_SPACE",
]


class EmptySpace(ValueError):
    pass


class UnknownTrial(KeyError):
    pass


class DuplicateReport(ValueError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    alpha_range: tuple[float, float] = (0.0, 5.0)
    beta_range: tuple[float, float] = (0.0, 5.0)

    def __post_init__(self):
        for name, (lo, hi) in (("alpha", self.alpha_range), ("beta", self.beta_range)):
            if not lo < hi:
                raise EmptySpace(f"{name} range [{lo}, {hi}] is empty")

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.alpha_range, self.beta_range], dtype=float)

    def to_dict(self) -> dict:
        return {"alpha": list(self.alpha_range), "beta": list(self.beta_range)}


NGRAM_SPACE = SearchSpace((0.0, 5.0), (0.0, 5.0))
NEURAL_SPACE = SearchSpace((0.0, 3.0), (0.0, 3.0))


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    alpha: float
    beta: float
    objective: Optional[float] = None
    state: str = "pending"  # pending | complete | failed

    @property
    def params(self) -> tuple[float, float]:
        return (self.alpha, self.beta)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        return cls(**json.loads(line))


@dataclass(frozen=True)
class TpeConfig:
    n_startup: int = 10
    gamma: float = 0.25
    n_candidates: int = 24
    seed: int = 0
    prior_weight: float = 1.0
    min_bandwidth: float = 0.01  # fraction of the range
    bandwidth: str = "neighbor"  # or "scott"

    def __post_init__(self):
        if self.n_startup < 1:
            raise ValueError("n_startup must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.bandwidth not in ("neighbor", "scott"):
            raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
        if self.prior_weight <= 0:
            raise ValueError("prior_weight must be positive")


class _Parzen1D:
    """Mixture of Gaussians truncated to [low, high], one per observation plus
    a broad prior component centred on the range.

    Bandwidths follow either the neighbour-distance rule (each component as
    wide as the larger gap to its sorted neighbours, floored at
    ``range / min(100, n + 1)``) or a shared Scott-style rule. Both are
    floored at ``cfg.min_bandwidth`` of the range.
    """

    def __init__(self, obs: np.ndarray, low: float, high: float, cfg: TpeConfig):
        width = high - low
        floor = cfg.min_bandwidth * width
        n = len(obs)
        mus = np.append(np.asarray(obs, dtype=float), (low + high) / 2.0)
        weights = np.append(np.ones(n), cfg.prior_weight if n else 1.0)
        if cfg.bandwidth == "neighbor":
            order = np.argsort(mus, kind="stable")
            ext = np.concatenate([[low], mus[order], [high]])
            gaps = np.maximum(ext[1:-1] - ext[:-2], ext[2:] - ext[1:-1])
            sig = np.empty(len(mus))
            sig[order] = np.clip(gaps, max(floor, width / min(100, len(mus))), width)
        else:
            bw = float(np.std(obs, ddof=1)) * n ** (-1.0 / 5.0) if n > 1 else width
            sig = np.full(len(mus), min(max(bw, floor), width))
        sig[-1] = width
        self.mu = mus
        self.sigma = sig
        self.w = weights / weights.sum()
        self.low, self.high = low, high
        self.a = (low - self.mu) / self.sigma
        self.b = (high - self.mu) / self.sigma
        self.mass = _cdf(self.b) - _cdf(self.a)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        k = rng.choice(len(self.w), size=size, p=self.w)
        lo = _cdf(self.a[k])
        u = lo + rng.random(size) * self.mass[k]
        x = self.mu[k] + self.sigma[k] * _ppf(np.clip(u, 1e-300, 1 - 1e-16))
        return np.clip(x, self.low, self.high)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        z = (x[:, None] - self.mu[None, :]) / self.sigma[None, :]
        comp = (
            -0.5 * z**2
            - np.log(self.sigma)[None, :]
            - 0.5 * math.log(2 * math.pi)
            - np.log(self.mass)[None, :]
            + np.log(self.w)[None, :]
        )
        top = comp.max(axis=1, keepdims=True)
        return (top + np.log(np.exp(comp - top).sum(axis=1, keepdims=True)))[:, 0]


def _split(done: Sequence[TrialRecord], gamma: float):
    ranked = sorted(done, key=lambda r: (r.objective, r.trial_id))
    n_good = max(1, min(len(ranked) - 1, math.ceil(gamma * len(ranked))))
    return ranked[:n_good], ranked[n_good:]


def ask(
    history: Sequence[TrialRecord],
    space: SearchSpace,
    cfg: TpeConfig = TpeConfig(),
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, float]:
    """Propose the next (alpha, beta).

    Without an explicit *rng* the draw is seeded by ``cfg.seed`` and the
    number of trials already in *history* (pending ones included), so serial
    runs are reproducible and concurrent asks get distinct points.
    """
    if rng is None:
        rng = np.random.default_rng([cfg.seed, len(history)])
    bounds = space.bounds
    done = [r for r in history if r.state == "complete"]
    if len(done) < cfg.n_startup or len(done) < 2:
        x = bounds[:, 0] + rng.random(2) * (bounds[:, 1] - bounds[:, 0])
        return float(x[0]), float(x[1])

    good, rest = _split(done, cfg.gamma)
    good_x = np.array([r.params for r in good])
    rest_x = np.array([r.params for r in rest])
    cands = np.empty((cfg.n_candidates, 2))
    score = np.zeros(cfg.n_candidates)
    for dim in range(2):
        lo, hi = bounds[dim]
        l_est = _Parzen1D(good_x[:, dim], lo, hi, cfg)
        g_est = _Parzen1D(rest_x[:, dim], lo, hi, cfg)
        cands[:, dim] = l_est.sample(rng, cfg.n_candidates)
        score += l_est.logpdf(cands[:, dim]) - g_est.logpdf(cands[:, dim])
    best = cands[int(np.argmax(score))]
    return float(best[0]), float(best[1])


def tell(
    history: Sequence[TrialRecord], trial_id: int, objective: Optional[float], failed: bool = False
) -> list[TrialRecord]:
    """Return a new history with *trial_id* completed (or marked failed)."""
    out = list(history)
    for i, r in enumerate(out):
        if r.trial_id == trial_id:
            if r.state != "pending":
                raise DuplicateReport(f"trial {trial_id} already reported")
            if failed:
                out[i] = replace(r, state="failed", objective=None)
            else:
                if objective is None or not objective >= 0:
                    raise ValueError(f"objective must be a non-negative number, got {objective}")
                out[i] = replace(r, state="complete", objective=float(objective))
            return out
    raise UnknownTrial(trial_id)


class Study:
    """Thread-safe ask/tell store with an optional append-only JSON-lines journal.

    Completed and failed trials are appended to the journal as they are
    reported; an existing journal is replayed on construction so the next
    trial id continues where the previous run stopped.
    """

    def __init__(
        self,
        space: SearchSpace = NGRAM_SPACE,
        cfg: TpeConfig = TpeConfig(),
        journal: Union[str, Path, None] = None,
    ):
        self.space = space
        self.cfg = cfg
        self.journal = Path(journal) if journal is not None else None
        self._lock = threading.Lock()
        self.history: list[TrialRecord] = []
        if self.journal is not None and self.journal.exists():
            with open(self.journal, encoding="utf-8") as f:
                self.history = [TrialRecord.from_json(ln) for ln in f if ln.strip()]

    @property
    def completed(self) -> list[TrialRecord]:
        return [r for r in self.history if r.state == "complete"]

    def ask(self) -> TrialRecord:
        with self._lock:
            alpha, beta = ask(self.history, self.space, self.cfg)
            rec = TrialRecord(len(self.history), alpha, beta)
            self.history.append(rec)
            return rec

    def tell(self, trial_id: int, objective: Optional[float], failed: bool = False) -> TrialRecord:
        with self._lock:
            self.history = tell(self.history, trial_id, objective, failed)
            rec = next(r for r in self.history if r.trial_id == trial_id)
            if self.journal is not None:
                with open(self.journal, "a", encoding="utf-8") as f:
                    f.write(rec.to_json() + "\n")
            return rec

    def best(self) -> TrialRecord:
        done = self.completed
        if not done:
            raise ValueError("no completed trials")
        return min(done, key=lambda r: (r.objective, r.trial_id))


def optimize(
    objective: Callable[[float, float], float],
    space: SearchSpace = NGRAM_SPACE,
    cfg: TpeConfig = TpeConfig(),
    n_trials: int = 100,
    workers: int = 1,
    journal: Union[str, Path, None] = None,
    study: Optional[Study] = None,
) -> TrialRecord:
    """Run *n_trials* ask/evaluate/tell rounds and return the best trial.

    Trials whose objective raises are marked failed and excluded from the
    density estimates. With ``workers > 1`` evaluations run concurrently and
    pending trials are invisible to the sampler.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    study = study or Study(space, cfg, journal)

    def one(_: int) -> None:
        rec = study.ask()
        try:
            value = float(objective(rec.alpha, rec.beta))
        except Exception:
            study.tell(rec.trial_id, None, failed=True)
            return
        study.tell(rec.trial_id, value)

    if workers <= 1:
        for i in range(n_trials):
            one(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, range(n_trials)))
    return study.best()
