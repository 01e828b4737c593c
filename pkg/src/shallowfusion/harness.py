"""Manifest-driven evaluation, ablation and weight-optimization runs."""

from __future__ import annotations

import csv
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .arpa import load_arpa
from .decoder import (
    FusionParams,
    QualityGate,
    decode_with_fallback,
    greedy_decode,
    load_emissions,
)
from .metrics import (
    AllZeroDifferences,
    EditCounts,
    ZeroBaseline,
    edit_distance,
    rer,
    significance_band,
    wilcoxon_signed_rank,
)
from .report import ablation_summary, load_ablation_fixtures
from .scorers import LmScorer, MockNeuralLm, NeuralProxyScorer, NgramScorer
from .text_norm import DEFAULT_OPTIONS, NormalizationOptions, normalize
from .tpe import NEURAL_SPACE, NGRAM_SPACE, SearchSpace, Study, TpeConfig, optimize

__all__ = [
    "ROLES",
    "SCORER_KINDS",
    "ARMS",
    "FIXTURE_ONLY_ARMS",
    "DEFAULT_SCHEDULE",
    "ManifestError",
    "UnknownArm",
    "ManifestEntry",
    "Manifest",
    "RunConfig",
    "UtteranceResult",
    "EvalReport",
    "run_eval",
    "run_ablation",
    "run_optimize",
    "load_params_file",
]

ROLES = ("train", "validation", "test")
SCORER_KINDS = ("none", "ngram", "neural-proxy")
ARMS = ("no_beam", "keep_diacritics", "timestamps", "no_language", "temperature_scheduler")
FIXTURE_ONLY_ARMS = ("timestamps", "no_language")
DEFAULT_SCHEDULE = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
OPTIMIZE_CAP = 4000


class ManifestError(ValueError):
    pass


class UnknownArm(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    reference: str
    emissions_path: Path
    role: str
    dataset: str = "default"


@dataclass
class Manifest:
    """JSON-lines list of utterances; emission paths resolve against the
    manifest's own directory."""

    path: Path
    entries: list[ManifestEntry]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Manifest":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ManifestError(f"cannot read manifest {path}: {e}") from None
        entries: list[ManifestEntry] = []
        seen: set[str] = set()
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                uid = str(rec["id"])
                ref = str(rec["reference"])
                em = Path(rec["emissions_path"])
                role = rec.get("role", "test")
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ManifestError(f"{path}:{n}: bad entry ({e})") from None
            if role not in ROLES:
                raise ManifestError(f"{path}:{n}: role must be one of {ROLES}, got {role!r}")
            if uid in seen:
                raise ManifestError(f"{path}:{n}: duplicate id {uid!r}")
            seen.add(uid)
            if not em.is_absolute():
                em = path.parent / em
            if not em.is_file():
                raise ManifestError(f"{path}:{n}: emissions file not found: {em}")
            entries.append(ManifestEntry(uid, ref, em, role, str(rec.get("dataset", "default"))))
        return cls(path, entries)

    def with_roles(self, roles: Sequence[str]) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role in roles]


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    fusion: FusionParams = FusionParams(temperature_schedule=DEFAULT_SCHEDULE)
    normalizer: NormalizationOptions = DEFAULT_OPTIONS
    scorer: str = "none"
    arpa: Optional[Path] = None
    greedy: bool = False
    arm: Optional[str] = None
    seed: int = 0
    workers: int = 1
    objective: str = "wer"
    out_dir: Path = Path("out")
    gate: QualityGate = QualityGate()

    def __post_init__(self):
        if self.scorer not in SCORER_KINDS:
            raise ValueError(f"scorer must be one of {SCORER_KINDS}, got {self.scorer!r}")
        if self.scorer != "none" and self.arpa is None:
            raise ValueError(f"scorer {self.scorer!r} needs an ARPA file")
        if self.objective not in ("wer", "cer"):
            raise ValueError("objective must be 'wer' or 'cer'")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        sched = self.fusion.temperature_schedule
        if not sched or sched[0] != 0.0 or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError(f"temperature schedule must start at 0.0 and ascend: {sched}")

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)


def load_params_file(path: Union[str, Path]) -> tuple[float, float]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return float(doc["alpha"]), float(doc["beta"])


def utterance_seed(uid: str, seed: int) -> int:
    return zlib.crc32(uid.encode("utf-8")) ^ (seed & 0xFFFFFFFF)


def build_scorer(kind: str, arpa: Optional[Path]) -> Optional[LmScorer]:
    if kind == "none":
        return None
    model = load_arpa(arpa)
    if kind == "ngram":
        return NgramScorer(model)
    return NeuralProxyScorer(MockNeuralLm(model))


@dataclass(frozen=True)
class UtteranceResult:
    id: str
    dataset: str
    role: str
    reference: str
    hypothesis: str
    words: EditCounts
    chars: EditCounts
    temperature: float = 0.0
    attempts: int = 0
    lm_evaluations: int = 0
    min_lm_tokens: Optional[int] = None
    no_finished: bool = False
    exhausted: bool = False
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


def _decode_one(entry: ManifestEntry, cfg: RunConfig, scorer: Optional[LmScorer]) -> UtteranceResult:
    try:
        source, tok = load_emissions(entry.emissions_path)
        if cfg.greedy:
            res = greedy_decode(source, tok, cfg.fusion)
        else:
            res = decode_with_fallback(
                source, tok, scorer, cfg.fusion, cfg.gate, cfg.normalizer,
                seed=utterance_seed(entry.id, cfg.seed),
            )
    except Exception as e:  # recorded per entry, the run continues
        return UtteranceResult(
            entry.id, entry.dataset, entry.role, entry.reference, "",
            EditCounts(), EditCounts(), error=f"{type(e).__name__}: {e}",
        )
    ref_n = normalize(entry.reference, cfg.normalizer)
    hyp_n = normalize(res.text, cfg.normalizer)
    d = res.diagnostics
    return UtteranceResult(
        entry.id, entry.dataset, entry.role, entry.reference, res.text,
        edit_distance(ref_n.split(), hyp_n.split()),
        edit_distance(list(ref_n), list(hyp_n)),
        d.temperature, len(d.attempts), d.lm_evaluations, d.min_lm_tokens,
        d.no_finished_hypothesis, d.exhausted,
    )


# Worker-process state, set once per process by the pool initializer.
_WORKER: dict = {}


def _init_worker(cfg: RunConfig) -> None:
    _WORKER["cfg"] = cfg
    _WORKER["scorer"] = build_scorer(cfg.scorer, cfg.arpa)


def _worker_decode(entry: ManifestEntry) -> UtteranceResult:
    return _decode_one(entry, _WORKER["cfg"], _WORKER["scorer"])


def decode_entries(
    entries: Sequence[ManifestEntry], cfg: RunConfig, scorer: Optional[LmScorer] = None
) -> list[UtteranceResult]:
    """Decode in manifest order; the worker count never changes the results."""
    if cfg.workers <= 1 or len(entries) <= 1:
        if scorer is None:
            scorer = build_scorer(cfg.scorer, cfg.arpa)
        return [_decode_one(e, cfg, scorer) for e in entries]
    with ProcessPoolExecutor(
        max_workers=cfg.workers, initializer=_init_worker, initargs=(cfg,)
    ) as pool:
        return list(pool.map(_worker_decode, entries, chunksize=max(1, len(entries) // (4 * cfg.workers))))


def _rate(c: EditCounts) -> Optional[float]:
    return 100.0 * c.errors / c.ref_len if c.ref_len else None


def _pool(results: Sequence[UtteranceResult]) -> tuple[EditCounts, EditCounts]:
    w, ch = EditCounts(), EditCounts()
    for r in results:
        if not r.failed:
            w, ch = w + r.words, ch + r.chars
    return w, ch


def _num(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


@dataclass
class EvalReport:
    utterances: list[UtteranceResult]
    summary: dict
    files: list[Path] = field(default_factory=list)

    @property
    def corpus_wer(self) -> Optional[float]:
        return self.summary["corpus_wer"]

    @property
    def corpus_cer(self) -> Optional[float]:
        return self.summary["corpus_cer"]

    def dataset_rates(self, metric: str = "wer") -> dict[str, Optional[float]]:
        return {k: v[metric] for k, v in self.summary["datasets"].items()}


def summarize(results: Sequence[UtteranceResult], cfg: RunConfig) -> dict:
    """Pooled corpus rates (failed entries excluded), per-dataset rates and
    the decoding configuration. Only deterministic content goes in here."""
    w, ch = _pool(results)
    sent = [_rate(r.words) if r.words.ref_len else 100.0 * r.words.errors for r in results if not r.failed]
    datasets = {}
    for ds in dict.fromkeys(r.dataset for r in results):
        dw, dc = _pool([r for r in results if r.dataset == ds])
        datasets[ds] = {"wer": _rate(dw), "cer": _rate(dc), "ref_words": dw.ref_len}
    f = cfg.fusion
    return {
        "config": {
            "alpha": f.alpha,
            "beta": f.beta,
            "beam_size": f.beam_size,
            "min_lm_tokens": f.min_tokens,
            "temperature_schedule": list(f.temperature_schedule),
            "greedy": cfg.greedy,
            "scorer": cfg.scorer,
            "normalizer": asdict(cfg.normalizer),
            "seed": cfg.seed,
            "arm": cfg.arm,
        },
        "n_entries": len(results),
        "n_failed": sum(r.failed for r in results),
        "corpus_wer": _rate(w),
        "corpus_cer": _rate(ch),
        "mean_sentence_wer": (sum(sent) / len(sent)) if sent else None,
        "word_counts": asdict(w),
        "char_counts": asdict(ch),
        "datasets": datasets,
        "fallback_used": sum(1 for r in results if r.temperature > 0),
    }


UTTERANCE_COLUMNS = [
    "id", "dataset", "role", "reference", "hypothesis",
    "word_errors", "ref_words", "wer", "char_errors", "ref_chars", "cer",
    "temperature", "attempts", "lm_evaluations", "min_lm_tokens",
    "no_finished", "exhausted", "error",
]


def write_eval_report(results: Sequence[UtteranceResult], summary: dict, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    utt = out_dir / "eval_utterances.csv"
    with open(utt, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UTTERANCE_COLUMNS)
        for r in results:
            w.writerow([
                r.id, r.dataset, r.role, r.reference, r.hypothesis,
                r.words.errors, r.words.ref_len, _num(_rate(r.words)),
                r.chars.errors, r.chars.ref_len, _num(_rate(r.chars)),
                f"{r.temperature:.1f}", r.attempts, r.lm_evaluations,
                "" if r.min_lm_tokens is None else r.min_lm_tokens,
                int(r.no_finished), int(r.exhausted), r.error,
            ])
    summ = out_dir / "eval_summary.json"
    summ.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [utt, summ]


def run_eval(
    cfg: RunConfig,
    entries: Optional[Sequence[ManifestEntry]] = None,
    write: bool = True,
    out_dir: Optional[Path] = None,
) -> EvalReport:
    """Decode every manifest entry (or *entries*) and compute WER/CER."""
    if entries is None:
        entries = Manifest.load(cfg.manifest).entries
    results = decode_entries(entries, cfg)
    summary = summarize(results, cfg)
    report = EvalReport(results, summary)
    if write:
        report.files = write_eval_report(results, summary, Path(out_dir or cfg.out_dir))
    return report


def arm_config(base: RunConfig, arm: str) -> RunConfig:
    """The baseline configuration with one parameter disabled."""
    if arm == "no_beam":
        return base.replace(greedy=True, arm=arm)
    if arm == "keep_diacritics":
        return base.replace(normalizer=base.normalizer.replace(remove_diacritics=False), arm=arm)
    if arm == "temperature_scheduler":
        return base.replace(fusion=base.fusion.replace(temperature_schedule=(0.0,)), arm=arm)
    if arm in FIXTURE_ONLY_ARMS:
        raise UnknownArm(f"arm {arm!r} has no acoustic simulation; it is a fixture-table analysis")
    raise UnknownArm(f"unknown ablation arm {arm!r}; expected one of {ARMS}")


def _wilcoxon_dict(pairs: Sequence[tuple[float, float]]) -> Optional[dict]:
    try:
        res = wilcoxon_signed_rank(pairs)
    except AllZeroDifferences:
        return None
    return {
        "w_statistic": res.w_statistic,
        "p_value": res.p_value,
        "n_effective": res.n_effective,
        "method": res.method,
        "band": significance_band(res.p_value),
    }


def run_ablation(
    base: RunConfig, arm: str, fixtures_dir: Optional[Union[str, Path]] = None
) -> dict:
    """Compare the baseline with one parameter disabled.

    Simulated arms decode the manifest twice and compare per-dataset WER and
    per-sentence WER. ``timestamps`` and ``no_language`` cannot be simulated
    without the acoustic model, so they are answered from the reference
    ablation tables and flagged ``simulated: false``.
    """
    if arm not in ARMS:
        raise UnknownArm(f"unknown ablation arm {arm!r}; expected one of {ARMS}")
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if arm in FIXTURE_ONLY_ARMS:
        s = ablation_summary(load_ablation_fixtures(fixtures_dir))[arm]
        doc = {
            "arm": arm,
            "simulated": False,
            "source": "reference ablation tables",
            "n_cells": s.n_pairs,
            "mean_rer": s.mean_rer,
            "std_rer": s.std_rer,
            "wilcoxon_cells": {
                "w_statistic": s.test.w_statistic,
                "p_value": s.test.p_value,
                "n_effective": s.test.n_effective,
                "band": s.test.band,
            },
        }
        (out / f"ablation_{arm}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return doc

    variant = arm_config(base, arm)
    entries = Manifest.load(base.manifest).entries
    b = run_eval(base.replace(arm=None), entries, out_dir=out / "baseline")
    a = run_eval(variant, entries, out_dir=out / arm)
    rows = []
    for ds in b.summary["datasets"]:
        wb = b.summary["datasets"][ds]["wer"]
        wa = a.summary["datasets"][ds]["wer"]
        try:
            r = rer(wb, wa) if wb is not None and wa is not None else None
        except ZeroBaseline:
            r = None
        delta = wa - wb if wb is not None and wa is not None else None
        rows.append({"dataset": ds, "baseline_wer": wb, "arm_wer": wa, "delta": delta, "rer": r})
    with open(out / f"ablation_{arm}.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "baseline_wer", "arm_wer", "delta", "rer"])
        for row in rows:
            w.writerow([row["dataset"], _num(row["baseline_wer"]), _num(row["arm_wer"]),
                        _num(row["delta"]), _num(row["rer"])])
    cell_pairs = [(r["baseline_wer"], r["arm_wer"]) for r in rows if r["delta"] is not None]
    sent_pairs = [
        (_rate(x.words), _rate(y.words))
        for x, y in zip(b.utterances, a.utterances)
        if not x.failed and not y.failed and x.words.ref_len and y.words.ref_len
    ]
    doc = {
        "arm": arm,
        "simulated": True,
        "baseline_wer": b.corpus_wer,
        "arm_wer": a.corpus_wer,
        "delta": None if b.corpus_wer is None or a.corpus_wer is None else a.corpus_wer - b.corpus_wer,
        "datasets": rows,
        "wilcoxon_cells": _wilcoxon_dict(cell_pairs),
        "wilcoxon_sentences": _wilcoxon_dict(sent_pairs),
    }
    (out / f"ablation_{arm}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc


def select_tuning_entries(
    manifest: Manifest, cap: Optional[int] = OPTIMIZE_CAP, seed: int = 0
) -> list[ManifestEntry]:
    """Train and validation entries only, optionally subsampled (seeded)."""
    pool = manifest.with_roles(("train", "validation"))
    if not pool:
        raise ManifestError("optimization needs train or validation entries")
    if cap is not None and len(pool) > cap:
        idx = np.sort(np.random.default_rng(seed).choice(len(pool), size=cap, replace=False))
        pool = [pool[i] for i in idx]
    return pool


def run_optimize(
    cfg: RunConfig,
    space: Optional[SearchSpace] = None,
    tpe: Optional[TpeConfig] = None,
    n_trials: int = 100,
    cap: Optional[int] = OPTIMIZE_CAP,
) -> dict:
    """Tune (alpha, beta) on train+validation entries and export the best pair.

    The journal in ``out_dir`` is resumed if present: new trials continue the
    id sequence. Test-role entries are never decoded.
    """
    if cfg.scorer == "none":
        raise ValueError("optimization needs an LM scorer (ngram or neural-proxy)")
    space = space or (NGRAM_SPACE if cfg.scorer == "ngram" else NEURAL_SPACE)
    tpe = tpe or TpeConfig(seed=cfg.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = select_tuning_entries(Manifest.load(cfg.manifest), cap, cfg.seed)
    (out / "optimize_subset.txt").write_text("".join(e.id + "\n" for e in entries), encoding="utf-8")

    sources = [(e, *load_emissions(e.emissions_path)) for e in entries]
    scorer = build_scorer(cfg.scorer, cfg.arpa)

    def objective(alpha: float, beta: float) -> float:
        p = cfg.fusion.replace(alpha=alpha, beta=beta)
        total = EditCounts()
        for e, src, tok in sources:
            res = decode_with_fallback(
                src, tok, scorer, p, cfg.gate, cfg.normalizer, seed=utterance_seed(e.id, cfg.seed)
            )
            ref_n = normalize(e.reference, cfg.normalizer)
            hyp_n = normalize(res.text, cfg.normalizer)
            if cfg.objective == "wer":
                total = total + edit_distance(ref_n.split(), hyp_n.split())
            else:
                total = total + edit_distance(list(ref_n), list(hyp_n))
        if total.ref_len == 0:
            raise ValueError("tuning references are empty")
        return 100.0 * total.errors / total.ref_len

    study = Study(space, tpe, out / "optimize_journal.jsonl")
    best = optimize(objective, space, tpe, n_trials, workers=cfg.workers, study=study)
    doc = {
        "alpha": best.alpha,
        "beta": best.beta,
        "objective": best.objective,
        "objective_metric": cfg.objective,
        "space": space.to_dict(),
        "seed": tpe.seed,
        "scorer": cfg.scorer,
        "trials": len(study.history),
    }
    (out / "best_params.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc
