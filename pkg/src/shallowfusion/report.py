"""Derived statistics from the reference WER tables: RER grids, ERER,
method-level and ablation Wilcoxon tests, and their CSV/SVG/JSON outputs."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

from .metrics import erer, rer, significance_band, wilcoxon_signed_rank
from .svg import grouped_bar_chart
from .tables import ID_DATASET, SIZES, ScoreTable, load_fixture

__all__ = [
    "COMPARISONS",
    "ABLATION_ARMS",
    "RerCell",
    "MethodTest",
    "ErerCell",
    "AblationSummary",
    "ReportBundle",
    "load_all_fixtures",
    "rer_grid",
    "method_test",
    "erer_cells",
    "ablation_summary",
    "reproduce_tables",
    "format_signed",
]

# name -> (baseline method, intervention method)
COMPARISONS = {
    "finetuning": ("vanilla", "finetuned"),
    "ngram_lm": ("finetuned", "finetuned+lm"),
    "llm": ("finetuned", "finetuned+llm"),
    "vanilla_lm": ("vanilla", "vanilla+lm"),
}
# Methods whose robustness is measured against the vanilla models.
ERER_METHODS = ("finetuned", "finetuned+lm", "finetuned+llm")
ABLATION_ARMS = ("no_beam", "keep_diacritics", "timestamps", "no_language", "temperature_scheduler")


@dataclass(frozen=True)
class RerCell:
    comparison: str
    language: str
    dataset: str
    size: str
    baseline_wer: float
    intervention_wer: float
    rer: float

    @property
    def rounded(self) -> int:
        return round(self.rer)


@dataclass(frozen=True)
class MethodTest:
    comparison: str
    n_pairs: int
    n_effective: int
    w_statistic: float
    p_value: float
    p_value_no_correction: float
    band: str


@dataclass(frozen=True)
class ErerCell:
    language: str
    size: str
    method: str
    rer_id: float
    erer: float
    erer_incremental: Optional[float]  # LM methods only: measured against fine-tuned


@dataclass(frozen=True)
class AblationSummary:
    arm: str
    n_pairs: int
    mean_rer: float
    std_rer: float
    test: MethodTest
    simulated: bool  # False for arms that only exist as fixture tables


@dataclass
class ReportBundle:
    rer: dict[str, list[RerCell]] = field(default_factory=dict)
    tests: dict[str, MethodTest] = field(default_factory=dict)
    erer: list[ErerCell] = field(default_factory=list)
    ablation: dict[str, AblationSummary] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)


def load_all_fixtures(fixtures_dir: Optional[Union[str, Path]] = None) -> ScoreTable:
    table = ScoreTable()
    for key in ("vanilla", "finetuned", "finetuned+lm", "finetuned+llm", "vanilla+lm"):
        table = table.merge(load_fixture(key, fixtures_dir))
    return table


def load_ablation_fixtures(fixtures_dir: Optional[Union[str, Path]] = None) -> ScoreTable:
    table = ScoreTable()
    for lang in ("Basque", "Galician", "Catalan", "Spanish"):
        table = table.merge(load_fixture(f"ablation:{lang}", fixtures_dir))
    return table


def rer_grid(table: ScoreTable, baseline: str, intervention: str, name: str = "") -> list[RerCell]:
    return [
        RerCell(name, lang, ds, size, b, i, rer(b, i))
        for (lang, ds, size), b, i in table.paired(baseline, intervention)
    ]


def method_test(table: ScoreTable, baseline: str, intervention: str, name: str = "") -> MethodTest:
    """Wilcoxon signed-rank over all cells present under both methods."""
    pairs = [(b, i) for _, b, i in table.paired(baseline, intervention)]
    res = wilcoxon_signed_rank(pairs)
    raw = wilcoxon_signed_rank(pairs, correction=False, method=res.method)
    return MethodTest(
        name, len(pairs), res.n_effective, res.w_statistic, res.p_value, raw.p_value,
        significance_band(res.p_value),
    )


def _erer_for(cells: list[RerCell], lang: str, size: str) -> Optional[tuple[float, float]]:
    rid = [c.rer for c in cells if (c.language, c.size, c.dataset) == (lang, size, ID_DATASET)]
    ood = [c.rer for c in cells if (c.language, c.size) == (lang, size) and c.dataset != ID_DATASET]
    if not rid or not ood:
        return None
    return rid[0], erer(rid[0], ood)


def erer_cells(table: ScoreTable) -> list[ErerCell]:
    """ERER per (language, size, method), with the in-distribution dataset as
    reference. RER is measured against vanilla; for the LM methods the
    incremental ERER against the fine-tuned model is reported as well."""
    out = []
    for method in ERER_METHODS:
        grid = rer_grid(table, "vanilla", method)
        inc = rer_grid(table, "finetuned", method) if method != "finetuned" else None
        for lang in dict.fromkeys(c.language for c in grid):
            for size in SIZES:
                main = _erer_for(grid, lang, size)
                if main is None:
                    continue
                extra = _erer_for(inc, lang, size) if inc is not None else None
                out.append(ErerCell(lang, size, method, main[0], main[1], extra and extra[1]))
    return out


def ablation_summary(abl: ScoreTable) -> dict[str, AblationSummary]:
    out = {}
    for arm in ABLATION_ARMS:
        cells = rer_grid(abl, "baseline", arm, arm)
        rers = [c.rer for c in cells]
        out[arm] = AblationSummary(
            arm,
            len(cells),
            statistics.fmean(rers),
            statistics.stdev(rers),
            method_test(abl, "baseline", arm, arm),
            arm not in ("timestamps", "no_language"),
        )
    return out


def format_signed(value: float) -> str:
    """Table-style signed integer percentage, e.g. ``+69`` or ``-40``."""
    r = round(value)
    return f"{r:+d}" if r != 0 else "0"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _f(x: Optional[float], digits: int = 6) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def _mean_by(cells: list[ErerCell], key: str, method: str, order: list[str]) -> list[float]:
    vals = []
    for k in order:
        sel = [c.erer for c in cells if c.method == method and getattr(c, key) == k]
        vals.append(statistics.fmean(sel) if sel else 0.0)
    return vals


def reproduce_tables(
    fixtures_dir: Optional[Union[str, Path]] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> ReportBundle:
    """Compute every derived statistic; when *out_dir* is given also write
    CSV grids, SVG figures and a summary JSON there. Output bytes depend only
    on the fixture contents."""
    table = load_all_fixtures(fixtures_dir)
    abl = load_ablation_fixtures(fixtures_dir)
    bundle = ReportBundle()
    for name, (base, inter) in COMPARISONS.items():
        bundle.rer[name] = rer_grid(table, base, inter, name)
        bundle.tests[name] = method_test(table, base, inter, name)
    bundle.erer = erer_cells(table)
    bundle.ablation = ablation_summary(abl)
    if out_dir is not None:
        bundle.files = _write_outputs(bundle, Path(out_dir))
    return bundle


def _write_outputs(bundle: ReportBundle, out: Path) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def track(name: str) -> Path:
        written.append(name)
        return out / name

    for name, cells in bundle.rer.items():
        _write_csv(
            track(f"rer_{name}.csv"),
            ["language", "dataset", "size", "baseline_wer", "intervention_wer", "rer", "rer_display"],
            [
                [c.language, c.dataset, c.size, f"{c.baseline_wer:.2f}", f"{c.intervention_wer:.2f}",
                 _f(c.rer), format_signed(c.rer)]
                for c in cells
            ],
        )
        # wide, table-style grid
        rows = {}
        for c in cells:
            rows.setdefault((c.language, c.dataset), {})[c.size] = format_signed(c.rer)
        _write_csv(
            track(f"rer_{name}_grid.csv"),
            ["language", "dataset", *SIZES],
            [[lang, ds, *(r.get(s, "") for s in SIZES)] for (lang, ds), r in rows.items()],
        )

    test_rows = [bundle.tests[k] for k in bundle.tests] + [a.test for a in bundle.ablation.values()]
    _write_csv(
        track("wilcoxon.csv"),
        ["comparison", "n_pairs", "n_effective", "w_statistic", "p_value", "p_value_no_correction", "band"],
        [[t.comparison, t.n_pairs, t.n_effective, f"{t.w_statistic:.1f}", f"{t.p_value:.6e}",
          f"{t.p_value_no_correction:.6e}", t.band] for t in test_rows],
    )

    _write_csv(
        track("erer.csv"),
        ["language", "size", "method", "rer_id", "erer", "erer_incremental"],
        [[c.language, c.size, c.method, _f(c.rer_id), _f(c.erer), _f(c.erer_incremental)]
         for c in bundle.erer],
    )

    _write_csv(
        track("ablation.csv"),
        ["arm", "n_pairs", "mean_rer", "std_rer", "w_statistic", "p_value", "band", "simulated"],
        [[a.arm, a.n_pairs, _f(a.mean_rer), _f(a.std_rer), f"{a.test.w_statistic:.1f}",
          f"{a.test.p_value:.6e}", a.test.band, str(a.simulated).lower()]
         for a in bundle.ablation.values()],
    )

    langs = list(dict.fromkeys(c.language for c in bundle.erer))
    sizes = [s for s in SIZES if any(c.size == s for c in bundle.erer)]
    track("fig_erer_by_size.svg").write_text(
        grouped_bar_chart(
            sizes, list(ERER_METHODS),
            [_mean_by(bundle.erer, "size", m, sizes) for m in ERER_METHODS],
            "ERER by model size (mean over languages)", "ERER (points)",
        ),
        encoding="utf-8",
    )
    track("fig_erer_by_language.svg").write_text(
        grouped_bar_chart(
            langs, list(ERER_METHODS),
            [_mean_by(bundle.erer, "language", m, langs) for m in ERER_METHODS],
            "ERER by language (mean over sizes)", "ERER (points)",
        ),
        encoding="utf-8",
    )
    arms = list(bundle.ablation)
    track("fig_ablation_rer.svg").write_text(
        grouped_bar_chart(
            arms, ["mean RER"],
            [[bundle.ablation[a].mean_rer for a in arms]],
            "Mean RER when disabling one decoding parameter", "RER (%)",
            errors=[[bundle.ablation[a].std_rer for a in arms]],
        ),
        encoding="utf-8",
    )

    summary = {
        "tests": {k: asdict(v) for k, v in bundle.tests.items()},
        "ablation": {
            k: {"mean_rer": v.mean_rer, "std_rer": v.std_rer, "simulated": v.simulated,
                "test": asdict(v.test)}
            for k, v in bundle.ablation.items()
        },
        "erer_by_size": {
            m: dict(zip(sizes, _mean_by(bundle.erer, "size", m, sizes))) for m in ERER_METHODS
        },
        "erer_by_language": {
            m: dict(zip(langs, _mean_by(bundle.erer, "language", m, langs))) for m in ERER_METHODS
        },
        "files": sorted(written + ["summary.json"]),
    }
    track("summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sorted(written)
