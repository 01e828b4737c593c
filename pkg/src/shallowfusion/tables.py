"""WER score tables keyed by (language, dataset, size, method), with CSV I/O."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Optional, Union

__all__ = [
    "SIZES",
    "ID_DATASET",
    "MissingFixture",
    "MalformedCsv",
    "ScoreRow",
    "ScoreTable",
    "FIXTURE_FILES",
    "load_fixture",
]

SIZES = ("tiny", "base", "small", "medium", "large", "large-v2", "large-v3")
HEADER = ["language", "dataset", "size", "method", "wer"]
# Fine-tuning and LM tuning used Common Voice 13, so it is the in-distribution set.
ID_DATASET = "CV13"

FIXTURE_FILES = {
    "vanilla": "wer_vanilla.csv",
    "finetuned": "wer_finetuned.csv",
    "finetuned+lm": "wer_finetuned_lm.csv",
    "finetuned+llm": "wer_finetuned_llm.csv",
    "vanilla+lm": "wer_vanilla_lm_spanish.csv",
    "ablation:Basque": "ablation_basque.csv",
    "ablation:Galician": "ablation_galician.csv",
    "ablation:Catalan": "ablation_catalan.csv",
    "ablation:Spanish": "ablation_spanish.csv",
}


class MissingFixture(FileNotFoundError):
    pass


class MalformedCsv(ValueError):
    pass


Cell = tuple[str, str, str]  # (language, dataset, size)


@dataclass(frozen=True)
class ScoreRow:
    language: str
    dataset: str
    size: str
    method: str
    wer: float

    @property
    def cell(self) -> Cell:
        return (self.language, self.dataset, self.size)


@dataclass
class ScoreTable:
    rows: dict[tuple[str, str, str, str], float] = field(default_factory=dict)

    def add(self, row: ScoreRow) -> None:
        key = (row.language, row.dataset, row.size, row.method)
        if key in self.rows:
            raise MalformedCsv(f"duplicate row {key}")
        if not row.wer >= 0:
            raise MalformedCsv(f"negative or NaN WER in {key}")
        self.rows[key] = row.wer

    def __iter__(self) -> Iterator[ScoreRow]:
        for (lang, ds, size, method), wer in self.rows.items():
            yield ScoreRow(lang, ds, size, method, wer)

    def __len__(self) -> int:
        return len(self.rows)

    def merge(self, other: "ScoreTable") -> "ScoreTable":
        out = ScoreTable(dict(self.rows))
        for r in other:
            out.add(r)
        return out

    @property
    def methods(self) -> list[str]:
        return sorted({k[3] for k in self.rows})

    def by_method(self, method: str) -> dict[Cell, float]:
        """Cells for one method, in table order."""
        return {k[:3]: v for k, v in self.rows.items() if k[3] == method}

    def paired(self, baseline: str, intervention: str) -> list[tuple[Cell, float, float]]:
        """(cell, baseline WER, intervention WER) for cells present under both
        methods, in the baseline's row order."""
        b = self.by_method(baseline)
        i = self.by_method(intervention)
        return [(c, b[c], i[c]) for c in b if c in i]

    @classmethod
    def from_csv_text(cls, text: str, source: str = "<string>") -> "ScoreTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise MalformedCsv(f"{source}: header must be {','.join(HEADER)}, got {header}")
        table = cls()
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != 5:
                raise MalformedCsv(f"{source}:{lineno}: expected 5 fields, got {len(rec)}")
            lang, ds, size, method, wer = (x.strip() for x in rec)
            if size not in SIZES:
                raise MalformedCsv(f"{source}:{lineno}: unknown size {size!r}")
            try:
                value = float(wer)
            except ValueError:
                raise MalformedCsv(f"{source}:{lineno}: non-numeric WER {wer!r}") from None
            table.add(ScoreRow(lang, ds, size, method, value))
        return table

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScoreTable":
        p = Path(path)
        if not p.is_file():
            raise MissingFixture(str(p))
        return cls.from_csv_text(p.read_text(encoding="utf-8"), str(p))

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(HEADER)
            for r in self:
                w.writerow([r.language, r.dataset, r.size, r.method, f"{r.wer:.2f}"])


def load_fixture(name: str, fixtures_dir: Optional[Union[str, Path]] = None) -> ScoreTable:
    """Load one of the shipped reference tables by key (see FIXTURE_FILES).

    *fixtures_dir* overrides the packaged copies.
    """
    try:
        fname = FIXTURE_FILES[name]
    except KeyError:
        raise MissingFixture(f"no fixture named {name!r}") from None
    if fixtures_dir is not None:
        return ScoreTable.load(Path(fixtures_dir) / fname)
    res = resources.files("shallowfusion") / "fixtures" / fname
    if not res.is_file():
        raise MissingFixture(fname)
    return ScoreTable.from_csv_text(res.read_text(encoding="utf-8"), fname)
