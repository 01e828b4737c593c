"""Command-line entry point: eval, ablate, optimize, report, leakage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from .arpa import ArpaError
from .decoder import EmissionFormatError, FusionParams
from .harness import (
    ARMS,
    DEFAULT_SCHEDULE,
    FIXTURE_ONLY_ARMS,
    OPTIMIZE_CAP,
    ManifestError,
    RunConfig,
    UnknownArm,
    load_params_file,
    run_ablation,
    run_eval,
    run_optimize,
)
from .leakage import EmptyEvalSet, OverlapRow, build_corpus_set, iter_corpus_lines, overlap_percent, write_overlap_report
from .report import format_signed, reproduce_tables
from .tables import MalformedCsv, MissingFixture
from .text_norm import DEFAULT_OPTIONS
from .tpe import TpeConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DATA_ERRORS = (ManifestError, ArpaError, EmissionFormatError, MissingFixture, MalformedCsv, EmptyEvalSet, OSError)

# Built-in values for every option that a config file may also set.
DEFAULTS: dict[str, Any] = {
    "manifest": None,
    "arpa": None,
    "alpha": 0.0,
    "beta": 0.0,
    "beam_size": 5,
    "min_lm_tokens": 4,
    "no_beam": False,
    "keep_diacritics": False,
    "temperature_schedule": ",".join(str(t) for t in DEFAULT_SCHEDULE),
    "seed": 0,
    "workers": 1,
    "params": None,
    "fixtures_dir": None,
    "out_dir": "out",
    "objective": "wer",
    "scorer": None,
    "arm": None,
    "trials": 100,
    "cap": OPTIMIZE_CAP,
    "corpus": [],
    "eval_set": [],
    "language": "unknown",
    "segment": False,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    # every default is None so we can tell which flags were given explicitly
    p.add_argument("--config", help="TOML or JSON file with option values; flags override it")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)


def _decoding(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", default=None)
    p.add_argument("--arpa", default=None)
    p.add_argument("--scorer", choices=["none", "ngram", "neural-proxy"], default=None,
                   help="LM scorer; defaults to ngram when --arpa is given, else none")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--params", default=None, help="best-params JSON supplying alpha and beta")
    p.add_argument("--beam-size", type=int, default=None)
    p.add_argument("--min-lm-tokens", type=int, default=None)
    p.add_argument("--no-beam", action="store_const", const=True, default=None)
    p.add_argument("--keep-diacritics", action="store_const", const=True, default=None)
    p.add_argument("--temperature-schedule", default=None, help='e.g. "0.0,0.2,0.4,0.6,0.8,1.0"')
    p.add_argument("--objective", choices=["wer", "cer"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shallowfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("eval", help="decode a manifest and write WER/CER reports")
    _common(p)
    _decoding(p)

    p = sub.add_parser("ablate", help="compare the baseline against one disabled parameter")
    _common(p)
    _decoding(p)
    p.add_argument("--arm", choices=list(ARMS), default=None)
    p.add_argument("--fixtures-dir", default=None)

    p = sub.add_parser("optimize", help="tune alpha and beta with TPE on train/validation entries")
    _common(p)
    _decoding(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--cap", type=int, default=None, help="max utterances per objective evaluation (0 = all)")

    p = sub.add_parser("report", help="derived statistics from the reference WER tables")
    _common(p)
    p.add_argument("--fixtures-dir", default=None)

    p = sub.add_parser("leakage", help="sentence overlap between evaluation sets and LM corpora")
    _common(p)
    p.add_argument("--corpus", action="append", default=None, help="LM training corpus (repeatable)")
    p.add_argument("--eval-set", action="append", default=None, help="evaluation sentences, one per line (repeatable)")
    p.add_argument("--language", default=None)
    p.add_argument("--segment", action="store_const", const=True, default=None,
                   help="corpora are running text; split lines into sentences")
    p.add_argument("--keep-diacritics", action="store_const", const=True, default=None)
    return parser


def load_config_file(path: str) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if path.endswith(".json") else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise UsageError(f"cannot parse config {path}: {e}") from None
    out = {}
    for k, v in doc.items():
        key = k.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {k!r}")
        out[key] = v
    return out


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Merge built-in defaults < config file < explicit flags."""
    opts = dict(DEFAULTS)
    if args.config:
        opts.update(load_config_file(args.config))
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            opts[k] = v
    if args.command in ("eval", "ablate", "optimize") and opts["params"] and not (
        args.alpha is not None or args.beta is not None
    ):
        opts["alpha"], opts["beta"] = load_params_file(opts["params"])
    return opts


def _schedule(value: Any) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(x) for x in value)
    try:
        return tuple(float(x) for x in str(value).split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad temperature schedule {value!r}") from None


def run_config(opts: dict[str, Any]) -> RunConfig:
    if not opts["manifest"]:
        raise UsageError("--manifest is required")
    scorer = opts["scorer"] or ("ngram" if opts["arpa"] else "none")
    try:
        fusion = FusionParams(
            alpha=float(opts["alpha"]),
            beta=float(opts["beta"]),
            beam_size=int(opts["beam_size"]),
            min_tokens=int(opts["min_lm_tokens"]),
            temperature_schedule=_schedule(opts["temperature_schedule"]),
        )
        return RunConfig(
            manifest=Path(opts["manifest"]),
            fusion=fusion,
            normalizer=DEFAULT_OPTIONS.replace(remove_diacritics=not opts["keep_diacritics"]),
            scorer=scorer,
            arpa=Path(opts["arpa"]) if opts["arpa"] else None,
            greedy=bool(opts["no_beam"]),
            seed=int(opts["seed"]),
            workers=int(opts["workers"]),
            objective=opts["objective"],
            out_dir=Path(opts["out_dir"]),
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_eval(opts) -> int:
    report = run_eval(run_config(opts))
    s = report.summary
    wer = "n/a" if s["corpus_wer"] is None else f"{s['corpus_wer']:.2f}"
    cer = "n/a" if s["corpus_cer"] is None else f"{s['corpus_cer']:.2f}"
    print(f"entries={s['n_entries']} failed={s['n_failed']} WER={wer} CER={cer}")
    for f in report.files:
        print(f"wrote {f}")
    return EXIT_OK


def cmd_ablate(opts) -> int:
    if not opts["arm"]:
        raise UsageError("--arm is required")
    if opts["arm"] in FIXTURE_ONLY_ARMS:
        # answered from the reference tables; no manifest is decoded
        base = RunConfig(manifest=Path(opts["manifest"] or "."), out_dir=Path(opts["out_dir"]))
    else:
        base = run_config(opts)
    doc = run_ablation(base, opts["arm"], opts["fixtures_dir"])
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_optimize(opts) -> int:
    cfg = run_config(opts)
    cap = int(opts["cap"]) or None
    doc = run_optimize(cfg, tpe=TpeConfig(seed=cfg.seed), n_trials=int(opts["trials"]), cap=cap)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(opts) -> int:
    bundle = reproduce_tables(opts["fixtures_dir"], opts["out_dir"])
    for name, t in bundle.tests.items():
        print(f"{name:12s} W={t.w_statistic:.1f} p={t.p_value:.3g} band={t.band} n={t.n_effective}")
    for arm, a in bundle.ablation.items():
        print(f"ablation {arm:22s} mean RER={format_signed(a.mean_rer)}% W={a.test.w_statistic:.1f} "
              f"p={a.test.p_value:.3g} band={a.test.band}")
    print(f"wrote {len(bundle.files)} files to {opts['out_dir']}")
    return EXIT_OK


def cmd_leakage(opts) -> int:
    if not opts["corpus"] or not opts["eval_set"]:
        raise UsageError("--corpus and --eval-set are both required")
    norm = DEFAULT_OPTIONS.replace(remove_diacritics=not opts["keep_diacritics"])
    rows = []
    for corpus_path in opts["corpus"]:
        with open(corpus_path, encoding="utf-8") as fh:
            cset = build_corpus_set(iter_corpus_lines(fh, bool(opts["segment"])), norm)
        for ev in opts["eval_set"]:
            with open(ev, encoding="utf-8") as fh:
                sents = [ln.strip() for ln in fh if ln.strip()]
            pct = overlap_percent(sents, cset)
            rows.append(OverlapRow(opts["language"], Path(ev).stem, Path(corpus_path).stem, pct))
            print(f"{Path(ev).stem} in {Path(corpus_path).stem}: {pct:.2f}%")
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_overlap_report(rows, out / "leakage.csv")
    return EXIT_OK


COMMANDS = {
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "optimize": cmd_optimize,
    "report": cmd_report,
    "leakage": cmd_leakage,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse reports usage errors (and --help) this way
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except (UsageError, UnknownArm) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # pragma: no cover - last resort
        logging.getLogger(__name__).exception("internal error")
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
