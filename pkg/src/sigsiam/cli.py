"""Command-line entry point: ``sigsiam synth|featurize|crossval|importance``.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
3 runtime failure.  Output files default to ``$SIGSIAM_OUTPUT_DIR`` (or the
working directory) and are written whole-file atomically.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import subprocess
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_pipeline, save_pipeline
from .config import ABLATIONS, RunConfig, load_config_file
from .errors import CapacityError, ConfigError, ContractError, SigsiamError, StateError, StratificationError
from .features import (
    FeatureLayout,
    assemble_features,
    binarize,
    fit_thresholds,
    format_cohort_csv,
    generate_synthetic_cohort,
    read_cohort_csv,
)
from .importance import aggregate_regions, average_importance
from .pipeline import CrossValidationResult, run_cross_validation

log = logging.getLogger("sigsiam")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
OUTPUT_ENV = "SIGSIAM_OUTPUT_DIR"
AUDIT_COLUMNS = ("subject_id", "fold", "S_a", "S_n", "predicted", "actual")
REPORT_COLUMNS = ("region_name", "hemisphere", "raw_score", "normalized_score", "rank")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or ".")


def write_atomic(path: Path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# --- config resolution -------------------------------------------------------------

_CONFIG_FLAGS = {
    "seed": "seed",
    "folds": "folds",
    "jobs": "jobs",
    "ae_outer_epochs": "ae_outer_epochs",
    "ae_inner_epochs": "ae_inner_epochs",
    "siamese_epochs": "siamese_epochs",
    "batch_size": "batch_size",
    "learning_rate": "learning_rate",
    "alpha": "alpha",
    "gamma": "gamma",
}


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def resolve_config(args) -> RunConfig:
    """Defaults, then the config file, then ``--set`` pairs, then explicit flags."""
    data: dict = {}
    if args.config:
        data.update(load_config_file(args.config))
    data.update(_parse_set(args.set or []))
    for flag, key in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    if args.ablate:
        data["ablations"] = sorted(set(args.ablate))
    return RunConfig.from_dict(data)


# --- commands -------------------------------------------------------------------------


def cmd_synth(args) -> int:
    records = generate_synthetic_cohort(args.asd, args.nc, args.effect, args.seed)
    path = Path(args.output) if args.output else output_dir() / "cohort.csv"
    write_atomic(path, format_cohort_csv(records))
    log.info("wrote %d subjects to %s", len(records), path)
    return EXIT_OK


def cmd_featurize(args) -> int:
    """Dump concatenated features and their median bits (medians fitted on the whole file)."""
    records = read_cohort_csv(args.input)
    layout = FeatureLayout(args.cortical_level, args.volume_level)
    x = assemble_features(records, layout)
    thresholds = fit_thresholds(x)
    buf = io.BytesIO()
    np.savez(
        buf,
        subject_ids=np.array([r.subject_id for r in records]),
        labels=np.array([r.label for r in records]),
        features=x,
        binarized=binarize(x, thresholds),
        medians=thresholds.medians,
    )
    path = Path(args.output) if args.output else output_dir() / "features.npz"
    write_atomic(path, buf.getvalue())
    log.info("wrote %d x %d features to %s", x.shape[0], x.shape[1], path)
    return EXIT_OK


def _summaries(runs: list[CrossValidationResult]) -> dict:
    keys = ("accuracy", "sensitivity", "specificity", "precision", "f1")
    mean = {k: float(np.mean([getattr(r.pooled, k) for r in runs])) for k in keys}
    best = max(runs, key=lambda r: (r.pooled.f1, -r.config.seed))
    return {
        "seed_mean": mean,
        "best_of_seeds": {"seed": best.config.seed, **best.pooled.to_dict()},
    }


def _run_document(result: CrossValidationResult) -> dict:
    return {
        "seed": result.config.seed,
        "pooled": result.pooled.to_dict(),
        "folds": [
            {"fold": f.fold, "n_test": int(f.test_index.size), **f.metrics.to_dict()}
            for f in result.folds
        ],
    }


def cmd_crossval(args) -> int:
    config = resolve_config(args)
    input_bytes = Path(args.input).read_bytes()
    records = read_cohort_csv(args.input)
    out = Path(args.out_dir) if args.out_dir else output_dir()
    if args.repeat < 1:
        raise UsageError("--repeat must be >= 1")
    seeds = [config.seed + k for k in range(args.repeat)]

    runs = []
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        for seed in seeds:
            cfg = config.with_overrides(seed=seed)
            log.info("cross-validating %d subjects, %d folds, seed %d", len(records), cfg.folds, seed)
            runs.append(run_cross_validation(records, cfg))

    for result in runs:
        suffix = "" if len(runs) == 1 else f"_seed{result.config.seed}"
        rows = [
            (a.subject_id, a.fold, repr(a.s_a), repr(a.s_n), a.predicted, a.actual) for a in result.audit
        ]
        write_atomic(out / f"audit{suffix}.csv", _csv_text(AUDIT_COLUMNS, rows))
        if not args.no_models:
            models = out / "models" if len(runs) == 1 else out / "models" / f"seed{result.config.seed}"
            for fold in result.folds:
                save_pipeline(fold.pipeline, models / f"fold_{fold.fold:02d}.npz", {"fold": fold.fold})

    doc = {
        "version": version_string(),
        "config": config.to_dict(),
        "input": {"path": str(args.input), "sha256": hashlib.sha256(input_bytes).hexdigest(),
                  "subjects": len(records)},
        "seed": config.seed,
        "runs": [_run_document(r) for r in runs],
        "pooled": runs[0].pooled.to_dict(),
    }
    if len(runs) > 1:
        doc.update(_summaries(runs))
    write_atomic(out / "metrics.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    p = runs[0].pooled
    print(f"ACC {p.accuracy:.3f}  SEN {p.sensitivity:.3f}  SPE {p.specificity:.3f}  F1 {p.f1:.3f}")
    return EXIT_OK


def _model_paths(args) -> list[Path]:
    paths = [Path(p) for p in args.models]
    expanded = []
    for p in paths:
        if p.is_dir():
            found = sorted(p.glob("fold_*.npz"))
            if not found:
                raise FileNotFoundError(f"no fold_*.npz model files in {p}")
            expanded += found
        else:
            expanded.append(p)
    return expanded


def cmd_importance(args) -> int:
    vectors = []
    for path in _model_paths(args):
        if not path.exists():
            raise FileNotFoundError(f"model file not found: {path}")
        pipe, _ = load_pipeline(path)
        imp = pipe.input_importance()
        if imp is None:
            raise ConfigError(f"{path} was trained without the compressor; no importance to report")
        vectors.append(imp)
    layout = pipe.layout
    report = aggregate_regions(average_importance(vectors), layout)
    rows = [
        [repr(row[c]) if isinstance(row[c], float) else row[c] for c in REPORT_COLUMNS] for row in report.rows()
    ]
    path = Path(args.output) if args.output else output_dir() / "region_importance.csv"
    write_atomic(path, _csv_text(REPORT_COLUMNS, rows))
    log.info("averaged %d models; top regions: %s", len(vectors), ", ".join(report.top(args.top)))
    return EXIT_OK


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sigsiam", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic two-timepoint cohort CSV")
    p.add_argument("--asd", type=int, default=30)
    p.add_argument("--nc", type=int, default=127)
    p.add_argument("--effect", type=float, default=3.0, help="group shift in within-group SDs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="CSV path (default $SIGSIAM_OUTPUT_DIR/cohort.csv)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="dump concatenated and binarized features as .npz")
    p.add_argument("input", help="subject CSV")
    p.add_argument("--cortical-level", type=int, default=3)
    p.add_argument("--volume-level", type=int, default=1)
    p.add_argument("-o", "--output", help="npz path (default $SIGSIAM_OUTPUT_DIR/features.npz)")
    p.set_defaults(func=cmd_featurize)

    ablation_help = "; ".join(f"{k}: {v}" for k, v in ABLATIONS.items())
    p = sub.add_parser(
        "crossval",
        help="stratified K-fold evaluation",
        description="Writes metrics.json, audit.csv and models/fold_XX.npz.",
        epilog=(
            "ablation arms: w/o binarization = --ablate no_binarization; w/o PS = --ablate no_ps "
            "(or no_ps_shrink); w/o AE = --ablate no_ae; w/o weight = --ablate no_weight; "
            "Comp_weight = --ablate comp_weight; w/o weight & AE = --ablate no_weight --ablate no_ae; "
            "w/o gender info = --ablate no_gender"
        ),
    )
    p.add_argument("input", help="subject CSV")
    p.add_argument("--config", help="flat JSON file of RunConfig keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any RunConfig key")
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int, help="fold count; the cohort size gives leave-one-out")
    p.add_argument("--jobs", type=int, help="folds trained in parallel")
    p.add_argument("--ae-outer-epochs", dest="ae_outer_epochs", type=int)
    p.add_argument("--ae-inner-epochs", dest="ae_inner_epochs", type=int)
    p.add_argument("--siamese-epochs", dest="siamese_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), help=ablation_help)
    p.add_argument("--repeat", type=int, default=1, help="run seeds seed..seed+N-1 and summarise")
    p.add_argument("--no-models", action="store_true", help="skip writing fold model files")
    p.add_argument("--out-dir", help="output directory (default $SIGSIAM_OUTPUT_DIR or .)")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("importance", help="fold-averaged region importance report")
    p.add_argument("models", nargs="+", help="model files or directories holding fold_*.npz")
    p.add_argument("--top", type=int, default=20, help="regions to log")
    p.add_argument("-o", "--output", help="CSV path (default $SIGSIAM_OUTPUT_DIR/region_importance.csv)")
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, StratificationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CapacityError, ContractError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SigsiamError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
