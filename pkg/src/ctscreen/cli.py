"""Command-line entry point: ``ctscreen <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import classifiers, evaluation, pipeline
from .entropy import probabilities
from .imageio import (
    ImageFormatError,
    ManifestError,
    load_image,
    load_manifest,
    save_pgm,
    synth_dataset,
)
from .optimizer import cba_threshold, exhaustive_tri_threshold
from .pipeline import ConfigError, DataError, RunConfig
from .selection import select_variants


class StageError(Exception):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

log = logging.getLogger("ctscreen")


# --- argument parsing --------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with run settings (CLI flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _image_stage(p: argparse.ArgumentParser) -> None:
    p.add_argument("input", type=Path, help="image (PGM/PNG) or manifest CSV")
    p.add_argument("--size", type=int, help="working resolution (square)")
    p.add_argument("--jobs", type=int)


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fusion", choices=["fv1", "ffv1", "ffv2"], type=str.lower)
    p.add_argument("--classifier", choices=classifiers.ALGORITHMS)
    p.add_argument("--folds", type=int)
    p.add_argument("--all-classifiers", action="store_true", default=None)
    p.add_argument("--all-fusions", action="store_true", default=None)
    p.add_argument("--global-selection", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctscreen", description="Normal/COVID CT slice screening pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("threshold", help="CBA tri-level Kapur thresholding")
    _common(p)
    _image_stage(p)
    p.add_argument("--oracle", action="store_true", default=None, help="also run the exhaustive search")

    p = sub.add_parser("segment", help="threshold, then split into ROI and artifact images")
    _common(p)
    _image_stage(p)
    p.add_argument("--th", type=int, help="threshold-filter level")

    p = sub.add_parser("features", help="74-dim raw feature table for a manifest")
    _common(p)
    _image_stage(p)
    p.add_argument("--th", type=int)

    p = sub.add_parser("evaluate", help="k-fold CV on a feature table")
    _common(p)
    p.add_argument("features", type=Path, help="feature table CSV")
    _eval_flags(p)

    p = sub.add_parser("pipeline", help="features then evaluate, into one run directory")
    _common(p)
    _image_stage(p)
    p.add_argument("--th", type=int)
    _eval_flags(p)
    p.add_argument("--dry-run", action="store_true", help="validate inputs and config, then stop")

    p = sub.add_parser("synth", help="write a synthetic labelled dataset")
    _common(p)
    p.add_argument("--n-per-class", type=int, default=50)
    p.add_argument("--size", type=int, default=512)

    p = sub.add_parser("oracle-bench", help="CBA against exhaustive search on random histograms")
    _common(p)
    p.add_argument("--n", type=int, default=20, help="number of histograms")
    p.add_argument("--levels", type=int, default=64, help="occupied gray levels per histogram")
    p.add_argument("--max-iter", type=int)
    return parser


_CONFIG_FLAGS = ("seed", "th", "size", "fusion", "classifier", "folds", "jobs",
                 "all_classifiers", "all_fusions", "global_selection", "oracle")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = pipeline.load_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS if getattr(args, k, None) is not None}
    if getattr(args, "max_iter", None) is not None:
        overrides["cba"] = {**file_values.get("cba", {}), "max_iter": args.max_iter}
    return RunConfig.from_sources(file_values, overrides)


# --- helpers -----------------------------------------------------------------

def _records(path: Path) -> tuple[list[tuple[Path, str]], Path]:
    """Manifest records, or a single unlabelled image."""
    if not path.exists():
        raise DataError(f"input not found: {path}")
    if path.suffix.lower() == ".csv":
        man = load_manifest(path, check_exists=False)
        if not man.records:
            raise DataError(f"{path}: no inputs")
        return [(p, lbl) for p, lbl in man.records], path.parent
    return [(path, "")], path.parent


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _stem(path: Path) -> str:
    return Path(path).stem


def _summary(done: int, failures: list) -> int:
    print(f"processed {done} image(s), {len(failures)} failure(s)")
    for name, err in failures:
        print(f"  FAILED {name}: {err}")
    return EXIT_DATA if failures else EXIT_OK


def _now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


# --- subcommands -------------------------------------------------------------

def cmd_threshold(args, cfg: RunConfig) -> int:
    records, _ = _records(args.input)
    args.out.mkdir(parents=True, exist_ok=True)
    failures, rows = [], []
    for i, (path, _) in enumerate(records):
        try:
            proc = pipeline.process_image(load_image(path), cfg, pipeline.image_seed(cfg.seed, i))
        except (ImageFormatError, ValueError, OSError) as exc:
            failures.append((str(path), str(exc)))
            continue
        stem = _stem(path)
        save_pgm(proc.thresholded, args.out / f"{stem}_thresholded.pgm", comment="ctscreen " + cfg.to_json())
        proc.opt.write_trace(args.out / f"{stem}_trace.csv")
        th = proc.opt.best_thresholds.as_tuple()
        row = {"image": stem, "t1": th[0], "t2": th[1], "t3": th[2], "score": proc.opt.best_score}
        msg = f"{stem}: thresholds {th} score {proc.opt.best_score:.6f}"
        if proc.oracle is not None:
            o_th, o_score = proc.oracle
            row.update(oracle_t=list(o_th.as_tuple()), oracle_score=o_score,
                       ratio=proc.opt.best_score / o_score if o_score else 1.0)
            msg += f" | oracle {o_th.as_tuple()} {o_score:.6f} ratio {row['ratio']:.5f}"
        print(msg)
        rows.append(row)
    _write_json(args.out / "thresholds.json", {"run_config": cfg.to_dict(), "images": rows})
    _write_json(args.out / "config.json", cfg.to_dict())
    return _summary(len(rows), failures)


def cmd_segment(args, cfg: RunConfig) -> int:
    records, _ = _records(args.input)
    args.out.mkdir(parents=True, exist_ok=True)
    failures, done = [], 0
    for i, (path, _) in enumerate(records):
        try:
            proc = pipeline.process_image(load_image(path), cfg, pipeline.image_seed(cfg.seed, i))
        except (ImageFormatError, ValueError, OSError) as exc:
            failures.append((str(path), str(exc)))
            continue
        pipeline.save_intermediates(proc, args.out, _stem(path), cfg)
        done += 1
    _write_json(args.out / "config.json", cfg.to_dict())
    return _summary(done, failures)


def _write_thresholds_csv(rows, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "t1", "t2", "t3", "score"])
        for name, t1, t2, t3, score in rows:
            w.writerow([name, t1, t2, t3, repr(float(score))])


def _features(args, cfg: RunConfig, out: Path, save_dir: Path | None = None) -> pipeline.BatchResult:
    records, base = _records(args.input)
    if any(lbl == "" for _, lbl in records):
        raise DataError("the features stage needs a labelled manifest CSV")
    out.mkdir(parents=True, exist_ok=True)
    if save_dir is not None:
        save_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = pipeline.extract_table(records, cfg, base=base, save_dir=save_dir)
    log.info("feature extraction: %d images in %.1fs", len(records), time.perf_counter() - t0)
    pipeline.write_feature_table(res.table, out / "features.csv")
    _write_thresholds_csv(res.thresholds, out / "thresholds.csv")
    _write_json(out / "config.json", cfg.to_dict())
    return res


def cmd_features(args, cfg: RunConfig) -> int:
    res = _features(args, cfg, args.out)
    return _summary(len(res.table), res.failures)


def _evaluate(ft: pipeline.FeatureTable, cfg: RunConfig, out: Path) -> list[evaluation.CvReport]:
    out.mkdir(parents=True, exist_ok=True)
    reports = pipeline.evaluate_table(ft, cfg)
    run_config = cfg.to_dict()
    evaluation.write_report_json(reports, run_config, out / "report.json", generated_at=_now())
    evaluation.write_metrics_csv(reports, out / "metrics.csv")
    masks = select_variants(ft.tables, classifiers.encode_labels(ft.labels))
    masks.original.write_report(out / "selection_original.csv")
    masks.roi.write_report(out / "selection_roi.csv")
    for fusion in cfg.fusions_to_run():
        sets = {r.algorithm.upper(): r.best for r in reports if r.fusion_mode == fusion}
        evaluation.glyph_svg(sets, out / f"glyph_{fusion.lower()}.svg", title=f"{fusion} best-fold metrics",
                             desc=cfg.to_json())
    for r in reports:
        mean = r.mean()
        print(f"{r.algorithm:>4} {r.fusion_mode:<5} best-fold acc {r.best.acc:.4f}  "
              f"mean acc {mean['acc']:.4f} +/- {r.std()['acc']:.4f}")
    best = pipeline.winner(reports)
    print(f"winner: classifier={best.algorithm} fusion={best.fusion_mode} "
          f"best-fold acc={best.best.acc:.4f} mean acc={best.mean()['acc']:.4f}")
    return reports


def cmd_evaluate(args, cfg: RunConfig) -> int:
    ft = pipeline.read_feature_table(args.features)
    _evaluate(ft, cfg, args.out)
    _write_json(args.out / "config.json", cfg.to_dict())
    return EXIT_OK


def cmd_pipeline(args, cfg: RunConfig) -> int:
    records, _ = _records(args.input)
    if args.dry_run:
        missing = [str(p) for p, _ in records if not Path(p).is_file()]
        if missing:
            raise DataError(f"missing input files: {', '.join(missing[:5])}")
        print(f"dry run: {len(records)} image(s), config OK")
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "config.json", cfg.to_dict())
    try:
        res = _features(args, cfg, args.out, save_dir=args.out / "intermediates")
    except (DataError, ManifestError, ImageFormatError) as exc:
        raise StageError("features", exc) from None
    if res.failures:
        _summary(len(res.table), res.failures)
        raise StageError("features", DataError(f"{len(res.failures)} image(s) failed; not evaluating"))
    try:
        _evaluate(res.table, cfg, args.out)
    except (DataError, ValueError) as exc:
        raise StageError("evaluate", exc) from None
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    if args.n_per_class < 1:
        raise ConfigError("--n-per-class must be at least 1")
    man = synth_dataset(cfg.seed, args.n_per_class, args.out, size=args.size)
    print(f"wrote {len(man.records)} images and {args.out / 'manifest.csv'}")
    return EXIT_OK


def cmd_oracle_bench(args, cfg: RunConfig) -> int:
    if args.n < 1 or not 4 <= args.levels <= 256:
        raise ConfigError("--n must be positive and --levels within [4, 256]")
    rng = np.random.default_rng(cfg.seed)
    passed, rows = 0, []
    for i in range(args.n):
        counts = np.zeros(256)
        counts[: args.levels] = rng.integers(1, 1000, args.levels)
        prob = probabilities(counts)
        t0 = time.perf_counter()
        res = cba_threshold(prob, cfg.cba_config(pipeline.image_seed(cfg.seed, i)))
        dt = time.perf_counter() - t0
        o_th, o_score = exhaustive_tri_threshold(prob, cfg.cba_config().kapur_segments)
        ratio = res.best_score / o_score if o_score else 1.0
        passed += ratio >= 0.995
        rows.append({"index": i, "cba": list(res.best_thresholds.as_tuple()), "cba_score": res.best_score,
                     "oracle": list(o_th.as_tuple()), "oracle_score": o_score, "ratio": ratio, "seconds": dt})
        print(f"{i:3d} cba {res.best_thresholds.as_tuple()} {res.best_score:.6f}  "
              f"oracle {o_th.as_tuple()} {o_score:.6f}  ratio {ratio:.5f}  {dt:.2f}s")
    print(f"{passed}/{args.n} within 99.5% of the exhaustive optimum")
    args.out.mkdir(parents=True, exist_ok=True)
    _write_json(args.out / "oracle_bench.json", {"run_config": cfg.to_dict(), "results": rows})
    return EXIT_OK


COMMANDS = {
    "threshold": cmd_threshold,
    "segment": cmd_segment,
    "features": cmd_features,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
    "synth": cmd_synth,
    "oracle-bench": cmd_oracle_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except StageError as exc:
        code = EXIT_DATA if isinstance(exc.cause, (DataError, ManifestError, ImageFormatError)) else EXIT_INTERNAL
        print(f"pipeline aborted: {exc}", file=sys.stderr)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ManifestError, ImageFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
