"""Run configuration and the per-stage batch drivers used by the CLI."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import classifiers
from .entropy import probabilities
from .evaluation import CvReport, cross_validate
from .features import RAW_NAMES, SOURCE_TAGS, extract_raw
from .imageio import DEFAULT_SIZE, LABELS, GrayImage, histogram, load_image, resize_bilinear, save_pgm
from .optimizer import CbaConfig, OptResult, cba_threshold, exhaustive_tri_threshold
from .segmentation import DEFAULT_FILTER_TH, apply_trilevel, threshold_filter
from .selection import FUSION_MODES

log = logging.getLogger(__name__)

FEATURE_TABLE_FIXED = ("image", "source_tag")


class ConfigError(ValueError):
    """Invalid run configuration."""


class DataError(ValueError):
    """Invalid or unreadable input data."""


@dataclass
class RunConfig:
    seed: int = 1
    th: int = DEFAULT_FILTER_TH
    size: int = DEFAULT_SIZE
    fusion: str = "ffv2"
    classifier: str = "svm"
    folds: int = 5
    jobs: int = 1
    all_classifiers: bool = False
    all_fusions: bool = False
    global_selection: bool = False
    oracle: bool = False
    hyperparameters: dict = field(default_factory=dict)
    cba: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if not 1 <= self.th <= 254:
            raise ConfigError(f"th must lie in [1, 254], got {self.th}")
        if self.size < 4 or self.size % 4:
            raise ConfigError(f"size must be a positive multiple of 4, got {self.size}")
        if self.fusion.upper() not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of fv1, ffv1, ffv2, got {self.fusion!r}")
        if self.classifier not in classifiers.ALGORITHMS:
            raise ConfigError(f"classifier must be one of {classifiers.ALGORITHMS}, got {self.classifier!r}")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        for algo, hp in self.hyperparameters.items():
            try:
                classifiers.resolve_hp(algo, hp)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            self.cba_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid CBA settings: {exc}") from None
        return self

    def cba_config(self, seed: int | None = None) -> CbaConfig:
        return CbaConfig(**{**self.cba, "seed": self.seed if seed is None else seed})

    def classifiers_to_run(self) -> list[str]:
        return list(classifiers.ALGORITHMS) if self.all_classifiers else [self.classifier]

    def fusions_to_run(self) -> list[str]:
        return list(FUSION_MODES) if self.all_fusions else [self.fusion.upper()]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cba"] = self.cba_config().to_dict()
        return d

    def to_json(self) -> str:
        """Compact single-line form, embedded in image and SVG outputs."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_sources(cls, file_values: dict | None = None, overrides: dict | None = None) -> "RunConfig":
        """Merge config-file values with CLI overrides (overrides win)."""
        known = {f.name for f in fields(cls)}
        merged = {}
        for source in (file_values or {}, overrides or {}):
            for k, v in source.items():
                key = k.replace("-", "_")
                if key not in known:
                    raise ConfigError(f"unknown config key {k!r}")
                if v is not None:
                    merged[key] = v
        try:
            return cls(**merged).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def image_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


# --- per-image processing ----------------------------------------------------

@dataclass
class ProcessedImage:
    original: GrayImage
    thresholded: GrayImage
    roi: GrayImage
    artifact: GrayImage
    opt: OptResult
    oracle: tuple | None = None


def process_image(img: GrayImage, cfg: RunConfig, seed: int) -> ProcessedImage:
    """Resize, CBA tri-level threshold, then split the thresholded image at ``cfg.th``."""
    img = resize_bilinear(img, cfg.size, cfg.size)
    cba_cfg = cfg.cba_config(seed)
    prob = probabilities(histogram(img))
    opt = cba_threshold(prob, cba_cfg)
    quant = apply_trilevel(img, opt.best_thresholds)
    pair = threshold_filter(quant.image, cfg.th)
    oracle = exhaustive_tri_threshold(prob, cba_cfg.kapur_segments) if cfg.oracle else None
    return ProcessedImage(img, quant.image, pair.roi, pair.artifact, opt, oracle)


def save_intermediates(proc: ProcessedImage, out_dir: Path, stem: str, cfg: RunConfig) -> None:
    note = "ctscreen " + cfg.to_json()
    for tag in ("thresholded", "roi", "artifact"):
        save_pgm(getattr(proc, tag), out_dir / f"{stem}_{tag}.pgm", comment=note)
    proc.opt.write_trace(out_dir / f"{stem}_trace.csv")


def _features_job(args):
    path, label, cfg, seed, save_dir, stem = args
    try:
        proc = process_image(load_image(path), cfg, seed)
        if save_dir is not None:
            save_intermediates(proc, save_dir, stem, cfg)
        rows = [extract_raw(getattr(proc, tag), tag).values for tag in SOURCE_TAGS]
        th = proc.opt.best_thresholds.as_tuple()
        return path, label, rows, th, proc.opt.best_score, None
    except Exception as exc:  # reported per file, batch continues
        return path, label, None, None, None, f"{type(exc).__name__}: {exc}"


def _map(fn, jobs: Iterable, n_jobs: int):
    jobs = list(jobs)
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))  # map keeps submission order


@dataclass
class FeatureTable:
    images: list[str]
    labels: list[str]
    tables: dict[str, np.ndarray]

    def __len__(self):
        return len(self.images)


@dataclass
class BatchResult:
    table: FeatureTable
    thresholds: list[tuple]
    failures: list[tuple[str, str]]


def extract_table(
    records: Sequence[tuple[Path, str]],
    cfg: RunConfig,
    base: Path | None = None,
    save_dir: Path | None = None,
) -> BatchResult:
    """Features for every manifest record, in manifest order.

    Unreadable or failing images are skipped and listed in ``failures``.
    With ``save_dir`` the thresholded, ROI and artifact images plus the CBA
    trace of each input are written there.
    """
    names = [_display_name(Path(p), base) for p, _ in records]
    jobs = [
        (Path(p), lbl, cfg, image_seed(cfg.seed, i), save_dir, names[i].replace("/", "__").rsplit(".", 1)[0])
        for i, (p, lbl) in enumerate(records)
    ]
    images, labels, thresholds, failures = [], [], [], []
    rows = {tag: [] for tag in SOURCE_TAGS}
    results = _map(_features_job, jobs, cfg.jobs)
    for name, (path, label, vecs, th, score, err) in zip(names, results):
        if err is not None:
            log.warning("failed on %s: %s", name, err)
            failures.append((name, err))
            continue
        images.append(name)
        labels.append(label)
        thresholds.append((name, *th, score))
        for tag, v in zip(SOURCE_TAGS, vecs):
            rows[tag].append(v)
    tables = {t: np.array(r).reshape(len(images), len(RAW_NAMES)) for t, r in rows.items()}
    return BatchResult(FeatureTable(images, labels, tables), thresholds, failures)


def _display_name(path: Path, base: Path | None) -> str:
    if base is not None:
        try:
            return Path(path).resolve().relative_to(base.resolve()).as_posix()
        except ValueError:
            pass
    return Path(path).as_posix()


def write_feature_table(ft: FeatureTable, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*FEATURE_TABLE_FIXED, *RAW_NAMES, "label"])
        for i, (name, label) in enumerate(zip(ft.images, ft.labels)):
            for tag in SOURCE_TAGS:
                w.writerow([name, tag, *(repr(float(v)) for v in ft.tables[tag][i]), label])
    return path


def read_feature_table(path) -> FeatureTable:
    """Parse a feature CSV back into per-variant matrices; raises DataError on schema problems."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature table not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty feature table") from None
        required = [*FEATURE_TABLE_FIXED, *RAW_NAMES, "label"]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: schema error, missing column(s): {', '.join(missing)}")
        col = {c: header.index(c) for c in required}
        feat_cols = [col[n] for n in RAW_NAMES]
        per_image: dict[str, dict] = {}
        order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            name, tag, label = row[col["image"]], row[col["source_tag"]], row[col["label"]]
            if tag not in SOURCE_TAGS:
                raise DataError(f"{path}:{lineno}: unknown source_tag {tag!r}")
            if label not in LABELS:
                raise DataError(f"{path}:{lineno}: unknown label {label!r}")
            try:
                values = np.array([float(row[c]) for c in feat_cols])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: bad feature value ({exc})") from None
            entry = per_image.setdefault(name, {"label": label, "rows": {}})
            if name not in order:
                order.append(name)
            if entry["label"] != label:
                raise DataError(f"{path}:{lineno}: conflicting labels for {name}")
            entry["rows"][tag] = values
    incomplete = [n for n in order if set(per_image[n]["rows"]) != set(SOURCE_TAGS)]
    if incomplete:
        raise DataError(f"{path}: images missing a source_tag row: {', '.join(incomplete[:5])}")
    tables = {
        t: np.array([per_image[n]["rows"][t] for n in order]).reshape(len(order), len(RAW_NAMES))
        for t in SOURCE_TAGS
    }
    return FeatureTable(order, [per_image[n]["label"] for n in order], tables)


def evaluate_table(ft: FeatureTable, cfg: RunConfig) -> list[CvReport]:
    if len(set(ft.labels)) < 2:
        raise DataError("feature table must contain both classes")
    reports = []
    for fusion in cfg.fusions_to_run():
        for algo in cfg.classifiers_to_run():
            reports.append(
                cross_validate(
                    ft.tables,
                    ft.labels,
                    algo,
                    cfg.hyperparameters.get(algo),
                    k=cfg.folds,
                    seed=cfg.seed,
                    fusion_mode=fusion,
                    global_selection=cfg.global_selection,
                )
            )
    return reports


def winner(reports: Sequence[CvReport]) -> CvReport:
    """Best (classifier, fusion) by best-fold accuracy, then mean accuracy; earlier entries win ties."""
    return max(reports, key=lambda r: (r.best.acc, r.mean()["acc"]))
