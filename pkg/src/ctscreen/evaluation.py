"""Stratified k-fold cross-validation, confusion-matrix metrics and glyph plots."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import classifiers
from .classifiers import encode_labels
from .selection import FUSION_MODES, VariantMasks, fused_matrix, select_variants

REPORT_SCHEMA_VERSION = 1
METRIC_NAMES = ("fnr", "fpr", "acc", "pre", "sen", "spe", "npv", "f1s")
GLYPH_SPOKES = ("acc", "pre", "sen", "spe", "f1s", "npv")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class MetricSet:
    fnr: float
    fpr: float
    acc: float
    pre: float
    sen: float
    spe: float
    npv: float
    f1s: float
    degenerate: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def _ratio(num: int, den: int, name: str, flags: list) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix) -> MetricSet:
    """FNR, FPR, ACC, PRE, SEN, SPE, NPV and F1 from raw counts.

    Zero denominators give 0 and are listed in ``degenerate``.
    """
    flags: list[str] = []
    tp, fn, fp, tn = cm.tp, cm.fn, cm.fp, cm.tn
    return MetricSet(
        fnr=_ratio(fn, fn + tp, "fnr", flags),
        fpr=_ratio(fp, fp + tn, "fpr", flags),
        acc=_ratio(tp + tn, tp + tn + fp + fn, "acc", flags),
        pre=_ratio(tp, tp + fp, "pre", flags),
        sen=_ratio(tp, tp + fn, "sen", flags),
        spe=_ratio(tn, tn + fp, "spe", flags),
        npv=_ratio(tn, tn + fn, "npv", flags),
        f1s=_ratio(2 * tp, 2 * tp + fn + fp, "f1s", flags),
        degenerate=tuple(flags),
    )


def confusion(predictions, truth) -> ConfusionMatrix:
    """Tally predictions against truth with covid as the positive class."""
    pred = encode_labels(predictions)
    true = encode_labels(truth)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    return ConfusionMatrix(
        tp=int(np.sum((pred == 1) & (true == 1))),
        fn=int(np.sum((pred == 0) & (true == 1))),
        fp=int(np.sum((pred == 1) & (true == 0))),
        tn=int(np.sum((pred == 0) & (true == 0))),
    )


def stratified_kfold(labels, k: int, seed: int) -> np.ndarray:
    """Fold index per sample; each class is shuffled then dealt round-robin.

    The second class starts dealing where the first stopped, so fold sizes
    stay within one of each other overall as well as per class.
    """
    y = encode_labels(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    folds = np.empty(y.size, dtype=int)
    rng = np.random.default_rng(seed)
    start = 0
    for c in (1, 0):
        idx = np.flatnonzero(y == c)
        if idx.size < k:
            raise ValueError(f"class {classifiers.decode_label(c)!r} has {idx.size} samples, fewer than k={k}")
        idx = rng.permutation(idx)
        folds[idx] = (start + np.arange(idx.size)) % k
        start = (start + idx.size) % k
    return folds


@dataclass
class FoldResult:
    fold: int
    confusion: ConfusionMatrix
    metrics: MetricSet
    n_features: int
    backfilled: dict = field(default_factory=dict)


@dataclass
class CvReport:
    algorithm: str
    fusion_mode: str
    folds: list[FoldResult]
    config: dict

    @property
    def best_fold(self) -> int:
        accs = [f.metrics.acc for f in self.folds]
        return int(np.argmax(accs))

    @property
    def best(self) -> MetricSet:
        return self.folds[self.best_fold].metrics

    def mean(self) -> dict:
        return {m: float(np.mean([getattr(f.metrics, m) for f in self.folds])) for m in METRIC_NAMES}

    def std(self) -> dict:
        return {m: float(np.std([getattr(f.metrics, m) for f in self.folds])) for m in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {
            "classifier": self.algorithm,
            "fusion_mode": self.fusion_mode,
            "config": self.config,
            "folds": [
                {
                    "fold": f.fold,
                    **asdict(f.confusion),
                    "metrics": f.metrics.as_dict(),
                    "degenerate": list(f.metrics.degenerate),
                    "n_features": f.n_features,
                    "backfilled": f.backfilled,
                }
                for f in self.folds
            ],
            "best_fold": self.best_fold,
            "best": self.best.as_dict(),
            "mean": self.mean(),
            "std": self.std(),
        }


def cross_validate(
    tables: dict[str, np.ndarray],
    labels,
    algorithm: str,
    hp: dict | None = None,
    k: int = 5,
    seed: int = 0,
    fusion_mode: str = "FFV2",
    global_selection: bool = False,
) -> CvReport:
    """k-fold CV of one classifier on one fusion mode.

    ``tables`` maps each source tag (original, thresholded, roi) to an
    n x 74 raw feature matrix in the same row order as ``labels``. DWT
    selection runs on each training fold unless ``global_selection``.
    """
    y = encode_labels(labels)
    fusion_mode = fusion_mode.upper()
    if fusion_mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {fusion_mode!r}")
    hp = classifiers.resolve_hp(algorithm, hp)
    folds = stratified_kfold(y, k, seed)
    global_masks = select_variants(tables, y) if global_selection else None

    results = []
    for f in range(k):
        train, test = folds != f, folds == f
        masks: VariantMasks = global_masks or select_variants({t: m[train] for t, m in tables.items()}, y[train])
        X, _ = fused_matrix(tables, masks, fusion_mode)
        model = classifiers.fit(algorithm, X[train], y[train], hp, seed=seed + f)
        cm = confusion(model.predict_codes(X[test]), y[test])
        results.append(
            FoldResult(
                fold=f,
                confusion=cm,
                metrics=metrics(cm),
                n_features=X.shape[1],
                backfilled={"original": masks.original.backfilled, "roi": masks.roi.backfilled},
            )
        )
    config = {
        "seed": seed,
        "k": k,
        "classifier": algorithm,
        "hyperparameters": hp,
        "fusion_mode": fusion_mode,
        "global_selection": global_selection,
    }
    return CvReport(algorithm, fusion_mode, results, config)


# --- report artifacts --------------------------------------------------------

def report_document(reports: Sequence[CvReport], run_config: dict, generated_at: str | None = None) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "generated_at": generated_at,
        "run_config": run_config,
        "entries": [r.to_dict() for r in reports],
    }


def write_report_json(reports: Sequence[CvReport], run_config: dict, path, generated_at: str | None = None) -> Path:
    path = Path(path)
    doc = report_document(reports, run_config, generated_at)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_metrics_csv(reports: Sequence[CvReport], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["classifier", "fusion_mode", "fold", "tp", "fn", "fp", "tn", *METRIC_NAMES])
        for r in reports:
            for f in r.folds:
                c = f.confusion
                w.writerow([r.algorithm, r.fusion_mode, f.fold, c.tp, c.fn, c.fp, c.tn,
                            *(f"{getattr(f.metrics, m):.6f}" for m in METRIC_NAMES)])
    return path


# --- glyph plot --------------------------------------------------------------

def glyph_vertices(ms: MetricSet | dict, radius: float = 1.0, cx: float = 0.0, cy: float = 0.0):
    """Spoke end points, first spoke at 12 o'clock, 60 degrees apart clockwise (SVG y down)."""
    values = ms if isinstance(ms, dict) else ms.as_dict()
    pts = []
    for i, name in enumerate(GLYPH_SPOKES):
        a = math.radians(60 * i)
        r = radius * float(values[name])
        pts.append((cx + r * math.sin(a), cy - r * math.cos(a)))
    return pts


def polygon_area(pts) -> float:
    s = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def glyph_svg(
    metric_sets: dict[str, MetricSet | dict], path=None, radius: float = 80.0, title: str = "", desc: str = ""
) -> str:
    """One star glyph per classifier; returns the SVG text and writes it if ``path`` is given."""
    if not metric_sets:
        raise ValueError("need at least one metric set")
    pad = 40.0
    cell = 2 * (radius + pad)
    width = cell * len(metric_sets)
    height = cell + 30.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
    ]
    if title:
        out.append(f'<title>{escape(title)}</title>')
    if desc:
        out.append(f'<desc>{escape(desc)}</desc>')
    for k, (name, ms) in enumerate(metric_sets.items()):
        cx, cy = cell * k + cell / 2, cell / 2 + 10
        out.append(f'<g class="glyph" id="glyph-{escape(name)}">')
        for frac in (0.25, 0.5, 0.75, 1.0):
            out.append(
                f'<circle class="grid" cx="{cx:.2f}" cy="{cy:.2f}" r="{radius * frac:.2f}" '
                'fill="none" stroke="#ccc" stroke-width="0.5"/>'
            )
        full = glyph_vertices({s: 1.0 for s in GLYPH_SPOKES}, radius, cx, cy)
        pts = glyph_vertices(ms, radius, cx, cy)
        for spoke, (x, y), (fx, fy) in zip(GLYPH_SPOKES, pts, full):
            out.append(
                f'<line class="spoke" data-metric="{spoke}" x1="{cx:.2f}" y1="{cy:.2f}" '
                f'x2="{x:.2f}" y2="{y:.2f}" stroke="#333" stroke-width="1"/>'
            )
            lx, ly = cx + (fx - cx) * 1.18, cy + (fy - cy) * 1.18
            out.append(
                f'<text x="{lx:.2f}" y="{ly:.2f}" font-size="10" text-anchor="middle" '
                f'dominant-baseline="middle">{spoke.upper()}</text>'
            )
        poly = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        out.append(f'<polygon class="star" points="{poly}" fill="#4a7ebb" fill-opacity="0.4" stroke="#1f4e8c"/>')
        out.append(
            f'<text x="{cx:.2f}" y="{cell + 15:.2f}" font-size="13" text-anchor="middle">{escape(name)}</text>'
        )
        out.append("</g>")
    out.append("</svg>")
    svg = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(svg)
    return svg
