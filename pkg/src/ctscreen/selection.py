"""Welch t-test ranking, DWT feature selection (40 -> 13) and serial fusion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .features import DWT_NAMES, ENTROPY_NAMES, GLCM_NAMES, HU_NAMES, RAW_NAMES, SOURCE_TAGS, FeatureVector

N_DWT_KEEP = 13
P_CUTOFF = 0.05
SELECTED_SIZE = N_DWT_KEEP + len(GLCM_NAMES) + len(HU_NAMES) + len(ENTROPY_NAMES)  # 47

FUSION_MODES = {
    "FV1": ("original",),
    "FFV1": ("original", "roi"),
    "FFV2": ("original", "thresholded", "roi"),
}


@dataclass(frozen=True)
class TTestResult:
    feature: str
    t: float
    p: float
    rank: int
    selected: bool = False


@dataclass(frozen=True)
class SelectionMask:
    dwt: tuple[str, ...]
    glcm: tuple[str, ...] = GLCM_NAMES
    hu: tuple[str, ...] = HU_NAMES
    ent: tuple[str, ...] = ENTROPY_NAMES
    backfilled: int = 0
    report: tuple[TTestResult, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if len(self.dwt) != N_DWT_KEEP or not set(self.dwt) <= set(DWT_NAMES):
            raise ValueError(f"mask must keep exactly {N_DWT_KEEP} DWT features")

    @property
    def names(self) -> tuple[str, ...]:
        return self.dwt + self.glcm + self.hu + self.ent

    def indices(self, names: Sequence[str] = RAW_NAMES) -> np.ndarray:
        pos = {n: k for k, n in enumerate(names)}
        return np.array([pos[n] for n in self.names])

    def apply(self, fv: FeatureVector) -> FeatureVector:
        return FeatureVector(self.names, fv.values[self.indices(fv.names)], fv.source_tag)

    def write_report(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "t", "p", "rank", "selected"])
            for r in self.report:
                w.writerow([r.feature, repr(r.t), repr(r.p), r.rank, int(r.selected)])
        return path


def t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t via the regularized incomplete beta."""
    if not math.isfinite(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def welch_t(a, b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p value.

    Degrees of freedom follow Welch-Satterthwaite. When both sample
    variances are zero the result is ``(0.0, 1.0)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError(f"each sample needs at least 2 values, got {a.size} and {b.size}")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 <= 0:
        return 0.0, 1.0
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    return float(t), t_sf_two_sided(float(t), _satterthwaite(va, vb, a.size, b.size))


def _satterthwaite(va: float, vb: float, na: int, nb: int) -> float:
    # written with variance shares in [0, 1] so tiny variances cannot underflow
    wa, wb = va / (va + vb), vb / (va + vb)
    return float(1.0 / (wa * wa / (na - 1) + wb * wb / (nb - 1)))


def welch_df(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return _satterthwaite(a.var(ddof=1) / a.size, b.var(ddof=1) / b.size, a.size, b.size)


def rank_features(X: np.ndarray, y: np.ndarray, names: Sequence[str]) -> list[TTestResult]:
    """Welch t per column, ranked by |t| (ties keep column order)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(bool)
    if y.all() or not y.any():
        raise ValueError("feature selection needs both labels present")
    stats = [welch_t(X[y, k], X[~y, k]) for k in range(X.shape[1])]
    order = sorted(range(len(stats)), key=lambda k: (-abs(stats[k][0]), k))
    rank = {k: r + 1 for r, k in enumerate(order)}
    return [TTestResult(names[k], stats[k][0], stats[k][1], rank[k]) for k in range(len(stats))]


def select_dwt(X: np.ndarray, y: np.ndarray, names: Sequence[str] = RAW_NAMES) -> SelectionMask:
    """Keep the 13 DWT columns with the largest |t| among those with p <= 0.05.

    ``y`` is truthy for the positive class. If fewer than 13 columns pass
    the p-value cut the remainder is filled by |t| rank from the rejected
    ones and ``backfilled`` records how many. Other families pass through.
    """
    names = list(names)
    cols = [names.index(n) for n in DWT_NAMES]
    results = rank_features(np.asarray(X)[:, cols], y, DWT_NAMES)
    by_rank = sorted(results, key=lambda r: r.rank)
    passing = [r for r in by_rank if r.p <= P_CUTOFF]
    failing = [r for r in by_rank if r.p > P_CUTOFF]
    chosen = (passing + failing)[:N_DWT_KEEP]
    backfilled = max(0, N_DWT_KEEP - len(passing))
    keep = {r.feature for r in chosen}
    report = tuple(
        TTestResult(r.feature, r.t, r.p, r.rank, r.feature in keep) for r in results
    )
    dwt = tuple(n for n in DWT_NAMES if n in keep)
    return SelectionMask(dwt=dwt, backfilled=backfilled, report=report)


# --- fusion ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FusedVector:
    names: tuple[str, ...]
    values: np.ndarray
    fusion_mode: str

    def __len__(self):
        return len(self.names)


def _check_mode(mode: str) -> str:
    m = mode.upper()
    if m not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}; expected one of {sorted(FUSION_MODES)}")
    return m


def fuse(fv1: FeatureVector, fv2: FeatureVector, fv3: FeatureVector, mode: str) -> FusedVector:
    """Serially concatenate the per-variant vectors selected by ``mode``.

    FV1 is the original-image vector alone (47), FFV1 appends the ROI vector
    (94), FFV2 appends the thresholded and ROI vectors (141). Names gain a
    ``<source>_`` prefix.
    """
    mode = _check_mode(mode)
    parts = dict(zip(SOURCE_TAGS, (fv1, fv2, fv3)))
    for fv in parts.values():
        if len(fv) != SELECTED_SIZE:
            raise ValueError(f"fusion inputs must be {SELECTED_SIZE}-dim, got {len(fv)}")
    if not (fv1.names == fv2.names == fv3.names):
        raise ValueError("fusion inputs must share the same feature names")
    names, values = [], []
    for tag in FUSION_MODES[mode]:
        names += [f"{tag}_{n}" for n in parts[tag].names]
        values.append(parts[tag].values)
    return FusedVector(tuple(names), np.concatenate(values), mode)


@dataclass(frozen=True)
class VariantMasks:
    """Selection masks per image variant; the thresholded variant reuses the original's."""

    original: SelectionMask
    roi: SelectionMask

    def for_tag(self, tag: str) -> SelectionMask:
        return self.roi if tag == "roi" else self.original


def select_variants(tables: dict[str, np.ndarray], y: np.ndarray) -> VariantMasks:
    return VariantMasks(original=select_dwt(tables["original"], y), roi=select_dwt(tables["roi"], y))


def fused_matrix(tables: dict[str, np.ndarray], masks: VariantMasks, mode: str) -> tuple[np.ndarray, list[str]]:
    """Row-wise fusion of raw per-variant tables (n x 74 each) into n x {47, 94, 141}."""
    mode = _check_mode(mode)
    blocks, names = [], []
    for tag in FUSION_MODES[mode]:
        mask = masks.for_tag(tag)
        blocks.append(np.asarray(tables[tag])[:, mask.indices()])
        names += [f"{tag}_{n}" for n in mask.names]
    return np.hstack(blocks), names
