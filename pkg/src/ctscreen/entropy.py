"""Histogram probabilities, the Kapur multi-threshold objective and scalar entropy features."""

from __future__ import annotations

from dataclasses import dataclass, astuple, fields
from typing import Iterable, Sequence

import numpy as np

from .imageio import N_LEVELS, Histogram

# Parameters for the generalized entropies in entropy_features.
RENYI_ALPHA = 2.0
TSALLIS_Q = 2.0
KAPUR_ALPHA = 0.5
KAPUR_BETA = 0.7

DEFAULT_KAPUR_SEGMENTS = 4


@dataclass(frozen=True)
class ThresholdTriple:
    t1: int
    t2: int
    t3: int

    def __post_init__(self):
        if not (1 <= self.t1 < self.t2 < self.t3 <= N_LEVELS - 1):
            raise ValueError(
                f"thresholds must satisfy 1 <= t1 < t2 < t3 <= 255, got {astuple(self)}"
            )

    @classmethod
    def from_values(cls, values: Iterable[int]) -> "ThresholdTriple":
        """Build a triple from any three integers, sorting them first."""
        t = sorted(int(v) for v in values)
        if len(t) != 3:
            raise ValueError(f"expected 3 thresholds, got {len(t)}")
        return cls(*t)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.t1, self.t2, self.t3)


@dataclass(frozen=True)
class EntropyFeatureSet:
    kapur_ab: float
    max_h: float
    renyi: float
    tsallis: float
    shannon: float
    vajda: float
    yager: float

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


def probabilities(hist: Histogram | Sequence[int] | np.ndarray) -> np.ndarray:
    """Normalize histogram counts into a probability distribution.

    Accepts a :class:`Histogram` or a raw count sequence. Raises
    ``ValueError`` when the total count is zero.
    """
    counts = hist.counts if isinstance(hist, Histogram) else np.asarray(hist)
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1 or np.any(counts < 0):
        raise ValueError("histogram counts must be a 1-D non-negative sequence")
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty histogram: total count is zero")
    return counts / total


def _as_prob(prob) -> np.ndarray:
    p = np.asarray(prob, dtype=float)
    if p.ndim != 1 or np.any(p < 0):
        raise ValueError("probability vector must be 1-D and non-negative")
    return p


def segment_entropy(p: np.ndarray) -> float:
    """Shannon entropy of one histogram segment renormalized by its mass."""
    omega = p.sum()
    if omega <= 0:
        return 0.0
    q = p[p > 0] / omega
    return float(-np.sum(q * np.log(q)))


def _segment_bounds(thresholds: Sequence[int], n_levels: int, n_segments: int):
    edges = [0, *thresholds, n_levels]
    bounds = list(zip(edges[:-1], edges[1:]))
    return bounds[:n_segments]


def kapur_objective(prob, th, segments: int = DEFAULT_KAPUR_SEGMENTS) -> float:
    """Sum of per-segment entropies for the given thresholds.

    ``th`` may be a :class:`ThresholdTriple` or any sequence of thresholds;
    it is sorted before use. With ``segments=4`` the last class ``[t3, 255]``
    contributes, with ``segments=3`` only the classes below ``t3`` do.
    """
    p = _as_prob(prob)
    t = sorted(th.as_tuple() if isinstance(th, ThresholdTriple) else (int(v) for v in th))
    if segments not in (len(t), len(t) + 1):
        raise ValueError(f"segments must be {len(t)} or {len(t) + 1}")
    return float(sum(segment_entropy(p[a:b]) for a, b in _segment_bounds(t, p.size, segments)))


class KapurTable:
    """Prefix sums for O(1) segment entropy evaluation.

    For a segment with mass ``w`` and ``s = sum(p ln p)`` its entropy is
    ``ln w - s / w``; both sums come from cumulative tables.
    """

    def __init__(self, prob, segments: int = DEFAULT_KAPUR_SEGMENTS):
        p = _as_prob(prob)
        plogp = np.zeros_like(p)
        nz = p > 0
        plogp[nz] = p[nz] * np.log(p[nz])
        self.n_levels = p.size
        self.segments = segments
        self.cum_p = np.concatenate([[0.0], np.cumsum(p)])
        self.cum_plogp = np.concatenate([[0.0], np.cumsum(plogp)])
        # cumsum of zeros leaves the running total unchanged, so empty
        # segments give exactly zero mass; track support separately anyway.
        self.cum_nz = np.concatenate([[0], np.cumsum(nz)])

    def segment(self, lo, hi) -> np.ndarray:
        """Entropy of segments ``[lo, hi)``; vectorized over array arguments."""
        lo = np.asarray(lo)
        hi = np.asarray(hi)
        w = self.cum_p[hi] - self.cum_p[lo]
        s = self.cum_plogp[hi] - self.cum_plogp[lo]
        occupied = (self.cum_nz[hi] - self.cum_nz[lo]) > 0
        safe_w = np.where(occupied, w, 1.0)
        e = np.log(safe_w) - s / safe_w
        return np.where(occupied, e, 0.0)

    def score(self, t1, t2, t3) -> np.ndarray:
        total = self.segment(0, t1) + self.segment(t1, t2) + self.segment(t2, t3)
        if self.segments == 4:
            total = total + self.segment(t3, self.n_levels)
        return total


def _xlogx(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    nz = x > 0
    out[nz] = x[nz] * np.log(x[nz])
    return out


def entropy_features(prob) -> EntropyFeatureSet:
    """Seven scalar entropies of a gray-level distribution (0 ln 0 = 0)."""
    p = _as_prob(prob)
    support = p[p > 0]

    shannon = float(-np.sum(_xlogx(p)))
    renyi = float(np.log(np.sum(support**RENYI_ALPHA)) / (1.0 - RENYI_ALPHA))
    tsallis = float((1.0 - np.sum(support**TSALLIS_Q)) / (TSALLIS_Q - 1.0))
    kapur_ab = float(
        np.log(np.sum(support**KAPUR_ALPHA) / np.sum(support**KAPUR_BETA))
        / (KAPUR_BETA - KAPUR_ALPHA)
    )
    max_h = float(np.log(support.size))
    vajda = float(np.sum(p * (1.0 - p)))
    yager = float(1.0 - np.sum(np.abs(2.0 * p - 1.0)) / N_LEVELS)

    # clamp -0.0 and 1e-17 residues on degenerate (point-mass) inputs
    return EntropyFeatureSet(
        kapur_ab=max(kapur_ab, 0.0),
        max_h=max_h,
        renyi=max(renyi, 0.0),
        tsallis=max(tsallis, 0.0),
        shannon=max(shannon, 0.0),
        vajda=max(vajda, 0.0),
        yager=yager,
    )
