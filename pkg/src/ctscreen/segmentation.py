"""Tri-level quantization and the fixed-threshold ROI / artifact split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .entropy import ThresholdTriple
from .imageio import N_LEVELS, GrayImage

DEFAULT_FILTER_TH = 179


@dataclass(frozen=True)
class QuantizedImage:
    image: GrayImage
    thresholds: ThresholdTriple
    levels: tuple[int, int, int, int]


@dataclass(frozen=True)
class RoiPair:
    roi: GrayImage
    artifact: GrayImage
    th: int


def segment_levels(img: GrayImage, th: ThresholdTriple) -> tuple[int, int, int, int]:
    """Rounded mean intensity of each of the four threshold classes.

    An empty class takes its lower bound.
    """
    counts = np.bincount(img.pixels.ravel(), minlength=N_LEVELS).astype(float)
    levels = np.arange(N_LEVELS, dtype=float)
    edges = [0, th.t1, th.t2, th.t3, N_LEVELS]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        n = counts[lo:hi].sum()
        if n == 0:
            out.append(lo)
        else:
            mean = float(np.dot(counts[lo:hi], levels[lo:hi]) / n)
            out.append(int(np.floor(mean + 0.5)))
    return tuple(out)


def apply_trilevel(img: GrayImage, th: ThresholdTriple) -> QuantizedImage:
    levels = segment_levels(img, th)
    lut = np.empty(N_LEVELS, dtype=np.uint8)
    edges = [0, th.t1, th.t2, th.t3, N_LEVELS]
    for value, lo, hi in zip(levels, edges[:-1], edges[1:]):
        lut[lo:hi] = value
    out = GrayImage(width=img.width, height=img.height, pixels=lut[img.pixels])
    return QuantizedImage(image=out, thresholds=th, levels=levels)


def threshold_filter(img: GrayImage, th: int = DEFAULT_FILTER_TH) -> RoiPair:
    """Split ``img`` at ``th``: pixels ``<= th`` go to the ROI, brighter ones to the artifact."""
    if not 1 <= int(th) <= N_LEVELS - 2:
        raise ValueError(f"filter threshold must lie in [1, 254], got {th}")
    px = img.pixels
    dark = px <= th
    roi = np.where(dark, px, 0).astype(np.uint8)
    artifact = np.where(dark, 0, px).astype(np.uint8)
    return RoiPair(
        roi=GrayImage(width=img.width, height=img.height, pixels=roi),
        artifact=GrayImage(width=img.width, height=img.height, pixels=artifact),
        th=int(th),
    )
