"""Texture and shape features: Haar DWT statistics, GLCM descriptors, Hu moments.

``extract_raw`` assembles the 74-dim raw vector per image in the fixed order
DWT (40), GLCM (18), Hu (9), entropy (7).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .entropy import EntropyFeatureSet, entropy_features, probabilities
from .imageio import GrayImage, histogram

SOURCE_TAGS = ("original", "thresholded", "roi")

DWT_BANDS = ("LL1", "LH1", "HL1", "HH1", "LL2", "LH2", "HL2", "HH2")
DWT_STATS = ("mean", "std", "energy", "entropy", "kurtosis")
DWT_NAMES = tuple(f"dwt_{b}_{s}" for b in DWT_BANDS for s in DWT_STATS)

GLCM_DESCRIPTORS = (
    "contrast",
    "correlation",
    "energy",
    "homogeneity",
    "entropy",
    "dissimilarity",
    "max_prob",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "diff_variance",
    "diff_entropy",
    "autocorrelation",
    "cluster_shade",
    "cluster_prominence",
    "imc1",
    "imc2",
    "idmn",
)
GLCM_NAMES = tuple(f"glcm_{d}" for d in GLCM_DESCRIPTORS)
# (row, col) displacement for distance 1 at 0, 45, 90 and 135 degrees
GLCM_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))
DEFAULT_GLCM_LEVELS = 8

HU_NAMES = tuple(f"hu_{i}" for i in range(1, 8)) + ("hu_flusser8", "hu_eccentricity")
ENTROPY_NAMES = tuple(f"ent_{n}" for n in EntropyFeatureSet.names())

RAW_NAMES = DWT_NAMES + GLCM_NAMES + HU_NAMES + ENTROPY_NAMES
FAMILY_SIZES = {"dwt": 40, "glcm": 18, "hu": 9, "ent": 7}

_EPS = 1e-30


@dataclass(frozen=True, eq=False)
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray
    source_tag: str = "original"

    def __post_init__(self):
        names = tuple(self.names)
        values = np.asarray(self.values, dtype=float).copy()
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        if values.shape != (len(names),):
            raise ValueError(f"{len(names)} names but values have shape {values.shape}")
        if self.source_tag not in SOURCE_TAGS:
            raise ValueError(f"unknown source tag {self.source_tag!r}")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


# --- Haar DWT ----------------------------------------------------------------

def haar_level(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One level of the orthonormal 2-D Haar transform.

    For each 2x2 block [[p, q], [r, s]] returns ``LL = (p+q+r+s)/2``,
    ``LH = (p+q-r-s)/2``, ``HL = (p-q+r-s)/2`` and ``HH = (p-q-r+s)/2``.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[0] % 2 or a.shape[1] % 2:
        raise ValueError(f"Haar level needs even dimensions, got odd dimension in {a.shape}")
    p, q = a[0::2, 0::2], a[0::2, 1::2]
    r, s = a[1::2, 0::2], a[1::2, 1::2]
    return (
        (p + q + r + s) / 2.0,
        (p + q - r - s) / 2.0,
        (p - q + r - s) / 2.0,
        (p - q - r + s) / 2.0,
    )


def haar_bands(img: GrayImage) -> dict[str, np.ndarray]:
    h, w = img.pixels.shape
    if h % 4 or w % 4:
        raise ValueError(
            f"two-level Haar needs dimensions divisible by 4 (odd dimension after a level), got {w}x{h}"
        )
    ll1, lh1, hl1, hh1 = haar_level(img.pixels)
    ll2, lh2, hl2, hh2 = haar_level(ll1)
    return dict(zip(DWT_BANDS, (ll1, lh1, hl1, hh1, ll2, lh2, hl2, hh2)))


def band_statistics(c: np.ndarray) -> list[float]:
    c = np.asarray(c, dtype=float).ravel()
    mean = float(c.mean())
    dev = c - mean
    m2 = float(np.mean(dev**2))
    sq = c * c
    energy = float(sq.mean())
    total = float(sq.sum())
    if total > 0:
        q = sq[sq > 0] / total
        ent = float(-np.sum(q * np.log(q)))
    else:
        ent = 0.0
    # relative guard: a constant band leaves only rounding residue in m2
    if m2 > 1e-12 * max(mean * mean, 1.0):
        kurt = float(np.mean(dev**4) / (m2 * m2) - 3.0)
    else:
        m2, kurt = 0.0, 0.0
    return [mean, math.sqrt(m2), energy, ent, kurt]


def dwt_features(img: GrayImage) -> np.ndarray:
    """40 statistics: 5 per band over the 8 Haar sub-bands of a 2-level decomposition."""
    bands = haar_bands(img)
    return np.array([v for b in DWT_BANDS for v in band_statistics(bands[b])])


# --- GLCM --------------------------------------------------------------------

def quantize(img: GrayImage, levels: int = DEFAULT_GLCM_LEVELS) -> np.ndarray:
    return (img.pixels.astype(np.int64) * levels) // 256


def glcm_matrix(q: np.ndarray, offset: tuple[int, int], levels: int = DEFAULT_GLCM_LEVELS) -> np.ndarray:
    """Raw co-occurrence counts of quantized array ``q`` for one (row, col) offset."""
    dy, dx = offset
    h, w = q.shape
    src = q[max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)]
    dst = q[max(0, dy) : h - max(0, -dy), max(0, dx) : w - max(0, -dx)]
    codes = src.ravel() * levels + dst.ravel()
    return np.bincount(codes, minlength=levels * levels).reshape(levels, levels).astype(float)


def normalize_glcm(counts: np.ndarray) -> np.ndarray:
    """Symmetrize (M + M^T) and scale to unit sum."""
    s = counts + counts.T
    total = s.sum()
    if total <= 0:
        raise ValueError("co-occurrence matrix is empty")
    return s / total


def _h(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def glcm_descriptors(P: np.ndarray) -> np.ndarray:
    """The 18 descriptors of one normalized GLCM, in ``GLCM_DESCRIPTORS`` order.

    Gray levels are indexed from 0.
    """
    G = P.shape[0]
    i, j = np.indices(P.shape, dtype=float)
    px, py = P.sum(axis=1), P.sum(axis=0)
    lv = np.arange(G, dtype=float)
    mu_x, mu_y = float(lv @ px), float(lv @ py)
    sd_x = math.sqrt(max(float(((lv - mu_x) ** 2) @ px), 0.0))
    sd_y = math.sqrt(max(float(((lv - mu_y) ** 2) @ py), 0.0))

    contrast = float(np.sum((i - j) ** 2 * P))
    if sd_x > 1e-12 and sd_y > 1e-12:
        correlation = float(np.sum((i - mu_x) * (j - mu_y) * P) / (sd_x * sd_y))
        correlation = min(1.0, max(-1.0, correlation))
    else:
        correlation = 1.0
    energy = float(np.sum(P * P))
    homogeneity = float(np.sum(P / (1.0 + (i - j) ** 2)))
    entropy = _h(P)
    dissimilarity = float(np.sum(np.abs(i - j) * P))
    max_prob = float(P.max())

    k_sum = (i + j).astype(int).ravel()
    p_sum = np.bincount(k_sum, weights=P.ravel(), minlength=2 * G - 1)
    ks = np.arange(2 * G - 1, dtype=float)
    sum_average = float(ks @ p_sum)
    sum_variance = float(((ks - sum_average) ** 2) @ p_sum)
    sum_entropy = _h(p_sum)

    k_diff = np.abs(i - j).astype(int).ravel()
    p_diff = np.bincount(k_diff, weights=P.ravel(), minlength=G)
    kd = np.arange(G, dtype=float)
    diff_mean = float(kd @ p_diff)
    diff_variance = float(((kd - diff_mean) ** 2) @ p_diff)
    diff_entropy = _h(p_diff)

    autocorrelation = float(np.sum(i * j * P))
    centred = i + j - mu_x - mu_y
    cluster_shade = float(np.sum(centred**3 * P))
    cluster_prominence = float(np.sum(centred**4 * P))

    hx, hy = _h(px), _h(py)
    outer = np.outer(px, py)
    nz = outer > 0
    hxy1 = float(-np.sum(P[nz] * np.log(outer[nz])))
    hxy2 = _h(outer)
    denom = max(hx, hy)
    imc1 = (entropy - hxy1) / denom if denom > 0 else 0.0
    imc2 = math.sqrt(max(0.0, 1.0 - math.exp(-2.0 * (hxy2 - entropy))))
    idmn = float(np.sum(P / (1.0 + (i - j) ** 2 / G**2)))

    return np.array([
        contrast, correlation, energy, homogeneity, entropy, dissimilarity, max_prob,
        sum_average, sum_variance, sum_entropy, diff_variance, diff_entropy,
        autocorrelation, cluster_shade, cluster_prominence, imc1, imc2, idmn,
    ])


def glcm_features(img: GrayImage, levels: int = DEFAULT_GLCM_LEVELS) -> np.ndarray:
    """18 Haralick-style descriptors averaged over the four unit offsets."""
    q = quantize(img, levels)
    per_offset = []
    for off in GLCM_OFFSETS:
        counts = glcm_matrix(q, off, levels)
        if counts.sum() == 0:
            continue  # offset does not fit in a 1-pixel-wide image
        per_offset.append(glcm_descriptors(normalize_glcm(counts)))
    if not per_offset:
        raise ValueError("image too small for any co-occurrence offset")
    return np.mean(per_offset, axis=0)


# --- moments -----------------------------------------------------------------

def central_moments(img: GrayImage) -> dict[tuple[int, int], float]:
    f = img.pixels.astype(float)
    m00 = float(f.sum())
    if m00 <= 0:
        raise ValueError("moments are undefined for an all-zero image")
    y, x = np.indices(f.shape, dtype=float)
    xc = float((x * f).sum() / m00)
    yc = float((y * f).sum() / m00)
    dx, dy = x - xc, y - yc
    mu = {(0, 0): m00}
    for p, q in ((2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)):
        mu[(p, q)] = float(np.sum(dx**p * dy**q * f))
    return mu


def hu_invariants(img: GrayImage) -> np.ndarray:
    """Seven Hu invariants followed by Flusser's eighth, unscaled."""
    mu = central_moments(img)
    m00 = mu[(0, 0)]

    def eta(p, q):
        return mu[(p, q)] / m00 ** (1.0 + (p + q) / 2.0)

    n20, n02, n11 = eta(2, 0), eta(0, 2), eta(1, 1)
    n30, n03, n21, n12 = eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2)
    a, b = n30 + n12, n21 + n03

    h1 = n20 + n02
    h2 = (n20 - n02) ** 2 + 4 * n11**2
    h3 = (n30 - 3 * n12) ** 2 + (3 * n21 - n03) ** 2
    h4 = a**2 + b**2
    h5 = (n30 - 3 * n12) * a * (a**2 - 3 * b**2) + (3 * n21 - n03) * b * (3 * a**2 - b**2)
    h6 = (n20 - n02) * (a**2 - b**2) + 4 * n11 * a * b
    h7 = (3 * n21 - n03) * a * (a**2 - 3 * b**2) - (n30 - 3 * n12) * b * (3 * a**2 - b**2)
    i8 = n11 * (a**2 - b**2) - (n20 - n02) * a * b
    return np.array([h1, h2, h3, h4, h5, h6, h7, i8])


def eccentricity(img: GrayImage) -> float:
    """sqrt(1 - l2/l1) from the eigenvalues of the second central moment matrix."""
    mu = central_moments(img)
    half_sum = (mu[(2, 0)] + mu[(0, 2)]) / 2.0
    root = math.hypot((mu[(2, 0)] - mu[(0, 2)]) / 2.0, mu[(1, 1)])
    l1, l2 = half_sum + root, half_sum - root
    if l1 <= 0:
        return 0.0
    return math.sqrt(max(0.0, 1.0 - l2 / l1))


def log_scale(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    return -np.sign(h) * np.log10(np.abs(h) + _EPS)


def hu_features(img: GrayImage) -> np.ndarray:
    """Log-scaled Hu invariants 1-7, Flusser's eighth, and eccentricity."""
    return np.append(log_scale(hu_invariants(img)), eccentricity(img))


# --- assembly ----------------------------------------------------------------

def extract_raw(img: GrayImage, source_tag: str = "original", glcm_levels: int = DEFAULT_GLCM_LEVELS) -> FeatureVector:
    """Raw 74-dim vector: DWT (40), GLCM (18), Hu (9), entropy (7)."""
    ent = entropy_features(probabilities(histogram(img))).as_array()
    values = np.concatenate([dwt_features(img), glcm_features(img, glcm_levels), hu_features(img), ent])
    if not np.all(np.isfinite(values)):
        bad = [n for n, v in zip(RAW_NAMES, values) if not np.isfinite(v)]
        raise FloatingPointError(f"non-finite features: {bad}")
    return FeatureVector(names=RAW_NAMES, values=values, source_tag=source_tag)
