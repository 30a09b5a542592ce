"""Grayscale image I/O, resizing, histograms, dataset manifests and synthetic data."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

N_LEVELS = 256
LABELS = ("normal", "covid")
POSITIVE_LABEL = "covid"
DEFAULT_SIZE = 512


class ImageFormatError(ValueError):
    """Raised for unreadable or unsupported image files."""


class ManifestError(ValueError):
    """Raised for malformed dataset manifests."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit single-channel raster. ``pixels`` is a read-only (height, width) uint8 array."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if px.size != self.width * self.height:
            raise ValueError(
                f"pixel count {px.size} does not match {self.width}x{self.height}"
            )
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255) or np.any(px != np.round(px)):
                raise ValueError("pixel values must be integers in [0, 255]")
        px = np.array(px, dtype=np.uint8).reshape(self.height, self.width)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, array) -> "GrayImage":
        a = np.asarray(array)
        if a.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {a.shape}")
        return cls(width=a.shape[1], height=a.shape[0], pixels=a)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def flat(self) -> list[int]:
        return self.pixels.ravel().tolist()

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.width, self.height, self.pixels.tobytes()))

    def __repr__(self):
        return f"GrayImage(width={self.width}, height={self.height})"


@dataclass(frozen=True, eq=False)
class Histogram:
    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (N_LEVELS,) or np.any(counts < 0):
            raise ValueError("histogram needs 256 non-negative counts")
        if int(counts.sum()) != self.total:
            raise ValueError("histogram total does not match the sum of counts")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)


def histogram(img: GrayImage) -> Histogram:
    counts = np.bincount(img.pixels.ravel(), minlength=N_LEVELS)
    return Histogram(counts=counts, total=int(counts.sum()))


# --- PGM / PNG ---------------------------------------------------------------

def _read_pgm_tokens(data: bytes, n: int) -> tuple[list[bytes], int]:
    """Read ``n`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < n:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            break
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def _decode_pgm(data: bytes, path) -> GrayImage:
    tokens, pos = _read_pgm_tokens(data, 4)
    if len(tokens) < 4:
        raise ImageFormatError(f"{path}: malformed header, truncated before maxval")
    names = ("magic", "width", "height", "maxval")
    if tokens[0] != b"P5":
        raise ImageFormatError(f"{path}: malformed header, magic {tokens[0]!r} is not P5")
    values = []
    for name, tok in zip(names[1:], tokens[1:]):
        try:
            values.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"{path}: malformed header, {name} {tok!r} is not an integer") from None
    width, height, maxval = values
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: malformed header, width/height must be positive")
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval} (only 255 is accepted)")
    # exactly one whitespace byte separates the header from the raster
    payload = data[pos + 1 :]
    expected = width * height
    if len(payload) < expected:
        raise ImageFormatError(
            f"{path}: payload shorter than width×height ({len(payload)} < {expected} bytes)"
        )
    px = np.frombuffer(payload[:expected], dtype=np.uint8).reshape(height, width)
    return GrayImage(width=width, height=height, pixels=px)


def _decode_png(path) -> GrayImage:
    with Image.open(path) as im:
        if im.mode != "L":
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "F", "1"):
                raise ImageFormatError(f"{path}: unsupported bit depth (mode {im.mode}), expected 8-bit gray")
            raise ImageFormatError(f"{path}: color or palette image (mode {im.mode}) rejected, expected 8-bit gray")
        return GrayImage.from_array(np.array(im, dtype=np.uint8))


def load_image(path) -> GrayImage:
    """Load a binary PGM (P5, maxval 255) or an 8-bit grayscale PNG."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image file not found: {path}")
    data = path.read_bytes()
    if data[:2] == b"P5":
        return _decode_pgm(data, path)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _decode_png(path)
    if data[:2] in (b"P2", b"P3", b"P6"):
        raise ImageFormatError(f"{path}: malformed header, only binary graymap P5 is supported")
    raise ImageFormatError(f"{path}: unrecognized image format")


def save_pgm(img: GrayImage, path, comment: str | None = None) -> Path:
    """Binary P5 writer; ``comment`` (single line) goes into the header."""
    path = Path(path)
    note = ""
    if comment:
        note = "# " + " ".join(comment.splitlines()) + "\n"
    header = f"P5\n{note}{img.width} {img.height}\n255\n".encode("utf-8")
    path.write_bytes(header + img.pixels.tobytes())
    return path


def save_png(img: GrayImage, path) -> Path:
    path = Path(path)
    Image.fromarray(np.asarray(img.pixels), mode="L").save(path)
    return path


# --- resizing ----------------------------------------------------------------

def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centers: output sample j sits at input coordinate (j + 0.5) * n_in / n_out - 0.5
    coord = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    coord = np.clip(coord, 0.0, n_in - 1)
    lo = np.floor(coord).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coord - lo
    return lo, hi, frac


def resize_bilinear(img: GrayImage, w: int, h: int) -> GrayImage:
    """Bilinear resize to ``w`` x ``h`` with half-pixel-center sampling."""
    if w <= 0 or h <= 0:
        raise ValueError(f"target dimensions must be positive, got {w}x{h}")
    if (w, h) == (img.width, img.height):
        return img
    src = img.pixels.astype(float)
    y0, y1, fy = _bilinear_axis(img.height, h)
    x0, x1, fx = _bilinear_axis(img.width, w)
    rows = src[y0] * (1.0 - fy)[:, None] + src[y1] * fy[:, None]
    out = rows[:, x0] * (1.0 - fx)[None, :] + rows[:, x1] * fx[None, :]
    out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return GrayImage(width=w, height=h, pixels=out)


# --- manifests ---------------------------------------------------------------

@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[tuple[Path, str], ...]
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        recs = tuple((Path(p), str(lbl)) for p, lbl in self.records)
        for p, lbl in recs:
            if lbl not in LABELS:
                raise ManifestError(f"label {lbl!r} for {p} is not one of {LABELS}")
        object.__setattr__(self, "records", recs)
        object.__setattr__(self, "counts", {lbl: sum(1 for _, l in recs if l == lbl) for lbl in LABELS})

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[tuple[Path, str]]:
        return iter(self.records)

    def write_csv(self, path) -> Path:
        """Write ``path,label`` rows; paths are stored relative to the CSV when possible."""
        path = Path(path)
        base = path.parent.resolve()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "label"])
            for p, lbl in self.records:
                try:
                    rel = Path(p).resolve().relative_to(base)
                except ValueError:
                    rel = Path(p)
                writer.writerow([rel.as_posix(), lbl])
        return path


def load_manifest(path, check_exists: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label"]:
            raise ManifestError(f"{path}: header must be exactly 'path,label', got {reader.fieldnames}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            p = Path(row["path"])
            if not p.is_absolute():
                p = path.parent / p
            if check_exists and not p.is_file():
                raise ManifestError(f"{path}:{lineno}: image {p} does not exist")
            records.append((p, row["label"].strip()))
    return DatasetManifest(records=tuple(records))


# --- synthetic data ----------------------------------------------------------

def _smooth_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="wrap")
    return n / (n.std() + 1e-12)


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2


def synth_slice(rng: np.random.Generator, infected: bool, size: int = DEFAULT_SIZE) -> GrayImage:
    """One synthetic axial slice: dark lung fields inside a bright ring.

    Infected slices additionally carry mottled mid-intensity patches inside
    the lung fields.
    """
    yy, xx = np.mgrid[-1:1:complex(size), -1:1:complex(size)]
    img = 12.0 + 3.0 * rng.standard_normal((size, size))

    by, bx = 0.78 + 0.05 * rng.random(), 0.92 + 0.04 * rng.random()
    body = _ellipse(yy, xx, 0.0, 0.0, by, bx)
    img = np.where(body <= 1.0, 105.0 + 8.0 * rng.random(), img)
    ring = (body <= 1.0) & (body >= (1.0 - 0.12 - 0.04 * rng.random()))
    img = np.where(ring, 215.0 + 10.0 * rng.random(), img)

    lung_mask = np.zeros((size, size), dtype=bool)
    lung_level = 45.0 + 10.0 * rng.random()
    field_var = 6.0 * _smooth_noise(rng, (size, size), sigma=size / 16)
    for side in (-1.0, 1.0):
        cy = 0.02 * rng.standard_normal()
        cx = side * (0.42 + 0.03 * rng.standard_normal())
        ry, rx = 0.52 + 0.05 * rng.random(), 0.28 + 0.04 * rng.random()
        lung_mask |= _ellipse(yy, xx, cy, cx, ry, rx) <= 1.0
    img = np.where(lung_mask, lung_level + field_var, img)

    if infected:
        mottle = _smooth_noise(rng, (size, size), sigma=2.0)
        patches = np.zeros((size, size))
        for _ in range(int(rng.integers(3, 7))):
            side = rng.choice([-1.0, 1.0])
            cy = rng.uniform(-0.35, 0.35)
            cx = side * rng.uniform(0.3, 0.55)
            r = rng.uniform(0.08, 0.18)
            amp = rng.uniform(55.0, 90.0)
            patches += amp * np.exp(-_ellipse(yy, xx, cy, cx, r, r))
        patches *= np.clip(0.75 + 0.35 * mottle, 0.0, None)
        img = np.where(lung_mask, img + patches, img)

    img = img + 2.0 * rng.standard_normal((size, size))
    return GrayImage.from_array(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8))


def synth_dataset(seed: int, n_per_class: int, out_dir, size: int = DEFAULT_SIZE) -> DatasetManifest:
    """Write ``2 * n_per_class`` synthetic P5 slices plus ``manifest.csv`` to ``out_dir``.

    Images are a pure function of ``(seed, label, index)``; class ``normal``
    is the plain lung field, class ``covid`` adds mottled patches.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")

    records = []
    for class_id, label in enumerate(LABELS):
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, class_id, i])
            img = synth_slice(rng, infected=(label == POSITIVE_LABEL), size=size)
            p = save_pgm(img, out / f"{label}_{i:04d}.pgm")
            records.append((p, label))
    manifest = DatasetManifest(records=tuple(records))
    manifest.write_csv(out / "manifest.csv")
    return manifest


def images_of(manifest: DatasetManifest | Sequence[tuple[Path, str]]):
    for p, label in manifest:
        yield load_image(p), label
