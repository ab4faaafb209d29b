"""Slide tiling, tile quality scoring, and slide-context sampling.

A slide is tiled into non-overlapping fixed-size patches (default 512x512 at
nominal 40x magnification); partial border strips are discarded.  Each tile is
scored by a pluggable quality scorer and kept when its score reaches the
threshold (default 0.5, boundary inclusive).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ScorerContractError, ValidationError

TILE_SIZE = 512
QC_THRESHOLD = 0.5
NOMINAL_MAGNIFICATION = 40.0

# Heuristic scorer: pixels darker than this fraction of full luminance count
# as foreground; tiles are usable when foreground density sits in the band.
FOREGROUND_LUMA_FRACTION = 0.85
DENSITY_BAND = (0.05, 0.6)
# Laplacian variance at which the sharpness sub-score reaches 0.5.
SHARPNESS_HALF_VARIANCE = 0.005


@dataclass(frozen=True, order=True)
class TileAddress:
    """Grid position of one tile; pixel origin is (col*size, row*size)."""

    slide_id: str
    row: int
    col: int
    size: int = TILE_SIZE

    @property
    def x0(self) -> int:
        return self.col * self.size

    @property
    def y0(self) -> int:
        return self.row * self.size


@dataclass(frozen=True)
class ScoredTile:
    address: TileAddress
    quality: float
    kept: bool


class SlideImage:
    """An in-memory RGB slide with a stable id.

    Desk-scale stand-in for a pyramidal scan: the full raster is held as an
    HxWx3 uint8 array.
    """

    def __init__(self, slide_id: str, pixels: np.ndarray, magnification: float = NOMINAL_MAGNIFICATION):
        pixels = np.asarray(pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValidationError(f"slide pixels must be HxWx3, got shape {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValidationError("slide must be at least 1x1 pixels")
        if pixels.dtype != np.uint8:
            raise ValidationError(f"slide pixels must be uint8, got {pixels.dtype}")
        self.id = slide_id
        self.pixels = pixels
        self.magnification = magnification

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def pixel(self, x: int, y: int) -> tuple[int, int, int]:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValidationError(f"pixel ({x}, {y}) outside {self.width}x{self.height} slide")
        r, g, b = self.pixels[y, x]
        return int(r), int(g), int(b)

    def tile_pixels(self, address: TileAddress) -> np.ndarray:
        x0, y0, s = address.x0, address.y0, address.size
        if x0 + s > self.width or y0 + s > self.height:
            raise ValidationError(f"tile {address} does not fit inside {self.width}x{self.height} slide")
        return self.pixels[y0:y0 + s, x0:x0 + s]

    @classmethod
    def from_file(cls, path, slide_id: str | None = None) -> "SlideImage":
        from PIL import Image

        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        name = slide_id if slide_id is not None else str(path)
        return cls(name, arr)

    @classmethod
    def synthetic(cls, width: int, height: int, seed: int) -> "SlideImage":
        from .synth import synthetic_slide

        return synthetic_slide(width, height, seed).slide


QualityScorer = Callable[[np.ndarray], float]


def tile_grid(slide: SlideImage, size: int = TILE_SIZE) -> list[TileAddress]:
    """Row-major addresses of every full tile; partial border strips dropped.

    A slide smaller than one tile (or size 0) yields an empty grid rather
    than an error.
    """
    if size < 0:
        raise ValidationError(f"tile size must be non-negative, got {size}")
    if size == 0:
        return []
    rows = slide.height // size
    cols = slide.width // size
    return [
        TileAddress(slide.id, row, col, size)
        for row in range(rows)
        for col in range(cols)
    ]


def _density_score(fraction: float) -> float:
    lo, hi = DENSITY_BAND
    if fraction <= 0.0 or fraction >= 1.0:
        return 0.0
    if fraction < lo:
        return fraction / lo
    if fraction <= hi:
        return 1.0
    return (1.0 - fraction) / (1.0 - hi)


def _sharpness_score(lap_var: float) -> float:
    return lap_var / (lap_var + SHARPNESS_HALF_VARIANCE)


def heuristic_quality(pixels: np.ndarray) -> float:
    """Deterministic stand-in for a learned tile-quality model.

    Geometric mean of two [0, 1] sub-scores: cell density (foreground
    fraction inside the target band scores 1, ramping to 0 at fully empty or
    fully covered) and sharpness (saturating map of the luminance Laplacian
    variance).  Monotone in both sub-scores.
    """
    fg_frac, lap_var = kernels.tile_stats(pixels, FOREGROUND_LUMA_FRACTION)
    score = math.sqrt(_density_score(fg_frac) * _sharpness_score(lap_var))
    return min(max(score, 0.0), 1.0)


def score_tiles(
    slide: SlideImage,
    tiles: Sequence[TileAddress],
    scorer: QualityScorer = heuristic_quality,
    threshold: float = QC_THRESHOLD,
) -> list[ScoredTile]:
    """Score every tile in input order; kept iff quality >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    out = []
    for addr in tiles:
        q = float(scorer(slide.tile_pixels(addr)))
        if not 0.0 <= q <= 1.0 or not math.isfinite(q):
            raise ScorerContractError(addr, q)
        out.append(ScoredTile(addr, q, q >= threshold))
    return out


def sample_slide_context(
    kept_tiles: Sequence[TileAddress], k: int, seed: int
) -> list[TileAddress]:
    """Uniform sample of min(k, n) kept tiles without replacement.

    Deterministic for a fixed seed; the result is sorted row-major so a
    sampled context is stable regardless of input order.
    """
    if k < 0:
        raise ValidationError(f"sample size must be >= 0, got {k}")
    n = len(kept_tiles)
    take = min(k, n)
    if take == 0:
        return []
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=take, replace=False)
    picked = [kept_tiles[i] for i in idx]
    picked.sort(key=lambda t: (t.row, t.col))
    return picked
