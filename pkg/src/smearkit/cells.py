"""Cell-crop extraction from instance masks, label normalization, differentials.

Instances whose bounding box touches a tile edge are treated as incomplete
and dropped.  Crops are square, centered on the instance centroid with a
configurable context factor, and translated (never shrunk) to stay inside the
tile.  The white-cell differential is computed over the five canonical
subtypes; Others is tallied separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import MappingMissError, ValidationError
from .slides import TileAddress

WBC_SUBTYPES = ("Basophil", "Eosinophil", "Lymphocyte", "Monocyte", "Neutrophil")
OTHERS_LABEL = "Others"
ALL_LABELS = WBC_SUBTYPES + (OTHERS_LABEL,)

DEFAULT_CONTEXT_FACTOR = 2.0
DEFAULT_MIN_CONFIDENCE = 0.5

NATIVE_DATASET = "native"


@dataclass(frozen=True)
class InstanceMask:
    """Per-tile label image: 0 = background, k >= 1 = instance k."""

    tile: TileAddress
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {labels.shape}")
        if labels.shape != (self.tile.size, self.tile.size):
            raise ValidationError(
                f"mask shape {labels.shape} does not match tile size {self.tile.size}"
            )
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError(f"mask labels must be integers, got {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise ValidationError("mask contains negative labels")
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class Instance:
    instance_id: int
    centroid: tuple[float, float]  # (x, y), mean of member pixel coordinates
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1) inclusive


@dataclass(frozen=True)
class CellRecord:
    id: str
    tile: TileAddress
    crop_box: tuple[int, int, int]  # (x0, y0, side)
    subtype: str
    confidence: float
    keywords: tuple[str, ...] = ()

    def __post_init__(self):
        if self.subtype not in ALL_LABELS:
            raise ValidationError(f"unknown subtype {self.subtype!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")
        x0, y0, side = self.crop_box
        if side < 1 or x0 < 0 or y0 < 0 or x0 + side > self.tile.size or y0 + side > self.tile.size:
            raise ValidationError(f"crop box {self.crop_box} not inside {self.tile.size}px tile")


@dataclass
class Differential:
    """WBC percentages over the canonical subtypes; sums to 100 when n_cells > 0."""

    percentages: dict[str, float]
    n_cells: int
    others_count: int = 0


def extract_instances(mask: InstanceMask) -> list[Instance]:
    """Complete (non-border) instances in ascending id order."""
    counts, sx, sy, minx, miny, maxx, maxy = kernels.mask_stats(mask.labels)
    size = mask.tile.size
    out = []
    for lab in range(1, counts.shape[0]):
        n = int(counts[lab])
        if n == 0:
            continue
        x0, y0, x1, y1 = int(minx[lab]), int(miny[lab]), int(maxx[lab]), int(maxy[lab])
        if x0 == 0 or y0 == 0 or x1 == size - 1 or y1 == size - 1:
            continue  # incomplete border instance
        out.append(
            Instance(
                instance_id=lab,
                centroid=(float(sx[lab] / n), float(sy[lab] / n)),
                bbox=(x0, y0, x1, y1),
            )
        )
    return out


def crop_square(
    bbox: tuple[int, int, int, int],
    centroid: tuple[float, float],
    context_factor: float = DEFAULT_CONTEXT_FACTOR,
    tile_size: int = 512,
) -> tuple[int, int, int]:
    """Square crop box (x0, y0, side) around an instance.

    side = ceil(max(bbox extent) * context_factor) clamped to the tile; the
    box is centered on the centroid then translated minimally to fit.
    """
    if context_factor < 1.0:
        raise ValidationError(f"context factor must be >= 1, got {context_factor}")
    x0, y0, x1, y1 = bbox
    w = x1 - x0 + 1
    h = y1 - y0 + 1
    side = min(math.ceil(max(w, h) * context_factor), tile_size)
    cx, cy = centroid
    bx = int(round(cx - side / 2.0))
    by = int(round(cy - side / 2.0))
    bx = min(max(bx, 0), tile_size - side)
    by = min(max(by, 0), tile_size - side)
    return bx, by, side


_LABEL_MAP: dict[tuple[str, str], str] | None = None


def _load_label_map() -> dict[tuple[str, str], str]:
    global _LABEL_MAP
    if _LABEL_MAP is None:
        table = {}
        text = resources.files("smearkit.data").joinpath("cell_type_map.tsv").read_text()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            dataset, raw, normalized = line.split("\t")
            table[(dataset, raw)] = normalized
        _LABEL_MAP = table
    return _LABEL_MAP


def label_map_rows() -> list[tuple[str, str, str]]:
    """All (dataset, raw_label, normalized) rows of the bundled table."""
    return [(d, r, n) for (d, r), n in sorted(_load_label_map().items())]


def normalize_label(source_dataset: str, raw_label: str) -> str:
    """Map an external dataset label onto the canonical subtype alphabet.

    ``native`` labels are already canonical and only validated.  Unknown
    pairs raise :class:`MappingMissError` rather than guessing.
    """
    if source_dataset == NATIVE_DATASET:
        if raw_label in ALL_LABELS:
            return raw_label
        raise MappingMissError(source_dataset, raw_label)
    try:
        return _load_label_map()[(source_dataset, raw_label)]
    except KeyError:
        raise MappingMissError(source_dataset, raw_label) from None


def differential(
    cells: Iterable[CellRecord], min_confidence: float = DEFAULT_MIN_CONFIDENCE
) -> Differential:
    """Slide-level WBC differential over cells at or above the confidence cut."""
    if not 0.0 <= min_confidence <= 1.0:
        raise ValidationError(f"min confidence {min_confidence} outside [0, 1]")
    counts = {s: 0 for s in WBC_SUBTYPES}
    others = 0
    for cell in cells:
        if cell.confidence < min_confidence:
            continue
        if cell.subtype == OTHERS_LABEL:
            others += 1
        else:
            counts[cell.subtype] += 1
    n = sum(counts.values())
    if n == 0:
        pct = {s: 0.0 for s in WBC_SUBTYPES}
    else:
        pct = {s: 100.0 * c / n for s, c in counts.items()}
    return Differential(percentages=pct, n_cells=n, others_count=others)


def cells_from_mask(
    mask: InstanceMask,
    labels: dict[int, tuple[str, float, Sequence[str]]],
    context_factor: float = DEFAULT_CONTEXT_FACTOR,
    default_subtype: str = OTHERS_LABEL,
) -> list[CellRecord]:
    """Extract complete instances from one tile and attach subtype labels.

    ``labels`` maps instance id -> (subtype, confidence, keywords); instances
    without an entry fall back to the default subtype at confidence 1.0.
    """
    tile = mask.tile
    out = []
    for inst in extract_instances(mask):
        box = crop_square(inst.bbox, inst.centroid, context_factor, tile.size)
        subtype, conf, kw = labels.get(inst.instance_id, (default_subtype, 1.0, ()))
        out.append(
            CellRecord(
                id=f"{tile.slide_id}_r{tile.row}_c{tile.col}_i{inst.instance_id}",
                tile=tile,
                crop_box=box,
                subtype=subtype,
                confidence=float(conf),
                keywords=tuple(kw),
            )
        )
    return out
