"""Seeded synthetic slides with matching instance masks and cell labels.

The generator paints stained-looking cell disks on a near-white film, denser
toward the slide center and fading to empty margins, so the tile QC heuristic
sees both keepable and rejectable tiles.  Because painting and labeling come
from the same cell list, per-tile instance masks and subtype labels are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cells import InstanceMask, OTHERS_LABEL
from .lexicon import ABNORMALITY_KEYWORDS, COHORT_DIAGNOSES
from .slides import SlideImage, TileAddress

_BACKGROUND = np.array([244, 242, 238], dtype=np.int16)

_SUBTYPE_COLORS = {
    "Basophil": (88, 58, 138),
    "Eosinophil": (196, 96, 90),
    "Lymphocyte": (70, 86, 168),
    "Monocyte": (118, 126, 170),
    "Neutrophil": (150, 120, 180),
    OTHERS_LABEL: (208, 148, 156),
}

_SUBTYPE_WEIGHTS = {
    "Neutrophil": 0.42,
    "Lymphocyte": 0.24,
    "Monocyte": 0.12,
    "Eosinophil": 0.08,
    "Basophil": 0.04,
    OTHERS_LABEL: 0.10,
}

_CELLS_PER_TILE = 45  # slide-wide mean; the center reaches roughly pi/2 of this


@dataclass(frozen=True)
class SyntheticCell:
    cell_id: int
    cx: float
    cy: float
    radius: float
    subtype: str
    confidence: float
    keywords: tuple[str, ...]


@dataclass
class SyntheticSlideBundle:
    slide: SlideImage
    label_map: np.ndarray  # HxW int32, global instance ids (0 = background)
    cells: tuple[SyntheticCell, ...]
    diagnosis: str

    def mask_for(self, address: TileAddress) -> InstanceMask:
        x0, y0, s = address.x0, address.y0, address.size
        return InstanceMask(address, self.label_map[y0:y0 + s, x0:x0 + s])

    def labels_for(self, address: TileAddress) -> dict[int, tuple[str, float, tuple[str, ...]]]:
        x0, y0, s = address.x0, address.y0, address.size
        present = np.unique(self.label_map[y0:y0 + s, x0:x0 + s])
        out = {}
        for cid in present:
            if cid > 0:
                cell = self.cells[cid - 1]
                out[int(cid)] = (cell.subtype, cell.confidence, cell.keywords)
        return out


def _draw_cells(rng: np.random.Generator, width: int, height: int) -> list[SyntheticCell]:
    n_total = int(round(width * height / (512.0 * 512.0) * _CELLS_PER_TILE))
    subtypes = list(_SUBTYPE_WEIGHTS)
    weights = np.array([_SUBTYPE_WEIGHTS[s] for s in subtypes])
    weights = weights / weights.sum()
    cells = []
    for i in range(n_total):
        # Inverse transform of a sin(pi x / W) density: dense film center,
        # feathered empty edges.
        u = rng.random()
        cx = width * np.arccos(1.0 - 2.0 * u) / np.pi
        cy = height * np.arccos(1.0 - 2.0 * rng.random()) / np.pi
        radius = rng.uniform(7.0, 14.0)
        subtype = subtypes[rng.choice(len(subtypes), p=weights)]
        confidence = rng.uniform(0.35, 1.0)
        keywords = ()
        if subtype != OTHERS_LABEL and rng.random() < 0.3:
            k = 1 + int(rng.random() < 0.3)
            picks = rng.choice(len(ABNORMALITY_KEYWORDS), size=k, replace=False)
            keywords = tuple(ABNORMALITY_KEYWORDS[j] for j in sorted(picks))
        cells.append(SyntheticCell(i + 1, float(cx), float(cy), float(radius), subtype, float(confidence), keywords))
    return cells


def synthetic_slide(width: int, height: int, seed: int) -> SyntheticSlideBundle:
    """Deterministically render a synthetic slide plus its ground truth."""
    rng = np.random.default_rng(seed)
    noise = rng.integers(-3, 4, size=(height, width, 1), dtype=np.int16)
    img = np.clip(_BACKGROUND[None, None, :] + noise, 0, 255).astype(np.uint8)
    label_map = np.zeros((height, width), dtype=np.int32)

    cells = _draw_cells(rng, width, height)
    for cell in cells:
        color = np.array(_SUBTYPE_COLORS[cell.subtype], dtype=np.float64)
        color = np.clip(color + rng.integers(-10, 11, size=3), 0, 255)
        rim = np.clip(color * 0.55, 0, 255).astype(np.uint8)
        fill = color.astype(np.uint8)

        r = cell.radius
        x_lo = max(int(np.floor(cell.cx - r)) - 1, 0)
        x_hi = min(int(np.ceil(cell.cx + r)) + 2, width)
        y_lo = max(int(np.floor(cell.cy - r)) - 1, 0)
        y_hi = min(int(np.ceil(cell.cy + r)) + 2, height)
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        yy, xx = np.mgrid[y_lo:y_hi, x_lo:x_hi]
        dist2 = (xx - cell.cx) ** 2 + (yy - cell.cy) ** 2
        inside = dist2 <= r * r
        rim_zone = inside & (dist2 > (r - 1.5) ** 2)
        window = img[y_lo:y_hi, x_lo:x_hi]
        window[inside] = fill
        window[rim_zone] = rim
        label_map[y_lo:y_hi, x_lo:x_hi][inside] = cell.cell_id

    diagnosis = COHORT_DIAGNOSES[rng.choice(len(COHORT_DIAGNOSES))]
    slide = SlideImage(f"synthetic-{width}x{height}-{seed}", img)
    return SyntheticSlideBundle(slide, label_map, tuple(cells), diagnosis)


def parse_slide_spec(spec: str) -> tuple[str, tuple]:
    """Parse a CLI slide argument: a raster path or ``synthetic:WxH:seed``."""
    if spec.startswith("synthetic:"):
        try:
            _, dims, seed = spec.split(":")
            w, h = dims.lower().split("x")
            return "synthetic", (int(w), int(h), int(seed))
        except ValueError:
            raise ValueError(
                f"bad synthetic slide spec {spec!r}, expected synthetic:WxH:seed"
            ) from None
    return "file", (spec,)
