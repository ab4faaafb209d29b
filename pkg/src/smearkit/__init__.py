"""Desk-scale peripheral blood smear toolkit.

Slide tiling with quality control, cell-crop extraction and label
normalization, deterministic QA synthesis, benchmark metrics with bootstrap
uncertainty, and a token-alignment core with verified analytic gradients.
"""

__version__ = "0.1.0"

from .cells import ALL_LABELS, OTHERS_LABEL, WBC_SUBTYPES, normalize_label  # noqa: E402,F401
from .metrics import bleu1, exact_match, normalize, partial_match, rouge_l  # noqa: E402,F401
from .slides import QC_THRESHOLD, TILE_SIZE, heuristic_quality, tile_grid  # noqa: E402,F401
