"""Tiling arithmetic, quality scoring, and tile bookkeeping."""

import numpy as np
import pytest

from smearkit.errors import ScorerContractError, ValidationError
from smearkit.slides import (
    DENSITY_BAND,
    QC_THRESHOLD,
    SHARPNESS_HALF_VARIANCE,
    SlideImage,
    TILE_SIZE,
    TileAddress,
    _density_score,
    _sharpness_score,
    heuristic_quality,
    sample_slide_context,
    score_tiles,
    tile_grid,
)


def _flat_slide(w, h, value=200):
    return SlideImage("s", np.full((h, w, 3), value, dtype=np.uint8))


class TestTileGrid:
    def test_exact_multiple(self):
        grid = tile_grid(_flat_slide(1024, 1536), 512)
        assert len(grid) == (1024 // 512) * (1536 // 512) == 6

    def test_partial_strips_dropped(self):
        grid = tile_grid(_flat_slide(1000, 700), 512)
        assert len(grid) == 1
        assert grid[0].row == 0 and grid[0].col == 0

    def test_smaller_than_tile(self):
        assert tile_grid(_flat_slide(100, 100), 512) == []

    def test_zero_size_empty(self):
        assert tile_grid(_flat_slide(100, 100), 0) == []

    def test_negative_size_rejected(self):
        with pytest.raises(ValidationError):
            tile_grid(_flat_slide(100, 100), -1)

    def test_row_major_order_and_origins(self):
        grid = tile_grid(_flat_slide(96, 64), 32)
        assert [(t.row, t.col) for t in grid] == [
            (0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
        assert grid[1].x0 == 32 and grid[1].y0 == 0
        assert grid[3].x0 == 0 and grid[3].y0 == 32

    def test_random_sizes_count_disjoint_inbounds(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            w = int(rng.integers(1, 2000))
            h = int(rng.integers(1, 2000))
            size = int(rng.integers(1, 400))
            grid = tile_grid(_flat_slide(w, h), size)
            assert len(grid) == (w // size) * (h // size)
            seen = set()
            for t in grid:
                assert t.x0 + size <= w and t.y0 + size <= h
                assert (t.row, t.col) not in seen
                seen.add((t.row, t.col))


class TestQuality:
    def test_density_trapezoid(self):
        lo, hi = DENSITY_BAND
        assert _density_score(0.0) == 0.0
        assert _density_score(1.0) == 0.0
        assert _density_score(lo) == 1.0
        assert _density_score(hi) == 1.0
        assert _density_score(lo / 2) == pytest.approx(0.5)
        assert _density_score((1 + hi) / 2) == pytest.approx(0.5)
        assert _density_score(0.3) == 1.0

    def test_sharpness_half_point(self):
        assert _sharpness_score(SHARPNESS_HALF_VARIANCE) == pytest.approx(0.5)
        assert _sharpness_score(0.0) == 0.0
        assert _sharpness_score(1.0) > 0.99

    def test_uniform_tile_scores_zero(self):
        tile = np.full((64, 64, 3), 255, dtype=np.uint8)
        assert heuristic_quality(tile) == 0.0

    def test_synthetic_center_tile_keepable(self):
        slide = SlideImage.synthetic(1024, 1024, seed=3)
        grid = tile_grid(slide, 512)
        scored = score_tiles(slide, grid)
        assert any(t.kept for t in scored)

    def test_quality_in_unit_interval(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            tile = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
            assert 0.0 <= heuristic_quality(tile) <= 1.0


class TestScoreTiles:
    def test_kept_iff_at_threshold(self):
        slide = _flat_slide(64, 64)
        grid = tile_grid(slide, 32)
        scored = score_tiles(slide, grid, scorer=lambda px: 0.5, threshold=0.5)
        assert all(t.kept for t in scored)  # boundary score is kept
        scored = score_tiles(slide, grid, scorer=lambda px: 0.499, threshold=0.5)
        assert not any(t.kept for t in scored)

    def test_threshold_monotonicity(self):
        slide = SlideImage.synthetic(1536, 1536, seed=1)
        grid = tile_grid(slide, 512)
        kept_counts = []
        for threshold in np.linspace(0.0, 1.0, 11):
            scored = score_tiles(slide, grid, threshold=float(threshold))
            kept_counts.append(sum(t.kept for t in scored))
        assert kept_counts == sorted(kept_counts, reverse=True)

    def test_bad_threshold_rejected(self):
        slide = _flat_slide(32, 32)
        with pytest.raises(ValidationError):
            score_tiles(slide, [], threshold=1.5)

    def test_scorer_contract_enforced(self):
        slide = _flat_slide(64, 64)
        grid = tile_grid(slide, 64)
        for bad in (1.2, -0.1, float("nan")):
            with pytest.raises(ScorerContractError):
                score_tiles(slide, grid, scorer=lambda px, b=bad: b)


class TestSlideImage:
    def test_rejects_bad_shapes_and_dtypes(self):
        with pytest.raises(ValidationError):
            SlideImage("s", np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValidationError):
            SlideImage("s", np.zeros((4, 4, 3), dtype=np.float32))

    def test_pixel_bounds(self):
        slide = _flat_slide(4, 4, value=7)
        assert slide.pixel(0, 0) == (7, 7, 7)
        with pytest.raises(ValidationError):
            slide.pixel(4, 0)

    def test_tile_pixels_must_fit(self):
        slide = _flat_slide(64, 64)
        with pytest.raises(ValidationError):
            slide.tile_pixels(TileAddress("s", 1, 0, 48))

    def test_from_file_round_trip(self, tmp_path):
        from PIL import Image

        arr = np.random.default_rng(0).integers(0, 255, size=(20, 30, 3), dtype=np.uint8)
        path = tmp_path / "s.png"
        Image.fromarray(arr).save(path)
        slide = SlideImage.from_file(path, slide_id="roundtrip")
        assert slide.id == "roundtrip"
        assert np.array_equal(slide.pixels, arr)

    def test_synthetic_deterministic(self):
        a = SlideImage.synthetic(512, 256, seed=5)
        b = SlideImage.synthetic(512, 256, seed=5)
        c = SlideImage.synthetic(512, 256, seed=6)
        assert np.array_equal(a.pixels, b.pixels)
        assert not np.array_equal(a.pixels, c.pixels)


class TestSampleContext:
    def test_deterministic_and_sorted(self):
        tiles = [TileAddress("s", r, c) for r in range(4) for c in range(4)]
        a = sample_slide_context(tiles, 5, seed=2)
        b = sample_slide_context(tiles, 5, seed=2)
        assert a == b
        assert a == sorted(a, key=lambda t: (t.row, t.col))
        assert len(a) == 5

    def test_k_larger_than_pool(self):
        tiles = [TileAddress("s", 0, c) for c in range(3)]
        assert len(sample_slide_context(tiles, 30, seed=0)) == 3

    def test_negative_k_rejected(self):
        with pytest.raises(ValidationError):
            sample_slide_context([], -1, seed=0)

    def test_defaults(self):
        assert TILE_SIZE == 512 and QC_THRESHOLD == 0.5
