"""Backend equivalence: the accelerated kernels and the pure-numpy fallbacks
must agree (exactly for integer results, to rounding for float ones)."""

import os
import subprocess
import sys

import numpy as np
import pytest

from smearkit import kernels


@pytest.fixture
def restore_backend():
    yield
    kernels.set_backend("auto")


def _random_rgb(rng, h, w):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def _tile_stats_reference(rgb, fg_threshold):
    """Straight-line float reference: Rec.601 luma in [0,1], interior 4-neighbour
    Laplacian variance, naive two-pass moments."""
    f = rgb.astype(np.float64) / 255.0
    luma = 0.299 * f[:, :, 0] + 0.587 * f[:, :, 1] + 0.114 * f[:, :, 2]
    fg = float((luma < fg_threshold).mean())
    h, w = luma.shape
    lap = []
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            lap.append(luma[y - 1, x] + luma[y + 1, x] + luma[y, x - 1] + luma[y, x + 1] - 4.0 * luma[y, x])
    if not lap:
        return fg, 0.0
    lap = np.array(lap)
    return fg, float(lap.var())


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_tile_stats_matches_reference(backend, restore_backend):
    if backend == "numba" and not kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    kernels.set_backend(backend)
    rng = np.random.default_rng(11)
    for h, w in [(8, 8), (17, 9), (32, 64)]:
        rgb = _random_rgb(rng, h, w)
        got_fg, got_var = kernels.tile_stats(rgb, 0.85)
        ref_fg, ref_var = _tile_stats_reference(rgb, 0.85)
        assert got_fg == pytest.approx(ref_fg, abs=1e-12)
        assert got_var == pytest.approx(ref_var, rel=1e-9, abs=1e-12)


def test_backends_agree(restore_backend):
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    rng = np.random.default_rng(3)
    for _ in range(5):
        rgb = _random_rgb(rng, int(rng.integers(4, 40)), int(rng.integers(4, 40)))
        labels = rng.integers(0, 7, size=(int(rng.integers(4, 30)), int(rng.integers(4, 30)))).astype(np.int64)
        a = rng.integers(0, 5, size=int(rng.integers(0, 20))).astype(np.int64)
        b = rng.integers(0, 5, size=int(rng.integers(0, 20))).astype(np.int64)

        kernels.set_backend("numpy")
        t_np = kernels.tile_stats(rgb, 0.85)
        m_np = kernels.mask_stats(labels)
        l_np = kernels.lcs_len(a, b)
        kernels.set_backend("numba")
        t_nb = kernels.tile_stats(rgb, 0.85)
        m_nb = kernels.mask_stats(labels)
        l_nb = kernels.lcs_len(a, b)

        assert t_np[0] == t_nb[0]  # integer-derived fraction: exact
        assert t_np[1] == pytest.approx(t_nb[1], rel=1e-12, abs=1e-15)
        for x, y in zip(m_np, m_nb):
            assert np.array_equal(x, y)
        assert l_np == l_nb


def test_lcs_known_cases():
    cases = [
        ("abcbdab", "bdcaba", 4),
        ("", "abc", 0),
        ("abc", "", 0),
        ("same", "same", 4),
        ("abc", "def", 0),
    ]
    for s, t, want in cases:
        a = np.array([ord(c) for c in s], dtype=np.int64)
        b = np.array([ord(c) for c in t], dtype=np.int64)
        assert kernels.lcs_len(a, b) == want


def test_mask_stats_oracle():
    labels = np.zeros((6, 5), dtype=np.int64)
    labels[1:3, 1:4] = 2      # 2x3 block
    labels[4, 0] = 5          # single pixel on left edge
    counts, sx, sy, minx, miny, maxx, maxy = kernels.mask_stats(labels)
    assert counts[0] == 0                       # background never counted
    assert counts[2] == 6 and counts[5] == 1
    assert (minx[2], miny[2], maxx[2], maxy[2]) == (1, 1, 3, 2)
    assert sx[2] / counts[2] == 2.0 and sy[2] / counts[2] == 1.5
    assert (minx[5], miny[5], maxx[5], maxy[5]) == (0, 4, 0, 4)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.set_backend("tpu")


def test_env_flag_selects_backend():
    code = "from smearkit import kernels; print(kernels.active_backend())"
    env = dict(os.environ, SMEARKIT_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
