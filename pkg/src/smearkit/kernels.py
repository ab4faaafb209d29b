"""Hot per-pixel and DP kernels with two interchangeable backends.

The numba backend compiles tight loops with ``@njit``; the numpy backend is a
vectorized (or, for the LCS table, plain-loop) equivalent used when numba is
unavailable or explicitly disabled.  Selection is driven by the
``SMEARKIT_BACKEND`` environment variable (``auto`` | ``numba`` | ``numpy``,
default ``auto``) and can be overridden at runtime with :func:`set_backend`.

Float results of the two backends agree to accumulation-order rounding;
integer results are identical.  ``benchmarks/bench_kernels.py`` times both.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_BACKENDS = ("auto", "numba", "numpy")
_backend = os.environ.get("SMEARKIT_BACKEND", "auto")


def set_backend(name: str) -> None:
    """Force a kernel backend; ``auto`` prefers numba when importable."""
    global _backend
    if name not in _BACKENDS:
        raise ConfigError(f"unknown backend {name!r}, expected one of {_BACKENDS}")
    if name == "numba" and not HAVE_NUMBA:
        raise ConfigError("numba backend requested but numba is not importable")
    _backend = name


def active_backend() -> str:
    """The backend actually used for the next kernel call: 'numba' or 'numpy'."""
    if _backend == "numpy":
        return "numpy"
    if _backend == "numba":
        return "numba"
    return "numba" if HAVE_NUMBA else "numpy"


# Rec. 601 luma weights.
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114


# ---------------------------------------------------------------------------
# Tile statistics: foreground fraction + Laplacian variance on luminance.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _tile_stats_numba(rgb, fg_threshold):
    h, w = rgb.shape[0], rgb.shape[1]
    lum = np.empty((h, w), dtype=np.float64)
    fg = 0
    for y in range(h):
        for x in range(w):
            v = (_LUMA_R * rgb[y, x, 0] + _LUMA_G * rgb[y, x, 1] + _LUMA_B * rgb[y, x, 2]) / 255.0
            lum[y, x] = v
            if v < fg_threshold:
                fg += 1
    n = (h - 2) * (w - 2)
    if n <= 0:
        return fg / (h * w), 0.0
    s = 0.0
    s2 = 0.0
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            lap = 4.0 * lum[y, x] - lum[y - 1, x] - lum[y + 1, x] - lum[y, x - 1] - lum[y, x + 1]
            s += lap
            s2 += lap * lap
    mean = s / n
    var = s2 / n - mean * mean
    if var < 0.0:
        var = 0.0
    return fg / (h * w), var


def _tile_stats_numpy(rgb, fg_threshold):
    lum = (rgb[..., 0] * _LUMA_R + rgb[..., 1] * _LUMA_G + rgb[..., 2] * _LUMA_B) / 255.0
    fg_frac = float(np.count_nonzero(lum < fg_threshold)) / lum.size
    if lum.shape[0] < 3 or lum.shape[1] < 3:
        return fg_frac, 0.0
    core = lum[1:-1, 1:-1]
    lap = 4.0 * core - lum[:-2, 1:-1] - lum[2:, 1:-1] - lum[1:-1, :-2] - lum[1:-1, 2:]
    var = float(np.mean(lap * lap) - np.mean(lap) ** 2)
    return fg_frac, max(var, 0.0)


def tile_stats(rgb: np.ndarray, fg_threshold: float) -> tuple[float, float]:
    """Foreground-pixel fraction (luminance < threshold) and interior 4-neighbour
    Laplacian variance of luminance, both on an HxWx3 uint8 tile."""
    rgb = np.ascontiguousarray(rgb)
    if active_backend() == "numba":
        fg, var = _tile_stats_numba(rgb, fg_threshold)
        return float(fg), float(var)
    return _tile_stats_numpy(rgb, fg_threshold)


# ---------------------------------------------------------------------------
# Instance-mask statistics: per-label pixel count, coordinate sums, bbox.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _mask_stats_numba(labels):
    h, w = labels.shape
    m = 0
    for y in range(h):
        for x in range(w):
            if labels[y, x] > m:
                m = labels[y, x]
    counts = np.zeros(m + 1, dtype=np.int64)
    sx = np.zeros(m + 1, dtype=np.float64)
    sy = np.zeros(m + 1, dtype=np.float64)
    minx = np.full(m + 1, w, dtype=np.int64)
    miny = np.full(m + 1, h, dtype=np.int64)
    maxx = np.full(m + 1, -1, dtype=np.int64)
    maxy = np.full(m + 1, -1, dtype=np.int64)
    for y in range(h):
        for x in range(w):
            v = labels[y, x]
            if v > 0:
                counts[v] += 1
                sx[v] += x
                sy[v] += y
                if x < minx[v]:
                    minx[v] = x
                if x > maxx[v]:
                    maxx[v] = x
                if y < miny[v]:
                    miny[v] = y
                if y > maxy[v]:
                    maxy[v] = y
    return counts, sx, sy, minx, miny, maxx, maxy


def _mask_stats_numpy(labels):
    h, w = labels.shape
    m = int(labels.max()) if labels.size else 0
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=m + 1).astype(np.int64)
    ys, xs = np.divmod(np.arange(flat.size, dtype=np.int64), w)
    sx = np.bincount(flat, weights=xs, minlength=m + 1)
    sy = np.bincount(flat, weights=ys, minlength=m + 1)
    minx = np.full(m + 1, w, dtype=np.int64)
    miny = np.full(m + 1, h, dtype=np.int64)
    maxx = np.full(m + 1, -1, dtype=np.int64)
    maxy = np.full(m + 1, -1, dtype=np.int64)
    nz = flat > 0
    np.minimum.at(minx, flat[nz], xs[nz])
    np.minimum.at(miny, flat[nz], ys[nz])
    np.maximum.at(maxx, flat[nz], xs[nz])
    np.maximum.at(maxy, flat[nz], ys[nz])
    counts[0] = 0
    sx[0] = 0.0
    sy[0] = 0.0
    return counts, sx, sy, minx, miny, maxx, maxy


def mask_stats(labels: np.ndarray):
    """Per-instance pixel counts, coordinate sums, and inclusive bboxes.

    Returns arrays indexed by label id (index 0 unused); absent ids have
    count 0.  ``counts[0]`` is forced to 0 so background never reports.
    """
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if active_backend() == "numba":
        counts, sx, sy, minx, miny, maxx, maxy = _mask_stats_numba(labels)
        counts[0] = 0
        return counts, sx, sy, minx, miny, maxx, maxy
    return _mask_stats_numpy(labels)


# ---------------------------------------------------------------------------
# Longest common subsequence length over integer-coded token sequences.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _lcs_len_numba(a, b):
    n, m = a.size, b.size
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if a[i] == b[j]:
                cur[j + 1] = prev[j] + 1
            elif prev[j + 1] >= cur[j]:
                cur[j + 1] = prev[j + 1]
            else:
                cur[j + 1] = cur[j]
        prev, cur = cur, prev
    return prev[m]


def _lcs_len_numpy(a, b):
    n, m = a.size, b.size
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        ai = a[i]
        for j in range(m):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = max(prev[j + 1], cur[j])
        prev, cur = cur, prev
    return int(prev[m])


def lcs_len(a: np.ndarray, b: np.ndarray) -> int:
    """Length of the longest common subsequence of two int sequences."""
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return 0
    if active_backend() == "numba":
        return int(_lcs_len_numba(a, b))
    return _lcs_len_numpy(a, b)
