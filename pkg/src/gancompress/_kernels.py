"""Histogram-matching kernels.

Every makeup-loss evaluation maps each (sample, region, channel) pixel
set onto a reference distribution, so this is the innermost loop of
training outside of torch. The numba path is used by default; set
``GANCOMPRESS_NO_NUMBA=1`` to force the pure-numpy path. Both paths
produce bit-identical results.

Pixel values in ``[-1, 1]`` are quantized to 256 levels (the 8-bit image
grid). A source pixel at level ``b`` has cumulative count ``c`` (number of
source pixels at level <= b); its target is the reference value at the
same quantile, ``sorted(ref)[ceil(c * m / n) - 1]``. Targets are actual
reference values, so constant regions map exactly.
"""

from __future__ import annotations

import os

import numpy as np

N_LEVELS = 256

_DISABLED = os.environ.get("GANCOMPRESS_NO_NUMBA", "").lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by GANCOMPRESS_NO_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def quantize_numpy(x):
    v = np.floor((x + 1.0) * 127.5 + 0.5)
    return np.clip(v, 0, N_LEVELS - 1).astype(np.int64)


def match_histogram_numpy(src, ref):
    """Quantile-map each row of ``src`` (C, n) onto the matching row of ``ref`` (C, m)."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    n, m = src.shape[1], ref.shape[1]
    out = np.empty_like(src)
    for ch in range(src.shape[0]):
        levels = quantize_numpy(src[ch])
        cdf = np.cumsum(np.bincount(levels, minlength=N_LEVELS))
        idx = (cdf[levels] * m + n - 1) // n - 1
        out[ch] = np.sort(ref[ch])[idx]
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _match_histogram_nb(src, ref_sorted):
        n_ch, n = src.shape
        m = ref_sorted.shape[1]
        out = np.empty_like(src)
        counts = np.empty(N_LEVELS, dtype=np.int64)
        levels = np.empty(n, dtype=np.int64)
        for ch in range(n_ch):
            counts[:] = 0
            for i in range(n):
                v = np.floor((src[ch, i] + 1.0) * 127.5 + 0.5)
                b = int(min(max(v, 0.0), N_LEVELS - 1.0))
                levels[i] = b
                counts[b] += 1
            for b in range(1, N_LEVELS):
                counts[b] += counts[b - 1]
            for i in range(n):
                idx = (counts[levels[i]] * m + n - 1) // n - 1
                out[ch, i] = ref_sorted[ch, idx]
        return out

    def match_histogram_numba(src, ref):
        src = np.ascontiguousarray(src, dtype=np.float64)
        # numpy's vectorized sort beats numba's by a wide margin; sort outside the kernel
        ref_sorted = np.sort(np.asarray(ref, dtype=np.float64), axis=1)
        return _match_histogram_nb(src, ref_sorted)

    match_histogram = match_histogram_numba
else:
    match_histogram_numba = None
    match_histogram = match_histogram_numpy


def match_histogram_checked(src, ref):
    """``match_histogram`` with shape validation; accepts 1-D single-channel input."""
    src = np.asarray(src, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    flat = src.ndim == 1
    if flat:
        src, ref = src[None], ref[None]
    if src.ndim != 2 or ref.ndim != 2 or src.shape[0] != ref.shape[0]:
        raise ValueError(f"channel layouts differ: {src.shape} vs {ref.shape}")
    if src.shape[1] == 0 or ref.shape[1] == 0:
        raise ValueError("empty region")
    if not (np.isfinite(src).all() and np.isfinite(ref).all()):
        raise ValueError("non-finite pixel values")
    out = match_histogram(src, ref)
    return out[0] if flat else out
