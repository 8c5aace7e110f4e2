"""Gate-window Monte Carlo kernels.

Every random number is a pure function of (stream key, window, slot) via a
splitmix64 counter hash, so the numba and numpy paths give bit-identical
counts for any chunking or evaluation order.  Set ``QSCNOT_NUMBA=0`` to force
the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("QSCNOT_NUMBA", "1").lower() not in ("0", "false", "no")

SLOTS = 16
SLOT_PAIRS, SLOT_OUTCOME, SLOT_FIRE1, SLOT_FIRE2, SLOT_PHOTONS = 0, 1, 2, 3, 4
# outcome index j encodes (k1, k2) = divmod(j, KDIM)
KDIM = 5
MAX_PAIRS = (SLOTS - SLOT_PHOTONS) // 2
NB_CHUNK = 4096

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_UNIT = 2.0**-53


def _mix_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_key(seed: int, stream: int) -> int:
    """64-bit key for one (seed, setting) stream."""
    with np.errstate(over="ignore"):
        k = _mix_np(np.uint64(seed % 2**64) + _GOLDEN)
        k = _mix_np(k ^ (np.uint64(stream % 2**64) * _M2 + _GOLDEN))
    return int(k)


def uniforms_np(key: int, windows: np.ndarray, slot: int) -> np.ndarray:
    counter = windows.astype(np.uint64) * np.uint64(SLOTS) + np.uint64(slot)
    z = _mix_np(np.uint64(key) + counter * _GOLDEN)
    return (z >> _S11).astype(np.float64) * _UNIT


def _windows_np(key, windows, pair_cdf, exact_cdf, n_exact, pair_level, route_c, route_t, fire1, fire2):
    """Fire flags of both detectors for the given window indices."""
    n = np.searchsorted(pair_cdf, uniforms_np(key, windows, SLOT_PAIRS), side="right")
    k1 = np.zeros(len(windows), dtype=np.int64)
    k2 = np.zeros(len(windows), dtype=np.int64)
    for m in range(1, n_exact + 1):
        sel = np.flatnonzero(n == m)
        if len(sel):
            j = np.searchsorted(exact_cdf[m], uniforms_np(key, windows[sel], SLOT_OUTCOME), side="right")
            k1[sel], k2[sel] = np.divmod(j, KDIM)
    multi = np.flatnonzero(n > n_exact)
    if pair_level:
        # each pair draws its own coherent single-pair outcome
        for p in range(MAX_PAIRS):
            sel = multi[n[multi] > p]
            if not len(sel):
                continue
            j = np.searchsorted(exact_cdf[1], uniforms_np(key, windows[sel], SLOT_PHOTONS + p), side="right")
            d1, d2 = np.divmod(j, KDIM)
            k1[sel] += d1
            k2[sel] += d2
        multi = multi[:0]
    for p in range(2 * MAX_PAIRS):
        sel = multi[2 * n[multi] > p]
        if not len(sel):
            continue
        u = uniforms_np(key, windows[sel], SLOT_PHOTONS + p)
        # photons p < n come from the control input, the rest from the target input
        cum = np.where((p < n[sel])[:, None], route_c[None, :], route_t[None, :])
        k1[sel] += u < cum[:, 0]
        k2[sel] += (u >= cum[:, 0]) & (u < cum[:, 1])
    f1 = uniforms_np(key, windows, SLOT_FIRE1) < fire1[k1]
    f2 = uniforms_np(key, windows, SLOT_FIRE2) < fire2[k2]
    return f1, f2


def count_windows_np(key, start, stop, n_total, tables, chunk=1 << 18):
    """(total, accidental, singles1, singles2) over windows [start, stop).

    The accidental coincidence pairs detector 1 in window w with detector 2 in
    window w - 1 (cyclic over ``n_total``).
    """
    total = acc = s1 = s2 = 0
    for lo in range(start, stop, chunk):
        hi = min(stop, lo + chunk)
        w = np.arange(lo - 1, hi, dtype=np.int64) % n_total
        f1, f2 = _windows_np(key, w, *tables)
        f1, prev2, f2 = f1[1:], f2[:-1], f2[1:]
        total += int(np.count_nonzero(f1 & f2))
        acc += int(np.count_nonzero(f1 & prev2))
        s1 += int(np.count_nonzero(f1))
        s2 += int(np.count_nonzero(f2))
    return total, acc, s1, s2


if numba is not None:
    _nb = numba.njit(cache=True, nogil=True)

    @_nb
    def _uniform_nb(key, window, slot):
        z = key + (np.uint64(window) * np.uint64(SLOTS) + np.uint64(slot)) * _GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        z = z ^ (z >> _S31)
        return np.float64(z >> _S11) * _UNIT

    @_nb
    def _search(cdf, u):
        j = 0
        while u >= cdf[j]:
            j += 1
        return j

    @_nb
    def _search_row(cdf, row, u):
        j = 0
        while u >= cdf[row, j]:
            j += 1
        return j

    @_nb
    def _add_multi_nb(key, w, n, exact_cdf, pair_level, route_c, route_t, k, i):
        """Photons of a window with more pairs than the coherent tables cover."""
        if pair_level:
            for p in range(n):
                j = _search_row(exact_cdf, 1, _uniform_nb(key, w, SLOT_PHOTONS + p))
                k[0, i] += j // KDIM
                k[1, i] += j % KDIM
        else:
            for p in range(2 * n):
                u = _uniform_nb(key, w, SLOT_PHOTONS + p)
                if p < n:
                    c0, c1 = route_c[0], route_c[1]
                else:
                    c0, c1 = route_t[0], route_t[1]
                if u < c0:
                    k[0, i] += 1
                elif u < c1:
                    k[1, i] += 1

    @_nb
    def _count_windows_nb(key, start, stop, n_total, pair_cdf, exact_cdf, n_exact, pair_level,
                          route_c, route_t, fire1, fire2):
        # Works through chunks in three passes: photon numbers, the rare multi-pair
        # windows, then detector fires.  Keeping calls and inner loops out of the
        # two hot passes makes them several times faster than a per-window function.
        total = 0
        acc = 0
        s1 = 0
        s2 = 0
        k = np.empty((2, NB_CHUNK + 1), dtype=np.int64)
        multi = np.empty(NB_CHUNK + 1, dtype=np.int64)
        prev2 = False
        lo = start - 1
        while lo < stop:
            hi = min(stop, lo + NB_CHUNK + 1)
            m = 0
            for i in range(hi - lo):
                w = (lo + i) % n_total
                n = _search(pair_cdf, _uniform_nb(key, w, SLOT_PAIRS))
                # row 0 of exact_cdf is all ones: no photons
                j = _search_row(exact_cdf, n if n <= n_exact else 0, _uniform_nb(key, w, SLOT_OUTCOME))
                k[0, i] = j // KDIM
                k[1, i] = j % KDIM
                if n > n_exact:
                    multi[m] = i
                    m += 1
            for r in range(m):
                i = multi[r]
                w = (lo + i) % n_total
                n = _search(pair_cdf, _uniform_nb(key, w, SLOT_PAIRS))
                _add_multi_nb(key, w, n, exact_cdf, pair_level, route_c, route_t, k, i)
            i0 = 0
            if lo == start - 1:
                # window start - 1 only supplies the accidental partner of window start
                prev2 = _uniform_nb(key, lo % n_total, SLOT_FIRE2) < fire2[k[1, 0]]
                i0 = 1
            for i in range(i0, hi - lo):
                w = (lo + i) % n_total
                f1 = _uniform_nb(key, w, SLOT_FIRE1) < fire1[k[0, i]]
                f2 = _uniform_nb(key, w, SLOT_FIRE2) < fire2[k[1, i]]
                s1 += f1
                s2 += f2
                total += f1 & f2
                acc += f1 & prev2
                prev2 = f2
            lo = hi
        return total, acc, s1, s2


def count_windows(key, start, stop, n_total, tables, backend: str | None = None):
    """Dispatch to the numba kernel or the numpy path (``backend`` = "numba" | "numpy")."""
    backend = backend or ("numba" if USE_NUMBA else "numpy")
    if backend == "numba":
        if numba is None:  # pragma: no cover
            raise RuntimeError("numba backend requested but numba is not installed")
        out = _count_windows_nb(np.uint64(key), start, stop, n_total, *tables)
        return tuple(int(x) for x in out)
    return count_windows_np(key, start, stop, n_total, tables)
