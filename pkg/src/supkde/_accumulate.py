"""Windowed kernel sums over samples, in ascending sample order.

Each table entry is accumulated sample by sample (i = 0, 1, ...) with the
per-sample product formed factor by factor in block order. That is the
same floating-point sequence as a plain double loop, so results match a
brute-force evaluation bit for bit. Only the window of nodes where a
sample's kernel can be nonzero is visited.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _acc1(v, lo, hi, out):
    for i in range(v.shape[0]):
        for a in range(lo[i], hi[i]):
            out[a] += v[i, a - lo[i]]


@njit(cache=True, nogil=True)
def _acc2(v1, lo1, hi1, v2, lo2, hi2, out):
    for i in range(v1.shape[0]):
        for a in range(lo1[i], hi1[i]):
            x = v1[i, a - lo1[i]]
            for b in range(lo2[i], hi2[i]):
                out[a, b] += x * v2[i, b - lo2[i]]


@njit(cache=True, nogil=True)
def _acc3(v1, lo1, hi1, v2, lo2, hi2, v3, lo3, hi3, out):
    for i in range(v1.shape[0]):
        for a in range(lo1[i], hi1[i]):
            x = v1[i, a - lo1[i]]
            for b in range(lo2[i], hi2[i]):
                xy = x * v2[i, b - lo2[i]]
                for c in range(lo3[i], hi3[i]):
                    out[a, b, c] += xy * v3[i, c - lo3[i]]


def windows(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and one-past-last nonzero column of each row (0, 0 if none)."""
    nz = values != 0.0
    g = values.shape[1]
    any_nz = nz.any(axis=1)
    lo = np.where(any_nz, np.argmax(nz, axis=1), 0)
    hi = np.where(any_nz, g - np.argmax(nz[:, ::-1], axis=1), 0)
    return lo.astype(np.int64), hi.astype(np.int64)


@dataclass(frozen=True)
class BandedRows:
    """Per-sample kernel rows kept only over their nonzero window.

    Row ``i`` covers nodes ``lo[i] .. hi[i]-1`` and is stored left-aligned
    in ``band[i]``; ``width`` is the full node count.
    """

    band: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    width: int

    @classmethod
    def from_dense(cls, values: np.ndarray) -> "BandedRows":
        lo, hi = windows(values)
        w = int((hi - lo).max(initial=0))
        idx = lo[:, None] + np.arange(w)[None, :]
        valid = idx < hi[:, None]
        band = np.where(valid, np.take_along_axis(values, np.minimum(idx, values.shape[1] - 1), axis=1), 0.0)
        return cls(np.ascontiguousarray(band), lo, hi, values.shape[1])

    def dense(self) -> np.ndarray:
        out = np.zeros((len(self.lo), self.width))
        for i, (a, b) in enumerate(zip(self.lo, self.hi)):
            out[i, a:b] = self.band[i, : b - a]
        return out

    def abs(self) -> "BandedRows":
        return BandedRows(np.abs(self.band), self.lo, self.hi, self.width)


def accumulate(rows) -> np.ndarray:
    """Sum over samples of the outer product of per-axis kernel rows."""
    out = np.zeros(tuple(r.width for r in rows))
    args = [x for r in rows for x in (r.band, r.lo, r.hi)]
    if len(rows) == 1:
        _acc1(*args, out)
    elif len(rows) == 2:
        _acc2(*args, out)
    elif len(rows) == 3:
        _acc3(*args, out)
    else:
        for i in range(len(rows[0].lo)):
            sl = tuple(slice(r.lo[i], r.hi[i]) for r in rows)
            if any(s.start >= s.stop for s in sl):
                continue
            prod = None
            for axis, (r, s) in enumerate(zip(rows, sl)):
                seg = r.band[i, : s.stop - s.start]
                seg = seg.reshape((1,) * axis + (-1,) + (1,) * (len(rows) - axis - 1))
                prod = seg if prod is None else prod * seg
            out[sl] += prod
    return out
