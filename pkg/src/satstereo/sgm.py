"""Semi-global matching on rectified pairs.

Census-transform matching cost (5x5 window, Hamming distance) aggregated
along 8 scanline directions with the usual P1/P2 smoothness penalties,
winner-take-all selection, parabolic sub-pixel refinement and a
left-right consistency check.  All accumulation is exact integer
arithmetic, so results are bit-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

CENSUS_RADIUS = 2  # 5x5 window
_BIG = np.uint16(60000)

_POPCOUNT16 = np.array([bin(i).count("1") for i in range(1 << 16)], dtype=np.uint8)

_DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class DisparityMap:
    """Horizontal disparities (left x minus right x), NaN where invalid."""

    data: np.ndarray
    d_min: int
    d_max: int

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32).copy()
        valid = np.isfinite(arr)
        if valid.any():
            lo, hi = float(arr[valid].min()), float(arr[valid].max())
            if lo < self.d_min - 0.5 or hi > self.d_max + 0.5:
                raise ValueError("disparities exceed the configured search range")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.data)


def census_transform(img: np.ndarray, radius: int = CENSUS_RADIUS) -> np.ndarray:
    """Per-pixel bit string comparing each neighbor against the center."""
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.uint32)
    padded = np.pad(img, radius, mode="edge")
    bit = 0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            neighbor = padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            out |= (neighbor < img).astype(np.uint32) << np.uint32(bit)
            bit += 1
    return out


def _popcount(v: np.ndarray) -> np.ndarray:
    return _POPCOUNT16[v & 0xFFFF] + _POPCOUNT16[v >> 16]


def cost_volume(left: np.ndarray, right: np.ndarray, d_min: int, d_max: int) -> np.ndarray:
    """Hamming census costs, shape (h, w, n_disp); out-of-range gets max cost."""
    cl = census_transform(left)
    cr = census_transform(right)
    h, w = cl.shape
    n_disp = d_max - d_min + 1
    vol = np.full((h, w, n_disp), 24, dtype=np.uint8)
    for di in range(n_disp):
        d = d_min + di
        x_lo = max(0, d)
        x_hi = min(w, w + d)
        if x_lo >= x_hi:
            continue
        vol[:, x_lo:x_hi, di] = _popcount(cl[:, x_lo:x_hi] ^ cr[:, x_lo - d:x_hi - d])
    return vol


def _dp_step(cur_cost: np.ndarray, prev: np.ndarray, p1: int, p2: int) -> np.ndarray:
    """One scanline recurrence: prev and cur_cost are (m, n_disp) uint16."""
    min_prev = prev.min(axis=-1, keepdims=True)
    up = np.empty_like(prev)
    up[:, 1:] = prev[:, :-1]
    up[:, 0] = _BIG
    down = np.empty_like(prev)
    down[:, :-1] = prev[:, 1:]
    down[:, -1] = _BIG
    cand = np.minimum(prev, np.minimum(up + np.uint16(p1), down + np.uint16(p1)))
    cand = np.minimum(cand, min_prev + np.uint16(p2))
    return cur_cost + cand - min_prev


def _aggregate_direction(vol: np.ndarray, dy: int, dx: int, p1: int, p2: int) -> np.ndarray:
    h, w, n_disp = vol.shape
    out = np.zeros((h, w, n_disp), dtype=np.uint16)
    if dy == 0:
        xs = range(w) if dx > 0 else range(w - 1, -1, -1)
        first = True
        for x in xs:
            cur = vol[:, x, :].astype(np.uint16)
            out[:, x, :] = cur if first else _dp_step(cur, out[:, x - dx, :], p1, p2)
            first = False
        return out
    ys = range(h) if dy > 0 else range(h - 1, -1, -1)
    first = True
    for y in ys:
        cur = vol[y].astype(np.uint16)
        if first:
            out[y] = cur
            first = False
            continue
        prev = out[y - dy]
        if dx != 0:
            shifted = np.full_like(prev, _BIG)
            if dx > 0:
                shifted[dx:] = prev[:-dx]
            else:
                shifted[:dx] = prev[-dx:]
            prev = shifted
        stepped = _dp_step(cur, prev, p1, p2)
        if dx != 0:
            # pixels without an in-image predecessor restart at raw cost
            if dx > 0:
                stepped[:dx] = cur[:dx]
            else:
                stepped[dx:] = cur[dx:]
        out[y] = stepped
    return out


def aggregate_costs(vol: np.ndarray, p1: int, p2: int, workers: int = 1) -> np.ndarray:
    """Sum of all 8 path volumes; exact uint16 arithmetic, order-independent."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_aggregate_direction, vol, dy, dx, p1, p2)
                for dy, dx in _DIRECTIONS
            ]
            parts = [f.result() for f in futures]
    else:
        parts = [_aggregate_direction(vol, dy, dx, p1, p2) for dy, dx in _DIRECTIONS]
    total = np.zeros(vol.shape, dtype=np.uint16)
    for part in parts:
        total += part
    return total


def sgm(left: np.ndarray, right: np.ndarray, d_min: int, d_max: int,
        p1: int = 10, p2: int = 120, *, workers: int = 1,
        lr_tolerance: float = 1.0) -> DisparityMap:
    """Dense disparity between rectified rasters; see the module docstring."""
    left = np.asarray(left, dtype=np.float32)
    right = np.asarray(right, dtype=np.float32)
    if left.shape != right.shape or left.ndim != 2:
        raise ValueError("left and right must be 2D rasters of identical shape")
    d_min, d_max = int(d_min), int(d_max)
    if d_min >= d_max:
        raise ValueError("d_min must be below d_max")
    if p2 <= p1 or p1 <= 0:
        raise ValueError("penalties must satisfy 0 < p1 < p2")

    vol = cost_volume(left, right, d_min, d_max)
    agg = aggregate_costs(vol, p1, p2, workers=workers)
    h, w, n_disp = agg.shape

    d_idx = np.argmin(agg, axis=2)
    rows, cols = np.mgrid[0:h, 0:w]
    s0 = agg[rows, cols, d_idx].astype(np.float64)
    interior = (d_idx > 0) & (d_idx < n_disp - 1)
    sm = agg[rows, cols, np.maximum(d_idx - 1, 0)].astype(np.float64)
    sp = agg[rows, cols, np.minimum(d_idx + 1, n_disp - 1)].astype(np.float64)
    denom = sm - 2 * s0 + sp
    delta = np.zeros_like(s0)
    good = interior & (denom > 0)
    delta[good] = np.clip((sm[good] - sp[good]) / (2 * denom[good]), -0.5, 0.5)
    disp = (d_min + d_idx + delta).astype(np.float32)

    # right-view winner from the same aggregated volume: S_r(x, d) = S(x + d, d)
    right_vol = np.full_like(agg, _BIG)
    for di in range(n_disp):
        d = d_min + di
        x_lo = max(0, -d)
        x_hi = min(w, w - d)
        if x_lo < x_hi:
            right_vol[:, x_lo:x_hi, di] = agg[:, x_lo + d:x_hi + d, di]
    d_right = np.argmin(right_vol, axis=2)

    xr = cols - (d_min + d_idx)
    in_range = (xr >= 0) & (xr < w)
    lr_ok = np.zeros((h, w), dtype=bool)
    sel_y, sel_x = np.nonzero(in_range)
    dl = d_idx[sel_y, sel_x]
    dr = d_right[sel_y, xr[sel_y, sel_x]]
    lr_ok[sel_y, sel_x] = np.abs(dl - dr) <= lr_tolerance

    invalid = ~lr_ok
    b = CENSUS_RADIUS
    invalid[:b, :] = invalid[-b:, :] = True
    invalid[:, :b] = invalid[:, -b:] = True
    disp[invalid] = np.nan
    return DisparityMap(disp, d_min, d_max)
