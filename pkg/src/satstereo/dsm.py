"""Digital surface model generation from a dense disparity map.

Every valid disparity is un-rectified to a conjugate image-point pair,
triangulated through both cameras, and projected to local map
coordinates.  Cell elevation is the median of contributing points; empty
cells stay nodata and no holes are interpolated, so DSM completeness
reflects true matcher coverage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import LocalFrame
from .orientation import BiasCorrection
from .rasters import DsmGrid
from .rectify import RectificationMap, apply_affine
from .rpc import RpcModel, inverse_project_arrays, triangulate_arrays
from .sgm import DisparityMap

DEFAULT_CELL = 0.5


@dataclass(frozen=True)
class GridSpec:
    """Target DSM grid in the local frame: lower-left corner and size."""

    xll: float
    yll: float
    width: int
    height: int
    cell: float
    frame: LocalFrame

    def __post_init__(self):
        if self.cell <= 0 or self.width < 1 or self.height < 1:
            raise ValueError("invalid grid specification")

    @classmethod
    def like(cls, grid: DsmGrid, frame: LocalFrame) -> "GridSpec":
        return cls(grid.xll, grid.yll, grid.width, grid.height, grid.cell_size, frame)


@dataclass(frozen=True)
class DsmStats:
    n_pixels: int
    n_triangulated: int
    n_dropped: int
    mean_residual_px: float


def _median_per_cell(cell_ids: np.ndarray, values: np.ndarray, n_cells: int) -> np.ndarray:
    """Median of values grouped by cell id; NaN for empty cells."""
    out = np.full(n_cells, np.nan)
    if values.size == 0:
        return out
    order = np.lexsort((values, cell_ids))
    ids = cell_ids[order]
    vals = values[order]
    starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
    counts = np.diff(np.r_[starts, ids.size])
    lo = vals[starts + (counts - 1) // 2]
    hi = vals[starts + counts // 2]
    out[ids[starts]] = 0.5 * (lo + hi)
    return out


def dsm_from_disparity(disp: DisparityMap, rect: RectificationMap,
                       m1: RpcModel, m2: RpcModel, bias: BiasCorrection,
                       grid: GridSpec, *, max_rms_px: float = 3.0) -> tuple[DsmGrid, DsmStats]:
    """Triangulate a disparity map into a gridded DSM.

    Points whose triangulation is degenerate or whose reprojection RMS
    exceeds ``max_rms_px`` are dropped and counted.
    """
    valid = disp.valid_mask
    ys, xs = np.nonzero(valid)
    n_pixels = int(valid.sum())
    empty = DsmGrid(grid.xll, grid.yll, grid.cell,
                    np.full((grid.height, grid.width), np.nan))
    if n_pixels == 0:
        return empty, DsmStats(0, 0, 0, float("nan"))
    d = disp.data[ys, xs].astype(np.float64)

    rect1 = np.column_stack([xs.astype(np.float64), ys.astype(np.float64)])
    rect2 = np.column_stack([xs - d, ys.astype(np.float64)])
    p1 = apply_affine(rect.src_from_rect_1, rect1)
    q2 = apply_affine(rect.biased2_from_rect, rect2)
    p2 = bias.inverse().apply(q2)

    h0 = rect.height_from_disparity(ys, d)
    lat0, lon0 = inverse_project_arrays(m1, p1[:, 0], p1[:, 1], h0, warn_domain=False)
    lat, lon, h, rms, ok = triangulate_arrays(
        m1, m2, p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1],
        initial=(lat0, lon0, h0),
    )
    keep = ok & (rms <= max_rms_px)
    n_dropped = int((~keep).sum())
    lat, lon, h = lat[keep], lon[keep], h[keep]

    x, y = grid.frame.to_xy(lat, lon)
    ix = np.floor((x - grid.xll) / grid.cell).astype(np.int64)
    iy_from_bottom = np.floor((y - grid.yll) / grid.cell).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.width) & (iy_from_bottom >= 0) & (iy_from_bottom < grid.height)
    ix, iy_from_bottom, h = ix[inside], iy_from_bottom[inside], h[inside]
    row = grid.height - 1 - iy_from_bottom
    cell_ids = row * grid.width + ix

    data = _median_per_cell(cell_ids, h, grid.height * grid.width)
    grid_out = DsmGrid(grid.xll, grid.yll, grid.cell,
                       data.reshape(grid.height, grid.width))
    stats = DsmStats(
        n_pixels=n_pixels,
        n_triangulated=int(keep.sum()),
        n_dropped=n_dropped,
        mean_residual_px=float(np.mean(rms[keep])) if keep.any() else float("nan"),
    )
    return grid_out, stats
