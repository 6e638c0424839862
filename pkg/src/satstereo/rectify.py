"""Approximate epipolar rectification of an oriented image pair.

Both cameras are approximated by affine models fitted by least squares
over a control grid spanning the region of interest and height range.
The shared row coordinate is the ground functional n . X where n is the
cross product of the two affine viewing directions, so conjugate points
land on identical rows up to the affine-fit residual.  Column coordinates
are built so that their ground gradients agree horizontally and differ
only vertically, which makes canvas disparity a linear function of height
alone.  The bias correction is folded into the second camera before
fitting, making the rectified pair consistent with the estimated relative
orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyOverlapError, RectificationError
from .frames import LocalFrame
from .orientation import BiasCorrection
from .rpc import RpcModel, project_arrays

N_ROW_BLOCKS = 8


@dataclass(frozen=True)
class GroundRect:
    """Geodetic region of interest."""

    lat_min: float
    lon_min: float
    lat_max: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("degenerate ground rectangle")

    @property
    def center(self) -> tuple[float, float]:
        return (self.lat_min + self.lat_max) / 2.0, (self.lon_min + self.lon_max) / 2.0


@dataclass(frozen=True)
class RectificationMap:
    """Affine transforms between rectified canvas and source image pixels.

    ``src_from_rect_1`` maps homogeneous canvas coordinates (x, y, 1) to
    image-1 pixels; ``biased2_from_rect`` maps to observed image-2
    pixels, which coincide with the bias-corrected model projection
    (apply the inverse bias before handing coordinates to the RPC).
    ``disp_to_height`` holds per-row-block linear models h = a*d + b in
    canvas disparity units.
    """

    src_from_rect_1: np.ndarray  # (2, 3)
    biased2_from_rect: np.ndarray  # (2, 3)
    rect_from_src_1: np.ndarray
    rect_from_biased2: np.ndarray
    width: int
    height: int
    d_min: int
    d_max: int
    disp_to_height: tuple[tuple[int, int, float, float], ...]
    y_parallax_rms: float
    frame: LocalFrame

    def height_from_disparity(self, rows: np.ndarray, disp: np.ndarray) -> np.ndarray:
        """Initial height estimate per (row, disparity) from the block fits."""
        rows = np.asarray(rows)
        disp = np.asarray(disp, dtype=float)
        h = np.empty(disp.shape, dtype=float)
        for row_lo, row_hi, a, b in self.disp_to_height:
            sel = (rows >= row_lo) & (rows < row_hi)
            h[sel] = a * disp[sel] + b
        return h


def apply_affine(mat: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return pts @ mat[:, :2].T + mat[:, 2]


def invert_affine(mat: np.ndarray) -> np.ndarray:
    lin = np.linalg.inv(mat[:, :2])
    out = np.empty((2, 3))
    out[:, :2] = lin
    out[:, 2] = -lin @ mat[:, 2]
    return out


def _control_grid(roi: GroundRect, h_min: float, h_max: float, n: int, n_h: int):
    lats = np.linspace(roi.lat_min, roi.lat_max, n)
    lons = np.linspace(roi.lon_min, roi.lon_max, n)
    hs = np.linspace(h_min, h_max, n_h)
    lat, lon, h = np.meshgrid(lats, lons, hs, indexing="ij")
    return lat.ravel(), lon.ravel(), h.ravel()


def _fit_affine_camera(xyz: np.ndarray, proj: np.ndarray):
    """Least-squares affine camera proj ~ M xyz + o; returns (M, o, rms)."""
    design = np.column_stack([xyz, np.ones(xyz.shape[0])])
    sol, _, rank, _ = np.linalg.lstsq(design, proj, rcond=None)
    if rank < 4:
        raise RectificationError("affine camera fit is rank-deficient")
    m = sol[:3].T
    o = sol[3]
    resid = proj - (xyz @ m.T + o)
    return m, o, float(np.sqrt(np.mean(resid**2)))


def _viewing_direction(m: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(m)
    d = vt[-1]
    return d if d[2] >= 0 else -d


def rectify(img1: np.ndarray, img2: np.ndarray, m1: RpcModel, m2: RpcModel,
            bias: BiasCorrection, roi: GroundRect, *,
            h_min: float | None = None, h_max: float | None = None,
            grid_n: int = 7, n_heights: int = 5, margin_px: int = 2,
            disparity_margin: int = 3):
    """Rectify an oriented pair over a ground ROI.

    Returns (RectificationMap, rect1, rect2); the rasters share a canvas
    whose rows are epipolar (conjugate points differ only in x).  Raises
    RectificationError on near-zero baselines and EmptyOverlapError when
    the ROI projects outside either image.
    """
    img1 = np.asarray(img1, dtype=np.float32)
    img2 = np.asarray(img2, dtype=np.float32)
    if h_min is None:
        h_min = m1.h_off - m1.h_scale / 2.0
    if h_max is None:
        h_max = m1.h_off + m1.h_scale / 2.0
    if not h_min < h_max:
        raise ValueError("h_min must be below h_max")

    lat0, lon0 = roi.center
    frame = LocalFrame(lat0, lon0)
    lat, lon, h = _control_grid(roi, h_min, h_max, grid_n, n_heights)
    x, y = frame.to_xy(lat, lon)
    xyz = np.column_stack([x, y, h])

    s1, l1 = project_arrays(m1, lat, lon, h, warn_domain=False)
    proj1 = np.column_stack([s1, l1])
    s2, l2 = project_arrays(m2, lat, lon, h, warn_domain=False)
    proj2 = bias.apply(np.column_stack([s2, l2]))
    raw2 = bias.inverse().apply(proj2)

    def _covered(proj, shape):
        inside = (
            (proj[:, 0] >= 0) & (proj[:, 0] <= shape[1] - 1)
            & (proj[:, 1] >= 0) & (proj[:, 1] <= shape[0] - 1)
        )
        return bool(np.any(inside))

    if not _covered(proj1, img1.shape) or not _covered(raw2, img2.shape):
        raise EmptyOverlapError("ROI does not project into both images")

    cam_m1, cam_o1, _ = _fit_affine_camera(xyz, proj1)
    cam_m2, cam_o2, _ = _fit_affine_camera(xyz, proj2)

    d1 = _viewing_direction(cam_m1)
    d2 = _viewing_direction(cam_m2)
    normal = np.cross(d1, d2)
    if np.linalg.norm(normal) < 1e-8:
        raise RectificationError("viewing rays are parallel (zero baseline)")
    normal /= np.linalg.norm(normal)
    if min(d1[2], d2[2]) < 1e-6:
        raise RectificationError("viewing rays are nearly horizontal")
    baseline = d1[:2] / d1[2] - d2[:2] / d2[2]
    if np.linalg.norm(baseline) < 1e-10:
        raise RectificationError("views have no relative horizontal parallax")
    t_dir = baseline / np.linalg.norm(baseline)

    # Row functional: n . X shared by both images.  Column functional per
    # image: c_i = (t, 0) - (t . d_i / d_iz) e_z, which lies in the camera
    # rowspace and whose difference across the pair is purely vertical, so
    # canvas disparity varies with height only (up to the affine-fit error).
    alphas, col_funcs = [], []
    for cam_m, d in ((cam_m1, d1), (cam_m2, d2)):
        pinv = np.linalg.pinv(cam_m)
        alphas.append(normal @ pinv)
        c = np.array([t_dir[0], t_dir[1], -(t_dir @ d[:2]) / d[2]])
        col_funcs.append(c @ pinv)
    k = 2.0 / (np.linalg.norm(alphas[0]) + np.linalg.norm(alphas[1]))
    q = 2.0 / (np.linalg.norm(col_funcs[0]) + np.linalg.norm(col_funcs[1]))

    h_ref = 0.5 * (h_min + h_max)
    x_ref = np.array([0.0, 0.0, h_ref])
    transforms = []
    for cam_m, cam_o, alpha, col in zip(
        (cam_m1, cam_m2), (cam_o1, cam_o2), alphas, col_funcs
    ):
        t = np.empty((2, 3))
        t[0, :2] = q * col
        t[0, 2] = -q * float(col @ (cam_m @ x_ref + cam_o))
        t[1, :2] = k * alpha
        t[1, 2] = -k * float(alpha @ cam_o)
        if abs(np.linalg.det(t[:, :2])) < 1e-12:
            raise RectificationError("column axis collapses onto the row axis")
        transforms.append(t)

    rect1_ctrl = apply_affine(transforms[0], proj1)
    rect2_ctrl = apply_affine(transforms[1], proj2)
    y_parallax_rms = float(np.sqrt(np.mean((rect1_ctrl[:, 1] - rect2_ctrl[:, 1]) ** 2)))

    y_all = np.concatenate([rect1_ctrl[:, 1], rect2_ctrl[:, 1]])
    y0 = int(np.floor(y_all.min())) - margin_px
    height = int(np.ceil(y_all.max())) + margin_px - y0 + 1
    x_all = np.concatenate([rect1_ctrl[:, 0], rect2_ctrl[:, 0]])
    x0 = int(np.floor(x_all.min())) - margin_px
    width = int(np.ceil(x_all.max())) + margin_px - x0 + 1

    # a shared x origin keeps the control disparities unchanged
    for t in transforms:
        t[0, 2] -= x0
        t[1, 2] -= y0

    rect_from_src_1, rect_from_biased2 = transforms
    src_from_rect_1 = invert_affine(rect_from_src_1)
    biased2_from_rect = invert_affine(rect_from_biased2)

    rect1_c = apply_affine(rect_from_src_1, proj1)
    rect2_c = apply_affine(rect_from_biased2, proj2)
    disp = rect1_c[:, 0] - rect2_c[:, 0]
    d_min = int(np.floor(disp.min())) - disparity_margin
    d_max = int(np.ceil(disp.max())) + disparity_margin

    blocks = []
    rows_c = rect1_c[:, 1]
    global_fit = np.linalg.lstsq(
        np.column_stack([disp, np.ones_like(disp)]), h, rcond=None
    )[0]
    edges = np.linspace(0, height, N_ROW_BLOCKS + 1)
    for bi in range(N_ROW_BLOCKS):
        row_lo = int(edges[bi])
        row_hi = int(edges[bi + 1]) if bi < N_ROW_BLOCKS - 1 else height
        sel = (rows_c >= row_lo) & (rows_c < row_hi)
        if sel.sum() >= 2 and np.ptp(disp[sel]) > 1e-9:
            fit = np.linalg.lstsq(
                np.column_stack([disp[sel], np.ones(sel.sum())]), h[sel], rcond=None
            )[0]
        else:
            fit = global_fit
        blocks.append((row_lo, row_hi, float(fit[0]), float(fit[1])))

    # resample both images onto the shared canvas; observed image-2 pixels
    # already live in bias-corrected coordinates, so no extra composition
    xs, ys = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    canvas = np.column_stack([xs.ravel(), ys.ravel()])
    rect_rasters = []
    for img, mat in ((img1, src_from_rect_1), (img2, biased2_from_rect)):
        src = apply_affine(mat, canvas)
        raster = ndimage.map_coordinates(
            img, [src[:, 1], src[:, 0]], order=1, mode="constant", cval=0.0
        ).reshape(height, width).astype(np.float32)
        rect_rasters.append(raster)

    rmap = RectificationMap(
        src_from_rect_1=src_from_rect_1, biased2_from_rect=biased2_from_rect,
        rect_from_src_1=rect_from_src_1, rect_from_biased2=rect_from_biased2,
        width=width, height=height, d_min=d_min, d_max=d_max,
        disp_to_height=tuple(blocks), y_parallax_rms=y_parallax_rms, frame=frame,
    )
    return rmap, rect_rasters[0], rect_rasters[1]
