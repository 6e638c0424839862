"""Synthetic cameras, terrain and imagery for tests and demos.

Both factories return exact RpcModel instances: an orthographic (affine)
camera uses degree-1 numerators with unit denominators, and a pinhole
(perspective) camera uses degree-1 numerators and denominators.  Both are
therefore representable without truncation error, which makes them usable
as ground truth in geometric tests.

The local scene frame is anchored at (lat0, lon0): x east, y north, z up,
meters.  Image rows grow southward (line 0 is the northern edge).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .frames import LocalFrame, meters_per_degree
from .rpc import RpcModel, inverse_project_arrays


def _degree1_coeffs(const: float, c_p: float, c_l: float, c_h: float) -> np.ndarray:
    c = np.zeros(20)
    c[0], c[1], c[2], c[3] = const, c_l, c_p, c_h
    return c


def _footprint_scales(lat0: float, width: int, height: int, gsd: float, margin: float):
    m_lat, m_lon = meters_per_degree(lat0)
    half_m = 0.5 * max(width, height) * gsd * margin
    return half_m / m_lat, half_m / m_lon


def _view_vector(azimuth_deg: float, zenith_deg: float) -> np.ndarray:
    """Unit vector pointing from the ground toward the satellite."""
    az = math.radians(azimuth_deg)
    zen = math.radians(zenith_deg)
    return np.array(
        [math.sin(zen) * math.sin(az), math.sin(zen) * math.cos(az), math.cos(zen)]
    )


def _linear_to_rpc(w, const, lat0, lon0, h_off, lat_scale, lon_scale, h_scale):
    """Rewrite the linear form w.(x,y,z)+const in normalized (P, L, H) terms."""
    m_lat, m_lon = meters_per_degree(lat0)
    return _degree1_coeffs(
        const=const + w[2] * h_off,
        c_p=w[1] * m_lat * lat_scale,
        c_l=w[0] * m_lon * lon_scale,
        c_h=w[2] * h_scale,
    )


def affine_rpc(
    lat0: float, lon0: float, *,
    width: int = 512, height: int = 512, gsd: float = 1.0,
    view_azimuth_deg: float = 0.0, view_zenith_deg: float = 0.0,
    h_off: float = 0.0, h_scale: float = 500.0, margin: float = 1.4,
) -> RpcModel:
    """Orthographic camera projecting along a fixed oblique view direction.

    A ground point is slid along the view ray onto the plane z = h_off,
    then gridded at ``gsd``.  The resulting model is exactly affine, so its
    epipolar curves are straight and parallel.
    """
    v = _view_vector(view_azimuth_deg, view_zenith_deg)
    if v[2] <= 0.1:
        raise ValueError("view direction too oblique for an orthographic model")
    lat_scale, lon_scale = _footprint_scales(lat0, width, height, gsd, margin)
    samp_off, samp_scale = (width - 1) / 2.0, (width - 1) / 2.0
    line_off, line_scale = (height - 1) / 2.0, (height - 1) / 2.0

    # footprint-plane coordinates: x' = x - (z - h_off) vx/vz, y' likewise
    w_s = np.array([1.0, 0.0, -v[0] / v[2]]) / (gsd * samp_scale)
    w_l = np.array([0.0, -1.0, v[1] / v[2]]) / (gsd * line_scale)
    shared = dict(lat0=lat0, lon0=lon0, h_off=h_off,
                  lat_scale=lat_scale, lon_scale=lon_scale, h_scale=h_scale)
    unit = np.zeros(20)
    unit[0] = 1.0
    return RpcModel(
        samp_num=_linear_to_rpc(w_s, -w_s[2] * h_off, **shared),
        samp_den=unit.copy(),
        line_num=_linear_to_rpc(w_l, -w_l[2] * h_off, **shared),
        line_den=unit.copy(),
        lat_off=lat0, lat_scale=lat_scale, lon_off=lon0, lon_scale=lon_scale,
        h_off=h_off, h_scale=h_scale,
        line_off=line_off, line_scale=line_scale,
        samp_off=samp_off, samp_scale=samp_scale,
    )


def perspective_rpc(
    lat0: float, lon0: float, *,
    width: int = 512, height: int = 512, gsd: float = 1.0,
    view_azimuth_deg: float = 0.0, view_zenith_deg: float = 10.0,
    altitude: float = 600000.0, h_off: float = 0.0, h_scale: float = 500.0,
    margin: float = 1.4,
) -> RpcModel:
    """Pinhole camera at the given altitude looking at the frame origin.

    Low altitudes give a wide field of view whose epipolar directions vary
    strongly across the image; high altitudes approach the affine limit.
    """
    v = _view_vector(view_azimuth_deg, view_zenith_deg)
    center = np.array([0.0, 0.0, h_off])
    cam = center + v * (altitude / v[2])
    fwd = (center - cam) / np.linalg.norm(center - cam)
    north = np.array([0.0, 1.0, 0.0])
    x_cam = np.cross(north, fwd)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(fwd, x_cam)
    focal_px = np.linalg.norm(center - cam) / gsd

    lat_scale, lon_scale = _footprint_scales(lat0, width, height, gsd, margin)
    samp_off, samp_scale = (width - 1) / 2.0, (width - 1) / 2.0
    line_off, line_scale = (height - 1) / 2.0, (height - 1) / 2.0

    shared = dict(lat0=lat0, lon0=lon0, h_off=h_off,
                  lat_scale=lat_scale, lon_scale=lon_scale, h_scale=h_scale)
    # sample = focal * x_cam.(X-C) / fwd.(X-C) + samp_off, normalized by samp_scale
    w_den = fwd
    c_den = -float(fwd @ cam)
    w_s = focal_px * x_cam / samp_scale
    c_s = -float(w_s @ cam)
    w_l = -focal_px * y_cam / line_scale  # rows grow southward
    c_l = -float(w_l @ cam)
    return RpcModel.normalized(
        samp_num=_linear_to_rpc(w_s, c_s, **shared),
        samp_den=_linear_to_rpc(w_den, c_den, **shared),
        line_num=_linear_to_rpc(w_l, c_l, **shared),
        line_den=_linear_to_rpc(w_den, c_den, **shared),
        lat_off=lat0, lat_scale=lat_scale, lon_off=lon0, lon_scale=lon_scale,
        h_off=h_off, h_scale=h_scale,
        line_off=line_off, line_scale=line_scale,
        samp_off=samp_off, samp_scale=samp_scale,
    )


# -- terrain and texture ---------------------------------------------------


@dataclass(frozen=True)
class RampFlatTerrain:
    """Flat plain joined to a constant-slope ramp along the x (east) axis."""

    frame: LocalFrame
    base_height: float = 0.0
    ramp_start_x: float = 0.0
    slope: float = 0.1
    max_height: float = 40.0

    def __call__(self, lat, lon):
        x, _ = self.frame.to_xy(np.asarray(lat, dtype=float), np.asarray(lon, dtype=float))
        rise = np.clip((x - self.ramp_start_x) * self.slope, 0.0, self.max_height)
        return self.base_height + rise


@dataclass(frozen=True)
class SmoothTexture:
    """Band-limited random texture sampled bilinearly in the local frame."""

    frame: LocalFrame
    grid: np.ndarray
    origin_x: float
    origin_y: float
    cell: float

    @classmethod
    def create(cls, frame: LocalFrame, *, extent_m: float = 1200.0, cell: float = 1.0,
               seed: int = 0, blur_px: float = 1.5) -> "SmoothTexture":
        n = int(math.ceil(extent_m / cell))
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((n, n))
        smooth = ndimage.gaussian_filter(noise, blur_px, mode="reflect")
        smooth -= smooth.min()
        smooth /= max(smooth.max(), 1e-12)
        grid = 40.0 + 175.0 * smooth
        return cls(frame, grid, -extent_m / 2.0, -extent_m / 2.0, cell)

    def __call__(self, lat, lon):
        x, y = self.frame.to_xy(np.asarray(lat, dtype=float), np.asarray(lon, dtype=float))
        fx = np.clip((x - self.origin_x) / self.cell, 0, self.grid.shape[1] - 1.001)
        fy = np.clip((y - self.origin_y) / self.cell, 0, self.grid.shape[0] - 1.001)
        x0 = np.floor(fx).astype(int)
        y0 = np.floor(fy).astype(int)
        ax, ay = fx - x0, fy - y0
        g = self.grid
        return (
            g[y0, x0] * (1 - ax) * (1 - ay) + g[y0, x0 + 1] * ax * (1 - ay)
            + g[y0 + 1, x0] * (1 - ax) * ay + g[y0 + 1, x0 + 1] * ax * ay
        )


def _fit_linear_inverse(model: RpcModel):
    """Fit (lat, lon) as a linear function of (sample, line, h).

    Exact for affine models; used to keep synthetic rendering cheap.
    """
    s_off, s_sc = model.samp_off, model.samp_scale
    l_off, l_sc = model.line_off, model.line_scale
    ss, ll, hh = np.meshgrid(
        np.linspace(s_off - s_sc, s_off + s_sc, 4),
        np.linspace(l_off - l_sc, l_off + l_sc, 4),
        np.linspace(model.h_off - model.h_scale / 2, model.h_off + model.h_scale / 2, 3),
        indexing="ij",
    )
    ss, ll, hh = ss.ravel(), ll.ravel(), hh.ravel()
    lat, lon = inverse_project_arrays(model, ss, ll, hh, warn_domain=False)
    a = np.column_stack([ss, ll, hh, np.ones_like(ss)])
    coef_lat, _, _, _ = np.linalg.lstsq(a, lat, rcond=None)
    coef_lon, _, _, _ = np.linalg.lstsq(a, lon, rcond=None)
    return coef_lat, coef_lon


def render_view(model: RpcModel, terrain, texture, width: int, height: int,
                *, n_iter: int = 8) -> np.ndarray:
    """Render the terrain surface as seen by a quasi-affine camera.

    For every pixel the ground intersection is found by fixed-point
    iteration on height using a fitted linear inverse camera, then the
    texture is sampled there.  Valid for smooth terrain without occlusion.
    """
    coef_lat, coef_lon = _fit_linear_inverse(model)
    ss, ll = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float),
                         indexing="xy")
    ss, ll = ss.ravel(), ll.ravel()
    h = np.full_like(ss, model.h_off)
    for _ in range(n_iter):
        basis = np.column_stack([ss, ll, h, np.ones_like(ss)])
        lat = basis @ coef_lat
        lon = basis @ coef_lon
        h = terrain(lat, lon)
    values = texture(lat, lon)
    return values.reshape(height, width).astype(np.float32)


def render_pair(m1: RpcModel, m2: RpcModel, terrain, texture,
                width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Render a photo-consistent stereo pair of the same textured terrain."""
    img1 = render_view(m1, terrain, texture, width, height)
    img2 = render_view(m2, terrain, texture, width, height)
    return img1, img2
