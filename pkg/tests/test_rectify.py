"""Tests for epipolar rectification onto a shared canvas.

True correspondences come straight from the camera geometry; rectified
conjugates must share a row, disparity must encode height through the
per-block linear models, and the resampled rasters must agree
photometrically at conjugate canvas positions.
"""

from __future__ import annotations

import numpy as np
import pytest

from satstereo.errors import EmptyOverlapError, RectificationError
from satstereo.orientation import BiasCorrection
from satstereo.rectify import GroundRect, apply_affine, rectify
from satstereo.rpc import project_arrays

from conftest import LAT0, LON0, consistent_matches

# -- helpers -------------------------------------------------------------------


def roi_for(scene, half_m: float) -> GroundRect:
    lat_lo, lon_lo = scene.frame.to_latlon(-half_m, -half_m)
    lat_hi, lon_hi = scene.frame.to_latlon(half_m, half_m)
    return GroundRect(lat_lo, lon_lo, lat_hi, lon_hi)


def bilinear_at(img: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    ax, ay = x - x0, y - y0
    x1 = np.minimum(x0 + 1, img.shape[1] - 1)
    y1 = np.minimum(y0 + 1, img.shape[0] - 1)
    return (
        img[y0, x0] * (1 - ax) * (1 - ay) + img[y0, x1] * ax * (1 - ay)
        + img[y1, x0] * (1 - ax) * ay + img[y1, x1] * ax * ay
    )


def warp_by_bias(img: np.ndarray, bias: BiasCorrection) -> np.ndarray:
    """Raster whose content sits at bias(original position)."""
    h, w = img.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float),
                         indexing="ij")
    src = bias.inverse().apply(np.stack([xx.ravel(), yy.ravel()], axis=1))
    sx = np.clip(src[:, 0], 0, w - 1)
    sy = np.clip(src[:, 1], 0, h - 1)
    return bilinear_at(img, np.column_stack([sx, sy])).reshape(h, w)


# -- geometry -------------------------------------------------------------------


def test_conjugates_share_rows(affine_scene):
    sc = affine_scene
    rmap, _, _ = rectify(sc.img1, sc.img2, sc.m1, sc.m2,
                         BiasCorrection.identity(), roi_for(sc, 70.0))
    assert rmap.y_parallax_rms < 1e-6
    p1, p2 = consistent_matches(sc.m1, sc.m2, 300, 17, 65.0, sc.dims,
                                h_range=(10.0, 38.0))
    assert p1.shape[0] >= 200
    r1 = apply_affine(rmap.rect_from_src_1, p1)
    r2 = apply_affine(rmap.rect_from_biased2, p2)
    assert np.abs(r1[:, 1] - r2[:, 1]).max() < 0.05


def test_disparity_maps_back_to_height(affine_scene):
    sc = affine_scene
    rmap, _, _ = rectify(sc.img1, sc.img2, sc.m1, sc.m2,
                         BiasCorrection.identity(), roi_for(sc, 70.0))
    rng = np.random.default_rng(4)
    mlat = 111_132.0
    lat = LAT0 + rng.uniform(-50, 50, 120) / mlat
    lon = LON0 + rng.uniform(-50, 50, 120) / (mlat * np.cos(np.radians(LAT0)))
    h = rng.uniform(-5.0, 45.0, 120)
    s1, l1 = project_arrays(sc.m1, lat, lon, h, warn_domain=False)
    s2, l2 = project_arrays(sc.m2, lat, lon, h, warn_domain=False)
    r1 = apply_affine(rmap.rect_from_src_1, np.column_stack([s1, l1]))
    r2 = apply_affine(rmap.rect_from_biased2, np.column_stack([s2, l2]))
    disp = r1[:, 0] - r2[:, 0]
    assert disp.min() >= rmap.d_min and disp.max() <= rmap.d_max
    est = rmap.height_from_disparity(np.round(r1[:, 1]).astype(int), disp)
    np.testing.assert_allclose(est, h, atol=0.05)


def test_canvas_contains_roi_projections(affine_scene):
    sc = affine_scene
    rmap, rect1, rect2 = rectify(sc.img1, sc.img2, sc.m1, sc.m2,
                                 BiasCorrection.identity(), roi_for(sc, 70.0))
    assert rect1.shape == (rmap.height, rmap.width)
    assert rect2.shape == rect1.shape
    p1, _ = consistent_matches(sc.m1, sc.m2, 100, 3, 65.0, sc.dims,
                               h_range=(10.0, 38.0))
    r1 = apply_affine(rmap.rect_from_src_1, p1)
    assert r1[:, 0].min() >= 0 and r1[:, 0].max() <= rmap.width - 1
    assert r1[:, 1].min() >= 0 and r1[:, 1].max() <= rmap.height - 1


# -- raster consistency under an injected bias -------------------------------------


def surface_matches(sc, n: int, seed: int, half_m: float):
    """True conjugates of points on the terrain surface (photometrically
    consistent across the rendered views, unlike free 3-D points)."""
    rng = np.random.default_rng(seed)
    mlat = 111_132.0
    lat = LAT0 + rng.uniform(-half_m, half_m, n) / mlat
    lon = LON0 + rng.uniform(-half_m, half_m, n) / (mlat * np.cos(np.radians(LAT0)))
    h = sc.terrain(lat, lon)
    s1, l1 = project_arrays(sc.m1, lat, lon, h, warn_domain=False)
    s2, l2 = project_arrays(sc.m2, lat, lon, h, warn_domain=False)
    return np.column_stack([s1, l1]), np.column_stack([s2, l2])


def test_biased_observations_resample_consistently(affine_scene):
    sc = affine_scene
    bias = BiasCorrection(3.0, 1.0, 0.0, -2.0, 0.0, 1.0)
    img2_obs = warp_by_bias(sc.img2, bias)
    rmap, rect1, rect2 = rectify(sc.img1, img2_obs, sc.m1, sc.m2, bias,
                                 roi_for(sc, 60.0))
    assert rmap.y_parallax_rms < 1e-6
    p1, p2 = surface_matches(sc, 300, 23, 55.0)
    obs2 = bias.apply(p2)
    r1 = apply_affine(rmap.rect_from_src_1, p1)
    r2 = apply_affine(rmap.rect_from_biased2, obs2)
    assert np.abs(r1[:, 1] - r2[:, 1]).max() < 0.05
    inside = (
        (r1[:, 0] > 2) & (r1[:, 0] < rmap.width - 3)
        & (r2[:, 0] > 2) & (r2[:, 0] < rmap.width - 3)
        & (r1[:, 1] > 2) & (r1[:, 1] < rmap.height - 3)
    )
    assert inside.sum() >= 100
    v1 = bilinear_at(rect1, r1[inside])
    v2 = bilinear_at(rect2, r2[inside])
    scale = np.std(v1)
    assert scale > 1.0
    assert np.median(np.abs(v1 - v2)) < 0.1 * scale


# -- failure modes -------------------------------------------------------------------


def test_identical_views_rejected(affine_scene):
    sc = affine_scene
    with pytest.raises(RectificationError):
        rectify(sc.img1, sc.img1, sc.m1, sc.m1, BiasCorrection.identity(),
                roi_for(sc, 60.0))


def test_roi_outside_images_rejected(affine_scene):
    sc = affine_scene
    lat_lo, lon_lo = sc.frame.to_latlon(2000.0, 2000.0)
    lat_hi, lon_hi = sc.frame.to_latlon(2600.0, 2600.0)
    with pytest.raises(EmptyOverlapError):
        rectify(sc.img1, sc.img2, sc.m1, sc.m2, BiasCorrection.identity(),
                GroundRect(lat_lo, lon_lo, lat_hi, lon_hi))


def test_inverted_height_range_rejected(affine_scene):
    sc = affine_scene
    with pytest.raises(ValueError):
        rectify(sc.img1, sc.img2, sc.m1, sc.m2, BiasCorrection.identity(),
                roi_for(sc, 60.0), h_min=50.0, h_max=-10.0)


def test_degenerate_roi_rejected():
    with pytest.raises(ValueError):
        GroundRect(37.0, -105.0, 37.0, -104.9)
