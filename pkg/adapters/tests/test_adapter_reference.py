"""Behavior of the built-in correlation backend."""

from __future__ import annotations

import numpy as np

from conftest import DOTS, draw_dots, smooth_texture
from matcher_adapters.reference import (detect_keypoints, grid_keypoints,
                                        local_variance, match_points)


def test_local_variance_flat_is_zero():
    assert np.all(local_variance(np.full((64, 64), 37.0)) == 0.0)


def test_detector_finds_fiducial_dots():
    pts = detect_keypoints(draw_dots().astype(float), max_pts=50, border=16)
    assert len(pts) >= len(DOTS)
    for x, y in DOTS:
        dist = np.hypot(pts[:, 0] - x, pts[:, 1] - y).min()
        assert dist <= 1.0, f"dot ({x}, {y}) missed by {dist:.1f} px"


def test_grid_keypoints_are_globally_anchored():
    full = grid_keypoints((512, 512))
    sub = grid_keypoints((256, 256))
    assert np.all(full % 16 == 0)
    # a tile whose origin is a multiple of the step queries the same
    # global positions the untiled run does
    shifted = {(x + 256, y + 256) for x, y in sub}
    full_set = {(x, y) for x, y in full}
    assert shifted <= full_set


def test_self_match_is_exact():
    img = smooth_texture(160, 160, seed=3).astype(float)
    pts = grid_keypoints(img.shape)
    p1, p2, scores = match_points(img, img, pts)
    assert len(p1) >= 0.8 * len(pts)
    assert np.array_equal(p1, p2)
    assert np.all(scores > 0.99)


def test_translation_recovered():
    wide = smooth_texture(200, 210, seed=8).astype(float)
    img_a = wide[:, :200]
    img_b = wide[:, 5:205]
    # content shifts left by 5, so a query at x matches at x - 5
    p1, p2, _ = match_points(img_a, img_b, grid_keypoints(img_a.shape))
    assert len(p1) >= 100
    dx = p2[:, 0] - p1[:, 0]
    dy = p2[:, 1] - p1[:, 1]
    assert np.median(dx) == -5.0
    assert np.median(dy) == 0.0
    good = (np.abs(dx + 5) <= 1) & (np.abs(dy) <= 1)
    assert good.mean() >= 0.9


def test_textureless_queries_dropped():
    flat = np.full((128, 128), 90.0)
    p1, p2, scores = match_points(flat, flat, grid_keypoints(flat.shape))
    assert len(p1) == 0 and len(p2) == 0 and len(scores) == 0
