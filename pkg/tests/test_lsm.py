"""Tests for least squares matching refinement.

Truth comes from construction: image 2 is image 1 resampled under a
known sub-pixel translation, so the correct refined position of every
patch is the starting point plus that translation.
"""

from __future__ import annotations

import numpy as np
import pytest

from satstereo.errors import TexturelessPatchError
from satstereo.lsm import LsmConfig, lsm_refine, refine_matchset
from satstereo.matching import MatchSet
from satstereo.rpc import ImagePoint

from conftest import build_affine_scene

# -- helpers -------------------------------------------------------------------


def shift_image(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Bilinear resample so content moves by (+dx, +dy) pixels."""
    h, w = img.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float),
                         indexing="ij")
    sx = np.clip(xx - dx, 0, w - 1)
    sy = np.clip(yy - dy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    ax, ay = sx - x0, sy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return (
        img[y0, x0] * (1 - ax) * (1 - ay) + img[y0, x1] * ax * (1 - ay)
        + img[y1, x0] * (1 - ax) * ay + img[y1, x1] * ax * ay
    )


def grid_points(img: np.ndarray, margin: int, step: int):
    for y in range(margin, img.shape[0] - margin, step):
        for x in range(margin, img.shape[1] - margin, step):
            yield ImagePoint(float(x), float(y))


@pytest.fixture(scope="module")
def textured():
    return build_affine_scene(width=320, height=320, seed=15).img1


# -- config validation -----------------------------------------------------------


def test_even_window_rejected():
    with pytest.raises(ValueError):
        LsmConfig(window=20)


# -- single-patch refinement ------------------------------------------------------


def test_identity_alignment_stays_put(textured):
    p = ImagePoint(160.0, 150.0)
    result = lsm_refine(textured, textured, p, p)
    assert result.converged
    assert abs(result.point.sample - p.sample) < 1e-3
    assert abs(result.point.line - p.line) < 1e-3


def test_subpixel_shift_recovered(textured):
    dx, dy = 0.3, 0.0
    moved = shift_image(textured, dx, dy)
    total = hits = 0
    for p in grid_points(textured, 30, 23):
        try:
            result = lsm_refine(textured, moved, p, p)
        except TexturelessPatchError:
            continue
        total += 1
        if (result.converged
                and abs(result.point.sample - (p.sample + dx)) < 0.05
                and abs(result.point.line - (p.line + dy)) < 0.05):
            hits += 1
    assert total >= 40
    assert hits / total >= 0.95


def test_textureless_template_rejected():
    flat = np.full((64, 64), 40.0)
    with pytest.raises(TexturelessPatchError):
        lsm_refine(flat, flat, ImagePoint(32.0, 32.0), ImagePoint(32.0, 32.0))


def test_template_outside_image_rejected(textured):
    with pytest.raises(ValueError):
        lsm_refine(textured, textured, ImagePoint(3.0, 160.0),
                   ImagePoint(160.0, 160.0))


def test_window_exiting_search_image_returns_unconverged(textured):
    p1 = ImagePoint(160.0, 160.0)
    p2 = ImagePoint(5.0, 160.0)
    result = lsm_refine(textured, textured, p1, p2)
    assert not result.converged
    assert result.point == p2


# -- match-set refinement -----------------------------------------------------------


def test_matchset_displaced_starts_pull_back_to_truth(textured):
    dx, dy = 0.3, -0.2
    moved = shift_image(textured, dx, dy)
    pts = [p for p in grid_points(textured, 30, 29)]
    p1 = np.array([[p.sample, p.line] for p in pts])
    truth = p1 + [dx, dy]
    start = truth + [0.4, 0.0]
    dims = (textured.shape[1], textured.shape[0])
    matches = MatchSet.build("t", "m", p1, start, None, dims, dims)
    out, report = refine_matchset(textured, moved, matches)
    assert report.refined >= 0.9 * len(pts)
    assert report.refined + report.kept + report.rejected == len(pts)
    err = np.linalg.norm(out.p2 - truth, axis=1)
    assert np.median(err) < 0.05
    np.testing.assert_array_equal(out.p1, matches.p1)


def test_matchset_keeps_unconverged_rows(textured):
    p1 = np.array([[160.0, 160.0]])
    p2 = np.array([[5.0, 160.0]])
    dims = (textured.shape[1], textured.shape[0])
    matches = MatchSet.build("t", "m", p1, p2, None, dims, dims)
    out, report = refine_matchset(textured, textured, matches)
    assert report.refined == 0
    assert report.kept == 1
    np.testing.assert_array_equal(out.p2, p2)


def test_matchset_counts_textureless_as_rejected(textured):
    flat = np.full_like(textured, 11.0)
    p1 = np.array([[100.0, 100.0], [200.0, 200.0]])
    dims = (textured.shape[1], textured.shape[0])
    matches = MatchSet.build("t", "m", p1, p1 + 0.5, None, dims, dims)
    out, report = refine_matchset(flat, flat, matches)
    assert report.rejected == 2
    assert report.refined == 0
    np.testing.assert_array_equal(out.p2, matches.p2)


def test_empty_matchset_passes_through(textured):
    dims = (textured.shape[1], textured.shape[0])
    empty = MatchSet.build("t", "m", np.empty((0, 2)), np.empty((0, 2)),
                           None, dims, dims)
    out, report = refine_matchset(textured, textured, empty)
    assert len(out) == 0
    assert (report.refined, report.kept, report.rejected) == (0, 0, 0)
