"""Tests for DSM co-registration and quality metrics.

Truth is analytic: smooth surfaces with a known injected translation, so
the expected alignment and scores follow directly from the construction.
"""

from __future__ import annotations

import numpy as np
import pytest

from satstereo.errors import (
    CoregistrationError,
    InsufficientDataError,
    UndefinedMetricError,
)
from satstereo.evaluation import (
    completeness,
    coregister,
    dsm_rmse,
    evaluate_dsm,
    relative_change,
    resample_to_grid,
)
from satstereo.rasters import DsmGrid

# -- surface builders --------------------------------------------------------------


def wavy(x, y):
    return 20.0 + 4.0 * np.sin(x / 15.0) + 3.0 * np.cos(y / 11.0)


def make_grid(f, n: int = 80, cell: float = 1.0, xll: float = 0.0,
              yll: float = 0.0) -> DsmGrid:
    grid = DsmGrid(xll, yll, cell, np.zeros((n, n)))
    xs, ys = grid.cell_centers()
    xx, yy = np.meshgrid(xs, ys)
    return grid.with_data(f(xx, yy))


def shifted_generated(dx: float, dy: float, dz: float, n: int = 80) -> DsmGrid:
    """Grid that aligns onto wavy truth under shift (dx, dy, dz).

    Alignment convention: aligned(x, y) = generated(x + dx, y + dy) + dz.
    """
    return make_grid(lambda x, y: wavy(x - dx, y - dy) - dz, n=n)


# -- coregistration -----------------------------------------------------------------


def test_identical_surfaces_need_no_shift():
    truth = make_grid(wavy)
    result = coregister(truth, truth)
    assert abs(result.dx) < 1e-6
    assert abs(result.dy) < 1e-6
    assert abs(result.dz) < 1e-6
    assert result.post_rmse < 1e-6
    assert not result.planar_degenerate


def test_injected_shift_recovered():
    truth = make_grid(wavy)
    generated = shifted_generated(1.0, -0.5, 2.0)
    result = coregister(generated, truth)
    assert result.dx == pytest.approx(1.0, abs=0.05)
    assert result.dy == pytest.approx(-0.5, abs=0.05)
    assert result.dz == pytest.approx(2.0, abs=0.05)
    assert result.post_rmse < 0.05
    assert result.post_rmse <= result.pre_rmse + 1e-9


def test_vertical_offset_reduces_rmse_to_zero():
    truth = make_grid(wavy)
    generated = truth.with_data(truth.data - 2.0)
    result = coregister(generated, truth)
    assert result.pre_rmse == pytest.approx(2.0, abs=1e-6)
    assert result.post_rmse < 0.01
    assert result.dz == pytest.approx(2.0, abs=0.01)


def test_flat_surface_flags_planar_and_fits_dz():
    truth = make_grid(lambda x, y: np.full_like(x, 30.0))
    generated = truth.with_data(truth.data - 3.0)
    result = coregister(generated, truth)
    assert result.planar_degenerate
    assert result.dx == 0.0 and result.dy == 0.0
    assert result.dz == pytest.approx(3.0, abs=1e-9)
    assert result.post_rmse < 1e-9


def test_too_little_overlap_raises():
    truth = make_grid(wavy, n=5)
    with pytest.raises(InsufficientDataError):
        coregister(truth, truth)


def test_iteration_budget_enforced():
    truth = make_grid(wavy)
    generated = shifted_generated(1.0, -0.5, 2.0)
    with pytest.raises(CoregistrationError):
        coregister(generated, truth, max_iter=1, tol=1e-12)


# -- resampling ----------------------------------------------------------------------


def test_resample_identity_preserves_values():
    truth = make_grid(wavy)
    out = resample_to_grid(truth, truth)
    np.testing.assert_allclose(out.data, truth.data, atol=1e-12)


def test_resample_applies_shift():
    truth = make_grid(wavy)
    generated = shifted_generated(1.0, -0.5, 2.0)
    aligned = resample_to_grid(generated, truth, (1.0, -0.5, 2.0))
    mutual = aligned.valid_mask & truth.valid_mask
    assert mutual.mean() > 0.9
    assert np.abs(aligned.data[mutual] - truth.data[mutual]).max() < 0.05


# -- completeness and RMSE -------------------------------------------------------------


def test_completeness_trivial_fractions():
    base = make_grid(wavy, n=20)
    full = base
    half_data = base.data.copy()
    half_data[:10, :] = np.nan
    half = base.with_data(half_data)
    none = base.with_data(np.full_like(base.data, np.nan))
    assert completeness(full, base) == pytest.approx(100.0)
    assert completeness(half, base) == pytest.approx(50.0)
    assert completeness(none, base) == pytest.approx(0.0)


def test_completeness_requires_valid_truth():
    base = make_grid(wavy, n=10)
    empty = base.with_data(np.full_like(base.data, np.nan))
    with pytest.raises(UndefinedMetricError):
        completeness(base, empty)


def test_completeness_rejects_mismatched_geometry():
    a = make_grid(wavy, n=10)
    b = make_grid(wavy, n=10, xll=5.0)
    with pytest.raises(ValueError):
        completeness(a, b)


def test_rmse_unit_offsets():
    base = make_grid(wavy, n=20)
    data = base.data.copy()
    data[:, :10] += 1.0
    data[:, 10:] -= 1.0
    offset = base.with_data(data)
    assert dsm_rmse(offset, base) == pytest.approx(1.0)
    assert dsm_rmse(base, base) == pytest.approx(0.0)


def test_rmse_requires_mutual_cells():
    base = make_grid(wavy, n=10)
    empty = base.with_data(np.full_like(base.data, np.nan))
    with pytest.raises(UndefinedMetricError):
        dsm_rmse(empty, base)


# -- relative change -------------------------------------------------------------------


def test_relative_change_examples():
    assert relative_change(101.0, 100.0) == pytest.approx(1.0)
    assert relative_change(55.5, 55.5) == 0.0
    assert relative_change(0.72, 0.76) == pytest.approx(-5.2631578947, abs=1e-9)


def test_relative_change_zero_baseline_undefined():
    with pytest.raises(UndefinedMetricError):
        relative_change(5.0, 0.0)


def test_relative_change_antisymmetry_identity():
    a, b = 0.83, 0.71
    assert relative_change(a, b) == pytest.approx(
        -relative_change(b, a) * (a / b), abs=1e-12)


# -- combined evaluation ------------------------------------------------------------------


def test_evaluate_dsm_scores_shifted_surface():
    truth = make_grid(wavy)
    generated = shifted_generated(1.0, -0.5, 2.0)
    result = evaluate_dsm(generated, truth)
    assert result.completeness >= 95.0
    assert result.rmse < 0.05
    assert result.shift[0] == pytest.approx(1.0, abs=0.05)
    assert result.shift[1] == pytest.approx(-0.5, abs=0.05)
    assert result.shift[2] == pytest.approx(2.0, abs=0.05)
    assert result.rmse <= result.pre_rmse + 1e-9
    assert not result.planar_degenerate
