"""DSM evaluation: surface co-registration, completeness, RMSE, deltas.

Co-registration estimates a 3D translation aligning the generated DSM to
the truth by Gauss-Newton on bilinear surface samples; the step is
backtracked whenever it would increase the RMSE, so alignment never makes
agreement worse.  Completeness and RMSE are computed on the truth grid
after resampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoregistrationError, InsufficientDataError, UndefinedMetricError
from .rasters import DsmGrid

MIN_MUTUAL_CELLS = 100
PLANAR_COND_LIMIT = 1e8


@dataclass(frozen=True)
class CoregResult:
    dx: float
    dy: float
    dz: float
    pre_rmse: float
    post_rmse: float
    n_cells: int
    planar_degenerate: bool
    iterations: int

    @property
    def shift(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)


def _sample_bilinear(grid: DsmGrid, x: np.ndarray, y: np.ndarray):
    """Sample cell-centered values with gradients.

    A sample is valid only when every stencil neighbor carrying nonzero
    weight is a valid cell; gradients use the same stencil.
    Returns (value, d/dx, d/dy, valid).
    """
    data = grid.data
    h, w = data.shape
    fx = (np.asarray(x, dtype=float) - grid.xll) / grid.cell_size - 0.5
    fy_up = (np.asarray(y, dtype=float) - grid.yll) / grid.cell_size - 0.5
    fr = (h - 1) - fy_up  # row index grows southward
    c0 = np.floor(fx).astype(int)
    r0 = np.floor(fr).astype(int)
    ac = fx - c0
    ar = fr - r0

    val = np.zeros(fx.shape)
    gx = np.zeros(fx.shape)
    gy = np.zeros(fx.shape)
    valid = np.ones(fx.shape, dtype=bool)
    corners = ((0, 0), (0, 1), (1, 0), (1, 1))
    padded = np.full((h + 2, w + 2), np.nan)
    padded[1:-1, 1:-1] = data
    vals = {}
    for dr, dc in corners:
        rr = np.clip(r0 + dr + 1, 0, h + 1)
        cc = np.clip(c0 + dc + 1, 0, w + 1)
        oob = (r0 + dr < 0) | (r0 + dr > h - 1) | (c0 + dc < 0) | (c0 + dc > w - 1)
        v = padded[rr, cc]
        v = np.where(oob, np.nan, v)
        vals[(dr, dc)] = v
        weight = (ar if dr else 1 - ar) * (ac if dc else 1 - ac)
        contributes = weight > 1e-12
        valid &= np.where(contributes, np.isfinite(v), True)
        val += np.where(contributes, weight * np.nan_to_num(v), 0.0)
    # gradient of the bilinear surface; meaningful only where valid
    with np.errstate(invalid="ignore"):
        v00, v01 = vals[(0, 0)], vals[(0, 1)]
        v10, v11 = vals[(1, 0)], vals[(1, 1)]
        z = np.nan_to_num
        gx = (z(v01 - v00) * (1 - ar) + z(v11 - v10) * ar) / grid.cell_size
        d_dr = z(v10 - v00) * (1 - ac) + z(v11 - v01) * ac
        gy = -d_dr / grid.cell_size  # row axis points south
    return val, gx, gy, valid


def resample_to_grid(src: DsmGrid, target: DsmGrid,
                     shift: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> DsmGrid:
    """Resample ``src`` onto the target geometry: out(x, y) = src(x+dx, y+dy)+dz."""
    dx, dy, dz = shift
    xs, ys = target.cell_centers()
    xx, yy = np.meshgrid(xs, ys)
    val, _, _, valid = _sample_bilinear(src, xx + dx, yy + dy)
    data = np.where(valid, val + dz, np.nan)
    return DsmGrid(target.xll, target.yll, target.cell_size, data)


def _rmse_at(gen: DsmGrid, truth: DsmGrid, shift) -> tuple[float, int]:
    dx, dy, dz = shift
    xs, ys = truth.cell_centers()
    xx, yy = np.meshgrid(xs, ys)
    val, _, _, valid = _sample_bilinear(gen, xx + dx, yy + dy)
    mutual = valid & truth.valid_mask
    n = int(mutual.sum())
    if n == 0:
        return float("inf"), 0
    diff = val[mutual] + dz - truth.data[mutual]
    return float(np.sqrt(np.mean(diff**2))), n


def coregister(generated: DsmGrid, truth: DsmGrid, *,
               tol: float = 1e-3, max_iter: int = 50) -> CoregResult:
    """Estimate the 3D translation aligning generated onto truth.

    Raises InsufficientDataError below 100 mutually valid cells and
    CoregistrationError when iteration diverges.
    """
    xs, ys = truth.cell_centers()
    xx, yy = np.meshgrid(xs, ys)
    truth_valid = truth.valid_mask

    shift = np.zeros(3)
    pre_rmse, n0 = _rmse_at(generated, truth, shift)
    if n0 < MIN_MUTUAL_CELLS:
        raise InsufficientDataError(
            f"only {n0} mutually valid cells; need {MIN_MUTUAL_CELLS}"
        )
    current_rmse = pre_rmse
    planar = False
    extent = max(
        generated.width * generated.cell_size, generated.height * generated.cell_size,
        truth.width * truth.cell_size, truth.height * truth.cell_size,
    )

    iteration = 0
    for iteration in range(1, max_iter + 1):
        val, gx, gy, valid = _sample_bilinear(generated, xx + shift[0], yy + shift[1])
        mutual = valid & truth_valid
        n = int(mutual.sum())
        if n < MIN_MUTUAL_CELLS:
            raise CoregistrationError(
                "overlap lost during alignment", last_shift=tuple(shift)
            )
        resid = val[mutual] + shift[2] - truth.data[mutual]
        jac = np.column_stack([gx[mutual], gy[mutual], np.ones(n)])
        jtj = jac.T @ jac
        eig = np.linalg.eigvalsh(jtj)
        if eig[0] <= 0 or eig[-1] / eig[0] > PLANAR_COND_LIMIT:
            planar = True
            shift[0] = shift[1] = 0.0
            val0, _, _, valid0 = _sample_bilinear(generated, xx, yy)
            mutual0 = valid0 & truth_valid
            shift[2] = float(np.mean(truth.data[mutual0] - val0[mutual0]))
            current_rmse, _ = _rmse_at(generated, truth, shift)
            break
        delta = np.linalg.solve(jtj, -(jac.T @ resid))
        step = 1.0
        improved = False
        while step >= 1.0 / 64.0:
            cand = shift + step * delta
            cand_rmse, cand_n = _rmse_at(generated, truth, cand)
            if cand_n >= MIN_MUTUAL_CELLS and cand_rmse <= current_rmse:
                shift = cand
                current_rmse = cand_rmse
                improved = True
                break
            step /= 2.0
        if not improved:
            break
        if np.linalg.norm(shift[:2]) > extent:
            raise CoregistrationError(
                "alignment diverged beyond the grid extent", last_shift=tuple(shift)
            )
        if np.linalg.norm(step * delta) < tol:
            break
    else:
        raise CoregistrationError(
            f"no convergence within {max_iter} iterations", last_shift=tuple(shift)
        )

    post_rmse, n_cells = _rmse_at(generated, truth, shift)
    return CoregResult(
        dx=float(shift[0]), dy=float(shift[1]), dz=float(shift[2]),
        pre_rmse=pre_rmse, post_rmse=post_rmse, n_cells=n_cells,
        planar_degenerate=planar, iterations=iteration,
    )


def completeness(generated: DsmGrid, truth: DsmGrid) -> float:
    """Percent of truth-valid cells covered by valid generated cells."""
    if not generated.same_geometry(truth):
        raise ValueError("completeness requires grids on identical geometry")
    truth_valid = truth.valid_mask
    denom = int(truth_valid.sum())
    if denom == 0:
        raise UndefinedMetricError("truth DSM has no valid cells")
    mutual = int((truth_valid & generated.valid_mask).sum())
    return 100.0 * mutual / denom


def dsm_rmse(generated: DsmGrid, truth: DsmGrid) -> float:
    """RMS elevation difference over mutually valid cells of a common grid."""
    if not generated.same_geometry(truth):
        raise ValueError("dsm_rmse requires grids on identical geometry")
    mutual = generated.valid_mask & truth.valid_mask
    if not mutual.any():
        raise UndefinedMetricError("no mutually valid cells")
    diff = generated.data[mutual] - truth.data[mutual]
    return float(np.sqrt(np.mean(diff**2)))


def relative_change(m_lsm: float, m_plain: float) -> float:
    """Percent change of a metric caused by enabling refinement."""
    if m_plain == 0:
        raise UndefinedMetricError("relative change undefined for a zero baseline value")
    return (m_lsm - m_plain) / m_plain * 100.0


@dataclass(frozen=True)
class DsmEvaluation:
    completeness: float
    rmse: float
    shift: tuple[float, float, float]
    pre_rmse: float
    planar_degenerate: bool


def evaluate_dsm(generated: DsmGrid, truth: DsmGrid) -> DsmEvaluation:
    """Co-register, resample onto the truth grid, and score."""
    coreg = coregister(generated, truth)
    aligned = resample_to_grid(generated, truth, coreg.shift)
    return DsmEvaluation(
        completeness=completeness(aligned, truth),
        rmse=dsm_rmse(aligned, truth),
        shift=coreg.shift,
        pre_rmse=coreg.pre_rmse,
        planar_degenerate=coreg.planar_degenerate,
    )
