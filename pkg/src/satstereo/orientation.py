"""Relative orientation: affine bias compensation with RANSAC and the gate.

The second image's pointing error is absorbed by a 6-parameter affine
correction applied in its image space; the first image is the datum.
A match's residual is its y-parallax: the distance from the observed
point in image 2 to the bias-corrected epipolar curve of its partner.
A pair passes the gate when the consensus holds at least ``min_inliers``
matches and their RMS y-parallax does not exceed the ``t`` threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, SatStereoError
from .matching import MatchSet
from .rpc import ImagePoint, RpcModel, inverse_project_arrays, project_arrays

EPIPOLAR_SAMPLES = 11


@dataclass(frozen=True)
class BiasCorrection:
    """Affine image-space correction (s', l') of the second image.

    (s', l') = (a0 + a1 s + a2 l, a3 + a4 s + a5 l); identity is
    (0, 1, 0, 0, 0, 1).  The linear part must stay near-invertible
    (determinant within [0.5, 2]) since bias is a small correction.
    """

    a0: float
    a1: float
    a2: float
    a3: float
    a4: float
    a5: float

    def __post_init__(self):
        det = self.a1 * self.a5 - self.a2 * self.a4
        if not 0.5 <= det <= 2.0:
            raise ValueError(f"bias determinant {det:.4f} outside [0.5, 2.0]")

    @classmethod
    def identity(cls) -> "BiasCorrection":
        return cls(0.0, 1.0, 0.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_params(cls, params) -> "BiasCorrection":
        return cls(*(float(p) for p in params))

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a0, self.a1, self.a2, self.a3, self.a4, self.a5])

    def apply(self, points) -> np.ndarray:
        """Transform an (..., 2) array of (sample, line) points."""
        pts = np.asarray(points, dtype=float)
        s, l = pts[..., 0], pts[..., 1]
        return np.stack(
            [self.a0 + self.a1 * s + self.a2 * l, self.a3 + self.a4 * s + self.a5 * l],
            axis=-1,
        )

    def inverse(self) -> "BiasCorrection":
        det = self.a1 * self.a5 - self.a2 * self.a4
        b1, b2 = self.a5 / det, -self.a2 / det
        b4, b5 = -self.a4 / det, self.a1 / det
        return BiasCorrection(
            -(b1 * self.a0 + b2 * self.a3), b1, b2,
            -(b4 * self.a0 + b5 * self.a3), b4, b5,
        )


@dataclass(frozen=True)
class OrientationConfig:
    t: float = 5.0  # success gate on RMS y-parallax, pixels
    ransac_threshold: float = 2.0  # consensus threshold, pixels
    ransac_iterations: int = 2000
    min_inliers: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.t <= 0 or self.ransac_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if self.ransac_iterations < 1 or self.min_inliers < 1:
            raise ValueError("iteration and inlier counts must be positive")


@dataclass(frozen=True)
class Orientation:
    pair_id: str
    bias: BiasCorrection
    inlier_mask: np.ndarray
    inlier_ratio: float
    epipolar_rms: float
    success: bool
    errors: np.ndarray  # per-match y-parallax, NaN where geometry failed

    def __post_init__(self):
        for name in ("inlier_mask", "errors"):
            arr = np.asarray(getattr(self, name)).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "bias": list(self.bias.params),
            "inlier_mask": [bool(v) for v in self.inlier_mask],
            "inlier_ratio": self.inlier_ratio,
            "epipolar_rms": None if math.isnan(self.epipolar_rms) else self.epipolar_rms,
            "success": self.success,
            "errors": [None if math.isnan(e) else e for e in self.errors],
            "n_matches": int(self.inlier_mask.shape[0]),
            "n_inliers": self.n_inliers,
        }


def save_orientation(orientation: Orientation, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(orientation.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_orientation(path) -> Orientation:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    nan = float("nan")
    return Orientation(
        pair_id=d["pair_id"],
        bias=BiasCorrection.from_params(d["bias"]),
        inlier_mask=np.asarray(d["inlier_mask"], dtype=bool),
        inlier_ratio=d["inlier_ratio"],
        epipolar_rms=nan if d["epipolar_rms"] is None else d["epipolar_rms"],
        success=d["success"],
        errors=np.asarray([nan if e is None else e for e in d["errors"]], dtype=float),
    )


# -- epipolar curves and residuals ------------------------------------------


def epipolar_height_range(m1: RpcModel) -> tuple[float, float]:
    """Height sweep for residual evaluation: the first model's full volume."""
    return m1.h_off - m1.h_scale, m1.h_off + m1.h_scale


def build_curves(m1: RpcModel, m2: RpcModel, p1: np.ndarray,
                 n: int = EPIPOLAR_SAMPLES) -> tuple[np.ndarray, np.ndarray]:
    """Epipolar curves in image 2 for an (m, 2) array of image-1 points.

    Returns (curves (m, n, 2), ok (m,)); rows with failed geometry are
    flagged False and filled with NaN.
    """
    p1 = np.asarray(p1, dtype=float).reshape(-1, 2)
    m = p1.shape[0]
    h_lo, h_hi = epipolar_height_range(m1)
    heights = np.linspace(h_lo, h_hi, n)
    curves = np.full((m, n, 2), np.nan)
    ok = np.zeros(m, dtype=bool)
    ss = np.repeat(p1[:, 0], n)
    ll = np.repeat(p1[:, 1], n)
    hh = np.tile(heights, m)
    try:
        lat, lon = inverse_project_arrays(m1, ss, ll, hh, warn_domain=False)
        s2, l2 = project_arrays(m2, lat, lon, hh, warn_domain=False)
        curves[:, :, 0] = s2.reshape(m, n)
        curves[:, :, 1] = l2.reshape(m, n)
        ok[:] = np.all(np.isfinite(curves), axis=(1, 2))
    except SatStereoError:
        for i in range(m):
            try:
                lat, lon = inverse_project_arrays(
                    m1, np.full(n, p1[i, 0]), np.full(n, p1[i, 1]), heights,
                    warn_domain=False,
                )
                s2, l2 = project_arrays(m2, lat, lon, heights, warn_domain=False)
                curves[i, :, 0] = s2
                curves[i, :, 1] = l2
                ok[i] = bool(np.all(np.isfinite(curves[i])))
            except SatStereoError:
                ok[i] = False
    return curves, ok


def _segment_closest(curves: np.ndarray, pts: np.ndarray, *, full: bool = False):
    """Closest points on per-row polylines to per-row query points.

    curves: (m, n, 2); pts: (m, 2).  Returns (dist (m,), closest (m, 2))
    where ``closest`` lies on the (untransformed) polyline; with
    ``full=True`` also returns the segment index and parameter of each
    foot so callers can map it back through an affine transform.
    """
    a = curves[:, :-1, :]
    seg = curves[:, 1:, :] - a
    ap = pts[:, None, :] - a
    denom = np.einsum("msk,msk->ms", seg, seg)
    t = np.zeros_like(denom)
    nz = denom > 0
    t[nz] = np.einsum("msk,msk->ms", ap, seg)[nz] / denom[nz]
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, :, None] * seg
    d2 = np.einsum("msk,msk->ms", pts[:, None, :] - closest, pts[:, None, :] - closest)
    best = np.argmin(d2, axis=1)
    rows = np.arange(curves.shape[0])
    if full:
        return np.sqrt(d2[rows, best]), closest[rows, best], best, t[rows, best]
    return np.sqrt(d2[rows, best]), closest[rows, best]


def curve_distances(curves: np.ndarray, pts: np.ndarray, bias: BiasCorrection) -> np.ndarray:
    """Per-match distance from pts to the bias-transformed curves."""
    dist, _ = _segment_closest(bias.apply(curves), np.asarray(pts, dtype=float))
    return dist


def epipolar_error(m1: RpcModel, m2: RpcModel, bias: BiasCorrection,
                   p1: ImagePoint, p2: ImagePoint) -> float:
    """Y-parallax of one match under the given bias correction."""
    curves, ok = build_curves(m1, m2, np.array([[p1.sample, p1.line]]))
    if not ok[0]:
        raise InsufficientDataError("epipolar curve construction failed for the match")
    return float(curve_distances(curves, np.array([[p2.sample, p2.line]]), bias)[0])


# -- bias fitting ------------------------------------------------------------


def _solve_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Least-squares affine src -> dst; returns params (a0..a5) or None."""
    design = np.column_stack([np.ones(src.shape[0]), src[:, 0], src[:, 1]])
    try:
        sol_x, _, rank, _ = np.linalg.lstsq(design, dst[:, 0], rcond=None)
        sol_y = np.linalg.lstsq(design, dst[:, 1], rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    if rank < 3:
        return None
    return np.array([sol_x[0], sol_x[1], sol_x[2], sol_y[0], sol_y[1], sol_y[2]])


def fit_bias(curves: np.ndarray, pts: np.ndarray, *,
             init: BiasCorrection | None = None, max_iter: int = 10) -> BiasCorrection | None:
    """Fit the affine bias minimizing point-to-curve distances.

    Gauss-Newton by alternation: under the current bias, each point is
    assigned its closest curve location; the affine map sending those
    locations to the observed points is then solved linearly.  Returns
    None when the fit is degenerate or leaves the sanity bound.
    """
    bias = init or BiasCorrection.identity()
    pts = np.asarray(pts, dtype=float)
    prev = bias.params
    for _ in range(max_iter):
        _, anchors = _segment_closest(bias.apply(curves), pts)
        # anchors are on the transformed curves; pull back to source locations
        src = bias.inverse().apply(anchors)
        params = _solve_affine(src, pts)
        if params is None or not np.all(np.isfinite(params)):
            return None
        try:
            bias = BiasCorrection.from_params(params)
        except ValueError:
            return None
        if np.max(np.abs(params - prev)) < 1e-12:
            break
        prev = params
    return bias


def refine_bias_gn(curves: np.ndarray, pts: np.ndarray, init: BiasCorrection,
                   max_iter: int = 50, anchor: float = 1e-4) -> BiasCorrection | None:
    """Gauss-Newton polish of a bias estimate on point-to-curve residuals.

    The residual is the signed perpendicular distance, and its derivative
    with respect to the affine parameters is the curve normal times the
    design row of the foot's source location.

    Y-parallax is blind to affine components that slide points along
    their own epipolar curves, and for near-parallel epipolar pencils
    such components form an almost exactly flat direction of the
    objective, so the data cannot pick a point on it; left free, noise
    sends the fit wandering along that manifold and the spurious
    x-parallax it carries tilts every triangulated height.  The gauge is
    fixed by a small quadratic pull toward the identity correction (the
    ``anchor`` weight, with linear coefficients scaled to the pixel
    displacement they cause at the data extent): along observable
    directions it perturbs the optimum only to second order, while along
    flat directions it selects the minimum-correction representative.
    """
    pts = np.asarray(pts, dtype=float)
    bias = init
    extent = float(max(np.max(np.abs(curves[..., 0])),
                       np.max(np.abs(curves[..., 1])), 1.0))
    pull = np.array([1.0, extent, extent, 1.0, extent, extent]) ** 2
    pull *= anchor * curves.shape[0]
    identity = BiasCorrection.identity().params
    for _ in range(max_iter):
        moved = bias.apply(curves)
        _, feet, seg_idx, seg_t = _segment_closest(moved, pts, full=True)
        rows = np.arange(curves.shape[0])
        tail = moved[rows, seg_idx + 1] - moved[rows, seg_idx]
        norms = np.linalg.norm(tail, axis=1)
        if np.any(norms < 1e-12):
            return None
        tangents = tail / norms[:, None]
        normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
        resid = np.einsum("mk,mk->m", pts - feet, normals)
        src_a = curves[rows, seg_idx]
        src = src_a + seg_t[:, None] * (curves[rows, seg_idx + 1] - src_a)
        design = np.column_stack([np.ones(len(rows)), src[:, 0], src[:, 1]])
        jac = np.concatenate(
            [normals[:, :1] * design, normals[:, 1:] * design], axis=1)
        jtj = jac.T @ jac + np.diag(pull)
        rhs = jac.T @ resid + pull * (identity - bias.params)
        try:
            step = np.linalg.solve(jtj, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        try:
            bias = BiasCorrection.from_params(bias.params + step)
        except ValueError:
            return None
        if np.max(np.abs(step)) < 1e-12:
            break
    return bias


def ransac_bias(m1: RpcModel, m2: RpcModel, matches: MatchSet,
                cfg: OrientationConfig = OrientationConfig()) -> Orientation:
    """Robustly estimate the bias correction and apply the success gate.

    Hypotheses are exact affine fits on 3-match samples; consensus is
    scored by y-parallax against ``ransac_threshold``; the best model
    (most inliers, then lowest RMS, then earliest hypothesis) is refit on
    its consensus set.  Seeded and deterministic.
    """
    n = len(matches)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 matches, got {n}")
    curves, geom_ok = build_curves(m1, m2, matches.p1)
    valid = np.flatnonzero(geom_ok)
    if valid.size < 3:
        raise InsufficientDataError("fewer than 3 matches have usable epipolar geometry")
    vcurves = curves[valid]
    vpts = matches.p2[valid]

    rng = np.random.default_rng(cfg.seed)
    best = None  # (count, -rms, -index, params)
    for it in range(cfg.ransac_iterations):
        sample = rng.choice(valid.size, size=3, replace=False)
        hyp = fit_bias(vcurves[sample], vpts[sample], max_iter=4)
        if hyp is None:
            continue
        err = curve_distances(vcurves, vpts, hyp)
        inliers = err < cfg.ransac_threshold
        count = int(inliers.sum())
        if count == 0:
            continue
        rms = float(np.sqrt(np.mean(err[inliers] ** 2)))
        key = (count, -rms, -it)
        if best is None or key > best[0]:
            best = (key, hyp, inliers)

    nan = float("nan")
    if best is None or int(best[2].sum()) < 3:
        return Orientation(
            pair_id=matches.pair_id, bias=BiasCorrection.identity(),
            inlier_mask=np.zeros(n, dtype=bool), inlier_ratio=0.0,
            epipolar_rms=nan, success=False,
            errors=np.where(geom_ok, np.inf, nan),
        )

    _, hyp, consensus = best
    refined = fit_bias(vcurves[consensus], vpts[consensus], init=hyp, max_iter=15)
    bias = refined if refined is not None else hyp
    polished = refine_bias_gn(vcurves[consensus], vpts[consensus], bias)
    if polished is not None:
        err_polished = curve_distances(vcurves[consensus], vpts[consensus], polished)
        err_refined = curve_distances(vcurves[consensus], vpts[consensus], bias)
        # The anchored polish may cost a hair of parallax RMS for its pull
        # toward identity; that hundredth of a pixel buys a well-defined
        # gauge, so it wins unless it is genuinely worse.
        if np.sqrt(np.mean(err_polished**2)) <= np.sqrt(np.mean(err_refined**2)) + 0.01:
            bias = polished
    err = curve_distances(vcurves, vpts, bias)
    inliers = err < cfg.ransac_threshold

    full_err = np.full(n, nan)
    full_err[valid] = err
    mask = np.zeros(n, dtype=bool)
    mask[valid] = inliers
    count = int(mask.sum())
    rms = float(np.sqrt(np.mean(err[inliers] ** 2))) if count else nan
    success = bool(count >= cfg.min_inliers and rms <= cfg.t)
    return Orientation(
        pair_id=matches.pair_id, bias=bias, inlier_mask=mask,
        inlier_ratio=count / n, epipolar_rms=rms, success=success,
        errors=full_err,
    )
