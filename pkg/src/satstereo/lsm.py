"""Least squares matching: sub-pixel refinement of point correspondences.

A square template around the image-1 point is registered onto image 2 by
Gauss-Newton over 6 affine geometric and 2 linear radiometric parameters
with bilinear resampling.  The image-1 point stays fixed; the image-2
point moves by the estimated translation at the patch center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TexturelessPatchError
from .matching import MatchSet
from .rpc import ImagePoint

TEXTURE_STD_MIN = 1.0  # intensity levels, native units
DIVERGENCE_PX = 5.0
CONVERGENCE_PX = 0.01


@dataclass(frozen=True)
class LsmConfig:
    window: int = 21
    max_iter: int = 30

    def __post_init__(self):
        if self.window < 5 or self.window % 2 == 0:
            raise ValueError("window must be an odd size >= 5")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass(frozen=True)
class LsmResult:
    point: ImagePoint
    converged: bool
    iterations: int


@dataclass(frozen=True)
class LsmReport:
    refined: int
    kept: int
    rejected: int


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    ax, ay = x - x0, y - y0
    x1 = np.minimum(x0 + 1, img.shape[1] - 1)
    y1 = np.minimum(y0 + 1, img.shape[0] - 1)
    return (
        img[y0, x0] * (1 - ax) * (1 - ay) + img[y0, x1] * ax * (1 - ay)
        + img[y1, x0] * (1 - ax) * ay + img[y1, x1] * ax * ay
    )


def _inside(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> bool:
    return bool(
        x.min() >= 0 and y.min() >= 0
        and x.max() <= img.shape[1] - 1 and y.max() <= img.shape[0] - 1
    )


def lsm_refine(img1: np.ndarray, img2: np.ndarray, p1: ImagePoint, p2: ImagePoint,
               cfg: LsmConfig = LsmConfig(), *, grad2=None) -> LsmResult:
    """Refine p2 by registering the template around p1 onto image 2.

    Raises ValueError when either patch exits its image and
    TexturelessPatchError when the template lacks contrast.  Divergence
    (translation beyond 5 px or iteration exhaustion) returns the
    original p2 with converged=False.
    """
    img1 = np.asarray(img1, dtype=np.float64)
    img2 = np.asarray(img2, dtype=np.float64)
    hw = cfg.window // 2
    off = np.arange(-hw, hw + 1, dtype=float)
    u, v = np.meshgrid(off, off, indexing="xy")

    tx, ty = p1.sample + u, p1.line + v
    if not _inside(img1, tx, ty):
        raise ValueError("template window exits image 1")
    template = _bilinear(img1, tx, ty)
    if float(template.std()) < TEXTURE_STD_MIN:
        raise TexturelessPatchError(
            f"template std {template.std():.3f} below {TEXTURE_STD_MIN}"
        )

    if grad2 is None:
        gy2, gx2 = np.gradient(img2)
    else:
        gy2, gx2 = grad2

    # geometric a0..a5 (translation + linear), radiometric r0 + r1 * g
    a = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    r0, r1 = 0.0, 1.0
    ones = np.ones_like(u).ravel()
    for iteration in range(1, cfg.max_iter + 1):
        wx = p2.sample + a[0] + a[1] * u + a[2] * v
        wy = p2.line + a[3] + a[4] * u + a[5] * v
        if not _inside(img2, wx, wy):
            return LsmResult(p2, False, iteration)
        g = _bilinear(img2, wx, wy)
        gx = _bilinear(gx2, wx, wy).ravel()
        gy = _bilinear(gy2, wx, wy).ravel()
        resid = (r0 + r1 * g - template).ravel()
        jac = np.column_stack([
            r1 * gx, r1 * gx * u.ravel(), r1 * gx * v.ravel(),
            r1 * gy, r1 * gy * u.ravel(), r1 * gy * v.ravel(),
            ones, g.ravel(),
        ])
        try:
            delta = np.linalg.lstsq(jac, -resid, rcond=None)[0]
        except np.linalg.LinAlgError:
            return LsmResult(p2, False, iteration)
        if not np.all(np.isfinite(delta)):
            return LsmResult(p2, False, iteration)
        a += delta[:6]
        r0 += delta[6]
        r1 += delta[7]
        if np.hypot(a[0], a[3]) > DIVERGENCE_PX:
            return LsmResult(p2, False, iteration)
        if np.hypot(delta[0], delta[3]) < CONVERGENCE_PX:
            refined = ImagePoint(p2.sample + a[0], p2.line + a[3])
            return LsmResult(refined, True, iteration)
    return LsmResult(p2, False, cfg.max_iter)


def refine_matchset(img1: np.ndarray, img2: np.ndarray, matches: MatchSet,
                    cfg: LsmConfig = LsmConfig()) -> tuple[MatchSet, LsmReport]:
    """Refine every match; non-converged and rejected matches keep their
    original coordinates.  Refined points that leave the image bounds are
    treated as non-converged."""
    img1 = np.asarray(img1, dtype=np.float64)
    img2 = np.asarray(img2, dtype=np.float64)
    grad2 = np.gradient(img2)
    refined = kept = rejected = 0
    new_p2 = matches.p2.copy()
    w2, h2 = matches.dims2
    for i in range(len(matches)):
        p1 = ImagePoint(matches.p1[i, 0], matches.p1[i, 1])
        p2 = ImagePoint(matches.p2[i, 0], matches.p2[i, 1])
        try:
            result = lsm_refine(img1, img2, p1, p2, cfg, grad2=grad2)
        except TexturelessPatchError:
            rejected += 1
            continue
        except ValueError:
            kept += 1
            continue
        in_bounds = (0 <= result.point.sample <= w2 - 1
                     and 0 <= result.point.line <= h2 - 1)
        if result.converged and in_bounds:
            new_p2[i] = (result.point.sample, result.point.line)
            refined += 1
        else:
            kept += 1
    out = MatchSet.build(
        matches.pair_id, matches.method, matches.p1, new_p2, matches.scores,
        matches.dims1, matches.dims2,
    )
    return out, LsmReport(refined=refined, kept=kept, rejected=rejected)
