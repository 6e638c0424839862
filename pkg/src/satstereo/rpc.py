"""Rational polynomial camera model (RPC00B) and its geometric operations.

Image coordinates follow the usual remote-sensing convention: ``sample``
is the column (x) and ``line`` the row (y), both 0-based pixels.  The four
coefficient vectors use the RPC00B cubic term order

    1, L, P, H, LP, LH, PH, L2, P2, H2, PLH,
    L3, LP2, LH2, L2P, P3, PH2, L2H, P2H, H3

where P, L, H are latitude, longitude and height normalized by the model
offsets and scales.  Denominators are normalized so their constant
coefficient is exactly 1.

All functions here are pure; models are immutable after construction and
safe to share between threads.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGeometryError,
    NonConvergenceError,
    RpcDomainWarning,
    SingularProjectionError,
)
from .frames import LocalFrame

# Normalized coordinates with magnitude beyond this are outside the model
# validity domain; results are extrapolations.
DOMAIN_LIMIT = 1.5

# Central-difference step for numerical Jacobians, in normalized units.
_FD_STEP = 1e-6

_DEN_EPS = 1e-12


def poly20(c, p, l, h):
    """Evaluate a 20-term RPC00B cubic polynomial at normalized (p, l, h)."""
    return (
        c[0]
        + c[1] * l + c[2] * p + c[3] * h
        + c[4] * l * p + c[5] * l * h + c[6] * p * h
        + c[7] * l * l + c[8] * p * p + c[9] * h * h
        + c[10] * p * l * h
        + c[11] * l * l * l
        + c[12] * l * p * p + c[13] * l * h * h + c[14] * l * l * p
        + c[15] * p * p * p
        + c[16] * p * h * h + c[17] * l * l * h + c[18] * p * p * h
        + c[19] * h * h * h
    )


@dataclass(frozen=True)
class GroundPoint:
    """Object-space point: geodetic degrees and ellipsoidal height meters."""

    lat: float
    lon: float
    h: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class ImagePoint:
    """Image-space point in pixels; sample = x (column), line = y (row)."""

    sample: float
    line: float

    def __post_init__(self):
        if not (math.isfinite(self.sample) and math.isfinite(self.line)):
            raise ValueError("image coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.sample, self.line], dtype=float)


def _coeffs(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (20,):
        raise ValueError(f"expected 20 coefficients, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RpcModel:
    """RPC00B camera: 4x20 coefficients plus normalization offsets/scales."""

    line_num: np.ndarray
    line_den: np.ndarray
    samp_num: np.ndarray
    samp_den: np.ndarray
    lat_off: float
    lat_scale: float
    lon_off: float
    lon_scale: float
    h_off: float
    h_scale: float
    line_off: float
    line_scale: float
    samp_off: float
    samp_scale: float

    def __post_init__(self):
        for name in ("line_num", "line_den", "samp_num", "samp_den"):
            object.__setattr__(self, name, _coeffs(getattr(self, name)))
        for name in ("lat_scale", "lon_scale", "h_scale", "line_scale", "samp_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("line_den", "samp_den"):
            if getattr(self, name)[0] != 1.0:
                raise ValueError(
                    f"{name} constant coefficient must be 1.0; "
                    "use RpcModel.normalized() or a loader"
                )

    @classmethod
    def normalized(cls, line_num, line_den, samp_num, samp_den, **kwargs) -> "RpcModel":
        """Construct after dividing each num/den pair by its den constant term."""
        line_den = np.asarray(line_den, dtype=float)
        samp_den = np.asarray(samp_den, dtype=float)
        if abs(line_den[0]) < _DEN_EPS or abs(samp_den[0]) < _DEN_EPS:
            raise ValueError("denominator constant coefficient is ~0; cannot normalize")
        return cls(
            line_num=np.asarray(line_num, dtype=float) / line_den[0],
            line_den=line_den / line_den[0],
            samp_num=np.asarray(samp_num, dtype=float) / samp_den[0],
            samp_den=samp_den / samp_den[0],
            **kwargs,
        )

    # -- normalization helpers -------------------------------------------

    def normalize_ground(self, lat, lon, h):
        p = (np.asarray(lat, dtype=float) - self.lat_off) / self.lat_scale
        l = (np.asarray(lon, dtype=float) - self.lon_off) / self.lon_scale
        hh = (np.asarray(h, dtype=float) - self.h_off) / self.h_scale
        return p, l, hh

    def in_domain(self, lat, lon, h):
        """True where the normalized coordinates lie within the validity domain."""
        p, l, hh = self.normalize_ground(lat, lon, h)
        return (np.abs(p) <= DOMAIN_LIMIT) & (np.abs(l) <= DOMAIN_LIMIT) & (np.abs(hh) <= DOMAIN_LIMIT)

    def local_frame(self) -> LocalFrame:
        return LocalFrame(self.lat_off, self.lon_off)

    def to_dict(self) -> dict:
        return {
            "line_off": self.line_off, "line_scale": self.line_scale,
            "samp_off": self.samp_off, "samp_scale": self.samp_scale,
            "lat_off": self.lat_off, "lat_scale": self.lat_scale,
            "lon_off": self.lon_off, "lon_scale": self.lon_scale,
            "h_off": self.h_off, "h_scale": self.h_scale,
            "line_num_coeff": self.line_num.tolist(),
            "line_den_coeff": self.line_den.tolist(),
            "samp_num_coeff": self.samp_num.tolist(),
            "samp_den_coeff": self.samp_den.tolist(),
        }


def _eval_normalized(model: RpcModel, p, l, h):
    """Normalized (samp, line) at normalized ground coords; checks denominators."""
    samp_den = poly20(model.samp_den, p, l, h)
    line_den = poly20(model.line_den, p, l, h)
    if np.any(np.abs(samp_den) < _DEN_EPS) or np.any(np.abs(line_den) < _DEN_EPS):
        raise SingularProjectionError("RPC denominator magnitude below 1e-12")
    samp = poly20(model.samp_num, p, l, h) / samp_den
    line = poly20(model.line_num, p, l, h) / line_den
    return samp, line


def project_arrays(model: RpcModel, lat, lon, h, *, warn_domain: bool = True):
    """Ground (lat, lon, h) arrays to image (sample, line) pixel arrays."""
    p, l, hh = model.normalize_ground(lat, lon, h)
    if warn_domain and np.any(
        (np.abs(p) > DOMAIN_LIMIT) | (np.abs(l) > DOMAIN_LIMIT) | (np.abs(hh) > DOMAIN_LIMIT)
    ):
        warnings.warn(
            "projection queried outside the RPC validity domain", RpcDomainWarning,
            stacklevel=2,
        )
    samp_n, line_n = _eval_normalized(model, p, l, hh)
    return samp_n * model.samp_scale + model.samp_off, line_n * model.line_scale + model.line_off


def project(model: RpcModel, g: GroundPoint) -> ImagePoint:
    """Forward RPC projection of a single ground point."""
    s, l = project_arrays(model, g.lat, g.lon, g.h)
    return ImagePoint(float(s), float(l))


def inverse_project_arrays(
    model: RpcModel, sample, line, h, *,
    tol_px: float = 1e-6, max_iter: int = 50, warn_domain: bool = True,
):
    """Invert the RPC at fixed height(s): image arrays -> (lat, lon) arrays.

    Gauss-Newton on the normalized 2x2 system with central-difference
    Jacobians; converged when the image residual drops below ``tol_px``.
    """
    sample = np.asarray(sample, dtype=float)
    line = np.asarray(line, dtype=float)
    h = np.asarray(h, dtype=float)
    sample, line, h = np.broadcast_arrays(sample, line, h)
    shape = sample.shape
    ts = ((sample - model.samp_off) / model.samp_scale).ravel()
    tl = ((line - model.line_off) / model.line_scale).ravel()
    hh = ((h - model.h_off) / model.h_scale).ravel()

    p = np.zeros_like(ts)
    l = np.zeros_like(ts)
    res_px = np.full_like(ts, np.inf)
    step = _FD_STEP
    for _ in range(max_iter):
        s_cur, l_cur = _eval_normalized(model, p, l, hh)
        rs = s_cur - ts
        rl = l_cur - tl
        res_px = np.hypot(rs * model.samp_scale, rl * model.line_scale)
        active = res_px >= tol_px
        if not np.any(active):
            break
        pa, la, ha = p[active], l[active], hh[active]
        s_pp, l_pp = _eval_normalized(model, pa + step, la, ha)
        s_pm, l_pm = _eval_normalized(model, pa - step, la, ha)
        s_lp, l_lp = _eval_normalized(model, pa, la + step, ha)
        s_lm, l_lm = _eval_normalized(model, pa, la - step, ha)
        j_sp = (s_pp - s_pm) / (2 * step)
        j_lp = (l_pp - l_pm) / (2 * step)
        j_sl = (s_lp - s_lm) / (2 * step)
        j_ll = (l_lp - l_lm) / (2 * step)
        det = j_sp * j_ll - j_sl * j_lp
        if np.any(np.abs(det) < 1e-14):
            raise NonConvergenceError(
                "singular Jacobian in inverse projection",
                last_residual=float(np.max(res_px)),
            )
        dp = -(j_ll * rs[active] - j_sl * rl[active]) / det
        dl = -(-j_lp * rs[active] + j_sp * rl[active]) / det
        p[active] += dp
        l[active] += dl
    else:
        raise NonConvergenceError(
            f"inverse projection did not converge within {max_iter} iterations",
            last_residual=float(np.max(res_px)),
        )

    if warn_domain and np.any((np.abs(p) > DOMAIN_LIMIT) | (np.abs(l) > DOMAIN_LIMIT)):
        warnings.warn(
            "inverse projection landed outside the RPC validity domain",
            RpcDomainWarning, stacklevel=2,
        )
    lat = (p * model.lat_scale + model.lat_off).reshape(shape)
    lon = (l * model.lon_scale + model.lon_off).reshape(shape)
    return lat, lon


def inverse_project(model: RpcModel, pt: ImagePoint, h: float) -> GroundPoint:
    """Invert the RPC for a single image point at a fixed height."""
    lat, lon = inverse_project_arrays(model, pt.sample, pt.line, h)
    return GroundPoint(float(lat), float(lon), float(h))


def _stacked_residuals(m1, m2, p, l, h, s1, l1, s2, l2):
    """Residuals (pixels) of both reprojections; ground in m1-normalized coords."""
    sa, la = _eval_normalized(m1, p, l, h)
    lat = p * m1.lat_scale + m1.lat_off
    lon = l * m1.lon_scale + m1.lon_off
    hm = h * m1.h_scale + m1.h_off
    p2, l2n, h2 = m2.normalize_ground(lat, lon, hm)
    sb, lb = _eval_normalized(m2, p2, l2n, h2)
    return np.stack(
        [
            sa * m1.samp_scale + m1.samp_off - s1,
            la * m1.line_scale + m1.line_off - l1,
            sb * m2.samp_scale + m2.samp_off - s2,
            lb * m2.line_scale + m2.line_off - l2,
        ],
        axis=-1,
    )


def triangulate_arrays(
    m1: RpcModel, m2: RpcModel, s1, l1, s2, l2, *,
    initial=None, max_iter: int = 50, cond_limit: float = 1e12,
):
    """Batch two-ray triangulation.

    Gauss-Newton over (lat, lon, h) in m1-normalized coordinates minimizing
    the stacked 4-vector of reprojection residuals.  Returns
    ``(lat, lon, h, rms_px, ok)`` arrays; points whose normal matrix is
    ill-conditioned beyond ``cond_limit`` come back with ``ok=False``.
    """
    s1 = np.atleast_1d(np.asarray(s1, dtype=float))
    l1, s2, l2 = (np.broadcast_to(np.asarray(a, dtype=float), s1.shape).copy()
                  for a in (l1, s2, l2))
    n = s1.size

    if initial is None:
        lat0, lon0 = inverse_project_arrays(
            m1, s1, l1, np.full(n, m1.h_off), warn_domain=False
        )
        h0 = np.full(n, m1.h_off)
    else:
        lat0, lon0, h0 = (np.asarray(a, dtype=float).copy() for a in initial)
    p, l, h = m1.normalize_ground(lat0, lon0, h0)

    step = _FD_STEP
    ok = np.ones(n, dtype=bool)
    res = _stacked_residuals(m1, m2, p, l, h, s1, l1, s2, l2)
    for it in range(max_iter):
        rms = np.sqrt(np.mean(res * res, axis=-1))
        # the first pass always checks conditioning, so degenerate but
        # perfectly consistent observations are still flagged
        active = ok if it == 0 else ok & (rms >= 1e-9)
        if not np.any(active):
            break
        pa, la, ha = p[active], l[active], h[active]
        args = (s1[active], l1[active], s2[active], l2[active])
        cols = []
        for dp, dl, dh in ((step, 0, 0), (0, step, 0), (0, 0, step)):
            r_plus = _stacked_residuals(m1, m2, pa + dp, la + dl, ha + dh, *args)
            r_minus = _stacked_residuals(m1, m2, pa - dp, la - dl, ha - dh, *args)
            cols.append((r_plus - r_minus) / (2 * step))
        jac = np.stack(cols, axis=-1)  # (n_active, 4, 3)
        jtj = np.einsum("nij,nik->njk", jac, jac)
        jtr = np.einsum("nij,ni->nj", jac, res[active])
        eig = np.linalg.eigvalsh(jtj)
        bad = (eig[:, 0] <= 0) | (eig[:, -1] / np.maximum(eig[:, 0], 1e-300) > cond_limit)
        good = ~bad
        delta = np.zeros_like(jtr)
        if np.any(good):
            delta[good] = np.linalg.solve(jtj[good], -jtr[good][..., None])[..., 0]
        idx = np.flatnonzero(active)
        ok[idx[bad]] = False
        upd = idx[good]
        p[upd] += delta[good, 0]
        l[upd] += delta[good, 1]
        h[upd] += delta[good, 2]
        res = _stacked_residuals(m1, m2, p, l, h, s1, l1, s2, l2)

    rms = np.sqrt(np.mean(res * res, axis=-1))
    lat = p * m1.lat_scale + m1.lat_off
    lon = l * m1.lon_scale + m1.lon_off
    hh = h * m1.h_scale + m1.h_off
    return lat, lon, hh, rms, ok


def triangulate(
    m1: RpcModel, m2: RpcModel, p1: ImagePoint, p2: ImagePoint
) -> tuple[GroundPoint, float]:
    """Intersect two image observations; returns the point and RMS residual (px)."""
    lat, lon, h, rms, ok = triangulate_arrays(
        m1, m2, [p1.sample], [p1.line], [p2.sample], [p2.line]
    )
    if not ok[0]:
        raise DegenerateGeometryError(
            "triangulation normal matrix is ill-conditioned (near-parallel rays)"
        )
    return GroundPoint(float(lat[0]), float(lon[0]), float(h[0])), float(rms[0])


def epipolar_curve(
    m_src: RpcModel, m_dst: RpcModel, p: ImagePoint,
    h_min: float, h_max: float, n: int = 11,
) -> np.ndarray:
    """Height-swept epipolar curve of ``p`` in the destination image.

    Returns an (n, 2) array of (sample, line) vertices ordered by height.
    """
    if not h_min < h_max:
        raise ValueError("h_min must be strictly less than h_max")
    if n < 2:
        raise ValueError("need at least 2 sweep heights")
    heights = np.linspace(h_min, h_max, n)
    lat, lon = inverse_project_arrays(
        m_src, np.full(n, p.sample), np.full(n, p.line), heights, warn_domain=False
    )
    s, l = project_arrays(m_dst, lat, lon, heights, warn_domain=False)
    return np.column_stack([s, l])


def point_to_curve_distance(p, curve: np.ndarray) -> float:
    """Minimum Euclidean distance (px) from a point to a polyline."""
    pt = p.as_array() if isinstance(p, ImagePoint) else np.asarray(p, dtype=float)
    curve = np.asarray(curve, dtype=float)
    if curve.ndim != 2 or curve.shape[0] < 2 or curve.shape[1] != 2:
        raise ValueError("curve must be an (n>=2, 2) polyline")
    a = curve[:-1]
    ab = curve[1:] - a
    ap = pt[None, :] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.zeros(len(a))
    nz = denom > 0
    t[nz] = np.clip(np.einsum("ij,ij->i", ap[nz], ab[nz]) / denom[nz], 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.min(np.hypot(*(pt[None, :] - closest).T)))


def _viewing_ray(model: RpcModel, center: GroundPoint, frame: LocalFrame) -> np.ndarray:
    """Unit viewing ray at the footprint center in the local Cartesian frame."""
    pt = project(model, center)
    h_lo = model.h_off - model.h_scale / 2.0
    h_hi = model.h_off + model.h_scale / 2.0
    lat, lon = inverse_project_arrays(
        model, np.array([pt.sample, pt.sample]), np.array([pt.line, pt.line]),
        np.array([h_lo, h_hi]), warn_domain=False,
    )
    x, y = frame.to_xy(lat, lon)
    ray = np.array([x[1] - x[0], y[1] - y[0], h_hi - h_lo])
    return ray / np.linalg.norm(ray)


def intersection_angle(m1: RpcModel, m2: RpcModel, footprint_center: GroundPoint) -> float:
    """Convergence angle (degrees) between the two viewing rays at a ground point."""
    frame = LocalFrame(footprint_center.lat, footprint_center.lon)
    r1 = _viewing_ray(m1, footprint_center, frame)
    r2 = _viewing_ray(m2, footprint_center, frame)
    cosang = float(np.clip(np.dot(r1, r2), -1.0, 1.0))
    return math.degrees(math.acos(cosang))


# -- loaders --------------------------------------------------------------

_TEXT_SCALARS = {
    "LINE_OFF": "line_off", "SAMP_OFF": "samp_off",
    "LAT_OFF": "lat_off", "LONG_OFF": "lon_off", "LON_OFF": "lon_off",
    "HEIGHT_OFF": "h_off", "LINE_SCALE": "line_scale", "SAMP_SCALE": "samp_scale",
    "LAT_SCALE": "lat_scale", "LONG_SCALE": "lon_scale", "LON_SCALE": "lon_scale",
    "HEIGHT_SCALE": "h_scale",
}
_TEXT_COEFFS = {
    "LINE_NUM_COEFF": "line_num", "LINE_DEN_COEFF": "line_den",
    "SAMP_NUM_COEFF": "samp_num", "SAMP_DEN_COEFF": "samp_den",
}
_COEFF_RE = re.compile(r"^([A-Z_]+_COEFF)_(\d+)$")


def _parse_rpc_text(text: str) -> dict:
    scalars: dict[str, float] = {}
    coeffs = {name: [math.nan] * 20 for name in _TEXT_COEFFS.values()}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or ":" not in line:
            continue
        key, rest = line.split(":", 1)
        key = key.strip().upper()
        tokens = rest.split()
        if not tokens:
            continue
        value = float(tokens[0])  # trailing units tokens tolerated
        m = _COEFF_RE.match(key)
        if m and m.group(1) in _TEXT_COEFFS:
            idx = int(m.group(2)) - 1
            if not 0 <= idx < 20:
                raise ValueError(f"coefficient index out of range in key {key}")
            coeffs[_TEXT_COEFFS[m.group(1)]][idx] = value
        elif key in _TEXT_SCALARS:
            scalars[_TEXT_SCALARS[key]] = value
    missing = [k for k, v in coeffs.items() if any(math.isnan(x) for x in v)]
    wanted = {"line_off", "samp_off", "lat_off", "lon_off", "h_off",
              "line_scale", "samp_scale", "lat_scale", "lon_scale", "h_scale"}
    missing += sorted(wanted - scalars.keys())
    if missing:
        raise ValueError(f"RPC text file incomplete; missing: {missing}")
    return {**scalars, **coeffs}


def load_rpc(path) -> RpcModel:
    """Load a model from IKONOS-style ``*_RPC.TXT`` text or its JSON mirror."""
    text = open(path, "r", encoding="utf-8").read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        d = json.loads(text)
        fields = {
            "line_num": d["line_num_coeff"], "line_den": d["line_den_coeff"],
            "samp_num": d["samp_num_coeff"], "samp_den": d["samp_den_coeff"],
            **{k: float(d[k]) for k in (
                "lat_off", "lat_scale", "lon_off", "lon_scale", "h_off",
                "h_scale", "line_off", "line_scale", "samp_off", "samp_scale",
            )},
        }
    else:
        fields = _parse_rpc_text(text)
    return RpcModel.normalized(**fields)


def save_rpc_json(model: RpcModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def save_rpc_text(model: RpcModel, path) -> None:
    """Write the IKONOS-style text form (units suffixes included)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"LINE_OFF: {model.line_off:.12f} pixels\n")
        f.write(f"SAMP_OFF: {model.samp_off:.12f} pixels\n")
        f.write(f"LAT_OFF: {model.lat_off:.12f} degrees\n")
        f.write(f"LONG_OFF: {model.lon_off:.12f} degrees\n")
        f.write(f"HEIGHT_OFF: {model.h_off:.12f} meters\n")
        f.write(f"LINE_SCALE: {model.line_scale:.12f} pixels\n")
        f.write(f"SAMP_SCALE: {model.samp_scale:.12f} pixels\n")
        f.write(f"LAT_SCALE: {model.lat_scale:.12f} degrees\n")
        f.write(f"LONG_SCALE: {model.lon_scale:.12f} degrees\n")
        f.write(f"HEIGHT_SCALE: {model.h_scale:.12f} meters\n")
        for prefix, arr in (
            ("LINE_NUM_COEFF", model.line_num), ("LINE_DEN_COEFF", model.line_den),
            ("SAMP_NUM_COEFF", model.samp_num), ("SAMP_DEN_COEFF", model.samp_den),
        ):
            for i, v in enumerate(arr, start=1):
                f.write(f"{prefix}_{i}: {v:.12e}\n")
