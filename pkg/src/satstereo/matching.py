"""Correspondence sets: ratio-test matching and the match-file CSV format.

The wire format shared with external matchers is CSV with header
``x1,y1,x2,y2`` plus an optional ``score`` column: 0-based pixel
coordinates (x = sample, y = line), sub-pixel decimals allowed, UTF-8,
LF line endings.  Coordinates are bounded by [0, width-1] x [0, height-1]
and duplicate rows are collapsed at 1e-3 px granularity.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import MatchFileError

log = logging.getLogger(__name__)

DEFAULT_RATIO = 0.95


def _points_array(points, n_cols: int = 2) -> np.ndarray:
    arr = np.asarray(points, dtype=float).reshape(-1, n_cols)
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MatchSet:
    """Immutable correspondences between one image pair."""

    pair_id: str
    method: str
    p1: np.ndarray  # (n, 2) sample/line in image 1
    p2: np.ndarray  # (n, 2) sample/line in image 2
    scores: np.ndarray | None  # (n,) in [0, 1], or None
    dims1: tuple[int, int]  # (width, height)
    dims2: tuple[int, int]

    def __post_init__(self):
        p1 = _points_array(self.p1)
        p2 = _points_array(self.p2)
        if p1.shape != p2.shape:
            raise ValueError("p1 and p2 must have the same shape")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)
        if self.scores is not None:
            s = np.asarray(self.scores, dtype=float).ravel().copy()
            if s.shape[0] != p1.shape[0]:
                raise ValueError("scores length must match match count")
            if s.size and (s.min() < 0 or s.max() > 1):
                raise ValueError("scores must lie in [0, 1]")
            s.flags.writeable = False
            object.__setattr__(self, "scores", s)
        for pts, (w, h), name in ((p1, self.dims1, "image 1"), (p2, self.dims2, "image 2")):
            if pts.size and (
                pts[:, 0].min() < 0 or pts[:, 0].max() > w - 1
                or pts[:, 1].min() < 0 or pts[:, 1].max() > h - 1
            ):
                raise ValueError(f"match coordinates outside {name} bounds")
        keys = _dedup_keys(p1, p2)
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate matches at 1e-3 px granularity")

    def __len__(self) -> int:
        return self.p1.shape[0]

    def subset(self, mask) -> "MatchSet":
        mask = np.asarray(mask)
        return MatchSet(
            self.pair_id, self.method, self.p1[mask], self.p2[mask],
            None if self.scores is None else self.scores[mask],
            self.dims1, self.dims2,
        )

    @classmethod
    def build(cls, pair_id, method, p1, p2, scores, dims1, dims2) -> "MatchSet":
        """Construct after collapsing duplicates (first occurrence wins)."""
        p1 = np.asarray(p1, dtype=float).reshape(-1, 2)
        p2 = np.asarray(p2, dtype=float).reshape(-1, 2)
        keep = _first_occurrence_mask(_dedup_keys(p1, p2))
        return cls(
            pair_id, method, p1[keep], p2[keep],
            None if scores is None else np.asarray(scores, dtype=float)[keep],
            tuple(dims1), tuple(dims2),
        )


def _dedup_keys(p1: np.ndarray, p2: np.ndarray) -> list[tuple]:
    r1 = np.round(p1 * 1000.0).astype(np.int64)
    r2 = np.round(p2 * 1000.0).astype(np.int64)
    return [tuple(row) for row in np.hstack([r1, r2])]


def _first_occurrence_mask(keys) -> np.ndarray:
    seen = set()
    keep = np.zeros(len(keys), dtype=bool)
    for i, key in enumerate(keys):
        if key not in seen:
            seen.add(key)
            keep[i] = True
    return keep


# -- descriptor matching ---------------------------------------------------


def ratio_test_indices(desc_a: np.ndarray, desc_b: np.ndarray, ratio: float,
                       *, crosscheck: bool = True, chunk: int = 512):
    """Nearest-neighbor ratio test from a to b, optional mutual cross-check.

    Returns (index pairs (m, 2), scores (m,), dropped) where ``dropped``
    counts queries without a second neighbor.  The ratio test keeps a
    query when d1/d2 is strictly below ``ratio``.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    da = np.asarray(desc_a, dtype=np.float64)
    db = np.asarray(desc_b, dtype=np.float64)
    if da.ndim != 2 or db.ndim != 2 or da.shape[0] == 0 or db.shape[0] == 0:
        raise ValueError("descriptor sets must be non-empty 2D arrays")
    if db.shape[0] < 2:
        log.warning("ratio test: %d queries dropped (no second neighbor)", da.shape[0])
        return np.empty((0, 2), dtype=int), np.empty(0), da.shape[0]

    nb2 = np.einsum("ij,ij->i", db, db)
    nn_idx = np.empty(da.shape[0], dtype=int)
    d1 = np.empty(da.shape[0])
    d2 = np.empty(da.shape[0])
    best_b2a = np.full(db.shape[0], np.inf)
    arg_b2a = np.zeros(db.shape[0], dtype=int)
    for start in range(0, da.shape[0], chunk):
        block = da[start:start + chunk]
        dist2 = np.maximum(
            np.einsum("ij,ij->i", block, block)[:, None] + nb2[None, :]
            - 2.0 * block @ db.T,
            0.0,
        )
        part = np.argpartition(dist2, 1, axis=1)[:, :2]
        rows = np.arange(block.shape[0])[:, None]
        vals = dist2[rows, part]
        order = np.argsort(vals, axis=1, kind="stable")
        part = part[rows, order]
        vals = vals[rows, order]
        nn_idx[start:start + chunk] = part[:, 0]
        d1[start:start + chunk] = np.sqrt(vals[:, 0])
        d2[start:start + chunk] = np.sqrt(vals[:, 1])
        col_min = dist2.min(axis=0)
        improved = col_min < best_b2a
        best_b2a[improved] = col_min[improved]
        arg_b2a[improved] = start + dist2.argmin(axis=0)[improved]

    keep = np.where(d2 > 0, d1 < ratio * d2, d1 == 0)
    if crosscheck:
        keep &= arg_b2a[nn_idx] == np.arange(da.shape[0])
    idx_a = np.flatnonzero(keep)
    pairs = np.column_stack([idx_a, nn_idx[idx_a]])
    score = np.where(d2[idx_a] > 0, 1.0 - d1[idx_a] / np.maximum(d2[idx_a], 1e-300), 1.0)
    return pairs, np.clip(score, 0.0, 1.0), 0


def match_ratio_test(kps_a, kps_b, pair_id: str, dims1, dims2, *,
                     ratio: float = DEFAULT_RATIO, crosscheck: bool = True,
                     method: str = "baseline") -> MatchSet:
    """Match two keypoint lists into a MatchSet."""
    if not kps_a or not kps_b:
        return MatchSet.build(pair_id, method, np.empty((0, 2)), np.empty((0, 2)),
                              None, dims1, dims2)
    da = np.stack([kp.descriptor for kp in kps_a])
    db = np.stack([kp.descriptor for kp in kps_b])
    pairs, scores, _ = ratio_test_indices(da, db, ratio, crosscheck=crosscheck)
    p1 = np.array([[kps_a[i].position.sample, kps_a[i].position.line] for i in pairs[:, 0]]
                  ).reshape(-1, 2)
    p2 = np.array([[kps_b[j].position.sample, kps_b[j].position.line] for j in pairs[:, 1]]
                  ).reshape(-1, 2)
    return MatchSet.build(pair_id, method, p1, p2, scores, dims1, dims2)


# -- CSV wire format -------------------------------------------------------


@dataclass(frozen=True)
class LoadReport:
    n_rows: int
    n_loaded: int
    n_rejected_bounds: int
    rejected_rows: tuple[int, ...]
    n_duplicates: int


def save_matches(matches: MatchSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        has_score = matches.scores is not None
        f.write("x1,y1,x2,y2,score\n" if has_score else "x1,y1,x2,y2\n")
        for i in range(len(matches)):
            row = (f"{matches.p1[i, 0]:.6f},{matches.p1[i, 1]:.6f},"
                   f"{matches.p2[i, 0]:.6f},{matches.p2[i, 1]:.6f}")
            if has_score:
                row += f",{matches.scores[i]:.6f}"
            f.write(row + "\n")


def load_matches(path, pair_id: str, dims1, dims2, *,
                 method: str = "imported") -> tuple[MatchSet, LoadReport]:
    """Load and validate a match CSV; see the module docstring for the format."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            empty = MatchSet.build(pair_id, method, np.empty((0, 2)), np.empty((0, 2)),
                                   None, dims1, dims2)
            return empty, LoadReport(0, 0, 0, (), 0)
        header = [h.strip().lower() for h in header]
        if header not in (["x1", "y1", "x2", "y2"], ["x1", "y1", "x2", "y2", "score"]):
            raise MatchFileError(f"{path}: unrecognized header {header}", line_number=1)
        has_score = len(header) == 5

        rows, scores, rejected = [], [], []
        n_rows = 0
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            n_rows += 1
            if len(row) != len(header):
                raise MatchFileError(
                    f"{path}: expected {len(header)} fields, got {len(row)}",
                    line_number=line_no,
                )
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise MatchFileError(f"{path}: {exc}", line_number=line_no) from exc
            x1, y1, x2, y2 = values[:4]
            w1, h1 = dims1
            w2, h2 = dims2
            if not (0 <= x1 <= w1 - 1 and 0 <= y1 <= h1 - 1
                    and 0 <= x2 <= w2 - 1 and 0 <= y2 <= h2 - 1):
                rejected.append(line_no)
                continue
            if has_score and not 0 <= values[4] <= 1:
                rejected.append(line_no)
                continue
            rows.append(values[:4])
            if has_score:
                scores.append(values[4])

    arr = np.asarray(rows, dtype=float).reshape(-1, 4)
    matches = MatchSet.build(
        pair_id, method, arr[:, :2], arr[:, 2:],
        np.asarray(scores) if has_score else None, dims1, dims2,
    )
    report = LoadReport(
        n_rows=n_rows, n_loaded=len(matches),
        n_rejected_bounds=len(rejected), rejected_rows=tuple(rejected),
        n_duplicates=len(rows) - len(matches),
    )
    return matches, report
