"""End-to-end evaluation harness over manifests of tiles, pairs, methods.

For every selected pair and method the harness matches (or imports
matches), optionally refines with least squares matching, orients, applies
the success gate, and, when a pair passes and densification is enabled,
produces and evaluates a DSM.  Pairs that fail the gate stay in the
success-rate denominator but are excluded from metric distributions.

Run layout: ``<out>/<run-id>/<pair>/<variant>/{matches.csv,
orientation.json, dsm.asc, report.json}`` plus ``pairs.json``,
``stats.json`` and ``stats.csv`` at the run root.  All randomness derives
from one run seed through stage-name hashing, so reruns and resumed runs
are byte-identical.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsm import DEFAULT_CELL, GridSpec, dsm_from_disparity
from .errors import SatStereoError
from .evaluation import evaluate_dsm, relative_change
from .features import FeatureConfig, detect_and_describe
from .frames import LocalFrame
from .lsm import LsmConfig, refine_matchset
from .matching import DEFAULT_RATIO, MatchSet, load_matches, match_ratio_test, save_matches
from .orientation import OrientationConfig, ransac_bias, save_orientation
from .pairs import ImageMeta, PairCandidate, SelectionConfig, enumerate_pairs
from .rasters import DsmGrid, load_image, read_asc, write_asc, write_sidecar
from .rectify import GroundRect, rectify
from .rpc import load_rpc
from .sgm import sgm

log = logging.getLogger(__name__)

WORKERS_ENV = "SATSTEREO_WORKERS"
METRICS = ("inlier_ratio", "epipolar_rms", "completeness", "rmse")


def derive_seed(master: int, *parts: str) -> int:
    """Stable per-stage seed: hash of the run seed and stage path."""
    text = f"{master}|" + "|".join(parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", WORKERS_ENV, env)
    return 1


@dataclass(frozen=True)
class TileSpec:
    tile_id: str
    images: tuple[ImageMeta, ...]
    truth_dsm: str | None = None
    roi: GroundRect | None = None
    h_range: tuple[float, float] | None = None
    frame: LocalFrame | None = None


@dataclass
class RunConfig:
    manifest: str
    methods: list[str] = field(default_factory=lambda: ["baseline"])
    match_dirs: dict[str, str] = field(default_factory=dict)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    orientation: OrientationConfig = field(default_factory=OrientationConfig)
    lsm: str = "off"  # off | on | both
    lsm_order: str = "before"  # before | after
    dense: bool = True
    out_dir: str = "runs"
    run_id: str = "run"
    workers: int = 1
    seed: int = 0
    force: bool = False
    cell: float = DEFAULT_CELL
    ratio: float = DEFAULT_RATIO
    crosscheck: bool = True
    sgm_p1: int = 10
    sgm_p2: int = 120
    max_keypoints: int = 4000

    def __post_init__(self):
        if not self.methods:
            raise ValueError("need at least one method")
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        if self.lsm not in ("off", "on", "both"):
            raise ValueError("lsm must be one of off/on/both")
        if self.lsm_order not in ("before", "after"):
            raise ValueError("lsm_order must be before or after")

    def config_hash(self) -> str:
        snapshot = dataclasses.asdict(self)
        return hashlib.sha256(
            json.dumps(snapshot, sort_keys=True, default=str).encode()
        ).hexdigest()[:12]


def load_run_config(path, **overrides) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    base = Path(path).parent
    if "manifest" in raw:
        raw["manifest"] = str((base / raw["manifest"]).resolve())
    if "out_dir" in raw:
        raw["out_dir"] = str((base / raw["out_dir"]).resolve())
    if "match_dirs" in raw:
        raw["match_dirs"] = {
            k: str((base / v).resolve()) for k, v in raw["match_dirs"].items()
        }
    if isinstance(raw.get("lsm"), bool):
        raw["lsm"] = "on" if raw["lsm"] else "off"
    if isinstance(raw.get("selection"), dict):
        raw["selection"] = SelectionConfig(**raw["selection"])
    if isinstance(raw.get("orientation"), dict):
        raw["orientation"] = OrientationConfig(**raw["orientation"])
    return RunConfig(**raw)


def load_manifest(path) -> list[TileSpec]:
    base = Path(path).parent
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    tiles = []
    for t in raw["tiles"]:
        images = tuple(
            ImageMeta(
                image_id=i["image_id"],
                acquisition_date=datetime.date.fromisoformat(i["date"]),
                sun_azimuth=float(i["sun_azimuth"]),
                sun_elevation=float(i["sun_elevation"]),
                gsd=float(i["gsd"]),
                rpc_path=str(base / i["rpc_path"]),
                image_path=str(base / i["image_path"]) if i.get("image_path") else None,
            )
            for i in t["images"]
        )
        roi = None
        if t.get("roi"):
            r = t["roi"]
            roi = GroundRect(r["lat_min"], r["lon_min"], r["lat_max"], r["lon_max"])
        frame = None
        if t.get("frame"):
            frame = LocalFrame(t["frame"]["lat0"], t["frame"]["lon0"])
        elif roi is not None:
            frame = LocalFrame(*roi.center)
        tiles.append(
            TileSpec(
                tile_id=t["tile_id"], images=images,
                truth_dsm=str(base / t["truth_dsm"]) if t.get("truth_dsm") else None,
                roi=roi,
                h_range=tuple(t["h_range"]) if t.get("h_range") else None,
                frame=frame,
            )
        )
    return tiles


def _pair_entry(tile: TileSpec, cand: PairCandidate) -> dict:
    by_id = {m.image_id: m for m in tile.images}
    a, b = by_id[cand.id_a], by_id[cand.id_b]
    return {
        "pair_id": f"{tile.tile_id}__{cand.pair_id}",
        "tile_id": tile.tile_id,
        "id_a": cand.id_a, "id_b": cand.id_b,
        "image_a": a.image_path, "image_b": b.image_path,
        "rpc_a": a.rpc_path, "rpc_b": b.rpc_path,
        "intersection_angle": cand.intersection_angle,
        "sun_angle_diff": cand.sun_angle_diff,
        "month_diff": cand.month_diff,
        "rank_score": cand.rank_score,
        "roi": None if tile.roi is None else dataclasses.asdict(tile.roi),
        "frame": None if tile.frame is None else {
            "lat0": tile.frame.lat0, "lon0": tile.frame.lon0,
        },
        "truth_dsm": tile.truth_dsm,
        "h_range": None if tile.h_range is None else list(tile.h_range),
    }


def select_all_pairs(tiles: list[TileSpec], cfg: RunConfig) -> list[dict]:
    entries = []
    for tile in tiles:
        sel = dataclasses.replace(
            cfg.selection, seed=derive_seed(cfg.seed, "pairs", tile.tile_id)
        )
        for cand in enumerate_pairs(list(tile.images), sel):
            entries.append(_pair_entry(tile, cand))
    entries.sort(key=lambda e: e["pair_id"])
    return entries


# -- single pair/method execution -------------------------------------------


def _variant_label(method: str, use_lsm: bool) -> str:
    return f"{method}+lsm" if use_lsm else method


def _baseline_matches(entry, img1, img2, cfg: RunConfig) -> MatchSet:
    fc = FeatureConfig(max_keypoints=cfg.max_keypoints)
    kps1 = detect_and_describe(img1, fc)
    kps2 = detect_and_describe(img2, fc)
    dims1 = (img1.shape[1], img1.shape[0])
    dims2 = (img2.shape[1], img2.shape[0])
    return match_ratio_test(
        kps1, kps2, entry["pair_id"], dims1, dims2,
        ratio=cfg.ratio, crosscheck=cfg.crosscheck,
    )


def _imported_matches(entry, method, img1, img2, cfg: RunConfig) -> MatchSet:
    match_dir = cfg.match_dirs.get(method)
    if match_dir is None:
        raise SatStereoError(f"no match directory configured for method {method!r}")
    path = Path(match_dir) / f"{entry['pair_id']}.csv"
    dims1 = (img1.shape[1], img1.shape[0])
    dims2 = (img2.shape[1], img2.shape[0])
    matches, report = load_matches(path, entry["pair_id"], dims1, dims2, method=method)
    if report.n_rejected_bounds:
        log.warning("%s: %d rows rejected (rows %s)", path,
                    report.n_rejected_bounds, list(report.rejected_rows)[:10])
    return matches


def _tile_geometry(entry, truth: DsmGrid | None):
    """Resolve (frame, roi) for densification; None when underspecified."""
    frame = None
    if entry.get("frame"):
        frame = LocalFrame(entry["frame"]["lat0"], entry["frame"]["lon0"])
    roi = None
    if entry.get("roi"):
        r = entry["roi"]
        roi = GroundRect(r["lat_min"], r["lon_min"], r["lat_max"], r["lon_max"])
    if roi is None and truth is not None and frame is not None:
        corners_x = [truth.xll, truth.xll + truth.width * truth.cell_size]
        corners_y = [truth.yll, truth.yll + truth.height * truth.cell_size]
        lats, lons = [], []
        for cx in corners_x:
            for cy in corners_y:
                lat, lon = frame.to_latlon(cx, cy)
                lats.append(lat)
                lons.append(lon)
        roi = GroundRect(min(lats), min(lons), max(lats), max(lons))
    if frame is None and roi is not None:
        frame = LocalFrame(*roi.center)
    return frame, roi


def run_one(entry: dict, method: str, use_lsm: bool, cfg: RunConfig, run_dir: Path) -> dict:
    label = _variant_label(method, use_lsm)
    out = run_dir / entry["pair_id"] / label
    report_path = out / "report.json"
    if report_path.exists() and not cfg.force:
        with open(report_path, "r", encoding="utf-8") as f:
            return json.load(f)
    out.mkdir(parents=True, exist_ok=True)

    report = {
        "pair_id": entry["pair_id"], "method": method, "variant": label,
        "lsm": use_lsm, "success": False, "inlier_ratio": None,
        "epipolar_rms": None, "n_matches": 0, "n_inliers": 0,
        "completeness": None, "rmse": None, "shift": None, "error": None,
    }
    try:
        img1 = load_image(entry["image_a"])
        img2 = load_image(entry["image_b"])
        m1 = load_rpc(entry["rpc_a"])
        m2 = load_rpc(entry["rpc_b"])

        if method == "baseline":
            matches = _baseline_matches(entry, img1, img2, cfg)
        else:
            matches = _imported_matches(entry, method, img1, img2, cfg)

        if use_lsm and cfg.lsm_order == "before":
            matches, _ = refine_matchset(img1, img2, matches)

        ocfg = dataclasses.replace(
            cfg.orientation, seed=derive_seed(cfg.seed, "ransac", entry["pair_id"], label)
        )
        orientation = ransac_bias(m1, m2, matches, ocfg)
        if use_lsm and cfg.lsm_order == "after":
            matches, _ = refine_matchset(img1, img2, matches)
            orientation = ransac_bias(m1, m2, matches, ocfg)

        save_matches(matches, out / "matches.csv")
        save_orientation(orientation, out / "orientation.json")
        report.update(
            success=bool(orientation.success),
            inlier_ratio=float(orientation.inlier_ratio),
            epipolar_rms=None if np.isnan(orientation.epipolar_rms)
            else float(orientation.epipolar_rms),
            n_matches=len(matches), n_inliers=orientation.n_inliers,
        )

        truth = read_asc(entry["truth_dsm"]) if entry.get("truth_dsm") else None
        frame, roi = _tile_geometry(entry, truth)
        if orientation.success and cfg.dense and roi is not None and frame is not None:
            if entry.get("h_range"):
                h_min, h_max = entry["h_range"]
            elif truth is not None and truth.valid_mask.any():
                h_min = float(np.nanmin(truth.data)) - 5.0
                h_max = float(np.nanmax(truth.data)) + 5.0
            else:
                h_min = m1.h_off - m1.h_scale / 2.0
                h_max = m1.h_off + m1.h_scale / 2.0
            rmap, rect1, rect2 = rectify(
                img1, img2, m1, m2, orientation.bias, roi, h_min=h_min, h_max=h_max,
            )
            disp = sgm(rect1, rect2, rmap.d_min, rmap.d_max,
                       p1=cfg.sgm_p1, p2=cfg.sgm_p2)
            if truth is not None:
                grid = GridSpec.like(truth, frame)
            else:
                x0, y0 = frame.to_xy(roi.lat_min, roi.lon_min)
                x1, y1 = frame.to_xy(roi.lat_max, roi.lon_max)
                grid = GridSpec(
                    min(x0, x1), min(y0, y1),
                    max(1, int((abs(x1 - x0)) / cfg.cell)),
                    max(1, int((abs(y1 - y0)) / cfg.cell)),
                    cfg.cell, frame,
                )
            dsm_grid, _ = dsm_from_disparity(disp, rmap, m1, m2, orientation.bias, grid)
            write_asc(dsm_grid, out / "dsm.asc")
            write_sidecar(out / "dsm.asc", {
                "pair_id": entry["pair_id"], "method": label,
                "config_hash": cfg.config_hash(),
            })
            if truth is not None:
                ev = evaluate_dsm(dsm_grid, truth)
                report.update(
                    completeness=float(ev.completeness), rmse=float(ev.rmse),
                    shift=[float(v) for v in ev.shift],
                )
    except Exception as exc:  # per-pair failures never abort the run
        log.warning("pair %s (%s) failed: %s", entry["pair_id"], label, exc)
        report["error"] = f"{type(exc).__name__}: {exc}"

    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report


# -- aggregation -------------------------------------------------------------


def tukey_five(values) -> dict:
    """Five-number summary with Tukey hinge quartiles (median of halves)."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    if n == 0:
        raise ValueError("no values")
    med = float(np.median(v))
    lower = v[: (n + 1) // 2]
    upper = v[n // 2:]
    return {
        "min": float(v[0]), "q1": float(np.median(lower)), "median": med,
        "q3": float(np.median(upper)), "max": float(v[-1]),
    }


def aggregate(reports: list[dict]) -> dict:
    """Success rates, metric distributions, and refinement deltas.

    Distribution summaries cover successful pairs only.  Relative changes
    compare each method's refined and plain variants metric-wise over the
    pairs where both succeeded, using the mean metric value.
    """
    if not reports:
        raise ValueError("need at least one report")
    by_label: dict[str, list[dict]] = {}
    for r in reports:
        by_label.setdefault(r["variant"], []).append(r)

    methods = {}
    for label in sorted(by_label):
        group = sorted(by_label[label], key=lambda r: r["pair_id"])
        successes = [r for r in group if r["success"]]
        metrics = {}
        for metric in METRICS:
            vals = [r[metric] for r in successes if r.get(metric) is not None]
            metrics[metric] = tukey_five(vals) if vals else None
        methods[label] = {
            "n_pairs": len(group),
            "n_success": len(successes),
            "success_rate": 100.0 * len(successes) / len(group),
            "metrics": metrics,
        }

    deltas = {}
    bases = sorted({r["method"] for r in reports})
    for base in bases:
        plain_label, lsm_label = base, f"{base}+lsm"
        if plain_label not in by_label or lsm_label not in by_label:
            continue
        plain = {r["pair_id"]: r for r in by_label[plain_label] if r["success"]}
        refined = {r["pair_id"]: r for r in by_label[lsm_label] if r["success"]}
        common = sorted(set(plain) & set(refined))
        per_metric = {}
        for metric in METRICS:
            pv = [plain[p][metric] for p in common if plain[p].get(metric) is not None
                  and refined[p].get(metric) is not None]
            lv = [refined[p][metric] for p in common if plain[p].get(metric) is not None
                  and refined[p].get(metric) is not None]
            if not pv:
                per_metric[metric] = None
                continue
            m_plain = float(np.mean(pv))
            m_lsm = float(np.mean(lv))
            per_metric[metric] = None if m_plain == 0 else relative_change(m_lsm, m_plain)
        deltas[base] = per_metric

    return {"methods": methods, "lsm_relative_change": deltas}


def write_stats(stats: dict, run_dir: Path) -> None:
    with open(run_dir / "stats.json", "w", encoding="utf-8") as f:
        json.dump(stats, f, indent=2, sort_keys=True)
        f.write("\n")
    lines = ["method,metric,stat,value"]
    for label in sorted(stats["methods"]):
        m = stats["methods"][label]
        lines.append(f"{label},success_rate,value,{m['success_rate']!r}")
        for metric in METRICS:
            summary = m["metrics"].get(metric)
            if summary is None:
                continue
            for stat in ("min", "q1", "median", "q3", "max"):
                lines.append(f"{label},{metric},{stat},{summary[stat]!r}")
    for base in sorted(stats["lsm_relative_change"]):
        for metric in METRICS:
            value = stats["lsm_relative_change"][base].get(metric)
            if value is not None:
                lines.append(f"{base},{metric},relative_change_pct,{value!r}")
    with open(run_dir / "stats.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def run_pipeline(cfg: RunConfig) -> tuple[dict, Path]:
    """Execute the full workflow; returns (stats, run directory)."""
    tiles = load_manifest(cfg.manifest)
    run_dir = Path(cfg.out_dir) / cfg.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    entries = select_all_pairs(tiles, cfg)
    with open(run_dir / "pairs.json", "w", encoding="utf-8") as f:
        json.dump(entries, f, indent=2, sort_keys=True)
        f.write("\n")

    use_lsm_options = {"off": (False,), "on": (True,), "both": (False, True)}[cfg.lsm]
    tasks = sorted(
        ((entry, method, use_lsm)
         for entry in entries
         for method in cfg.methods
         for use_lsm in use_lsm_options),
        key=lambda t: (t[0]["pair_id"], t[1], t[2]),
    )

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [
                pool.submit(run_one, entry, method, use_lsm, cfg, run_dir)
                for entry, method, use_lsm in tasks
            ]
            reports = [f.result() for f in futures]
    else:
        reports = [run_one(entry, method, use_lsm, cfg, run_dir) for entry, method, use_lsm in tasks]

    reports.sort(key=lambda r: (r["variant"], r["pair_id"]))
    stats = aggregate(reports)
    write_stats(stats, run_dir)
    return stats, run_dir


def report_tables(run_dir, out_dir) -> list[Path]:
    """Emit plot-ready CSV tables from a finished run's stats.json."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "stats.json", "r", encoding="utf-8") as f:
        stats = json.load(f)
    written = []

    path = out_dir / "success_rate.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("method,n_pairs,n_success,success_rate\n")
        for label in sorted(stats["methods"]):
            m = stats["methods"][label]
            f.write(f"{label},{m['n_pairs']},{m['n_success']},{m['success_rate']!r}\n")
    written.append(path)

    path = out_dir / "distributions.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("method,metric,min,q1,median,q3,max\n")
        for label in sorted(stats["methods"]):
            metrics = stats["methods"][label]["metrics"]
            for metric in METRICS:
                s = metrics.get(metric)
                if s is None:
                    continue
                f.write(
                    f"{label},{metric},{s['min']!r},{s['q1']!r},{s['median']!r},"
                    f"{s['q3']!r},{s['max']!r}\n"
                )
    written.append(path)

    path = out_dir / "lsm_deltas.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("method,metric,relative_change_pct\n")
        for base in sorted(stats["lsm_relative_change"]):
            for metric in METRICS:
                value = stats["lsm_relative_change"][base].get(metric)
                if value is not None:
                    f.write(f"{base},{metric},{value!r}\n")
    written.append(path)
    return written
