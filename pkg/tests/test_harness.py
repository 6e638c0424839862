"""Harness tests: seeding, aggregation, and the end-to-end run layout.

The pipeline fixture avoids rendering and dense matching: three tiny
images share a tile, matches are imported from pre-written CSVs of exact
geometric correspondences, and densification is disabled.  One pair is
given too few matches so the success gate trips while the pair stays in
the success-rate denominator.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

import satstereo as ss
from conftest import LAT0, LON0, consistent_matches
from satstereo.evaluation import relative_change
from satstereo.harness import (
    RunConfig,
    aggregate,
    derive_seed,
    load_run_config,
    report_tables,
    run_one,
    run_pipeline,
    tukey_five,
)
from satstereo.matching import MatchSet, save_matches
from satstereo.rasters import save_image

SIZE = 96
TILE = "t1"
IMAGE_IDS = ("imga", "imgb", "imgc")
PAIR_IDS = ("t1__imga__imgb", "t1__imga__imgc", "t1__imgb__imgc")
SHORT_PAIR = "t1__imgb__imgc"


def _models():
    views = {"imga": 90.0, "imgb": 270.0, "imgc": 0.0}
    return {
        image_id: ss.affine_rpc(
            LAT0, LON0, width=SIZE, height=SIZE, gsd=0.5,
            view_azimuth_deg=az, view_zenith_deg=12.0,
            h_off=20.0, h_scale=60.0,
        )
        for image_id, az in views.items()
    }


def _write_tile(root: Path) -> Path:
    """Lay out RPCs, images, match CSVs, and the manifest under root."""
    models = _models()
    images = []
    for i, image_id in enumerate(IMAGE_IDS):
        ss.save_rpc_json(models[image_id], root / f"{image_id}.rpc.json")
        rng = np.random.default_rng(100 + i)
        save_image(root / f"{image_id}.png", rng.integers(30, 220, (SIZE, SIZE)))
        images.append({
            "image_id": image_id,
            "date": f"2021-0{6 + i}-1{i}",
            "sun_azimuth": 140.0 + 10 * i,
            "sun_elevation": 55.0 + 3 * i,
            "gsd": 0.5,
            "rpc_path": f"{image_id}.rpc.json",
            "image_path": f"{image_id}.png",
        })

    match_dir = root / "ext"
    match_dir.mkdir()
    dims = (SIZE, SIZE)
    for pair_id in PAIR_IDS:
        _, id_a, id_b = pair_id.split("__")
        p1, p2 = consistent_matches(
            models[id_a], models[id_b], 150, seed=len(id_a + id_b + pair_id),
            extent_m=18.0, dims=dims,
        )
        if pair_id == SHORT_PAIR:
            p1, p2 = p1[:4], p2[:4]
        assert len(p1) >= 4
        matches = MatchSet.build(pair_id, "ext", p1, p2, None, dims, dims)
        save_matches(matches, match_dir / f"{pair_id}.csv")

    manifest = root / "manifest.json"
    manifest.write_text(
        json.dumps({"tiles": [{"tile_id": TILE, "images": images}]}, indent=2),
        encoding="utf-8",
    )
    return manifest


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("harness")
    manifest = _write_tile(root)
    cfg = RunConfig(
        manifest=str(manifest),
        methods=["ext"],
        match_dirs={"ext": str(root / "ext")},
        lsm="off",
        dense=False,
        out_dir=str(root / "runs"),
        run_id="r1",
        seed=11,
    )
    stats, run_dir = run_pipeline(cfg)
    return cfg, stats, run_dir


def test_derive_seed_is_stable_and_part_sensitive():
    a = derive_seed(11, "ransac", "t1__imga__imgb", "ext")
    assert a == derive_seed(11, "ransac", "t1__imga__imgb", "ext")
    assert a != derive_seed(12, "ransac", "t1__imga__imgb", "ext")
    assert a != derive_seed(11, "pairs", "t1__imga__imgb", "ext")
    assert a != derive_seed(11, "ransac", "t1__imga__imgc", "ext")
    assert 0 <= a < 2**64


def test_tukey_five_odd_count_hits_data_points():
    summary = tukey_five([5, 3, 1, 4, 2])
    assert summary == {"min": 1.0, "q1": 2.0, "median": 3.0, "q3": 4.0, "max": 5.0}


def test_tukey_five_even_count_uses_hinges():
    summary = tukey_five([1, 2, 3, 4])
    assert summary == {"min": 1.0, "q1": 1.5, "median": 2.5, "q3": 3.5, "max": 4.0}


def test_tukey_five_rejects_empty():
    with pytest.raises(ValueError):
        tukey_five([])


def _report(pair_id, variant, success, **metrics):
    method = variant.removesuffix("+lsm")
    base = {
        "pair_id": pair_id, "method": method, "variant": variant,
        "lsm": variant.endswith("+lsm"), "success": success,
        "inlier_ratio": None, "epipolar_rms": None, "n_matches": 0,
        "n_inliers": 0, "completeness": None, "rmse": None,
        "shift": None, "error": None,
    }
    base.update(metrics)
    return base


def test_aggregate_keeps_failed_pairs_in_denominator():
    reports = [
        _report(f"p{i}", "m", True, rmse=float(i), epipolar_rms=0.5)
        for i in range(1, 5)
    ]
    reports.append(_report("p5", "m", False))
    stats = aggregate(reports)
    m = stats["methods"]["m"]
    assert m["n_pairs"] == 5
    assert m["n_success"] == 4
    assert m["success_rate"] == pytest.approx(80.0)
    assert m["metrics"]["rmse"] == tukey_five([1.0, 2.0, 3.0, 4.0])
    assert m["metrics"]["completeness"] is None


def test_aggregate_identical_variants_give_zero_change():
    reports = []
    for variant in ("m", "m+lsm"):
        for i in (1, 2, 3):
            reports.append(_report(
                f"p{i}", variant, True, inlier_ratio=0.5 + 0.1 * i,
                epipolar_rms=1.0 + i, completeness=90.0, rmse=2.0,
            ))
    deltas = aggregate(reports)["lsm_relative_change"]["m"]
    for metric in ("inlier_ratio", "epipolar_rms", "completeness", "rmse"):
        assert deltas[metric] == pytest.approx(0.0, abs=1e-12)


def test_aggregate_relative_change_over_common_pairs():
    # The verifier is relative_change itself: the delta must equal the
    # relative change of the two per-pair means, restricted to pairs where
    # both variants succeeded, so p3 (refined variant failed) is excluded.
    reports = [
        _report("p1", "m", True, inlier_ratio=0.49),
        _report("p2", "m", True, inlier_ratio=0.51),
        _report("p3", "m", True, inlier_ratio=0.90),
        _report("p1", "m+lsm", True, inlier_ratio=0.5018),
        _report("p2", "m+lsm", True, inlier_ratio=0.5058),
        _report("p3", "m+lsm", False),
    ]
    delta = aggregate(reports)["lsm_relative_change"]["m"]["inlier_ratio"]
    assert delta == pytest.approx(relative_change(0.5038, 0.5), abs=1e-12)
    assert delta == pytest.approx(0.76, abs=1e-9)


def test_aggregate_rejects_empty_input():
    with pytest.raises(ValueError):
        aggregate([])


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(manifest="m.json", methods=[])
    with pytest.raises(ValueError):
        RunConfig(manifest="m.json", workers=0)
    with pytest.raises(ValueError):
        RunConfig(manifest="m.json", lsm="sometimes")
    with pytest.raises(ValueError):
        RunConfig(manifest="m.json", lsm_order="during")


def test_config_hash_is_stable_and_sensitive():
    a = RunConfig(manifest="m.json", seed=1)
    b = RunConfig(manifest="m.json", seed=1)
    c = RunConfig(manifest="m.json", seed=2)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 12
    int(a.config_hash(), 16)


def test_load_run_config_resolves_paths_and_coerces_lsm(tmp_path):
    (tmp_path / "data").mkdir()
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({
        "manifest": "data/manifest.json",
        "out_dir": "out",
        "match_dirs": {"ext": "data/ext"},
        "lsm": True,
        "selection": {"angle_min": 6.0, "angle_max": 30.0},
        "orientation": {"t": 4.0},
    }), encoding="utf-8")
    cfg = load_run_config(cfg_path, run_id="override", force=None)
    assert cfg.lsm == "on"
    assert cfg.run_id == "override"
    assert cfg.force is False
    assert Path(cfg.manifest) == (tmp_path / "data" / "manifest.json").resolve()
    assert Path(cfg.out_dir) == (tmp_path / "out").resolve()
    assert Path(cfg.match_dirs["ext"]) == (tmp_path / "data" / "ext").resolve()
    assert cfg.selection.angle_min == 6.0
    assert cfg.orientation.t == 4.0


def test_pipeline_selects_all_three_pairs(pipeline_run):
    _, _, run_dir = pipeline_run
    entries = json.loads((run_dir / "pairs.json").read_text(encoding="utf-8"))
    assert [e["pair_id"] for e in entries] == list(PAIR_IDS)
    for e in entries:
        assert 5.0 <= e["intersection_angle"] <= 35.0
        assert 0 <= e["month_diff"] <= 6


def test_pipeline_writes_run_layout(pipeline_run):
    _, _, run_dir = pipeline_run
    for name in ("pairs.json", "stats.json", "stats.csv"):
        assert (run_dir / name).is_file()
    for pair_id in PAIR_IDS:
        variant_dir = run_dir / pair_id / "ext"
        for name in ("matches.csv", "orientation.json", "report.json"):
            assert (variant_dir / name).is_file()
        assert not (variant_dir / "dsm.asc").exists()


def test_pipeline_gates_short_pair_but_counts_it(pipeline_run):
    _, stats, run_dir = pipeline_run
    m = stats["methods"]["ext"]
    assert m["n_pairs"] == 3
    assert m["n_success"] == 2
    assert m["success_rate"] == pytest.approx(200.0 / 3.0)

    report = json.loads(
        (run_dir / SHORT_PAIR / "ext" / "report.json").read_text(encoding="utf-8")
    )
    assert report["success"] is False
    assert report["error"] is None
    assert report["n_matches"] == 4
    assert report["n_inliers"] < 5


def test_pipeline_successful_pairs_have_clean_orientation(pipeline_run):
    _, stats, run_dir = pipeline_run
    for pair_id in PAIR_IDS:
        if pair_id == SHORT_PAIR:
            continue
        report = json.loads(
            (run_dir / pair_id / "ext" / "report.json").read_text(encoding="utf-8")
        )
        assert report["success"] is True
        assert report["error"] is None
        assert report["epipolar_rms"] < 0.1
        assert report["inlier_ratio"] > 0.9
        assert report["completeness"] is None and report["rmse"] is None
    assert stats["methods"]["ext"]["metrics"]["epipolar_rms"]["max"] < 0.1
    assert stats["methods"]["ext"]["metrics"]["completeness"] is None


def test_pipeline_stats_csv_matches_stats_json(pipeline_run):
    _, stats, run_dir = pipeline_run
    lines = (run_dir / "stats.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "method,metric,stat,value"
    rate_rows = [ln for ln in lines if ln.startswith("ext,success_rate,value,")]
    assert len(rate_rows) == 1
    assert float(rate_rows[0].rsplit(",", 1)[1]) == stats["methods"]["ext"]["success_rate"]


def test_pipeline_resume_skips_finished_work(pipeline_run):
    cfg, _, run_dir = pipeline_run
    stats_bytes = (run_dir / "stats.json").read_bytes()
    report_path = run_dir / PAIR_IDS[0] / "ext" / "report.json"
    before = report_path.stat().st_mtime_ns

    stats_again, run_dir_again = run_pipeline(cfg)
    assert run_dir_again == run_dir
    assert report_path.stat().st_mtime_ns == before
    assert (run_dir / "stats.json").read_bytes() == stats_bytes
    assert stats_again == json.loads(stats_bytes.decode("utf-8"))


def test_pipeline_force_recomputes_identical_results(pipeline_run):
    cfg, _, run_dir = pipeline_run
    stats_bytes = (run_dir / "stats.json").read_bytes()
    report_path = run_dir / PAIR_IDS[0] / "ext" / "report.json"
    before = report_path.stat().st_mtime_ns

    forced = dataclasses.replace(cfg, force=True)
    run_pipeline(forced)
    assert report_path.stat().st_mtime_ns > before
    assert (run_dir / "stats.json").read_bytes() == stats_bytes


def test_pipeline_parallel_run_is_deterministic(pipeline_run):
    cfg, stats, _ = pipeline_run
    parallel = dataclasses.replace(cfg, run_id="r2", workers=2)
    stats2, run_dir2 = run_pipeline(parallel)
    assert stats2 == stats
    assert run_dir2.name == "r2"


def test_report_tables_emit_plot_csvs(pipeline_run, tmp_path):
    _, stats, run_dir = pipeline_run
    written = report_tables(run_dir, tmp_path / "tables")
    names = {p.name for p in written}
    assert names == {"success_rate.csv", "distributions.csv", "lsm_deltas.csv"}

    rate_lines = (tmp_path / "tables" / "success_rate.csv").read_text().splitlines()
    assert rate_lines[0] == "method,n_pairs,n_success,success_rate"
    assert rate_lines[1].startswith("ext,3,2,")

    dist_lines = (tmp_path / "tables" / "distributions.csv").read_text().splitlines()
    assert any(ln.startswith("ext,epipolar_rms,") for ln in dist_lines)
    assert not any(ln.startswith("ext,completeness,") for ln in dist_lines)

    delta_lines = (tmp_path / "tables" / "lsm_deltas.csv").read_text().splitlines()
    assert delta_lines == ["method,metric,relative_change_pct"]


def test_run_one_records_per_pair_errors(pipeline_run, tmp_path):
    cfg, _, run_dir = pipeline_run
    entries = json.loads((run_dir / "pairs.json").read_text(encoding="utf-8"))
    ghost = dataclasses.replace(cfg, methods=["ghost"], out_dir=str(tmp_path))
    report = run_one(entries[0], "ghost", False, ghost, tmp_path / "g")
    assert report["success"] is False
    assert report["error"] is not None
    assert "ghost" in report["error"]
    persisted = json.loads(
        (tmp_path / "g" / entries[0]["pair_id"] / "ghost" / "report.json")
        .read_text(encoding="utf-8")
    )
    assert persisted == report
