"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``)."""

import json
import math

import numpy as np
import pytest
from oracles import (
    best_restart_objective,
    brute_force_density_clusters,
    grid_min_rect_area,
    naive_eval,
)
from test_density import canonical_partition, random_dataset
from test_evaluation import _random_instance

from mobidisc import evaluation
from mobidisc.boxes import min_area_rect
from mobidisc.dataset import load_ground_truth, scene_dir
from mobidisc.density import hdbscan
from mobidisc.discovery import classify_clusters, kmeans
from mobidisc.discovery import AppearanceCluster
from mobidisc.ground import fit_ground_plane
from mobidisc.motion import MotionEstimate, apply_se2, icp_se2, split_static_dynamic
from mobidisc.pipeline import run_pipeline
from scenario_helpers import benchmark_config


def _report(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def _class_agnostic(boxes):
    return [evaluation._as_class(b, "object") for b in boxes]


def test_synthetic_end_to_end_discovery(bench_runs):
    dataset = bench_runs["dataset"]
    run = bench_runs["runs"]["+appearance"]
    elapsed = bench_runs["timings"]["+appearance"]

    gts = _class_agnostic(
        evaluation.boxes_from_ground_truth({"bench": load_ground_truth(scene_dir(dataset, "bench"))})
    )
    preds, _ = evaluation.boxes_from_predictions(run.labels_path)
    preds = _class_agnostic(preds)
    match = evaluation.match_and_accumulate(preds, gts, 2.0)
    recall = match.tp_flags.sum() / match.num_gt

    background = json.loads((scene_dir(dataset, "bench") / "background.json").read_text())
    background_hits = 0
    for frame, boxes in background.items():
        for b in boxes:
            center = np.asarray(b["center"][:2])
            for p in preds:
                if p.frame_key[1] == int(frame) and np.linalg.norm(p.center[:2] - center) < 2.0:
                    background_hits += 1

    _report(
        "synthetic end-to-end discovery",
        recall >= 0.90 and background_hits == 0 and elapsed < 60.0,
        f"recall@2m={recall:.3f}, background boxes={background_hits}, runtime={elapsed:.1f}s",
    )


def test_stage_ordering(bench_runs):
    dataset = bench_runs["dataset"]
    gts = evaluation.boxes_from_ground_truth({"bench": load_ground_truth(scene_dir(dataset, "bench"))})
    config = evaluation.EvalConfig()

    ap = {}
    preds_by_stage = {}
    for stage in ("spatial", "+appearance"):
        preds, _ = evaluation.boxes_from_predictions(bench_runs["runs"][stage].labels_path)
        preds_by_stage[stage] = preds
        ap[stage] = evaluation.evaluate(preds, gts, config).mean_ap

    background = json.loads((scene_dir(dataset, "bench") / "background.json").read_text())

    def background_hits(preds):
        hits = 0
        for frame, boxes in background.items():
            for b in boxes:
                center = np.asarray(b["center"][:2])
                for p in preds:
                    if p.frame_key[1] == int(frame) and np.linalg.norm(p.center[:2] - center) < 2.0:
                        hits += 1
        return hits

    spatial_bg = background_hits(preds_by_stage["spatial"])
    full_bg = background_hits(preds_by_stage["+appearance"])
    _report(
        "stage ordering",
        ap["spatial"] < ap["+appearance"] and spatial_bg > 0 and full_bg == 0,
        f"AP spatial={ap['spatial']:.3f} < full={ap['+appearance']:.3f}; "
        f"background boxes {spatial_bg} -> {full_bg}",
    )


def test_ransac_plane_recovery():
    failures = 0
    for trial in range(100):
        rng = np.random.default_rng(200 + trial)
        tilt = rng.uniform(0, math.radians(15))
        azimuth = rng.uniform(0, 2 * math.pi)
        normal = np.array(
            [math.sin(tilt) * math.cos(azimuth), math.sin(tilt) * math.sin(azimuth), math.cos(tilt)]
        )
        offset = rng.uniform(-1, 1)
        xy = rng.uniform(-20, 20, (700, 2))
        z = (offset - xy @ normal[:2]) / normal[2]
        inliers = np.column_stack([xy, z]) + rng.normal(0, 0.01, (700, 3))
        outliers = np.column_stack([rng.uniform(-20, 20, (300, 2)), rng.uniform(0.5, 8.0, 300)])
        pts = np.vstack([inliers, outliers])
        rng.shuffle(pts)
        plane = fit_ground_plane(pts, inlier_threshold=0.05, max_iterations=200, seed=trial)
        plane_b = fit_ground_plane(pts, inlier_threshold=0.05, max_iterations=200, seed=trial)
        deterministic = np.array_equal(plane.normal, plane_b.normal) and plane.offset == plane_b.offset
        angle = math.degrees(math.acos(min(1.0, float(plane.normal @ normal))))
        if angle > 1.0 or abs(plane.offset - offset) > 0.02 or not deterministic:
            failures += 1
    _report("ransac plane recovery", failures == 0, f"{failures}/100 outside tolerance")


def test_density_clustering_oracle_equivalence():
    mismatches = 0
    for seed in range(25):
        pts, params = random_dataset(1000 + seed)
        labels, _ = hdbscan(pts, **params)
        reference = brute_force_density_clusters(pts, **params)
        if canonical_partition(labels) != canonical_partition(reference):
            mismatches += 1
    _report("density clustering oracle equivalence", mismatches == 0, f"{mismatches}/25 datasets differ")


def test_se2_registration():
    rng = np.random.default_rng(7)
    noiseless_failures = 0
    for _ in range(100):
        n = int(rng.integers(30, 80))
        src = rng.normal(0, 1.0, (n, 2)) * rng.uniform(0.5, 2.0, 2)
        yaw = rng.uniform(-math.radians(30), math.radians(30))
        trans = rng.uniform(-2, 2, 2)
        pivot = src.mean(axis=0)
        t_est, yaw_est = icp_se2(src, apply_se2(src, trans, yaw, pivot), pivot)
        if np.linalg.norm(t_est - trans) > 0.05 or abs(yaw_est - yaw) > math.radians(1):
            noiseless_failures += 1

    noisy_failures = 0
    for trial in range(100):
        rng = np.random.default_rng(5000 + trial)
        n = int(rng.integers(30, 80))
        src = rng.normal(0, 1.0, (n, 2)) * rng.uniform(0.5, 2.0, 2)
        yaw = rng.uniform(-math.radians(30), math.radians(30))
        trans = rng.uniform(-2, 2, 2)
        pivot = src.mean(axis=0)
        dst = apply_se2(src, trans, yaw, pivot) + rng.normal(0, 0.02, (n, 2))
        t_est, _ = icp_se2(src, dst, pivot)
        if np.linalg.norm(t_est - trans) > 0.10:
            noisy_failures += 1
    _report(
        "SE(2) registration",
        noiseless_failures == 0 and noisy_failures <= 5,
        f"noiseless {noiseless_failures}/100 failed, noisy {noisy_failures}/100 over 0.10 m",
    )


def test_dynamic_threshold_semantics():
    def estimate(speed):
        return MotionEstimate(
            translation_xy=np.array([speed, 0.0]), yaw=0.0, dt=1.0, speed=speed,
            is_dynamic=speed >= 0.5, pivot_xy=np.zeros(2),
        )

    static, dynamic = split_static_dynamic([(None, estimate(0.49)), (None, estimate(0.50))])
    speeds_ok = [it[1].speed for it in static] == [0.49] and [it[1].speed for it in dynamic] == [0.50]

    clusters = [
        AppearanceCluster(cluster_id=i + 1, member_ids=tuple(range(100)), centroid=np.zeros(2), dynamic_fraction=f)
        for i, f in enumerate((0.04, 0.05, 0.06))
    ]
    verdicts = [c.is_mobile for c in classify_clusters(clusters, threshold=0.05)]
    _report(
        "dynamic threshold semantics",
        speeds_ok and verdicts == [False, True, True],
        f"split ok={speeds_ok}, cluster verdicts={verdicts}",
    )


def test_kmeans_objective_quality():
    rng = np.random.default_rng(42)
    blobs = [rng.normal(0, 0.05, (14, 6)) + c for c in (np.zeros(6), 3 * np.eye(6)[0], 3 * np.eye(6)[1])]
    x = np.vstack(blobs)[:40]
    labels, centers = kmeans(x, 3, seed=9)
    labels_b, centers_b = kmeans(x, 3, seed=9)
    deterministic = np.array_equal(labels, labels_b) and np.array_equal(centers, centers_b)

    from mobidisc.discovery import _lloyd_steps

    start = x[np.random.default_rng(5).choice(40, size=3, replace=False)]
    objectives = [obj for _, _, obj in _lloyd_steps(x, start, max_iter=300)]
    monotone = all(b <= a + 1e-12 for a, b in zip(objectives, objectives[1:]))

    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    objective = float(d2[np.arange(40), labels].sum())
    reference = best_restart_objective(x, 3, restarts=1000, seed=1)
    _report(
        "k-means objective quality",
        monotone and deterministic and abs(objective - reference) < 1e-9,
        f"monotone={monotone}, deterministic={deterministic}, |obj-ref|={abs(objective - reference):.2e}",
    )


def test_box_fitting_optimality():
    rng = np.random.default_rng(11)
    worst_gap = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 60))
        pts = rng.normal(0, 1, (n, 2)) * rng.uniform(0.3, 4.0, 2)
        phi = rng.uniform(0, math.pi)
        rot = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
        pts = pts @ rot.T + rng.uniform(-10, 10, 2)
        _, l, w, _, _ = min_area_rect(pts)
        gap = (l * w) / grid_min_rect_area(pts) - 1.0
        worst_gap = max(worst_gap, gap)

    pts = np.random.default_rng(13).normal(0, 1, (25, 2)) * np.array([3.0, 1.0])
    _, l0, w0, yaw0, _ = min_area_rect(pts)
    equivariant = True
    for phi in (0.3, -1.2, 2.8):
        rot = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
        _, l1, w1, yaw1, _ = min_area_rect(pts @ rot.T)
        delta = (yaw1 - yaw0 - phi) % math.pi
        if abs(l1 - l0) > 1e-9 or abs(w1 - w0) > 1e-9 or min(delta, math.pi - delta) > 1e-9:
            equivariant = False
    _report(
        "box fitting optimality",
        worst_gap <= 1e-6 and equivariant,
        f"worst relative gap vs grid={worst_gap:.2e}, rotation equivariant={equivariant}",
    )


def test_evaluation_oracle_equivalence():
    rng = np.random.default_rng(3)
    thresholds = (0.5, 1.0, 2.0, 4.0)
    worst = 0.0
    for _ in range(20):
        preds, gts, pdicts, gdicts = _random_instance(rng)
        report = evaluation.evaluate(preds, gts, evaluation.EvalConfig(match_thresholds=thresholds))
        ref = naive_eval(pdicts, gdicts, thresholds, 0.1, 2.0, 2 * math.pi)
        for th in thresholds:
            worst = max(worst, abs(report.ap["object"][th] - ref["ap"][th]))
        for key in ("ate", "ase", "aoe", "ave"):
            worst = max(worst, abs(report.tp_errors["object"][key] - ref["errors"][key]))
        worst = max(worst, abs(report.nds_value - ref["nds"]))

    gt = [evaluation.EvalBox(frame_key=("s", 0), center=np.array([1.0, 2.0, 1.0]),
                             size=np.array([4.0, 2.0, 1.5]), yaw=0.3,
                             velocity=np.array([1.0, 0.0]), class_name="object")]
    perfect = [evaluation.EvalBox(frame_key=("s", 0), center=gt[0].center, size=gt[0].size,
                                  yaw=0.3, velocity=gt[0].velocity, class_name="object", score=0.9)]
    ap_perfect = evaluation.evaluate(perfect, gt, evaluation.EvalConfig()).mean_ap
    ap_empty = evaluation.evaluate([], gt, evaluation.EvalConfig()).mean_ap
    nds_check = evaluation.nds(1.0, {"ate": 0.0, "ase": 0.0, "aoe": 0.0, "ave": 0.0}, aae_fixed=1.0)
    _report(
        "evaluation oracle equivalence",
        worst < 1e-9 and abs(ap_perfect - 1.0) < 1e-9 and ap_empty == 0.0 and abs(nds_check - 0.9) < 1e-12,
        f"max |impl-oracle|={worst:.2e}, perfect AP={ap_perfect}, empty AP={ap_empty}, nds(1,0,1)={nds_check}",
    )


def test_pipeline_determinism(bench_runs, tmp_path):
    dataset = bench_runs["dataset"]
    second = run_pipeline(benchmark_config(), dataset, tmp_path / "rerun", stage="+appearance")
    identical = (
        bench_runs["runs"]["+appearance"].labels_path.read_bytes() == second.labels_path.read_bytes()
    )
    _report("pipeline determinism", identical, "pseudo_labels.json byte-identical across runs")
