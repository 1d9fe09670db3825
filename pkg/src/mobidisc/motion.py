"""Per-proposal SE(2) motion estimation and the static/dynamic split.

A proposal's aggregated points are split into an earlier and a later half by
source frame, and point-to-point ICP restricted to 2D translation plus yaw
aligns the earlier half to the later one. Speed is the translation magnitude
divided by the gap between the halves' mean point timestamps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .clustering import AggregatedCloud, ObjectProposal
from .geometry import wrap_angle

DYNAMIC_SPEED_THRESHOLD = 0.50  # m/s; at or above counts as dynamic


@dataclass(frozen=True)
class MotionEstimate:
    translation_xy: np.ndarray  # meters, source half -> target half
    yaw: float  # radians, about pivot_xy
    dt: float  # seconds, > 0
    speed: float  # m/s
    is_dynamic: bool
    pivot_xy: np.ndarray  # BEV rotation pivot (source half centroid)
    low_evidence: bool = False

    @staticmethod
    def static(dt: float = 1.0, low_evidence: bool = True) -> "MotionEstimate":
        return MotionEstimate(
            translation_xy=np.zeros(2),
            yaw=0.0,
            dt=dt,
            speed=0.0,
            is_dynamic=False,
            pivot_xy=np.zeros(2),
            low_evidence=low_evidence,
        )


def se2_procrustes(
    source_xy: np.ndarray, target_xy: np.ndarray, pivot_xy: np.ndarray
) -> tuple[np.ndarray, float]:
    """Least-squares SE(2) transform mapping paired sources onto targets.

    Solves ``min sum |R(yaw) (p - pivot) + pivot + t - q|^2`` for (t, yaw).
    """
    src = np.asarray(source_xy, dtype=float) - pivot_xy
    dst = np.asarray(target_xy, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cs = src - mu_s
    cd = dst - mu_d
    dot = float(np.sum(cs * cd))
    cross = float(np.sum(cs[:, 0] * cd[:, 1] - cs[:, 1] * cd[:, 0]))
    yaw = math.atan2(cross, dot) if (dot != 0.0 or cross != 0.0) else 0.0
    rot = np.array([[math.cos(yaw), -math.sin(yaw)], [math.sin(yaw), math.cos(yaw)]])
    t = mu_d - rot @ mu_s - pivot_xy
    return t, yaw


def apply_se2(points_xy: np.ndarray, t_xy: np.ndarray, yaw: float, pivot_xy: np.ndarray) -> np.ndarray:
    rot = np.array([[math.cos(yaw), -math.sin(yaw)], [math.sin(yaw), math.cos(yaw)]])
    return (points_xy - pivot_xy) @ rot.T + pivot_xy + t_xy


_YAW_STARTS = tuple(np.deg2rad(np.arange(-150.0, 181.0, 30.0)))
_SCORE_TIE_MARGIN = 0.25


def icp_se2(
    source_xy: np.ndarray,
    target_xy: np.ndarray,
    pivot_xy: np.ndarray,
    max_iterations: int = 50,
    tol: float = 1e-4,
    trim_quantile: float = 0.9,
) -> tuple[np.ndarray, float]:
    """Point-to-point ICP restricted to SE(2) about ``pivot_xy``.

    Correspondences are nearest neighbours in the target; pairs beyond the
    trim quantile of the current residuals are dropped each iteration. A
    single descent from the centroid-difference initialization stalls for
    yaws beyond roughly 15 degrees, so the descent is restarted from a
    coarse ring of initial yaws and the pose with the lowest trimmed RMS
    residual wins (ties keep the earlier start).
    """
    src = np.asarray(source_xy, dtype=float)
    dst = np.asarray(target_xy, dtype=float)
    tree = cKDTree(dst)
    mu_dst = dst.mean(axis=0)

    def trimmed_rms(t: np.ndarray, yaw: float) -> float:
        dists, _ = tree.query(apply_se2(src, t, yaw, pivot_xy))
        if len(src) >= 10:
            dists = dists[dists <= np.quantile(dists, trim_quantile)]
        return float(np.sqrt(np.mean(dists**2)))

    def descend(t: np.ndarray, yaw: float, iterations: int, step_tol: float) -> tuple[np.ndarray, float]:
        for _ in range(iterations):
            moved = apply_se2(src, t, yaw, pivot_xy)
            dists, nn = tree.query(moved)
            keep = np.ones(len(src), dtype=bool)
            if len(src) >= 10:
                keep = dists <= np.quantile(dists, trim_quantile)
            t_new, yaw_new = se2_procrustes(src[keep], dst[nn[keep]], pivot_xy)
            step = max(float(np.max(np.abs(t_new - t))), abs(wrap_angle(yaw_new - yaw)))
            t, yaw = t_new, yaw_new
            if step < step_tol:
                break
        return t, yaw

    # coarse pass over the start ring, then a full-length polish of the winner
    candidates = []
    coarse_iters = max(10, max_iterations // 4)
    for yaw0 in (0.0, *_YAW_STARTS):
        rotated_mean = apply_se2(src.mean(axis=0)[None, :], np.zeros(2), yaw0, pivot_xy)[0]
        t, yaw = descend(mu_dst - rotated_mean, yaw0, coarse_iters, 10 * tol)
        candidates.append((trimmed_rms(t, yaw), t, yaw))
    # near-symmetric shapes (and their motion trails) match themselves under
    # a half turn almost as well as under the true pose; among near-tied
    # scores prefer the smallest rotation
    best_score = min(c[0] for c in candidates)
    tied = [c for c in candidates if c[0] <= best_score * (1.0 + _SCORE_TIE_MARGIN) + 1e-12]
    _, t, yaw = min(tied, key=lambda c: abs(wrap_angle(c[2])))
    t, yaw = descend(t, yaw, max_iterations, tol)
    return t, wrap_angle(yaw)


def _split_halves(proposal: ObjectProposal) -> tuple[list[int], list[int]]:
    present = sorted(proposal.slices.keys())
    cut = (len(present) + 1) // 2  # odd span: middle frame joins the earlier half
    return present[:cut], present[cut:]


def estimate_motion(
    proposal: ObjectProposal,
    agg: AggregatedCloud,
    frame_times: Mapping[int, float],
    dynamic_speed_threshold: float = DYNAMIC_SPEED_THRESHOLD,
    min_half_points: int = 5,
    max_iterations: int = 50,
    tol: float = 1e-4,
) -> MotionEstimate:
    """SE(2) motion of one proposal between its earlier and later halves.

    Proposals observed in a single frame, or with fewer than
    ``min_half_points`` points in either half, get a zero static estimate
    flagged ``low_evidence``.
    """
    early_frames, late_frames = _split_halves(proposal)
    if not early_frames or not late_frames:
        return MotionEstimate.static()

    def gather(frames: list[int]) -> tuple[np.ndarray, np.ndarray]:
        idx = np.concatenate([proposal.slices[f] for f in frames])
        times = np.concatenate(
            [np.full(proposal.slices[f].size, frame_times[f]) for f in frames]
        )
        return agg.points[idx, :2], times

    src, src_t = gather(early_frames)
    dst, dst_t = gather(late_frames)
    if len(src) < min_half_points or len(dst) < min_half_points:
        return MotionEstimate.static()

    dt = float(dst_t.mean() - src_t.mean())
    if dt <= 0:
        return MotionEstimate.static()

    pivot = src.mean(axis=0)
    t, yaw = icp_se2(src, dst, pivot, max_iterations=max_iterations, tol=tol)
    speed = float(np.linalg.norm(t)) / dt
    return MotionEstimate(
        translation_xy=t,
        yaw=yaw,
        dt=dt,
        speed=speed,
        is_dynamic=speed >= dynamic_speed_threshold,
        pivot_xy=pivot,
        low_evidence=False,
    )


def split_static_dynamic(
    items: Sequence[tuple[ObjectProposal, MotionEstimate]],
) -> tuple[list[tuple[ObjectProposal, MotionEstimate]], list[tuple[ObjectProposal, MotionEstimate]]]:
    """Partition (proposal, estimate) pairs by the dynamic flag."""
    static = [it for it in items if not it[1].is_dynamic]
    dynamic = [it for it in items if it[1].is_dynamic]
    return static, dynamic


def undo_motion(
    points: np.ndarray,
    point_times: np.ndarray,
    center_time: float,
    estimate: MotionEstimate,
) -> np.ndarray:
    """Move points sensed at ``point_times`` to their predicted pose at
    ``center_time`` under the constant SE(2) twist of ``estimate``."""
    pts = np.asarray(points, dtype=float).copy()
    vel = estimate.translation_xy / estimate.dt
    yaw_rate = estimate.yaw / estimate.dt
    for time in np.unique(point_times):
        mask = point_times == time
        span = center_time - float(time)
        pts[mask, :2] = apply_se2(
            pts[mask, :2], vel * span, yaw_rate * span, estimate.pivot_xy
        )
    return pts
