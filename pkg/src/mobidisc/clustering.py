"""Temporal aggregation of non-ground points and spatial object proposals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Frame, to_world
from .density import hdbscan
from .geometry import Pose
from .ground import NonGroundCloud


@dataclass(frozen=True)
class AggregatedCloud:
    """World-frame union of non-ground points over a temporal window.

    ``source_frame``/``source_point`` record, per aggregated point, the frame
    index it came from and its row in that frame's cloud.
    """

    points: np.ndarray  # (N, 3) float64, world frame
    source_frame: np.ndarray  # (N,) int64
    source_point: np.ndarray  # (N,) int64
    center_frame: int

    def __post_init__(self):
        if not (len(self.points) == len(self.source_frame) == len(self.source_point)):
            raise ValueError("aggregated arrays must have equal length")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ObjectProposal:
    """One spatial cluster of aggregated points, with per-frame slices."""

    proposal_id: int
    center_frame: int
    point_indices: np.ndarray  # indices into the AggregatedCloud
    slices: dict[int, np.ndarray]  # frame index -> indices into the AggregatedCloud

    @property
    def num_points(self) -> int:
        return self.point_indices.size

    @property
    def frame_span(self) -> tuple[int, int]:
        keys = self.slices.keys()
        return min(keys), max(keys)


def aggregate(
    frames: Sequence[Frame],
    non_ground: Sequence[NonGroundCloud],
    center_pos: int,
    half_window: int,
) -> AggregatedCloud:
    """Pool the non-ground points of frames ``center_pos +- half_window``.

    ``frames`` is the processing sequence (e.g. all keyframes of a scene) and
    ``center_pos`` a position within it; the window is clipped at the
    sequence bounds. Points are transformed to the world frame with each
    frame's ego pose.
    """
    if not 0 <= center_pos < len(frames):
        raise ValueError(f"center position {center_pos} outside sequence of {len(frames)} frames")
    if half_window < 0:
        raise ValueError("window half-width must be non-negative")
    lo = max(0, center_pos - half_window)
    hi = min(len(frames) - 1, center_pos + half_window)

    pts_parts, frame_parts, point_parts = [], [], []
    for pos in range(lo, hi + 1):
        frame = frames[pos]
        idx = non_ground[pos].indices
        if idx.size == 0:
            continue
        world = to_world(frame.cloud, Pose.identity(), frame.ego_pose)[idx]
        pts_parts.append(world)
        frame_parts.append(np.full(idx.size, frame.index, dtype=np.int64))
        point_parts.append(idx)

    if pts_parts:
        points = np.concatenate(pts_parts)
        source_frame = np.concatenate(frame_parts)
        source_point = np.concatenate(point_parts)
    else:
        points = np.empty((0, 3))
        source_frame = np.empty(0, dtype=np.int64)
        source_point = np.empty(0, dtype=np.int64)
    return AggregatedCloud(
        points=points,
        source_frame=source_frame,
        source_point=source_point,
        center_frame=frames[center_pos].index,
    )


def cluster_proposals(
    agg: AggregatedCloud,
    min_cluster_size: int,
    min_samples: int,
    cluster_selection_epsilon: float,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """HDBSCAN over the aggregated world points."""
    return hdbscan(
        agg.points,
        min_cluster_size=min_cluster_size,
        min_samples=min_samples,
        cluster_selection_epsilon=cluster_selection_epsilon,
    )


def build_proposals(
    agg: AggregatedCloud, clusters: list[np.ndarray], first_id: int = 0
) -> list[ObjectProposal]:
    """Wrap cluster index sets into proposals with per-frame slices."""
    proposals = []
    for k, idx in enumerate(clusters):
        idx = np.asarray(idx, dtype=np.int64)
        frames_of = agg.source_frame[idx]
        slices = {
            int(f): idx[frames_of == f] for f in np.unique(frames_of)
        }
        proposals.append(
            ObjectProposal(
                proposal_id=first_id + k,
                center_frame=agg.center_frame,
                point_indices=idx,
                slices=slices,
            )
        )
    return proposals
