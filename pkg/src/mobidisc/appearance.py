"""Visual appearance embeddings for object proposals.

Each proposal point is projected into the cameras of its own source frame;
valid projections sample the feature cell under the pixel. A point's feature
is the mean over the cameras that see it, and the proposal embedding is the
mean over contributing points. Coverage is the fraction of points seen by at
least one camera; zero-coverage proposals are unembeddable and must not
reach appearance clustering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .clustering import AggregatedCloud, ObjectProposal
from .dataset import FeatureMap, Frame, project_to_image


@dataclass(frozen=True)
class AppearanceEmbedding:
    proposal_id: int
    vector: np.ndarray  # (C_F,) float32
    coverage: float  # fraction of proposal points with >= 1 camera hit

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding must be finite")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must be within [0, 1]")
        object.__setattr__(self, "vector", vec)


def sample_feature(fmap: FeatureMap, u: float, v: float) -> np.ndarray:
    """Feature cell under pixel (u, v).

    The cell is ``(floor(v / patch), floor(u / patch))``; pixels in a last
    partial patch row/column clamp onto the edge cell. Pixels outside the
    image (negative, or at least one full patch beyond the grid) violate the
    caller contract.
    """
    h_f, w_f, _ = fmap.grid_shape
    patch = fmap.patch_size
    if u < 0 or v < 0 or u >= w_f * patch or v >= h_f * patch:
        raise ValueError(f"pixel ({u}, {v}) outside the image covered by the feature grid")
    row = min(int(v // patch), h_f - 1)
    col = min(int(u // patch), w_f - 1)
    return fmap.data[row, col]


def _cells(uv: np.ndarray, patch_size: int, h_f: int, w_f: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.minimum((uv[:, 1] // patch_size).astype(np.int64), h_f - 1)
    cols = np.minimum((uv[:, 0] // patch_size).astype(np.int64), w_f - 1)
    return rows, cols


def embed_proposal(
    proposal: ObjectProposal,
    agg: AggregatedCloud,
    frames_by_index: Mapping[int, Frame],
) -> AppearanceEmbedding:
    """Average camera features over a proposal's points.

    Returns a zero vector with coverage 0 when no point projects into any
    camera; callers must route such proposals out before clustering.
    """
    feature_dim = None
    total_points = 0
    point_sums = []  # per contributing point: mean feature over its cameras

    for frame_idx, idx in sorted(proposal.slices.items()):
        frame = frames_by_index[frame_idx]
        world = agg.points[idx]
        total_points += idx.size
        per_point_sum = None
        per_point_hits = None
        for calib, fmap_ref in frame.cameras:
            fmap = fmap_ref.load()
            if feature_dim is None:
                feature_dim = fmap.grid_shape[2]
            uv, _, valid = project_to_image(world, calib, frame.ego_pose)
            if not np.any(valid):
                continue
            h_f, w_f, c_f = fmap.grid_shape
            rows, cols = _cells(uv[valid], fmap.patch_size, h_f, w_f)
            feats = fmap.data[rows, cols].astype(np.float64)
            if per_point_sum is None:
                per_point_sum = np.zeros((idx.size, c_f))
                per_point_hits = np.zeros(idx.size, dtype=np.int64)
            per_point_sum[valid] += feats
            per_point_hits[valid] += 1
        if per_point_sum is not None:
            seen = per_point_hits > 0
            if np.any(seen):
                point_sums.append(per_point_sum[seen] / per_point_hits[seen, None])

    if not point_sums or total_points == 0:
        dim = feature_dim if feature_dim is not None else 0
        return AppearanceEmbedding(
            proposal_id=proposal.proposal_id, vector=np.zeros(dim, dtype=np.float32), coverage=0.0
        )

    contributing = np.concatenate(point_sums)
    vector = contributing.mean(axis=0)
    coverage = contributing.shape[0] / total_points
    return AppearanceEmbedding(
        proposal_id=proposal.proposal_id,
        vector=vector.astype(np.float32),
        coverage=float(coverage),
    )
