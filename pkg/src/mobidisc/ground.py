"""Per-frame ground plane fitting (RANSAC) and non-ground point extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import LidarCloud
from .errors import DegenerateGeometryError
from .geometry import Pose, quat_to_matrix

MAX_TILT_DEG = 30.0  # candidate planes steeper than this are not ground


@dataclass(frozen=True)
class PlaneModel:
    """Plane ``normal . p = offset`` with unit normal pointing upward (z > 0)."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        if n[2] <= 0:
            raise ValueError("plane normal must point upward")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def height_above(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float).reshape(-1, 3) @ self.normal - self.offset

    def z_at(self, x: float, y: float) -> float:
        nx, ny, nz = self.normal
        return (self.offset - nx * x - ny * y) / nz

    def transformed(self, pose: Pose) -> "PlaneModel":
        """The same plane expressed in the parent frame of ``pose``."""
        rot = quat_to_matrix(pose.rotation)
        n = rot @ self.normal
        offset = self.offset + float(n @ pose.translation)
        if n[2] < 0:
            n, offset = -n, -offset
        return PlaneModel(normal=n, offset=offset)


@dataclass(frozen=True)
class NonGroundCloud:
    """Indices of a source cloud's points that sit above the ground plane."""

    indices: np.ndarray
    frame_index: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.size


def _lsq_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares plane through a point set; returns (unit normal, offset)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    if normal[2] < 0:
        normal = -normal
    return normal, float(normal @ centroid)


def fit_ground_plane(
    points: np.ndarray,
    inlier_threshold: float = 0.05,
    max_iterations: int = 200,
    seed: int = 0,
) -> PlaneModel:
    """RANSAC plane fit with a least-squares refit on the winning inlier set.

    Candidate planes tilted more than ``MAX_TILT_DEG`` away from +z are
    rejected during sampling so walls cannot win. Deterministic for a fixed
    seed; the candidate with the highest inlier count wins, earlier
    iterations win ties.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if n < 3:
        raise DegenerateGeometryError(f"need at least 3 points to fit a plane, got {n}")

    rng = np.random.default_rng(seed)
    min_nz = math.cos(math.radians(MAX_TILT_DEG))
    best_count = -1
    best_mask = None
    for _ in range(max_iterations):
        idx = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        if normal[2] < 0:
            normal = -normal
        if normal[2] < min_nz:
            continue
        offset = float(normal @ p0)
        mask = np.abs(pts @ normal - offset) <= inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask

    if best_mask is None or best_count < 3:
        raise DegenerateGeometryError("no valid plane candidate found (collinear or too-steep points)")

    normal, offset = _lsq_plane(pts[best_mask])
    return PlaneModel(normal=normal, offset=offset)


def extract_non_ground(
    cloud: LidarCloud, plane: PlaneModel, height_cutoff: float = 0.30, frame_index: int = -1
) -> NonGroundCloud:
    """Indices of points strictly more than ``height_cutoff`` above the plane."""
    heights = plane.height_above(cloud.points)
    idx = np.nonzero(heights > height_cutoff)[0]
    return NonGroundCloud(indices=idx.astype(np.int64), frame_index=frame_index)
