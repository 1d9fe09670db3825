"""Upright 3D bounding-box fitting and pseudo-label assembly.

The BEV footprint is the minimum-area rotated rectangle of the points'
convex hull (rotating calipers, exact). The vertical extent runs from the
ground plane under the footprint centroid up to the highest point. Fitted
objects emit one box per keyframe within their observed frame span,
propagated with their constant-velocity motion estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Frame
from .errors import DegenerateGeometryError
from .geometry import wrap_angle
from .ground import PlaneModel

DEGENERATE_WIDTH = 0.1  # floor for wall-like point sets, meters


@dataclass(frozen=True)
class PseudoBox:
    center: np.ndarray  # (3,) world meters
    size: np.ndarray  # (l, w, h), l >= w
    yaw: float  # radians in (-pi, pi]
    velocity: np.ndarray  # (vx, vy) m/s
    pseudo_class: int
    frame: int
    score: float = 1.0
    num_points: int = 0
    degenerate: bool = False
    class_name: str | None = None  # set when pseudo-classes were matched to real classes

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3)
        size = np.asarray(self.size, dtype=float).reshape(3)
        vel = np.asarray(self.velocity, dtype=float).reshape(2)
        l, w, h = size
        if not (l >= w > 0 and h > 0):
            raise ValueError(f"box must satisfy l >= w > 0 and h > 0, got {size}")
        if not -math.pi < self.yaw <= math.pi:
            raise ValueError(f"yaw {self.yaw} outside (-pi, pi]")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "velocity", vel)


@dataclass(frozen=True)
class PseudoLabelSet:
    frame: int
    boxes: tuple[PseudoBox, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if any(b.frame != self.frame for b in self.boxes):
            raise ValueError("all boxes must reference the set's frame")
        object.__setattr__(self, "boxes", tuple(self.boxes))


def _convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counter-clockwise, no repeated endpoint."""
    pts = np.unique(points, axis=0)
    if pts.shape[0] <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def build(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                a = out[-1] - out[-2]
                b = p - out[-2]
                if a[0] * b[1] - a[1] * b[0] > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = build(pts)
    upper = build(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(points_xy: np.ndarray) -> tuple[np.ndarray, float, float, float, bool]:
    """Minimum-area rotated rectangle covering the points.

    Returns ``(center_xy, length, width, yaw, degenerate)`` with
    ``length >= width`` and yaw the direction of the longer side wrapped to
    ``(-pi/2, pi/2]``. Collinear inputs are degenerate: the rectangle runs
    along the dominant direction with zero width (callers apply a floor).
    """
    pts = np.asarray(points_xy, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 1:
        raise DegenerateGeometryError("no points to fit a rectangle to")
    hull = _convex_hull_2d(pts)

    if hull.shape[0] <= 2:
        mean = pts.mean(axis=0)
        centered = pts - mean
        cov = centered.T @ centered
        _, vecs = np.linalg.eigh(cov)
        direction = vecs[:, -1]
        normal = np.array([-direction[1], direction[0]])
        proj = centered @ direction
        ortho = centered @ normal
        mid = (
            mean
            + direction * float(proj.max() + proj.min()) / 2.0
            + normal * float(ortho.max() + ortho.min()) / 2.0
        )
        length = float(proj.max() - proj.min())
        width = float(ortho.max() - ortho.min())
        yaw = math.atan2(direction[1], direction[0])
        return mid, length, width, _half_turn(yaw), True

    edges = np.roll(hull, -1, axis=0) - hull
    edge_dirs = edges / np.linalg.norm(edges, axis=1, keepdims=True)

    best = None
    for ex, ey in edge_dirs:
        u = hull @ np.array([ex, ey])
        v = hull @ np.array([-ey, ex])
        du = u.max() - u.min()
        dv = v.max() - v.min()
        area = du * dv
        if best is None or area < best[0]:
            best = (area, ex, ey, u.min(), u.max(), v.min(), v.max())

    _, ex, ey, u0, u1, v0, v1 = best
    center = np.array([ex, ey]) * ((u0 + u1) / 2.0) + np.array([-ey, ex]) * ((v0 + v1) / 2.0)
    if u1 - u0 >= v1 - v0:
        length, width = u1 - u0, v1 - v0
        yaw = math.atan2(ey, ex)
    else:
        length, width = v1 - v0, u1 - u0
        yaw = math.atan2(ex, -ey)
    return center, float(length), float(width), _half_turn(yaw), False


def _half_turn(yaw: float) -> float:
    """Wrap a direction angle into (-pi/2, pi/2] (a rectangle side is a line)."""
    wrapped = math.remainder(yaw, math.pi)
    if wrapped <= -math.pi / 2:
        wrapped += math.pi
    return wrapped


def fit_box(
    points: np.ndarray,
    plane: PlaneModel,
    heading_xy: np.ndarray | None = None,
) -> tuple[np.ndarray, float, float, float, float, bool]:
    """Fit an upright box to points sitting above a ground plane.

    Returns ``(center, l, w, h, yaw, degenerate)``. The box bottom is the
    plane height under the BEV centroid; the top is the highest point. When
    ``heading_xy`` is given (dynamic objects) the yaw is flipped by pi if
    that aligns it with the heading, extending its range to ``(-pi, pi]``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise DegenerateGeometryError(f"need at least 3 points to fit a box, got {pts.shape[0]}")
    center_xy, length, width, yaw, degenerate = min_area_rect(pts[:, :2])
    if width < DEGENERATE_WIDTH:
        width = DEGENERATE_WIDTH
        degenerate = True
    if length < width:
        length = width

    z_ground = plane.z_at(center_xy[0], center_xy[1])
    z_top = float(pts[:, 2].max())
    height = z_top - z_ground
    if height <= 0:
        height = DEGENERATE_WIDTH
        degenerate = True

    if heading_xy is not None and np.linalg.norm(heading_xy) > 0:
        heading = math.atan2(heading_xy[1], heading_xy[0])
        if math.cos(yaw - heading) < 0:
            yaw = wrap_angle(yaw + math.pi)

    center = np.array([center_xy[0], center_xy[1], z_ground + height / 2.0])
    return center, float(length), float(width), float(height), float(yaw), degenerate


@dataclass(frozen=True)
class FittedObject:
    """A fitted box at its center keyframe plus what is needed to re-time it."""

    center: np.ndarray
    length: float
    width: float
    height: float
    yaw: float
    velocity_xy: np.ndarray
    center_frame: int
    frame_span: tuple[int, int]
    pseudo_class: int
    num_points: int
    degenerate: bool = False
    score: float = 1.0
    class_name: str | None = None


def assemble_labels(objects: Sequence[FittedObject], frames: Sequence[Frame]) -> list[PseudoLabelSet]:
    """Emit one box per keyframe within each object's frame span.

    Boxes are translated from the center frame along the object's constant
    velocity. Objects whose span contains no keyframe are emitted at the
    keyframe nearest in time to their center frame.
    """
    keyframes = [f for f in frames if f.is_keyframe]
    if not keyframes:
        return []
    times = {f.index: f.time_s for f in frames}

    boxes_per_frame: dict[int, list[PseudoBox]] = {f.index: [] for f in keyframes}
    for obj in objects:
        lo, hi = obj.frame_span
        targets = [f for f in keyframes if lo <= f.index <= hi]
        if not targets:
            center_time = times.get(obj.center_frame)
            if center_time is None:
                continue
            targets = [min(keyframes, key=lambda f: (abs(f.time_s - center_time), f.index))]
        center_time = times[obj.center_frame]
        for frame in targets:
            span = frame.time_s - center_time
            center = obj.center.copy()
            center[:2] += obj.velocity_xy * span
            boxes_per_frame[frame.index].append(
                PseudoBox(
                    center=center,
                    size=np.array([obj.length, obj.width, obj.height]),
                    yaw=obj.yaw,
                    velocity=obj.velocity_xy,
                    pseudo_class=obj.pseudo_class,
                    frame=frame.index,
                    score=obj.score,
                    num_points=obj.num_points,
                    degenerate=obj.degenerate,
                    class_name=obj.class_name,
                )
            )
    return [PseudoLabelSet(frame=f.index, boxes=tuple(boxes_per_frame[f.index])) for f in keyframes]


# ---------------------------------------------------------------------------
# Pseudo-label file format
# ---------------------------------------------------------------------------


def _box_to_json(box: PseudoBox) -> dict:
    out = {
        "center": [float(v) for v in box.center],
        "size": [float(v) for v in box.size],
        "yaw": float(box.yaw),
        "velocity": [float(v) for v in box.velocity],
        "pseudo_class": int(box.pseudo_class),
        "score": float(box.score),
        "num_points": int(box.num_points),
    }
    if box.class_name is not None:
        out["class_name"] = box.class_name
    return out


def write_pseudo_labels(path, labels_by_scene: dict[str, list[PseudoLabelSet]]) -> None:
    """Write pseudo_labels.json: scene id -> keyframe index -> box list."""
    payload = {
        "scenes": {
            scene: {str(ls.frame): [_box_to_json(b) for b in ls.boxes] for ls in sets}
            for scene, sets in sorted(labels_by_scene.items())
        }
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def read_pseudo_labels(path) -> dict[str, dict[int, list[dict]]]:
    raw = json.loads(Path(path).read_text())
    return {
        scene: {int(frame): boxes for frame, boxes in per_frame.items()}
        for scene, per_frame in raw["scenes"].items()
    }
