"""Synthetic benchmark scenes: box-shaped objects on a flat ground plane.

Clouds are simulated by sampling the surfaces of object boxes along their
trajectories plus a noisy ground plane. Cameras form a horizontal ring at
the origin; per-camera feature maps assign every scene element a distinct
constant archetype vector (plus noise), painted far-to-near so that each
LiDAR point samples the feature of the element it belongs to. Ground truth
is exact and written for mobile-class objects only; background boxes go to
a separate sidecar file for precision checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    CameraCalib,
    FeatureMap,
    camera_record,
    frame_record,
    scene_dir,
    write_feature_bin,
    write_frames_json,
    write_ground_truth,
    write_lidar_bin,
)
from .errors import ConfigError
from .geometry import Pose, matrix_to_quat, wrap_angle


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    archetype: str
    size: tuple[float, float, float]  # (l, w, h)
    start_xy: tuple[float, float]
    velocity_xy: tuple[float, float] = (0.0, 0.0)
    yaw: float | None = None  # moving objects default to their heading
    points_per_frame: int = 100
    class_name: str | None = None  # None marks a background element

    @property
    def is_background(self) -> bool:
        return self.class_name is None

    def yaw_at(self) -> float:
        if self.yaw is not None:
            return float(self.yaw)
        vx, vy = self.velocity_xy
        if vx == 0.0 and vy == 0.0:
            return 0.0
        return math.atan2(vy, vx)

    def center_xy_at(self, t: float) -> np.ndarray:
        return np.asarray(self.start_xy, dtype=float) + np.asarray(self.velocity_xy, dtype=float) * t


@dataclass(frozen=True)
class ScenarioSpec:
    scene_id: str
    frame_count: int = 15
    frame_interval_s: float = 0.5
    keyframe_stride: int = 1
    ground_half_extent: float = 22.0
    ground_points_per_frame: int = 900
    ground_z_sigma: float = 0.005
    point_sigma: float = 0.01
    feature_sigma: float = 0.02
    feature_channels: int = 16
    patch_size: int = 14
    camera_count: int = 4
    camera_width: int = 896
    camera_height: int = 504
    camera_fov_deg: float = 100.0
    camera_height_m: float = 1.8
    objects: tuple[ObjectSpec, ...] = field(default_factory=tuple)

    def archetypes(self) -> list[str]:
        return sorted({o.archetype for o in self.objects})

    def validate(self) -> None:
        if self.frame_count < 1:
            raise ConfigError("frame_count must be positive")
        if self.frame_interval_s <= 0:
            raise ConfigError("frame_interval_s must be positive")
        if self.keyframe_stride < 1:
            raise ConfigError("keyframe_stride must be positive")
        names = [o.name for o in self.objects]
        if len(set(names)) != len(names):
            raise ConfigError("object names must be unique")
        n_arch = len(self.archetypes())
        if self.feature_channels < n_arch + 1:
            raise ConfigError(
                f"feature_channels={self.feature_channels} cannot encode {n_arch} archetypes"
            )
        for o in self.objects:
            if min(o.size) <= 0:
                raise ConfigError(f"object {o.name!r} has non-positive size")
            if o.points_per_frame < 1:
                raise ConfigError(f"object {o.name!r} needs at least one point per frame")


def load_scenario(path) -> ScenarioSpec:
    raw = json.loads(Path(path).read_text())
    objects = []
    for o in raw.get("objects", []):
        start = o.get("start_xy", o.get("center_xy"))
        if start is None:
            raise ConfigError(f"object {o.get('name', '?')!r} needs start_xy or center_xy")
        objects.append(
            ObjectSpec(
                name=o["name"],
                archetype=o["archetype"],
                size=tuple(o["size"]),
                start_xy=tuple(start),
                velocity_xy=tuple(o.get("velocity_xy", (0.0, 0.0))),
                yaw=o.get("yaw"),
                points_per_frame=int(o.get("points_per_frame", 100)),
                class_name=o.get("class_name"),
            )
        )
    known = {
        "scene_id", "frame_count", "frame_interval_s", "keyframe_stride",
        "ground_half_extent", "ground_points_per_frame", "ground_z_sigma",
        "point_sigma", "feature_sigma", "feature_channels", "patch_size",
        "camera_count", "camera_width", "camera_height", "camera_fov_deg",
        "camera_height_m", "objects",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
    kwargs = {k: v for k, v in raw.items() if k != "objects"}
    spec = ScenarioSpec(objects=tuple(objects), **kwargs)
    spec.validate()
    return spec


def _sample_box_surface(
    rng: np.random.Generator, size: tuple[float, float, float], count: int
) -> np.ndarray:
    """Uniform samples over a box's surface (bottom face excluded), centered
    at the footprint center with z in [0, h]."""
    l, w, h = size
    faces = [
        ("top", l * w),
        ("front", w * h),
        ("back", w * h),
        ("left", l * h),
        ("right", l * h),
    ]
    areas = np.array([a for _, a in faces])
    choice = rng.choice(len(faces), size=count, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=count)
    v = rng.uniform(0.0, 1.0, size=count)
    pts = np.empty((count, 3))
    for i, (face, _) in enumerate(faces):
        m = choice == i
        if face == "top":
            pts[m] = np.column_stack([u[m] * l, (v[m] - 0.5) * w, np.full(m.sum(), h)])
        elif face == "front":
            pts[m] = np.column_stack([np.full(m.sum(), l / 2), u[m] * w, v[m] * h])
        elif face == "back":
            pts[m] = np.column_stack([np.full(m.sum(), -l / 2), u[m] * w, v[m] * h])
        elif face == "left":
            pts[m] = np.column_stack([u[m] * l, np.full(m.sum(), w / 2), v[m] * h])
        else:
            pts[m] = np.column_stack([u[m] * l, np.full(m.sum(), -w / 2), v[m] * h])
    return pts


def _object_points(
    rng: np.random.Generator, obj: ObjectSpec, t: float, point_sigma: float
) -> np.ndarray:
    local = _sample_box_surface(rng, obj.size, obj.points_per_frame)
    yaw = obj.yaw_at()
    rot = np.array([[math.cos(yaw), -math.sin(yaw)], [math.sin(yaw), math.cos(yaw)]])
    pts = local.copy()
    pts[:, :2] = local[:, :2] @ rot.T + obj.center_xy_at(t)
    return pts + rng.normal(0.0, point_sigma, size=pts.shape)


def _ring_cameras(spec: ScenarioSpec) -> list[CameraCalib]:
    w, h = spec.camera_width, spec.camera_height
    focal = (w / 2.0) / math.tan(math.radians(spec.camera_fov_deg) / 2.0)
    intrinsic = np.array([[focal, 0.0, w / 2.0], [0.0, focal, h / 2.0], [0.0, 0.0, 1.0]])
    cams = []
    for i in range(spec.camera_count):
        heading = 2.0 * math.pi * i / spec.camera_count
        forward = np.array([math.cos(heading), math.sin(heading), 0.0])
        right = np.array([forward[1], -forward[0], 0.0])
        down = np.array([0.0, 0.0, -1.0])
        rot = np.column_stack([right, down, forward])  # camera axes in ego coords
        pose = Pose(matrix_to_quat(rot), np.array([0.0, 0.0, spec.camera_height_m]))
        cams.append(
            CameraCalib(camera_id=f"cam{i}", intrinsic=intrinsic, extrinsic=pose, image_size=(w, h))
        )
    return cams


def _archetype_vectors(spec: ScenarioSpec) -> dict[str, np.ndarray]:
    """Archetype i gets unit vector e_{i+1}; e_0 is reserved for 'nothing'."""
    vecs = {}
    for i, name in enumerate(spec.archetypes()):
        v = np.zeros(spec.feature_channels, dtype=np.float32)
        v[i + 1] = 1.0
        vecs[name] = v
    return vecs


def generate_scene(spec: ScenarioSpec, out_root, seed: int = 0) -> Path:
    """Write a full scene directory (frames, clouds, feature maps, gt).

    Deterministic per seed; the ground-truth geometry depends only on the
    scenario, never on the seed.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    out_root = Path(out_root)
    sdir = scene_dir(out_root, spec.scene_id)
    (sdir / "lidar").mkdir(parents=True, exist_ok=True)
    (sdir / "feat").mkdir(parents=True, exist_ok=True)

    cameras = _ring_cameras(spec)
    archetype_vec = _archetype_vectors(spec)
    h_f = -(-spec.camera_height // spec.patch_size)
    w_f = -(-spec.camera_width // spec.patch_size)

    records = []
    gt: dict[int, list[dict]] = {}
    background: dict[int, list[dict]] = {}
    for fi in range(spec.frame_count):
        t = fi * spec.frame_interval_s
        timestamp_us = 1_000_000 + int(round(t * 1e6))
        is_keyframe = fi % spec.keyframe_stride == 0

        ground = np.column_stack(
            [
                rng.uniform(-spec.ground_half_extent, spec.ground_half_extent, spec.ground_points_per_frame),
                rng.uniform(-spec.ground_half_extent, spec.ground_half_extent, spec.ground_points_per_frame),
                rng.normal(0.0, spec.ground_z_sigma, spec.ground_points_per_frame),
            ]
        )
        element_points = [(obj, _object_points(rng, obj, t, spec.point_sigma)) for obj in spec.objects]
        cloud = np.concatenate([ground] + [p for _, p in element_points]) if element_points else ground
        lidar_file = f"lidar/{fi}.bin"
        write_lidar_bin(sdir / lidar_file, cloud)

        cam_records = []
        for cam in cameras:
            fmap = _paint_feature_map(
                rng, spec, cam, element_points, archetype_vec, int(h_f), int(w_f)
            )
            feat_file = f"feat/{fi}_{cam.camera_id}.bin"
            write_feature_bin(sdir / feat_file, fmap)
            cam_records.append(
                camera_record(
                    cam.camera_id, cam.intrinsic, cam.extrinsic,
                    spec.camera_width, spec.camera_height, feat_file,
                )
            )
        records.append(
            frame_record(fi, timestamp_us, Pose.identity(), is_keyframe, lidar_file, cam_records)
        )

        if is_keyframe:
            gt[fi] = []
            background[fi] = []
            for obj in spec.objects:
                cx, cy = obj.center_xy_at(t)
                entry = {
                    "center": [float(cx), float(cy), obj.size[2] / 2.0],
                    "size": [float(v) for v in obj.size],
                    "yaw": wrap_angle(obj.yaw_at()),
                    "velocity": [float(v) for v in obj.velocity_xy],
                    "class_name": obj.class_name or "background",
                }
                (background if obj.is_background else gt)[fi].append(entry)

    write_frames_json(sdir, records)
    write_ground_truth(sdir, gt)
    (sdir / "background.json").write_text(
        json.dumps({str(k): v for k, v in sorted(background.items())}, indent=1, sort_keys=True)
    )
    return sdir


def _paint_feature_map(
    rng: np.random.Generator,
    spec: ScenarioSpec,
    cam: CameraCalib,
    element_points: list[tuple[ObjectSpec, np.ndarray]],
    archetype_vec: dict[str, np.ndarray],
    h_f: int,
    w_f: int,
) -> FeatureMap:
    from .dataset import project_to_image

    void = np.zeros(spec.feature_channels, dtype=np.float32)
    void[0] = 1.0
    data = np.tile(void, (h_f, w_f, 1))
    data += rng.normal(0.0, spec.feature_sigma, size=data.shape).astype(np.float32)

    cam_pos = cam.extrinsic.translation
    ordered = sorted(
        element_points,
        key=lambda op: -np.linalg.norm(np.mean(op[1], axis=0) - cam_pos),
    )
    for obj, pts in ordered:
        uv, _, valid = project_to_image(pts, cam, Pose.identity())
        if not np.any(valid):
            continue
        rows = np.minimum((uv[valid, 1] // spec.patch_size).astype(int), h_f - 1)
        cols = np.minimum((uv[valid, 0] // spec.patch_size).astype(int), w_f - 1)
        cells = np.unique(np.column_stack([rows, cols]), axis=0)
        noise = rng.normal(0.0, spec.feature_sigma, size=(cells.shape[0], spec.feature_channels))
        data[cells[:, 0], cells[:, 1]] = archetype_vec[obj.archetype] + noise.astype(np.float32)
    return FeatureMap(data=data, patch_size=spec.patch_size)
