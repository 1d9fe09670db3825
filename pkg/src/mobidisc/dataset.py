"""Scene directory layout, in-memory data model, and coordinate transforms.

On-disk layout (all binary data little-endian)::

    scene_<id>/
      frames.json          ordered frame records (see load_scene)
      lidar/<n>.bin        magic "UNPC", u32 count, count x 3 f32 (x, y, z)
      feat/<n>_<cam>.bin   magic "UNFT", u32 H_F, u32 W_F, u32 C_F,
                           u32 patch_size, then H_F*W_F*C_F f32 channels-last
      gt.json              per keyframe: list of ground-truth boxes
                           (evaluation only)

LiDAR clouds are stored in the ego frame at their timestamp; the ego pose
maps ego -> world. Camera extrinsics map sensor -> ego.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, SceneLoadError
from .geometry import Pose

LIDAR_MAGIC = b"UNPC"
FEATURE_MAGIC = b"UNFT"


@dataclass(frozen=True)
class LidarCloud:
    """One sweep: (L, 3) float32 xyz in the ego frame, microsecond timestamp."""

    points: np.ndarray
    timestamp_us: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("lidar cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "timestamp_us", int(self.timestamp_us))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CameraCalib:
    camera_id: str
    intrinsic: np.ndarray
    extrinsic: Pose
    image_size: tuple[int, int]  # (W, H) pixels

    def __post_init__(self):
        k = np.asarray(self.intrinsic, dtype=float).reshape(3, 3)
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("intrinsic focal entries must be positive")
        if any(abs(k[i, j]) > 0 for i, j in ((1, 0), (2, 0), (2, 1))):
            raise ValueError("intrinsic lower-left triangle must be zero")
        if abs(k[2, 2] - 1.0) > 1e-12:
            raise ValueError("intrinsic[2,2] must be 1")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "intrinsic", k)
        object.__setattr__(self, "image_size", (int(w), int(h)))


@dataclass(frozen=True)
class FeatureMap:
    """Patch feature grid for one camera image, channels-last float32."""

    data: np.ndarray  # (H_F, W_F, C_F)
    patch_size: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError("feature map must be (H_F, W_F, C_F)")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map contains non-finite values")
        if self.patch_size <= 0:
            raise ValueError("patch size must be positive")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "patch_size", int(self.patch_size))

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.data.shape


class FeatureMapRef:
    """Lazily loaded feature map. The header is validated eagerly."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.grid_shape, self.patch_size = _read_feature_header(self.path)
        self._cached: FeatureMap | None = None

    def load(self) -> FeatureMap:
        if self._cached is None:
            self._cached = read_feature_bin(self.path)
        return self._cached


@dataclass(frozen=True)
class Frame:
    index: int
    cloud: LidarCloud
    ego_pose: Pose
    cameras: tuple[tuple[CameraCalib, FeatureMapRef], ...]
    is_keyframe: bool = True

    def __post_init__(self):
        ids = [calib.camera_id for calib, _ in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate camera ids in frame {self.index}: {ids}")
        object.__setattr__(self, "cameras", tuple(self.cameras))

    @property
    def timestamp_us(self) -> int:
        return self.cloud.timestamp_us

    @property
    def time_s(self) -> float:
        return self.cloud.timestamp_us * 1e-6


@dataclass(frozen=True)
class GroundTruthBox:
    center: np.ndarray  # (3,) world
    size: np.ndarray  # (l, w, h)
    yaw: float
    velocity: np.ndarray  # (vx, vy)
    class_name: str


# ---------------------------------------------------------------------------
# Binary formats
# ---------------------------------------------------------------------------


def write_lidar_bin(path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 3))
    with open(path, "wb") as fh:
        fh.write(LIDAR_MAGIC)
        fh.write(struct.pack("<I", pts.shape[0]))
        fh.write(pts.tobytes())


def read_lidar_bin(path, timestamp_us: int = 0) -> LidarCloud:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise SceneLoadError(f"cannot read lidar file {path}: {exc}") from exc
    if len(blob) < 8:
        raise FormatError(path, 0, f"file too short for header ({len(blob)} bytes)")
    if blob[:4] != LIDAR_MAGIC:
        raise FormatError(path, 0, f"bad magic {blob[:4]!r}, expected {LIDAR_MAGIC!r}")
    (count,) = struct.unpack_from("<I", blob, 4)
    payload = len(blob) - 8
    if payload % 12 != 0:
        raise FormatError(path, 8, f"payload of {payload} bytes is not a multiple of the 12-byte record")
    if payload != count * 12:
        raise FormatError(path, 4, f"header count {count} disagrees with {payload // 12} stored records")
    pts = np.frombuffer(blob, dtype="<f4", count=count * 3, offset=8).reshape(count, 3)
    return LidarCloud(points=pts.copy(), timestamp_us=timestamp_us)


def write_feature_bin(path, fmap: FeatureMap) -> None:
    h, w, c = fmap.grid_shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIII", h, w, c, fmap.patch_size))
        fh.write(np.ascontiguousarray(fmap.data.astype("<f4")).tobytes())


def _read_feature_header(path: Path) -> tuple[tuple[int, int, int], int]:
    try:
        with open(path, "rb") as fh:
            head = fh.read(20)
    except OSError as exc:
        raise SceneLoadError(f"cannot read feature file {path}: {exc}") from exc
    if len(head) < 20:
        raise FormatError(path, 0, f"file too short for header ({len(head)} bytes)")
    if head[:4] != FEATURE_MAGIC:
        raise FormatError(path, 0, f"bad magic {head[:4]!r}, expected {FEATURE_MAGIC!r}")
    hf, wf, cf, patch = struct.unpack_from("<IIII", head, 4)
    if patch == 0:
        raise FormatError(path, 16, "patch size must be positive")
    return (hf, wf, cf), patch


def read_feature_bin(path) -> FeatureMap:
    path = Path(path)
    (hf, wf, cf), patch = _read_feature_header(path)
    blob = path.read_bytes()
    expected = hf * wf * cf
    payload = len(blob) - 20
    if payload != expected * 4:
        raise FormatError(path, 20, f"expected {expected} f32 values, found {payload // 4}")
    data = np.frombuffer(blob, dtype="<f4", count=expected, offset=20).reshape(hf, wf, cf)
    return FeatureMap(data=data.copy(), patch_size=patch)


# ---------------------------------------------------------------------------
# Scene loading / writing
# ---------------------------------------------------------------------------


def _pose_from_json(obj) -> Pose:
    return Pose(np.asarray(obj["q"], dtype=float), np.asarray(obj["t"], dtype=float))


def _pose_to_json(pose: Pose) -> dict:
    return {"q": [float(v) for v in pose.rotation], "t": [float(v) for v in pose.translation]}


def scene_dir(root, scene_id: str) -> Path:
    return Path(root) / f"scene_{scene_id}"


def list_scene_ids(root) -> list[str]:
    root = Path(root)
    if not root.is_dir():
        raise SceneLoadError(f"dataset root {root} is not a directory")
    ids = sorted(p.name[len("scene_"):] for p in root.iterdir() if p.is_dir() and p.name.startswith("scene_"))
    return ids


def load_scene(root, scene_id: str) -> list[Frame]:
    """Load one scene; frames are returned ordered by timestamp.

    Feature maps are validated (header only) but loaded lazily on access.
    """
    sdir = scene_dir(root, scene_id)
    meta_path = sdir / "frames.json"
    if not meta_path.is_file():
        raise SceneLoadError(f"missing scene metadata {meta_path}")
    try:
        records = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(meta_path, exc.pos, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(records, list):
        raise FormatError(meta_path, 0, "frames.json must contain a list of frame records")

    frames = []
    for rec in records:
        lidar_path = sdir / rec["lidar_file"]
        if not lidar_path.is_file():
            raise SceneLoadError(f"missing lidar file {lidar_path}")
        cloud = read_lidar_bin(lidar_path, timestamp_us=rec["timestamp_us"])
        cameras = []
        for cam in rec.get("cameras", []):
            calib = CameraCalib(
                camera_id=cam["id"],
                intrinsic=np.asarray(cam["intrinsic"], dtype=float).reshape(3, 3),
                extrinsic=_pose_from_json(cam["extrinsic"]),
                image_size=(cam["width"], cam["height"]),
            )
            feat_path = sdir / cam["feature_file"]
            if not feat_path.is_file():
                raise SceneLoadError(f"missing feature file {feat_path}")
            cameras.append((calib, FeatureMapRef(feat_path)))
        frames.append(
            Frame(
                index=int(rec["index"]),
                cloud=cloud,
                ego_pose=_pose_from_json(rec["ego_pose"]),
                cameras=tuple(cameras),
                is_keyframe=bool(rec.get("is_keyframe", True)),
            )
        )

    frames.sort(key=lambda f: f.timestamp_us)
    for prev, cur in zip(frames, frames[1:]):
        if cur.timestamp_us <= prev.timestamp_us:
            raise FormatError(meta_path, 0, f"timestamps not strictly increasing at frame index {cur.index}")
    indices = [f.index for f in frames]
    if len(set(indices)) != len(indices):
        raise FormatError(meta_path, 0, "frame indices are not unique")
    return frames


def write_frames_json(sdir: Path, records: list[dict]) -> None:
    (Path(sdir) / "frames.json").write_text(json.dumps(records, indent=1, sort_keys=True))


def frame_record(
    index: int,
    timestamp_us: int,
    ego_pose: Pose,
    is_keyframe: bool,
    lidar_file: str,
    cameras: list[dict],
) -> dict:
    return {
        "index": index,
        "timestamp_us": int(timestamp_us),
        "ego_pose": _pose_to_json(ego_pose),
        "is_keyframe": bool(is_keyframe),
        "lidar_file": lidar_file,
        "cameras": cameras,
    }


def camera_record(
    camera_id: str, intrinsic: np.ndarray, extrinsic: Pose, width: int, height: int, feature_file: str
) -> dict:
    return {
        "id": camera_id,
        "intrinsic": [float(v) for v in np.asarray(intrinsic, dtype=float).reshape(9)],
        "extrinsic": _pose_to_json(extrinsic),
        "width": int(width),
        "height": int(height),
        "feature_file": feature_file,
    }


def load_ground_truth(sdir) -> dict[int, list[GroundTruthBox]]:
    """Read gt.json: map keyframe index -> list of ground-truth boxes."""
    path = Path(sdir) / "gt.json"
    if not path.is_file():
        raise SceneLoadError(f"missing ground truth {path}")
    raw = json.loads(path.read_text())
    out: dict[int, list[GroundTruthBox]] = {}
    for key, boxes in raw.items():
        out[int(key)] = [
            GroundTruthBox(
                center=np.asarray(b["center"], dtype=float),
                size=np.asarray(b["size"], dtype=float),
                yaw=float(b["yaw"]),
                velocity=np.asarray(b["velocity"], dtype=float),
                class_name=str(b["class_name"]),
            )
            for b in boxes
        ]
    return out


def write_ground_truth(sdir, gt: dict[int, list[dict]]) -> None:
    path = Path(sdir) / "gt.json"
    path.write_text(json.dumps({str(k): v for k, v in sorted(gt.items())}, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def to_world(cloud: LidarCloud, sensor_pose: Pose, ego_pose: Pose) -> np.ndarray:
    """Map sensor-frame points to world coordinates via ego_pose o sensor_pose."""
    return ego_pose.compose(sensor_pose).apply(cloud.points.astype(float))


def project_to_image(
    points_world: np.ndarray, calib: CameraCalib, ego_pose: Pose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points through a pinhole camera.

    Returns ``(uv, depth, valid)``. A point is valid iff its camera depth is
    positive and the pixel lands inside ``0 <= u < W``, ``0 <= v < H``
    (upper bounds exclusive). uv/depth entries of invalid points are
    unspecified.
    """
    pts = np.asarray(points_world, dtype=float).reshape(-1, 3)
    cam_from_world = calib.extrinsic.inverse().compose(ego_pose.inverse())
    pts_cam = cam_from_world.apply(pts)
    depth = pts_cam[:, 2]
    proj = pts_cam @ calib.intrinsic.T
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = proj[:, :2] / proj[:, 2:3]
    w, h = calib.image_size
    valid = (depth > 0) & (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
    valid &= np.all(np.isfinite(uv), axis=1)
    return uv, depth, valid
