"""Reader for the raw capture layout.

A capture directory looks like::

    <root>/<capture_name>/
      capture.json
      lidar/<n>.bin     headerless little-endian float32 (x, y, z, intensity)
      cam/<...>.png     camera images

``capture.json``::

    {
      "name": "...",
      "lidar_extrinsic": {"q": [w,x,y,z], "t": [x,y,z]},   # sensor -> ego
      "frames": [
        {
          "timestamp_us": 1000000,
          "ego_pose": {"q": [...], "t": [...]},            # ego -> world
          "is_keyframe": true,
          "lidar": "lidar/0.bin",
          "cameras": [
            {"id": "front", "image": "cam/0_front.png",
             "intrinsic": [fx,0,cx, 0,fy,cy, 0,0,1],
             "extrinsic": {"q": [...], "t": [...]},        # sensor -> ego
             "width": 896, "height": 504}
          ],
          "annotations": [
            {"center": [x,y,z], "size": [l,w,h], "yaw": 0.0,
             "velocity": [vx,vy], "class_name": "vehicle"}
          ]
        }, ...
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CaptureError(Exception):
    """The capture directory is missing data or malformed."""


@dataclass(frozen=True)
class RawPose:
    q: np.ndarray  # (w, x, y, z), unit
    t: np.ndarray

    @staticmethod
    def from_json(obj) -> "RawPose":
        q = np.asarray(obj["q"], dtype=float)
        t = np.asarray(obj["t"], dtype=float)
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-6:
            raise CaptureError(f"pose quaternion norm {norm} too far from 1")
        return RawPose(q=q / norm, t=t)

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation_matrix().T + self.t


@dataclass(frozen=True)
class RawCamera:
    camera_id: str
    image_path: Path
    intrinsic: np.ndarray
    extrinsic: RawPose
    width: int
    height: int


@dataclass(frozen=True)
class RawFrame:
    timestamp_us: int
    ego_pose: RawPose
    is_keyframe: bool
    lidar_path: Path
    cameras: tuple[RawCamera, ...]
    annotations: tuple[dict, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class RawCapture:
    name: str
    lidar_extrinsic: RawPose
    frames: tuple[RawFrame, ...]


def load_capture(source_root, capture_name: str) -> RawCapture:
    if not capture_name:
        raise CaptureError("capture name must be non-empty")
    cdir = Path(source_root) / capture_name
    meta_path = cdir / "capture.json"
    if not meta_path.is_file():
        raise CaptureError(f"missing capture metadata {meta_path}")
    meta = json.loads(meta_path.read_text())

    frames = []
    for i, rec in enumerate(meta.get("frames", [])):
        cameras = []
        for cam in rec.get("cameras", []):
            for key in ("intrinsic", "extrinsic", "width", "height"):
                if key not in cam:
                    raise CaptureError(
                        f"frame {i} camera {cam.get('id', '?')} is missing calibration field {key!r}"
                    )
            cameras.append(
                RawCamera(
                    camera_id=cam["id"],
                    image_path=cdir / cam["image"],
                    intrinsic=np.asarray(cam["intrinsic"], dtype=float).reshape(3, 3),
                    extrinsic=RawPose.from_json(cam["extrinsic"]),
                    width=int(cam["width"]),
                    height=int(cam["height"]),
                )
            )
        frames.append(
            RawFrame(
                timestamp_us=int(rec["timestamp_us"]),
                ego_pose=RawPose.from_json(rec["ego_pose"]),
                is_keyframe=bool(rec.get("is_keyframe", False)),
                lidar_path=cdir / rec["lidar"],
                cameras=tuple(cameras),
                annotations=tuple(rec.get("annotations", [])),
            )
        )
    return RawCapture(
        name=meta.get("name", capture_name),
        lidar_extrinsic=RawPose.from_json(meta["lidar_extrinsic"]),
        frames=tuple(frames),
    )


def read_raw_lidar(path: Path) -> np.ndarray:
    """Headerless float32 (x, y, z, intensity) records; returns (N, 3) xyz."""
    if not path.is_file():
        raise CaptureError(f"missing lidar file {path}")
    blob = path.read_bytes()
    if len(blob) % 16 != 0:
        raise CaptureError(f"{path}: size {len(blob)} is not a multiple of the 16-byte record")
    data = np.frombuffer(blob, dtype="<f4").reshape(-1, 4)
    return data[:, :3].astype(np.float64)
