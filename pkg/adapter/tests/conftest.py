"""Fixture: a tiny raw capture with rendered images and annotations."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest
from PIL import Image, ImageDraw


def _pose(q=(1.0, 0.0, 0.0, 0.0), t=(0.0, 0.0, 0.0)) -> dict:
    return {"q": list(q), "t": list(t)}


def _yaw_pose(yaw: float, t) -> dict:
    return _pose((math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)), t)


def build_capture(
    root: Path,
    name: str = "cap0",
    n_frames: int = 4,
    keyframe_stride: int = 2,
    n_cameras: int = 2,
    width: int = 168,
    height: int = 98,
) -> Path:
    cdir = root / name
    (cdir / "lidar").mkdir(parents=True)
    (cdir / "cam").mkdir()
    rng = np.random.default_rng(0)

    # camera looking along +x, mounted 1.6 m up; second camera along +y
    focal = width / 2.0
    intrinsic = [focal, 0.0, width / 2.0, 0.0, focal, height / 2.0, 0.0, 0.0, 1.0]

    def cam_extrinsic(heading):
        forward = np.array([math.cos(heading), math.sin(heading), 0.0])
        right = np.array([forward[1], -forward[0], 0.0])
        down = np.array([0.0, 0.0, -1.0])
        rot = np.column_stack([right, down, forward])
        w = math.sqrt(max(0.0, 1.0 + rot[0, 0] + rot[1, 1] + rot[2, 2])) / 2.0
        if w > 1e-9:
            q = [
                w,
                (rot[2, 1] - rot[1, 2]) / (4 * w),
                (rot[0, 2] - rot[2, 0]) / (4 * w),
                (rot[1, 0] - rot[0, 1]) / (4 * w),
            ]
        else:  # heading pi: 180-degree turn about z after the axis swap
            q = [0.0, rot[0, 1], 0.0, math.sqrt((1 + rot[2, 2]) / 2)]
        norm = math.sqrt(sum(v * v for v in q))
        return {"q": [v / norm for v in q], "t": [0.0, 0.0, 1.6]}

    frames = []
    for i in range(n_frames):
        # lidar in the sensor frame (extrinsic below lifts it 1.7 m)
        pts = np.column_stack(
            [
                rng.uniform(-8, 8, 120),
                rng.uniform(-8, 8, 120),
                rng.uniform(-1.7, 0.5, 120),
                rng.uniform(0, 1, 120),
            ]
        ).astype("<f4")
        (cdir / f"lidar/{i}.bin").write_bytes(pts.tobytes())

        cams = []
        for c in range(n_cameras):
            img = Image.new("RGB", (width, height), (30, 60, 90))
            draw = ImageDraw.Draw(img)
            draw.rectangle([10 + 5 * i, 20, 60 + 5 * i, 70], fill=(200, 40 + 20 * c, 40))
            img_path = cdir / f"cam/{i}_{c}.png"
            img.save(img_path)
            cams.append(
                {
                    "id": f"cam{c}",
                    "image": f"cam/{i}_{c}.png",
                    "intrinsic": intrinsic,
                    "extrinsic": cam_extrinsic(c * math.pi / 2),
                    "width": width,
                    "height": height,
                }
            )
        frames.append(
            {
                "timestamp_us": 1_000_000 + 100_000 * i,
                "ego_pose": _yaw_pose(0.01 * i, (0.5 * i, 0.0, 0.0)),
                "is_keyframe": i % keyframe_stride == 0,
                "lidar": f"lidar/{i}.bin",
                "cameras": cams,
                "annotations": [
                    {
                        "center": [5.0 + 0.5 * i, 1.0, 0.8],
                        "size": [4.0, 2.0, 1.6],
                        "yaw": 0.0,
                        "velocity": [1.0, 0.0],
                        "class_name": "vehicle",
                    }
                ],
            }
        )

    meta = {
        "name": name,
        "lidar_extrinsic": _pose(t=(0.0, 0.0, 1.7)),
        "frames": frames,
    }
    (cdir / "capture.json").write_text(json.dumps(meta, indent=1))
    return cdir


@pytest.fixture()
def capture_root(tmp_path) -> Path:
    build_capture(tmp_path / "raw")
    return tmp_path / "raw"
