"""Scene export: raw capture -> mobidisc scene directory + manifest."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import EncodedImage, nearest_valid_size
from .raw import RawCamera, load_capture, read_raw_lidar

LIDAR_MAGIC = b"UNPC"
FEATURE_MAGIC = b"UNFT"


class ExportError(Exception):
    pass


@dataclass
class ExportManifest:
    source: str
    encoder: str
    patch_size: int
    feature_channels: int
    scenes: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "encoder": self.encoder,
            "patch_size": self.patch_size,
            "feature_channels": self.feature_channels,
            "scenes": self.scenes,
        }


def _write_lidar(path: Path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(points.astype("<f4").reshape(-1, 3))
    with open(path, "wb") as fh:
        fh.write(LIDAR_MAGIC)
        fh.write(struct.pack("<I", pts.shape[0]))
        fh.write(pts.tobytes())


def _write_feature(path: Path, encoded: EncodedImage) -> None:
    h_f, w_f, c_f = encoded.data.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIII", h_f, w_f, c_f, encoded.patch_size))
        fh.write(np.ascontiguousarray(encoded.data.astype("<f4")).tobytes())


def _pose_json(pose) -> dict:
    return {"q": [float(v) for v in pose.q], "t": [float(v) for v in pose.t]}


def resize_policy(camera: RawCamera, patch_size: int) -> tuple[tuple[int, int], np.ndarray]:
    """Resized (W, H) accepted by the encoder plus the rescaled intrinsics.

    Pixel coordinates scale linearly with the image, so focal lengths and
    principal point scale by the per-axis resize factors.
    """
    new_w, new_h = nearest_valid_size(camera.width, camera.height, patch_size)
    sx, sy = new_w / camera.width, new_h / camera.height
    scaled = camera.intrinsic.copy()
    scaled[0, :] *= sx
    scaled[1, :] *= sy
    return (new_w, new_h), scaled


def export_scene(source_root, capture_name: str, out_root, encoder) -> dict:
    """Write one capture as a scene directory; returns its manifest entry."""
    capture = load_capture(source_root, capture_name)
    out_root = Path(out_root)
    sdir = out_root / f"scene_{capture_name}"
    (sdir / "lidar").mkdir(parents=True, exist_ok=True)
    (sdir / "feat").mkdir(exist_ok=True)

    feature_channels = None
    records = []
    gt: dict[str, list] = {}
    skipped_images: list[str] = []
    for index, frame in enumerate(capture.frames):
        ego_points = capture.lidar_extrinsic.apply(read_raw_lidar(frame.lidar_path))
        lidar_file = f"lidar/{index}.bin"
        _write_lidar(sdir / lidar_file, ego_points)

        cam_records = []
        for cam in frame.cameras:
            if not cam.image_path.is_file():
                raise ExportError(f"missing image {cam.image_path}")
            feat_file = f"feat/{index}_{cam.camera_id}.bin"
            try:
                encoded = encoder.encode(cam.image_path)
            except OSError as exc:
                skipped_images.append(str(cam.image_path))
                raise ExportError(f"cannot encode {cam.image_path}: {exc}") from exc
            (new_w, new_h), scaled_intrinsic = resize_policy(cam, encoder.patch_size)
            if encoded.input_size != (new_w, new_h):
                raise ExportError(
                    f"{cam.image_path}: encoder produced {encoded.input_size}, expected {(new_w, new_h)}"
                )
            if feature_channels is None:
                feature_channels = encoded.data.shape[2]
            elif feature_channels != encoded.data.shape[2]:
                raise ExportError(
                    f"{cam.image_path}: feature channels {encoded.data.shape[2]} != manifest {feature_channels}"
                )
            _write_feature(sdir / feat_file, encoded)
            cam_records.append(
                {
                    "id": cam.camera_id,
                    "intrinsic": [float(v) for v in scaled_intrinsic.reshape(9)],
                    "extrinsic": _pose_json(cam.extrinsic),
                    "width": new_w,
                    "height": new_h,
                    "feature_file": feat_file,
                }
            )

        records.append(
            {
                "index": index,
                "timestamp_us": frame.timestamp_us,
                "ego_pose": _pose_json(frame.ego_pose),
                "is_keyframe": frame.is_keyframe,
                "lidar_file": lidar_file,
                "cameras": cam_records,
            }
        )
        if frame.is_keyframe:
            gt[str(index)] = [
                {
                    "center": [float(v) for v in ann["center"]],
                    "size": [float(v) for v in ann["size"]],
                    "yaw": float(ann["yaw"]),
                    "velocity": [float(v) for v in ann.get("velocity", (0.0, 0.0))],
                    "class_name": str(ann["class_name"]),
                }
                for ann in frame.annotations
            ]

    (sdir / "frames.json").write_text(json.dumps(records, indent=1, sort_keys=True))
    (sdir / "gt.json").write_text(json.dumps(gt, indent=1, sort_keys=True))
    return {
        "scene_id": capture_name,
        "frames": len(records),
        "keyframes": sum(1 for r in records if r["is_keyframe"]),
        "cameras_per_frame": len(capture.frames[0].cameras) if capture.frames else 0,
        "feature_channels": feature_channels or 0,
        "skipped_images": skipped_images,
    }


def export_dataset(source_root, capture_names, out_root, encoder) -> ExportManifest:
    """Export several captures and write ``manifest.json`` next to them."""
    if not capture_names:
        raise ExportError("no captures selected for export")
    manifest = ExportManifest(
        source=str(source_root),
        encoder=encoder.identifier,
        patch_size=encoder.patch_size,
        feature_channels=0,
    )
    for name in capture_names:
        entry = export_scene(source_root, name, out_root, encoder)
        manifest.scenes.append(entry)
        manifest.feature_channels = entry["feature_channels"] or manifest.feature_channels
    out_root = Path(out_root)
    (out_root / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=1, sort_keys=True))
    return manifest


def verify_against_manifest(out_root) -> list[str]:
    """Check every exported UNFT header against manifest.json.

    Returns a list of problems (empty when consistent).
    """
    out_root = Path(out_root)
    manifest = json.loads((out_root / "manifest.json").read_text())
    problems = []
    for entry in manifest["scenes"]:
        sdir = out_root / f"scene_{entry['scene_id']}"
        for feat in sorted((sdir / "feat").glob("*.bin")):
            head = feat.read_bytes()[:20]
            if head[:4] != FEATURE_MAGIC:
                problems.append(f"{feat}: bad magic")
                continue
            h_f, w_f, c_f, patch = struct.unpack_from("<IIII", head, 4)
            if patch != manifest["patch_size"]:
                problems.append(f"{feat}: patch {patch} != manifest {manifest['patch_size']}")
            if c_f != manifest["feature_channels"]:
                problems.append(f"{feat}: channels {c_f} != manifest {manifest['feature_channels']}")
    return problems
