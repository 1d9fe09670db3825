import json

import numpy as np
import pytest
from scenario_helpers import benchmark_scenario

from mobidisc.dataset import load_ground_truth, load_scene, scene_dir
from mobidisc.errors import ConfigError
from mobidisc.synthetic import ObjectSpec, ScenarioSpec, generate_scene, load_scenario


def _tiny_spec(scene_id="tiny", objects=None):
    return ScenarioSpec(
        scene_id=scene_id,
        frame_count=3,
        frame_interval_s=0.5,
        ground_half_extent=10.0,
        ground_points_per_frame=150,
        feature_channels=8,
        camera_count=2,
        camera_width=140,
        camera_height=84,
        objects=tuple(objects or ()),
    )


def test_generated_scene_loads(tmp_path):
    spec = _tiny_spec(objects=[
        ObjectSpec("car", "car", (4.0, 2.0, 1.5), (5.0, 0.0), (1.0, 0.0), points_per_frame=40, class_name="vehicle"),
    ])
    sdir = generate_scene(spec, tmp_path, seed=0)
    frames = load_scene(tmp_path, "tiny")
    assert len(frames) == 3
    assert all(f.is_keyframe for f in frames)
    assert all(len(f.cameras) == 2 for f in frames)
    gt = load_ground_truth(sdir)
    assert sorted(gt.keys()) == [0, 1, 2]
    assert all(len(boxes) == 1 for boxes in gt.values())


def test_moving_object_gt_tracks_trajectory(tmp_path):
    spec = _tiny_spec(objects=[
        ObjectSpec("car", "car", (4.0, 2.0, 1.5), (5.0, 0.0), (2.0, 0.0), points_per_frame=40, class_name="vehicle"),
    ])
    sdir = generate_scene(spec, tmp_path, seed=0)
    gt = load_ground_truth(sdir)
    assert np.allclose(gt[0][0].center[:2], [5.0, 0.0])
    assert np.allclose(gt[2][0].center[:2], [7.0, 0.0])
    assert np.allclose(gt[1][0].velocity, [2.0, 0.0])


def test_same_archetype_counts_in_gt(tmp_path):
    spec = _tiny_spec(objects=[
        ObjectSpec("car_m", "car", (4.0, 2.0, 1.5), (5.0, 0.0), (2.0, 0.0), points_per_frame=30, class_name="vehicle"),
        ObjectSpec("car_p1", "car", (4.0, 2.0, 1.5), (-5.0, 3.0), yaw=0.5, points_per_frame=30, class_name="vehicle"),
        ObjectSpec("car_p2", "car", (4.0, 2.0, 1.5), (0.0, -6.0), yaw=1.0, points_per_frame=30, class_name="vehicle"),
        ObjectSpec("bldg1", "b1", (3.0, 2.0, 3.0), (8.0, 8.0), yaw=0.0, points_per_frame=30),
        ObjectSpec("bldg2", "b2", (3.0, 2.0, 3.0), (-8.0, 8.0), yaw=0.0, points_per_frame=30),
        ObjectSpec("bldg3", "b3", (3.0, 2.0, 3.0), (-8.0, -8.0), yaw=0.0, points_per_frame=30),
    ])
    sdir = generate_scene(spec, tmp_path, seed=1)
    gt = load_ground_truth(sdir)
    assert all(len(boxes) == 3 for boxes in gt.values())
    background = json.loads((sdir / "background.json").read_text())
    assert all(len(boxes) == 3 for boxes in background.values())


def test_empty_scenario_valid_dataset(tmp_path):
    sdir = generate_scene(_tiny_spec("empty"), tmp_path, seed=0)
    frames = load_scene(tmp_path, "empty")
    assert len(frames) == 3
    gt = load_ground_truth(sdir)
    assert all(boxes == [] for boxes in gt.values())


def test_seed_changes_points_not_gt(tmp_path):
    spec = _tiny_spec(objects=[
        ObjectSpec("car", "car", (4.0, 2.0, 1.5), (5.0, 0.0), (1.0, 0.0), points_per_frame=40, class_name="vehicle"),
    ])
    dir_a = tmp_path / "a"
    dir_b = tmp_path / "b"
    sdir_a = generate_scene(spec, dir_a, seed=0)
    sdir_b = generate_scene(spec, dir_b, seed=1)
    assert (sdir_a / "gt.json").read_text() == (sdir_b / "gt.json").read_text()
    pts_a = load_scene(dir_a, "tiny")[0].cloud.points
    pts_b = load_scene(dir_b, "tiny")[0].cloud.points
    assert not np.array_equal(pts_a, pts_b)


def test_same_seed_reproduces_bytes(tmp_path):
    spec = _tiny_spec(objects=[
        ObjectSpec("car", "car", (4.0, 2.0, 1.5), (5.0, 0.0), (1.0, 0.0), points_per_frame=40, class_name="vehicle"),
    ])
    sdir_a = generate_scene(spec, tmp_path / "a", seed=7)
    sdir_b = generate_scene(spec, tmp_path / "b", seed=7)
    for rel in ("frames.json", "gt.json", "lidar/0.bin", "feat/0_cam0.bin"):
        assert (sdir_a / rel).read_bytes() == (sdir_b / rel).read_bytes()


def test_keyframe_stride(tmp_path):
    spec = ScenarioSpec(
        scene_id="kf",
        frame_count=6,
        keyframe_stride=3,
        ground_half_extent=8.0,
        ground_points_per_frame=100,
        feature_channels=4,
        camera_count=1,
        camera_width=140,
        camera_height=84,
    )
    generate_scene(spec, tmp_path, seed=0)
    frames = load_scene(tmp_path, "kf")
    assert [f.is_keyframe for f in frames] == [True, False, False, True, False, False]
    gt = load_ground_truth(scene_dir(tmp_path, "kf"))
    assert sorted(gt.keys()) == [0, 3]


def test_feature_channels_must_cover_archetypes():
    with pytest.raises(ConfigError):
        ScenarioSpec(
            scene_id="x",
            feature_channels=2,
            objects=(
                ObjectSpec("a", "arch_a", (1, 1, 1), (0, 0), points_per_frame=5),
                ObjectSpec("b", "arch_b", (1, 1, 1), (2, 2), points_per_frame=5),
            ),
        ).validate()


def test_scenario_file_round_trip(tmp_path):
    raw = {
        "scene_id": "fromfile",
        "frame_count": 2,
        "feature_channels": 8,
        "camera_width": 140,
        "camera_height": 84,
        "objects": [
            {"name": "car", "archetype": "car", "size": [4.0, 2.0, 1.5],
             "start_xy": [3.0, 0.0], "velocity_xy": [1.0, 0.0],
             "points_per_frame": 20, "class_name": "vehicle"}
        ],
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(raw))
    spec = load_scenario(path)
    assert spec.scene_id == "fromfile"
    assert spec.objects[0].class_name == "vehicle"


def test_scenario_unknown_field_rejected(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"scene_id": "x", "frame_countt": 3}))
    with pytest.raises(ConfigError, match="frame_countt"):
        load_scenario(path)


def test_benchmark_scenario_is_valid():
    spec = benchmark_scenario()
    spec.validate()
    mobile = [o for o in spec.objects if not o.is_background]
    background = [o for o in spec.objects if o.is_background]
    assert len(mobile) == 9 and len(background) == 6
    moving = [o for o in mobile if o.velocity_xy != (0.0, 0.0)]
    assert len(moving) == 3
