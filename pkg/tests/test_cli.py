import json

from scenario_helpers import benchmark_config

from mobidisc.cli import main
from mobidisc.synthetic import ObjectSpec, ScenarioSpec, generate_scene


def _small_dataset(tmp_path):
    spec = ScenarioSpec(
        scene_id="cli",
        frame_count=4,
        ground_half_extent=10.0,
        ground_points_per_frame=200,
        feature_channels=8,
        camera_count=2,
        camera_width=140,
        camera_height=84,
        objects=(
            ObjectSpec("car_m", "car", (4.0, 2.0, 1.5), (5.0, -4.0), (0.0, 2.0),
                       points_per_frame=90, class_name="vehicle"),
            ObjectSpec("car_p", "car", (4.0, 2.0, 1.5), (-5.0, 3.0), yaw=0.4,
                       points_per_frame=90, class_name="vehicle"),
            ObjectSpec("bldg", "bldg", (3.0, 2.0, 3.0), (0.0, -7.0), yaw=0.0,
                       points_per_frame=80),
        ),
    )
    root = tmp_path / "data"
    generate_scene(spec, root, seed=0)
    return root


def _write_config(tmp_path):
    path = tmp_path / "config.json"
    config = benchmark_config()
    overrides = {**config.__dict__, "appearance_cluster_count": 2, "half_window": 2}
    path.write_text(json.dumps(overrides))
    return path


def test_run_eval_and_plot_commands(tmp_path, capsys):
    dataset = _small_dataset(tmp_path)
    config_path = _write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(config_path), "--dataset", str(dataset), "--out", str(out)]) == 0
    assert (out / "pseudo_labels.json").is_file()
    assert (out / "stats.json").is_file()
    assert (out / "config.json").is_file()

    eval_out = tmp_path / "eval"
    code = main([
        "eval", "--dataset", str(dataset),
        "--predictions", str(out / "pseudo_labels.json"),
        "--out", str(eval_out),
    ])
    assert code == 0
    report = json.loads((eval_out / "eval_report.json").read_text())
    assert "mAP" in report and "nds" in report
    assert (eval_out / "pr_curves.csv").is_file()

    plot_out = tmp_path / "plots"
    assert main(["plot-fractions", "--stats", str(out / "stats.json"), "--out", str(plot_out)]) == 0
    csv_lines = (plot_out / "dynamic_fractions.csv").read_text().splitlines()
    fractions = [float(line.split(",")[3]) for line in csv_lines[1:]]
    assert fractions == sorted(fractions)
    svg = (plot_out / "dynamic_fractions.svg").read_text()
    assert svg.lstrip().startswith("<?xml")


def test_gen_synthetic_command(tmp_path):
    scenario = {
        "scene_id": "gen",
        "frame_count": 2,
        "feature_channels": 8,
        "camera_width": 140,
        "camera_height": 84,
        "ground_points_per_frame": 100,
        "objects": [
            {"name": "car", "archetype": "car", "size": [4.0, 2.0, 1.5],
             "start_xy": [4.0, 0.0], "points_per_frame": 30, "class_name": "vehicle"}
        ],
    }
    spec_path = tmp_path / "scenario.json"
    spec_path.write_text(json.dumps(scenario))
    out = tmp_path / "data"
    assert main(["gen-synthetic", "--scenario", str(spec_path), "--out", str(out), "--seed", "3"]) == 0
    assert (out / "scene_gen" / "frames.json").is_file()
    assert (out / "scene_gen" / "gt.json").is_file()


def test_inspect_command(tmp_path, capsys):
    dataset = _small_dataset(tmp_path)
    config_path = _write_config(tmp_path)
    out_file = tmp_path / "proposals.json"
    code = main([
        "inspect", "--dataset", str(dataset), "--config", str(config_path), "--out", str(out_file),
    ])
    assert code == 0
    summary = json.loads(out_file.read_text())
    assert summary and summary[0]["scene"] == "cli"
    assert all(p["num_points"] >= 16 for entry in summary for p in entry["proposals"])


def test_invalid_config_field_reported(tmp_path, capsys):
    dataset = _small_dataset(tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"half_windoww": 3}))
    code = main(["run", "--config", str(bad), "--dataset", str(dataset), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "half_windoww" in capsys.readouterr().err


def test_plot_missing_stats_errors(tmp_path, capsys):
    code = main(["plot-fractions", "--stats", str(tmp_path / "none.json"), "--out", str(tmp_path)])
    assert code == 2


def test_plot_split_matches_mobile_verdicts(tmp_path):
    stats = {
        "mobile_fraction_threshold": 0.05,
        "clusters": [
            {"cluster_id": 1, "size": 100, "dynamic_members": 6, "dynamic_fraction": 0.06, "is_mobile": True},
            {"cluster_id": 2, "size": 100, "dynamic_members": 4, "dynamic_fraction": 0.04, "is_mobile": False},
            {"cluster_id": 3, "size": 100, "dynamic_members": 5, "dynamic_fraction": 0.05, "is_mobile": True},
        ],
    }
    stats_path = tmp_path / "stats.json"
    stats_path.write_text(json.dumps(stats))
    assert main(["plot-fractions", "--stats", str(stats_path), "--out", str(tmp_path / "p")]) == 0
    rows = (tmp_path / "p" / "dynamic_fractions.csv").read_text().splitlines()[1:]
    parsed = [(float(r.split(",")[3]), r.split(",")[4]) for r in rows]
    assert parsed == [(0.04, "False"), (0.05, "True"), (0.06, "True")]
