"""Command line interface.

Subcommands: run, eval, gen-synthetic, plot-fractions, inspect.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evaluation
from .dataset import list_scene_ids, load_ground_truth, scene_dir
from .errors import MobidiscError
from .pipeline import STAGES, PipelineConfig, process_scene, run_pipeline
from .plots import emit_fraction_plot
from .synthetic import generate_scene, load_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobidisc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the discovery pipeline over a dataset")
    run_p.add_argument("--config", type=Path, default=None, help="pipeline config JSON")
    run_p.add_argument("--dataset", type=Path, required=True)
    run_p.add_argument("--out", type=Path, required=True)
    run_p.add_argument("--stage", choices=STAGES, default="+appearance")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument(
        "--prototypes", type=Path, default=None,
        help="prototypes.json; match pseudo-classes to these class names",
    )

    eval_p = sub.add_parser("eval", help="score a prediction file against dataset ground truth")
    eval_p.add_argument("--dataset", type=Path, required=True)
    eval_p.add_argument("--predictions", type=Path, required=True)
    eval_p.add_argument("--out", type=Path, required=True)
    eval_p.add_argument("--classes", default=None, help="comma-separated class names (default: class-agnostic)")
    eval_p.add_argument("--thresholds", default="0.5,1.0,2.0,4.0")
    eval_p.add_argument("--clip-min", type=float, default=0.1)
    eval_p.add_argument("--aoe-period", choices=["2pi", "pi"], default="2pi")

    gen_p = sub.add_parser("gen-synthetic", help="generate a synthetic benchmark dataset")
    gen_p.add_argument("--scenario", type=Path, required=True, help="scenario JSON")
    gen_p.add_argument("--out", type=Path, required=True)
    gen_p.add_argument("--seed", type=int, default=0)

    plot_p = sub.add_parser("plot-fractions", help="emit dynamic-fraction CSV and SVG bar chart")
    plot_p.add_argument("--stats", type=Path, required=True, help="stats.json from a full-stage run")
    plot_p.add_argument("--out", type=Path, required=True)

    ins_p = sub.add_parser("inspect", help="dump per-center proposal summaries as JSON")
    ins_p.add_argument("--dataset", type=Path, required=True)
    ins_p.add_argument("--config", type=Path, default=None)
    ins_p.add_argument("--scene", default=None, help="restrict to one scene id")
    ins_p.add_argument("--out", type=Path, default=None, help="write JSON here instead of stdout")
    return parser


def _load_config(path: Path | None, seed: int | None) -> PipelineConfig:
    config = PipelineConfig.from_file(path) if path else PipelineConfig()
    if seed is not None:
        config = PipelineConfig.from_dict({**config.__dict__, "seed": seed})
    return config


def _cmd_run(args) -> int:
    config = _load_config(args.config, args.seed)
    result = run_pipeline(
        config,
        args.dataset,
        args.out,
        stage=args.stage,
        workers=args.workers,
        prototypes_path=args.prototypes,
    )
    print(f"wrote {result.labels_path}")
    print(f"wrote {result.stats_path}")
    return 0


def _cmd_eval(args) -> int:
    preds, proxy = evaluation.boxes_from_predictions(args.predictions)
    gt_by_scene = {}
    for sid in list_scene_ids(args.dataset):
        gt_by_scene[sid] = load_ground_truth(scene_dir(args.dataset, sid))
    gts = evaluation.boxes_from_ground_truth(gt_by_scene)

    import math

    if args.classes:
        classes = tuple(c.strip() for c in args.classes.split(",") if c.strip())
        config = evaluation.EvalConfig(
            match_thresholds=tuple(float(t) for t in args.thresholds.split(",")),
            clip_min=args.clip_min,
            class_agnostic=False,
            classes=classes,
            aoe_period=math.pi if args.aoe_period == "pi" else 2 * math.pi,
        )
    else:
        config = evaluation.EvalConfig(
            match_thresholds=tuple(float(t) for t in args.thresholds.split(",")),
            clip_min=args.clip_min,
            aoe_period=math.pi if args.aoe_period == "pi" else 2 * math.pi,
        )
    report = evaluation.evaluate(preds, gts, config)
    report.score_proxy_used = proxy
    report_path, csv_path = evaluation.write_report(report, args.out)
    print(f"mAP={report.mean_ap:.4f} NDS={report.nds_value:.4f}")
    print(f"wrote {report_path}")
    print(f"wrote {csv_path}")
    return 0


def _cmd_gen_synthetic(args) -> int:
    spec = load_scenario(args.scenario)
    sdir = generate_scene(spec, args.out, seed=args.seed)
    print(f"wrote {sdir}")
    return 0


def _cmd_plot_fractions(args) -> int:
    csv_path, svg_path = emit_fraction_plot(args.stats, args.out)
    print(f"wrote {csv_path}")
    print(f"wrote {svg_path}")
    return 0


def _cmd_inspect(args) -> int:
    config = _load_config(args.config, None)
    scene_ids = [args.scene] if args.scene else list_scene_ids(args.dataset)
    summary = []
    for sid in scene_ids:
        res = process_scene(args.dataset, sid, config, stage="spatial")
        for center in res.centers:
            summary.append(
                {
                    "scene": sid,
                    "center_frame": center.center_frame,
                    "block": list(center.block),
                    "aggregated_points": len(center.agg),
                    "proposals": [
                        {
                            "proposal_id": p.proposal_id,
                            "num_points": p.num_points,
                            "frames": sorted(int(f) for f in p.slices),
                        }
                        for p in center.proposals
                    ],
                }
            )
    text = json.dumps(summary, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "eval": _cmd_eval,
    "gen-synthetic": _cmd_gen_synthetic,
    "plot-fractions": _cmd_plot_fractions,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MobidiscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
