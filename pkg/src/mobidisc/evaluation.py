"""Detection evaluation: center-distance AP, true-positive errors, NDS.

Protocol summary:

- Per class and per distance threshold, predictions sorted by descending
  score greedily match the nearest unmatched ground-truth box of the same
  class in the same frame; a match requires 2D center distance strictly
  below the threshold. Equal scores tie-break by input order.
- Precision is linearly interpolated onto a 101-point recall grid (ties in
  recall keep the last sample, recall beyond the maximum achieved maps to
  precision 0). AP integrates precision clipped at ``clip_min`` over
  recalls above ``clip_min`` and renormalizes by ``(1 - clip_min)^2``; the
  unclipped variant uses ``clip_min = 0``.
- TP errors are averaged over the matched pairs at the 2 m threshold:
  ATE (2D center distance), ASE (1 - aligned 3D size IoU), AOE (minimal
  absolute yaw difference under the configured period), AVE (velocity L2).
  Classes with no matched pairs score error 1.
- NDS = (5 * mAP + sum over the five errors of (1 - min(1, err))) / 10 with
  the attribute error fixed by configuration (default 1).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EvalInputError

CLASS_AGNOSTIC_NAME = "object"
TP_ERROR_NAMES = ("ate", "ase", "aoe", "ave")


@dataclass(frozen=True)
class EvalConfig:
    match_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    clip_min: float = 0.1
    class_agnostic: bool = True
    classes: tuple[str, ...] = (CLASS_AGNOSTIC_NAME,)
    aoe_period: float = 2.0 * math.pi
    aae_fixed: float = 1.0
    tp_threshold: float = 2.0

    def __post_init__(self):
        th = tuple(float(t) for t in self.match_thresholds)
        if not th or any(t <= 0 for t in th) or list(th) != sorted(th):
            raise ValueError("match thresholds must be positive and ascending")
        if not 0.0 <= self.clip_min < 1.0:
            raise ValueError("clip_min must be in [0, 1)")
        object.__setattr__(self, "match_thresholds", th)
        object.__setattr__(self, "classes", tuple(self.classes))


@dataclass(frozen=True)
class EvalBox:
    frame_key: tuple[str, int]  # (scene id, frame index)
    center: np.ndarray  # (3,)
    size: np.ndarray  # (l, w, h)
    yaw: float
    velocity: np.ndarray  # (vx, vy)
    class_name: str
    score: float = 1.0


@dataclass
class MatchResult:
    """Outcome of greedy matching at one threshold for one class."""

    tp_flags: np.ndarray  # per prediction in score order
    scores: np.ndarray
    num_gt: int
    errors: dict[str, np.ndarray]  # per matched prediction, aligned arrays


@dataclass
class EvalReport:
    config: EvalConfig
    ap: dict[str, dict[float, float]]
    ap_unclipped: dict[str, dict[float, float]]
    tp_errors: dict[str, dict[str, float]]
    mean_ap: float
    mean_ap_unclipped: float
    nds_value: float
    score_proxy_used: bool = False
    pr_curves: dict[str, dict[float, tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)

    def to_json(self) -> dict:
        mean_errors = _mean_tp_errors(self.tp_errors)
        return {
            "class_agnostic": self.config.class_agnostic,
            "match_thresholds": list(self.config.match_thresholds),
            "clip_min": self.config.clip_min,
            "aae_fixed": self.config.aae_fixed,
            "score_proxy_used": self.score_proxy_used,
            "ap": {c: {str(t): v for t, v in per.items()} for c, per in self.ap.items()},
            "ap_unclipped": {
                c: {str(t): v for t, v in per.items()} for c, per in self.ap_unclipped.items()
            },
            "mean_ap_per_class": {c: float(np.mean(list(per.values()))) for c, per in self.ap.items()},
            "tp_errors": self.tp_errors,
            "mean_tp_errors": mean_errors,
            "mAP": self.mean_ap,
            "mAP_unclipped": self.mean_ap_unclipped,
            "nds": self.nds_value,
        }


def _angle_diff(a: float, b: float, period: float) -> float:
    d = (a - b) % period
    return min(d, period - d)


def _aligned_size_iou(size_a: np.ndarray, size_b: np.ndarray) -> float:
    inter = float(np.prod(np.minimum(size_a, size_b)))
    union = float(np.prod(size_a) + np.prod(size_b) - inter)
    if union <= 0:
        return 0.0
    return inter / union


def match_and_accumulate(
    preds: Sequence[EvalBox],
    gts: Sequence[EvalBox],
    threshold: float,
    aoe_period: float = 2.0 * math.pi,
) -> MatchResult:
    """Greedy score-ordered matching of predictions to ground truth.

    Only boxes of the same class in the same frame can match; each ground
    truth is matched at most once; a prediction matches the nearest
    unmatched ground truth if their 2D center distance is below
    ``threshold``.
    """
    scores = np.array([p.score for p in preds], dtype=float)
    if np.any(~np.isfinite(scores)):
        raise EvalInputError("prediction scores must be finite")

    gt_by_frame: dict[tuple[str, int], list[int]] = {}
    for i, g in enumerate(gts):
        gt_by_frame.setdefault(g.frame_key, []).append(i)
    gt_taken = np.zeros(len(gts), dtype=bool)

    order = np.argsort(-scores, kind="stable")
    tp_flags = np.zeros(len(preds), dtype=bool)
    err: dict[str, list[float]] = {name: [] for name in TP_ERROR_NAMES}

    for rank, pi in enumerate(order):
        pred = preds[pi]
        best_j = -1
        best_dist = math.inf
        for j in gt_by_frame.get(pred.frame_key, []):
            if gt_taken[j] or gts[j].class_name != pred.class_name:
                continue
            dist = float(np.hypot(*(pred.center[:2] - gts[j].center[:2])))
            if dist < best_dist:
                best_dist = dist
                best_j = j
        if best_j >= 0 and best_dist < threshold:
            gt_taken[best_j] = True
            tp_flags[rank] = True
            gt = gts[best_j]
            err["ate"].append(best_dist)
            err["ase"].append(1.0 - _aligned_size_iou(pred.size, gt.size))
            err["aoe"].append(_angle_diff(pred.yaw, gt.yaw, aoe_period))
            err["ave"].append(float(np.linalg.norm(pred.velocity - gt.velocity)))

    return MatchResult(
        tp_flags=tp_flags,
        scores=scores[order],
        num_gt=len(gts),
        errors={k: np.asarray(v) for k, v in err.items()},
    )


def interpolated_precision(match: MatchResult) -> tuple[np.ndarray, np.ndarray]:
    """Precision on the 101-point recall grid (see module docstring).

    Grid points are exact hundredths (k / 100). A linspace grid is off by
    one ulp at some points, which right-fills precision 0 at the maximum
    achieved recall whenever that recall is an exact hundredth.
    """
    grid = np.arange(101) / 100.0
    if match.num_gt == 0 or match.tp_flags.size == 0 or not match.tp_flags.any():
        return grid, np.zeros(101)
    tp = np.cumsum(match.tp_flags)
    fp = np.cumsum(~match.tp_flags)
    precision = tp / (tp + fp)
    recall = tp / match.num_gt
    # ties in recall keep the final precision at that recall level
    keep = np.ones(recall.size, dtype=bool)
    keep[:-1] = recall[:-1] != recall[1:]
    return grid, np.interp(grid, recall[keep], precision[keep], right=0.0)


def average_precision(match: MatchResult, clip_min: float = 0.1) -> float:
    """Clipped, renormalized PR integral; ``clip_min = 0`` is the unclipped
    variant. No predictions or no ground truth give 0."""
    _, prec = interpolated_precision(match)
    start = round(100 * clip_min) + 1
    clipped = np.maximum(prec[start:] - clip_min, 0.0)
    # the exact value is within [0, 1]; division can leave 1-ulp dust
    return float(min(1.0, np.mean(clipped) / (1.0 - clip_min)))


def nds(mean_ap: float, tp_error_means: dict[str, float], aae_fixed: float = 1.0) -> float:
    """Weighted detection score from mAP and the five TP errors."""
    errors = [tp_error_means[name] for name in TP_ERROR_NAMES] + [aae_fixed]
    total = 5.0 * mean_ap + sum(1.0 - min(1.0, e) for e in errors)
    return total / 10.0


def _mean_tp_errors(per_class: dict[str, dict[str, float]]) -> dict[str, float]:
    return {
        name: float(np.mean([per_class[c][name] for c in per_class])) if per_class else 1.0
        for name in TP_ERROR_NAMES
    }


def evaluate(preds: Sequence[EvalBox], gts: Sequence[EvalBox], config: EvalConfig) -> EvalReport:
    """Full report over all configured classes and thresholds."""
    if config.class_agnostic:
        preds = [_as_class(p, CLASS_AGNOSTIC_NAME) for p in preds]
        gts = [_as_class(g, CLASS_AGNOSTIC_NAME) for g in gts]
        classes = (CLASS_AGNOSTIC_NAME,)
    else:
        classes = config.classes

    ap: dict[str, dict[float, float]] = {}
    ap_unclipped: dict[str, dict[float, float]] = {}
    tp_err: dict[str, dict[str, float]] = {}
    curves: dict[str, dict[float, tuple[np.ndarray, np.ndarray]]] = {}
    for cls in classes:
        cls_preds = [p for p in preds if p.class_name == cls]
        cls_gts = [g for g in gts if g.class_name == cls]
        ap[cls] = {}
        ap_unclipped[cls] = {}
        curves[cls] = {}
        for th in config.match_thresholds:
            match = match_and_accumulate(cls_preds, cls_gts, th, aoe_period=config.aoe_period)
            ap[cls][th] = average_precision(match, config.clip_min)
            ap_unclipped[cls][th] = average_precision(match, 0.0)
            curves[cls][th] = interpolated_precision(match)
        tp_match = match_and_accumulate(
            cls_preds, cls_gts, config.tp_threshold, aoe_period=config.aoe_period
        )
        tp_err[cls] = {
            name: (float(arr.mean()) if arr.size else 1.0) for name, arr in tp_match.errors.items()
        }

    mean_ap = float(np.mean([np.mean(list(per.values())) for per in ap.values()]))
    mean_ap_unclipped = float(np.mean([np.mean(list(per.values())) for per in ap_unclipped.values()]))
    return EvalReport(
        config=config,
        ap=ap,
        ap_unclipped=ap_unclipped,
        tp_errors=tp_err,
        mean_ap=mean_ap,
        mean_ap_unclipped=mean_ap_unclipped,
        nds_value=nds(mean_ap, _mean_tp_errors(tp_err), config.aae_fixed),
        pr_curves=curves,
    )


def _as_class(box: EvalBox, name: str) -> EvalBox:
    return dataclasses.replace(box, class_name=name)


# ---------------------------------------------------------------------------
# File-level entry points
# ---------------------------------------------------------------------------


def boxes_from_predictions(path) -> tuple[list[EvalBox], bool]:
    """Read pseudo_labels.json / predictions.json into evaluation boxes.

    When every score is identical the file carries no ranking; boxes are
    then re-scored with ``min(1, num_points / 100)`` where available, and
    the returned flag is set.
    """
    raw = json.loads(Path(path).read_text())
    boxes = []
    counts = []
    for scene, per_frame in sorted(raw["scenes"].items()):
        for frame, entries in sorted(per_frame.items(), key=lambda kv: int(kv[0])):
            for e in entries:
                boxes.append(
                    EvalBox(
                        frame_key=(scene, int(frame)),
                        center=np.asarray(e["center"], dtype=float),
                        size=np.asarray(e["size"], dtype=float),
                        yaw=float(e["yaw"]),
                        velocity=np.asarray(e.get("velocity", (0.0, 0.0)), dtype=float),
                        class_name=str(e.get("class_name", CLASS_AGNOSTIC_NAME)),
                        score=float(e.get("score", 1.0)),
                    )
                )
                counts.append(int(e.get("num_points", 100)))
    proxy = bool(boxes) and len({b.score for b in boxes}) == 1
    if proxy:
        boxes = [
            dataclasses.replace(b, score=min(1.0, count / 100.0))
            for b, count in zip(boxes, counts)
        ]
    return boxes, proxy


def boxes_from_ground_truth(gt_by_scene: dict[str, dict[int, list]]) -> list[EvalBox]:
    boxes = []
    for scene, per_frame in sorted(gt_by_scene.items()):
        for frame, entries in sorted(per_frame.items()):
            for g in entries:
                boxes.append(
                    EvalBox(
                        frame_key=(scene, int(frame)),
                        center=np.asarray(g.center, dtype=float),
                        size=np.asarray(g.size, dtype=float),
                        yaw=float(g.yaw),
                        velocity=np.asarray(g.velocity, dtype=float),
                        class_name=g.class_name,
                    )
                )
    return boxes


def write_report(report: EvalReport, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "eval_report.json"
    report_path.write_text(json.dumps(report.to_json(), indent=1, sort_keys=True))
    csv_path = out_dir / "pr_curves.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "threshold", "recall", "precision"])
        for cls, per_th in sorted(report.pr_curves.items()):
            for th, (recall, precision) in sorted(per_th.items()):
                for r, p in zip(recall, precision):
                    writer.writerow([cls, th, f"{r:.2f}", f"{p:.6f}"])
    return report_path, csv_path
