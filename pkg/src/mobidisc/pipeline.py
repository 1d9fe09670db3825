"""End-to-end pipeline: scenes in, pseudo-labels and run statistics out.

Stages mirror the label sources the method can be cut off at:

- ``spatial``      every spatial cluster becomes a box (baseline)
- ``+motion``      additionally, dynamic clusters' points are corrected for
                   their estimated motion before box fitting
- ``+appearance``  full discovery: appearance clustering selects mobile
                   clusters and only their members are emitted

Scenes are processed at center frames spaced one aggregation window apart;
each center emits labels for the keyframes of its own block, so every
keyframe is labeled exactly once.
"""

from __future__ import annotations

import dataclasses
import json
import multiprocessing
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import appearance as appearance_mod
from . import boxes as boxes_mod
from .clustering import AggregatedCloud, ObjectProposal, aggregate, build_proposals, cluster_proposals
from .dataset import Frame, list_scene_ids, load_scene
from .discovery import (
    DiscoveryResult,
    MobileObject,
    assign_pseudo_classes,
    discover,
    load_prototypes,
    match_prototypes,
)
from .errors import ConfigError
from .ground import PlaneModel, extract_non_ground, fit_ground_plane
from .motion import MotionEstimate, estimate_motion, split_static_dynamic, undo_motion

STAGES = ("spatial", "+motion", "+appearance")


@dataclass(frozen=True)
class PipelineConfig:
    ransac_inlier_threshold: float = 0.05
    ransac_iterations: int = 200
    height_cutoff: float = 0.30
    half_window: int = 7
    min_cluster_size: int = 16
    min_samples: int = 16
    cluster_selection_epsilon: float = 0.50
    dynamic_speed_threshold: float = 0.50
    min_half_points: int = 5
    appearance_cluster_count: int = 20
    mobile_fraction_threshold: float = 0.05
    pseudo_class_count: int = 1
    aggregate_all_sweeps: bool = False
    center_stride: int | None = None  # default: one aggregation window
    seed: int = 0

    def validate(self) -> None:
        positive = (
            "ransac_inlier_threshold", "ransac_iterations", "height_cutoff",
            "min_cluster_size", "min_samples", "cluster_selection_epsilon",
            "dynamic_speed_threshold", "min_half_points",
            "appearance_cluster_count", "pseudo_class_count",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"config field {name!r} must be positive")
        if self.half_window < 0:
            raise ConfigError("config field 'half_window' must be non-negative")
        if not 0.0 <= self.mobile_fraction_threshold <= 1.0:
            raise ConfigError("config field 'mobile_fraction_threshold' must be in [0, 1]")
        if self.center_stride is not None and self.center_stride < 1:
            raise ConfigError("config field 'center_stride' must be positive")

    @property
    def stride(self) -> int:
        return self.center_stride if self.center_stride is not None else 2 * self.half_window + 1

    @staticmethod
    def from_dict(raw: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        config = PipelineConfig(**raw)
        config.validate()
        return config

    @staticmethod
    def from_file(path) -> "PipelineConfig":
        return PipelineConfig.from_dict(json.loads(Path(path).read_text()))

    def to_file(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True))


class FrameStamp(NamedTuple):
    index: int
    time_s: float
    is_keyframe: bool


@dataclass
class CenterResult:
    scene_id: str
    center_frame: int
    center_time: float
    block: tuple[int, int]  # frame-index range this center emits labels for
    agg: AggregatedCloud
    plane_world: PlaneModel
    proposals: list[ObjectProposal]
    estimates: list[MotionEstimate] | None
    embeddings: dict[int, "appearance_mod.AppearanceEmbedding"] | None
    frame_times: dict[int, float]


@dataclass
class SceneResult:
    scene_id: str
    frames_meta: list[FrameStamp]
    centers: list[CenterResult]


@dataclass
class RunResult:
    labels_path: Path
    stats_path: Path
    config_path: Path
    stats: dict


def _derive_seed(seed: int, *parts) -> int:
    tag = ":".join(str(p) for p in parts)
    return (int(seed) * 1_000_003 + zlib.crc32(tag.encode())) % (2**63)


def _processing_sequence(frames: list[Frame], config: PipelineConfig) -> list[Frame]:
    if config.aggregate_all_sweeps:
        return frames
    keyframes = [f for f in frames if f.is_keyframe]
    return keyframes if keyframes else frames


def _center_positions(length: int, config: PipelineConfig) -> list[tuple[int, tuple[int, int]]]:
    """(center position, block position range) pairs tiling the sequence."""
    half = config.half_window
    out = []
    pos = 0
    while pos < length:
        end = min(pos + config.stride - 1, length - 1)
        center = min(pos + half, length - 1)
        out.append((center, (pos, end)))
        pos += config.stride
    return out


def process_scene(dataset_root, scene_id: str, config: PipelineConfig, stage: str) -> SceneResult:
    """Ground removal, aggregation, clustering, and per-proposal analysis
    for every center frame of one scene."""
    frames = load_scene(dataset_root, scene_id)
    frames_meta = [FrameStamp(f.index, f.time_s, f.is_keyframe) for f in frames]
    seq = _processing_sequence(frames, config)
    if not seq:
        return SceneResult(scene_id=scene_id, frames_meta=frames_meta, centers=[])

    non_ground = []
    planes = {}
    for frame in seq:
        plane = fit_ground_plane(
            frame.cloud.points,
            inlier_threshold=config.ransac_inlier_threshold,
            max_iterations=config.ransac_iterations,
            seed=_derive_seed(config.seed, scene_id, frame.index, "ground"),
        )
        planes[frame.index] = plane
        non_ground.append(
            extract_non_ground(frame.cloud, plane, config.height_cutoff, frame_index=frame.index)
        )

    frames_by_index = {f.index: f for f in seq}
    frame_times = {f.index: f.time_s for f in seq}
    centers = []
    next_proposal_id = 0
    for center_pos, (block_lo, block_hi) in _center_positions(len(seq), config):
        agg = aggregate(seq, non_ground, center_pos, config.half_window)
        labels, clusters = cluster_proposals(
            agg, config.min_cluster_size, config.min_samples, config.cluster_selection_epsilon
        )
        proposals = build_proposals(agg, clusters, first_id=next_proposal_id)
        next_proposal_id += len(proposals)

        estimates = None
        embeddings = None
        if stage in ("+motion", "+appearance"):
            estimates = [
                estimate_motion(
                    p,
                    agg,
                    frame_times,
                    dynamic_speed_threshold=config.dynamic_speed_threshold,
                    min_half_points=config.min_half_points,
                )
                for p in proposals
            ]
        if stage == "+appearance":
            embeddings = {
                p.proposal_id: appearance_mod.embed_proposal(p, agg, frames_by_index)
                for p in proposals
            }

        center_frame = seq[center_pos].index
        centers.append(
            CenterResult(
                scene_id=scene_id,
                center_frame=center_frame,
                center_time=seq[center_pos].time_s,
                block=(seq[block_lo].index, seq[block_hi].index),
                agg=agg,
                plane_world=planes[center_frame].transformed(seq[center_pos].ego_pose),
                proposals=proposals,
                estimates=estimates,
                embeddings=embeddings,
                frame_times=frame_times,
            )
        )
    return SceneResult(scene_id=scene_id, frames_meta=frames_meta, centers=centers)


def _fit_points(
    center: CenterResult, proposal: ObjectProposal, estimate: MotionEstimate | None
) -> np.ndarray:
    pts = center.agg.points[proposal.point_indices]
    if estimate is not None and estimate.is_dynamic:
        times = np.array([center.frame_times[f] for f in center.agg.source_frame[proposal.point_indices]])
        pts = undo_motion(pts, times, center.center_time, estimate)
    return pts


def _fit_object(
    center: CenterResult,
    proposal: ObjectProposal,
    estimate: MotionEstimate | None,
    pseudo_class: int,
    class_name: str | None = None,
) -> boxes_mod.FittedObject:
    velocity = np.zeros(2)
    heading = None
    if estimate is not None:
        velocity = estimate.translation_xy / estimate.dt if estimate.is_dynamic else np.zeros(2)
        heading = velocity if estimate.is_dynamic else None
    pts = _fit_points(center, proposal, estimate)
    bcenter, l, w, h, yaw, degenerate = boxes_mod.fit_box(pts, center.plane_world, heading_xy=heading)
    return boxes_mod.FittedObject(
        center=bcenter,
        length=l,
        width=w,
        height=h,
        yaw=yaw,
        velocity_xy=velocity,
        center_frame=proposal.center_frame,
        frame_span=proposal.frame_span,
        pseudo_class=pseudo_class,
        num_points=proposal.num_points,
        degenerate=degenerate,
        class_name=class_name,
    )


def _assemble_center(
    center: CenterResult,
    fitted: list[boxes_mod.FittedObject],
    frames_meta: list[FrameStamp],
) -> dict[int, list[boxes_mod.PseudoBox]]:
    sets = boxes_mod.assemble_labels(fitted, frames_meta)
    lo, hi = center.block
    return {s.frame: list(s.boxes) for s in sets if lo <= s.frame <= hi}


def run_pipeline(
    config: PipelineConfig,
    dataset_root,
    output_dir,
    stage: str = "+appearance",
    workers: int = 1,
    prototypes_path=None,
) -> RunResult:
    """Run the pipeline over every scene under ``dataset_root``.

    Writes ``pseudo_labels.json``, ``stats.json``, and the resolved config
    into ``output_dir``. When ``prototypes_path`` (a prototypes.json file)
    is given, pseudo-classes are matched to the real class names by cosine
    similarity and boxes carry the matched name. Identical inputs, config,
    and seed produce a byte-identical label file.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    config.validate()
    scene_ids = list_scene_ids(dataset_root)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    if workers > 1 and len(scene_ids) > 1:
        with multiprocessing.Pool(workers) as pool:
            results = pool.starmap(
                process_scene, [(dataset_root, sid, config, stage) for sid in scene_ids]
            )
    else:
        results = [process_scene(dataset_root, sid, config, stage) for sid in scene_ids]
    results.sort(key=lambda r: r.scene_id)

    stats: dict = {
        "stage": stage,
        "scene_count": len(results),
        "proposal_count": sum(len(c.proposals) for r in results for c in r.centers),
        "mobile_fraction_threshold": config.mobile_fraction_threshold,
    }
    labels_by_scene: dict[str, dict[int, list[boxes_mod.PseudoBox]]] = {}

    if stage in ("spatial", "+motion"):
        for res in results:
            merged: dict[int, list[boxes_mod.PseudoBox]] = {}
            for center in res.centers:
                estimates = center.estimates or [None] * len(center.proposals)
                fitted = [
                    _fit_object(center, p, e, pseudo_class=1)
                    for p, e in zip(center.proposals, estimates)
                ]
                merged.update(_assemble_center(center, fitted, res.frames_meta))
            labels_by_scene[res.scene_id] = merged
        if stage == "+motion":
            stats["dynamic_count"] = sum(
                sum(1 for e in c.estimates if e.is_dynamic) for r in results for c in r.centers
            )
    else:
        discovery = _global_discovery(results, config)
        stats.update(discovery_stats(discovery))
        class_of_pseudo: dict[int, str] = {}
        if prototypes_path is not None and discovery.pseudo_centroids is not None:
            class_of_pseudo = match_prototypes(
                discovery.pseudo_centroids, load_prototypes(prototypes_path)
            )
            stats["pseudo_class_names"] = class_of_pseudo
        mobiles_by_center: dict[tuple[str, int], list] = {}
        for mob in discovery.mobiles:
            mobiles_by_center.setdefault(mob.center_key, []).append(mob)
        for res in results:
            merged: dict[int, list[boxes_mod.PseudoBox]] = {}
            for center in res.centers:
                fitted = [
                    _fit_object(
                        center,
                        m.obj.proposal,
                        m.obj.motion,
                        m.obj.pseudo_class or 1,
                        class_name=class_of_pseudo.get(m.obj.pseudo_class),
                    )
                    for m in mobiles_by_center.get((res.scene_id, center.center_frame), [])
                ]
                merged.update(_assemble_center(center, fitted, res.frames_meta))
            labels_by_scene[res.scene_id] = merged

    label_sets = {
        scene: [
            boxes_mod.PseudoLabelSet(frame=frame, boxes=tuple(boxes))
            for frame, boxes in sorted(merged.items())
        ]
        for scene, merged in labels_by_scene.items()
    }
    labels_path = output_dir / "pseudo_labels.json"
    boxes_mod.write_pseudo_labels(labels_path, label_sets)
    stats["box_count"] = sum(len(s.boxes) for sets in label_sets.values() for s in sets)
    stats_path = output_dir / "stats.json"
    stats_path.write_text(json.dumps(stats, indent=1, sort_keys=True))
    config_path = output_dir / "config.json"
    config.to_file(config_path)
    return RunResult(labels_path=labels_path, stats_path=stats_path, config_path=config_path, stats=stats)


@dataclass
class _PooledMobile:
    center_key: tuple[str, int]
    obj: MobileObject


@dataclass
class _GlobalDiscovery:
    result: DiscoveryResult
    mobiles: list[_PooledMobile]
    static_count: int = 0
    dynamic_count: int = 0
    pseudo_centroids: np.ndarray | None = None


def _global_discovery(results: list[SceneResult], config: PipelineConfig) -> _GlobalDiscovery:
    """Pool proposals from all scenes and centers into one joint clustering."""
    pooled: list[tuple[ObjectProposal, MotionEstimate]] = []
    origins: dict[int, tuple[str, int]] = {}
    embeddings = {}
    offset = 0
    for res in results:
        for center in res.centers:
            for proposal, estimate in zip(center.proposals, center.estimates):
                rebased = ObjectProposal(
                    proposal_id=offset + proposal.proposal_id,
                    center_frame=proposal.center_frame,
                    point_indices=proposal.point_indices,
                    slices=proposal.slices,
                )
                origins[rebased.proposal_id] = (res.scene_id, center.center_frame)
                emb = center.embeddings[proposal.proposal_id]
                embeddings[rebased.proposal_id] = appearance_mod.AppearanceEmbedding(
                    proposal_id=rebased.proposal_id, vector=emb.vector, coverage=emb.coverage
                )
                pooled.append((rebased, estimate))
        offset += sum(len(c.proposals) for c in res.centers)

    static_items, dynamic_items = split_static_dynamic(pooled)
    result = discover(
        static_items,
        dynamic_items,
        embeddings,
        cluster_count=config.appearance_cluster_count,
        mobile_fraction_threshold=config.mobile_fraction_threshold,
        seed=config.seed,
    )
    pseudo_centroids = None
    if result.mobiles:
        k2 = min(config.pseudo_class_count, len(result.mobiles))
        _, pseudo_centroids = assign_pseudo_classes(
            result.mobiles, k2, seed=_derive_seed(config.seed, "pseudo-classes")
        )
    mobiles = [_PooledMobile(center_key=origins[m.proposal_id], obj=m) for m in result.mobiles]
    return _GlobalDiscovery(
        result=result,
        mobiles=mobiles,
        static_count=len(static_items),
        dynamic_count=len(dynamic_items),
        pseudo_centroids=pseudo_centroids,
    )


def discovery_stats(discovery: _GlobalDiscovery) -> dict:
    clusters = discovery.result.clusters
    return {
        "clusters": [
            {
                "cluster_id": c.cluster_id,
                "size": len(c.member_ids),
                "dynamic_members": int(round(c.dynamic_fraction * len(c.member_ids))),
                "dynamic_fraction": c.dynamic_fraction,
                "is_mobile": c.is_mobile,
            }
            for c in clusters
        ],
        "static_count": discovery.static_count,
        "dynamic_count": discovery.dynamic_count,
        "mobile_count": len(discovery.result.mobiles),
        "unembeddable_count": len(discovery.result.unembeddable_ids),
    }
