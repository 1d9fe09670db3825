"""Mobile object discovery from appearance embeddings.

Appearance embeddings of all proposals (static and dynamic together) are
L2-normalized and clustered with K-Means. Clusters containing at least a
threshold fraction of dynamic members are mobile; every member of a mobile
cluster, including the static ones, becomes a mobile object. Mobile objects
are optionally re-clustered into pseudo-classes, which can be matched to
real class names via cosine similarity against per-class prototype vectors.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .appearance import AppearanceEmbedding
from .clustering import ObjectProposal
from .motion import MotionEstimate

MOBILE_FRACTION_THRESHOLD = 0.05  # at or above counts as a mobile cluster


# ---------------------------------------------------------------------------
# K-Means
# ---------------------------------------------------------------------------


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            choice = int(rng.integers(n))
        else:
            choice = int(rng.choice(n, p=closest / total))
        centers[i] = x[choice]
        closest = np.minimum(closest, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def _lloyd_steps(
    x: np.ndarray, centers: np.ndarray, max_iter: int
) -> Iterator[tuple[np.ndarray, np.ndarray, float]]:
    """Yield (labels, centers, objective) per Lloyd iteration until the
    assignment is a fixed point. Empty clusters keep their centroid."""
    labels = None
    for _ in range(max_iter):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        objective = float(d2[np.arange(x.shape[0]), new_labels].sum())
        new_centers = centers.copy()
        for c in range(centers.shape[0]):
            members = x[new_labels == c]
            if members.shape[0]:
                new_centers[c] = members.mean(axis=0)
        yield new_labels, new_centers, objective
        if labels is not None and np.array_equal(labels, new_labels):
            return
        labels, centers = new_labels, new_centers


def kmeans(
    vectors: np.ndarray, k: int, seed: int, max_iter: int = 300
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ initialization plus Lloyd iterations.

    Deterministic for a fixed seed; runs until the assignment stops changing
    or ``max_iter`` is reached. Raises when ``k`` exceeds the vector count.
    """
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2:
        x = x.reshape(len(x), -1)
    if x.shape[0] == 0:
        raise ValueError("kmeans needs at least one vector")
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > x.shape[0]:
        raise ValueError(f"k={k} exceeds the number of vectors ({x.shape[0]})")

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for labels, centers, _ in _lloyd_steps(x, centers, max_iter):
        pass
    return labels.astype(np.int64), centers


# ---------------------------------------------------------------------------
# Cluster classification and discovery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AppearanceCluster:
    cluster_id: int  # 1-based
    member_ids: tuple[int, ...]  # proposal ids
    centroid: np.ndarray
    dynamic_fraction: float
    is_mobile: bool = False


@dataclass
class MobileObject:
    proposal_id: int
    proposal: ObjectProposal
    motion: MotionEstimate
    embedding: AppearanceEmbedding
    cluster_id: int
    pseudo_class: int | None = None


@dataclass(frozen=True)
class ClassPrototype:
    label: str
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=float).reshape(-1)
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"prototype {self.label!r} must be unit norm, got {norm}")
        object.__setattr__(self, "vector", vec)


@dataclass
class DiscoveryResult:
    mobiles: list[MobileObject]
    clusters: list[AppearanceCluster]
    unembeddable_ids: list[int]


def classify_clusters(
    clusters: Sequence[AppearanceCluster], threshold: float = MOBILE_FRACTION_THRESHOLD
) -> list[AppearanceCluster]:
    """Mark clusters mobile when their dynamic fraction reaches ``threshold``."""
    return [replace(c, is_mobile=c.dynamic_fraction >= threshold) for c in clusters]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero embedding")
    return x / norms


def discover(
    static_items: Sequence[tuple[ObjectProposal, MotionEstimate]],
    dynamic_items: Sequence[tuple[ObjectProposal, MotionEstimate]],
    embeddings: dict[int, AppearanceEmbedding],
    cluster_count: int,
    mobile_fraction_threshold: float,
    seed: int,
) -> DiscoveryResult:
    """Joint K-Means over all embeddable proposals, then mobile selection.

    Proposals with zero appearance coverage cannot join the clustering and
    are routed to non-mobile. If fewer proposals than ``cluster_count``
    remain, the cluster count is lowered with a warning.
    """
    items = list(static_items) + list(dynamic_items)
    dynamic_flags = [False] * len(static_items) + [True] * len(dynamic_items)

    usable, usable_flags, unembeddable = [], [], []
    for (proposal, estimate), dyn in zip(items, dynamic_flags):
        emb = embeddings[proposal.proposal_id]
        if emb.coverage <= 0.0:
            unembeddable.append(proposal.proposal_id)
            continue
        usable.append((proposal, estimate, emb))
        usable_flags.append(dyn)

    if not usable:
        return DiscoveryResult(mobiles=[], clusters=[], unembeddable_ids=unembeddable)

    k = cluster_count
    if k > len(usable):
        warnings.warn(
            f"lowering appearance cluster count from {k} to {len(usable)} (too few proposals)",
            RuntimeWarning,
            stacklevel=2,
        )
        k = len(usable)

    vectors = _normalize_rows(np.stack([emb.vector.astype(float) for _, _, emb in usable]))
    labels, centroids = kmeans(vectors, k, seed=seed)

    clusters: list[AppearanceCluster] = []
    for c in range(k):
        member_pos = np.nonzero(labels == c)[0]
        if member_pos.size == 0:
            continue
        dyn_members = sum(1 for p in member_pos if usable_flags[p])
        clusters.append(
            AppearanceCluster(
                cluster_id=len(clusters) + 1,
                member_ids=tuple(usable[p][0].proposal_id for p in member_pos),
                centroid=centroids[c],
                dynamic_fraction=dyn_members / member_pos.size,
            )
        )
    clusters = classify_clusters(clusters, mobile_fraction_threshold)

    cluster_of = {pid: c for c in clusters for pid in c.member_ids}
    mobiles = [
        MobileObject(
            proposal_id=proposal.proposal_id,
            proposal=proposal,
            motion=estimate,
            embedding=emb,
            cluster_id=cluster_of[proposal.proposal_id].cluster_id,
        )
        for proposal, estimate, emb in usable
        if cluster_of[proposal.proposal_id].is_mobile
    ]
    return DiscoveryResult(mobiles=mobiles, clusters=clusters, unembeddable_ids=unembeddable)


def assign_pseudo_classes(
    mobiles: Sequence[MobileObject], pseudo_class_count: int, seed: int
) -> tuple[list[MobileObject], np.ndarray]:
    """K-Means over mobile embeddings; labels are 1-based pseudo-classes.

    Returns the relabeled mobiles and the pseudo-class centroids.
    """
    if not mobiles:
        raise ValueError("no mobile objects to assign pseudo-classes to")
    vectors = _normalize_rows(np.stack([m.embedding.vector.astype(float) for m in mobiles]))
    labels, centroids = kmeans(vectors, pseudo_class_count, seed=seed)
    for mob, lab in zip(mobiles, labels):
        mob.pseudo_class = int(lab) + 1
    return list(mobiles), centroids


def match_prototypes(
    pseudo_centroids: np.ndarray, real_prototypes: Sequence[ClassPrototype]
) -> dict[int, str]:
    """Map each 1-based pseudo-class to the real class of the most cosine-
    similar prototype. Ties go to the lowest prototype index."""
    if not real_prototypes:
        raise ValueError("no real-class prototypes provided")
    centroids = np.asarray(pseudo_centroids, dtype=float)
    proto = np.stack([p.vector for p in real_prototypes])
    norms = np.linalg.norm(centroids, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm pseudo-class centroid cannot be matched")
    sims = (centroids / norms[:, None]) @ proto.T
    best = np.argmax(sims, axis=1)  # argmax takes the first maximum
    return {i + 1: real_prototypes[int(b)].label for i, b in enumerate(best)}


def load_prototypes(path) -> list[ClassPrototype]:
    """Read prototypes.json: list of {class_name, vector}."""
    raw = json.loads(Path(path).read_text())
    return [ClassPrototype(label=e["class_name"], vector=np.asarray(e["vector"], dtype=float)) for e in raw]


# ---------------------------------------------------------------------------
# Size-prior class assignment
# ---------------------------------------------------------------------------


def _centered_rect_iou(l1: float, w1: float, l2: float, w2: float) -> float:
    inter = min(l1, l2) * min(w1, w2)
    union = l1 * w1 + l2 * w2 - inter
    if union <= 0:
        return 0.0
    return inter / union


def size_prior_assign(
    boxes: Sequence,
    prototypes: Sequence[tuple[str, float, float]],
) -> list[str]:
    """Assign each box to the class whose prototype rectangle has the
    highest centered, axis-aligned BEV IoU. Ties break toward the lowest
    prototype index.

    ``boxes`` may be (l, w) pairs or objects with a ``size`` attribute.
    """
    if not prototypes:
        raise ValueError("no size prototypes provided")
    for name, l, w in prototypes:
        if l <= 0 or w <= 0:
            raise ValueError(f"size prototype {name!r} must have positive dimensions")
    out = []
    for box in boxes:
        l, w = box.size[:2] if hasattr(box, "size") else box
        ious = [_centered_rect_iou(l, w, pl, pw) for _, pl, pw in prototypes]
        out.append(prototypes[int(np.argmax(ious))][0])
    return out


def median_area_prototypes(
    boxes: Sequence[tuple[str, float, float]],
) -> list[tuple[str, float, float]]:
    """Per class, the (l, w) of the box whose BEV area is the median.

    For even counts the lower median is used so the prototype is always an
    actual box from the input.
    """
    by_class: dict[str, list[tuple[float, float]]] = {}
    for name, l, w in boxes:
        by_class.setdefault(name, []).append((l, w))
    out = []
    for name in sorted(by_class):
        sizes = sorted(by_class[name], key=lambda s: s[0] * s[1])
        l, w = sizes[(len(sizes) - 1) // 2]
        out.append((name, l, w))
    return out
