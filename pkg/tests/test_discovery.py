import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import best_restart_objective

from mobidisc.appearance import AppearanceEmbedding
from mobidisc.clustering import ObjectProposal
from mobidisc.discovery import (
    AppearanceCluster,
    ClassPrototype,
    _lloyd_steps,
    assign_pseudo_classes,
    classify_clusters,
    discover,
    kmeans,
    match_prototypes,
    median_area_prototypes,
    size_prior_assign,
)
from mobidisc.motion import MotionEstimate


def _estimate(dynamic: bool) -> MotionEstimate:
    speed = 1.0 if dynamic else 0.0
    return MotionEstimate(
        translation_xy=np.array([speed, 0.0]),
        yaw=0.0,
        dt=1.0,
        speed=speed,
        is_dynamic=dynamic,
        pivot_xy=np.zeros(2),
    )


def _proposal(pid: int) -> ObjectProposal:
    return ObjectProposal(
        proposal_id=pid, center_frame=0, point_indices=np.arange(3), slices={0: np.arange(3)}
    )


def _embedding(pid: int, vector) -> AppearanceEmbedding:
    return AppearanceEmbedding(proposal_id=pid, vector=np.asarray(vector, dtype=np.float32), coverage=1.0)


# ---------------------------------------------------------------------------
# kmeans
# ---------------------------------------------------------------------------


def test_kmeans_k_equals_n_zero_objective():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 3))
    labels, centers = kmeans(x, 6, seed=1)
    assert sorted(labels.tolist()) == list(range(6))
    d2 = ((x - centers[labels]) ** 2).sum()
    assert d2 < 1e-18


def test_kmeans_two_blobs_pure():
    rng = np.random.default_rng(1)
    a = rng.normal(0, 0.1, (20, 4))
    b = rng.normal(0, 0.1, (20, 4)) + 5.0
    labels, _ = kmeans(np.vstack([a, b]), 2, seed=0)
    assert len(set(labels[:20].tolist())) == 1
    assert len(set(labels[20:].tolist())) == 1
    assert labels[0] != labels[20]


def test_kmeans_matches_multi_restart_oracle():
    rng = np.random.default_rng(42)
    blobs = [rng.normal(0, 0.05, (14, 6)) + c for c in (np.zeros(6), 3 * np.eye(6)[0], 3 * np.eye(6)[1])]
    x = np.vstack(blobs)[:40]
    labels, centers = kmeans(x, 3, seed=9)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    objective = float(d2[np.arange(len(x)), labels].sum())
    reference = best_restart_objective(x, 3, restarts=1000, seed=1)
    assert abs(objective - reference) < 1e-9


def test_kmeans_objective_non_increasing():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(60, 5))
    centers = x[rng.choice(60, size=4, replace=False)]
    objectives = [obj for _, _, obj in _lloyd_steps(x, centers, max_iter=300)]
    assert all(b <= a + 1e-12 for a, b in zip(objectives, objectives[1:]))


def test_kmeans_deterministic_per_seed():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(30, 4))
    l1, c1 = kmeans(x, 5, seed=7)
    l2, c2 = kmeans(x, 5, seed=7)
    assert np.array_equal(l1, l2) and np.array_equal(c1, c2)


def test_kmeans_k_exceeds_vectors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4, seed=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=1, max_value=8))
def test_kmeans_final_assignment_is_fixed_point(seed, k):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(24, 3))
    labels, centers = kmeans(x, k, seed=seed)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(d2.argmin(axis=1), labels)


# ---------------------------------------------------------------------------
# cluster classification and discovery
# ---------------------------------------------------------------------------


def _cluster(cid, n, n_dyn):
    return AppearanceCluster(
        cluster_id=cid,
        member_ids=tuple(range(n)),
        centroid=np.zeros(2),
        dynamic_fraction=n_dyn / n,
    )


@pytest.mark.parametrize(
    "dyn,total,expected",
    [(6, 100, True), (4, 100, False), (5, 100, True), (0, 50, False)],
)
def test_classify_threshold_inclusive(dyn, total, expected):
    out = classify_clusters([_cluster(1, total, dyn)], threshold=0.05)
    assert out[0].is_mobile is expected


def test_discover_all_dynamic_returns_everything():
    items = [( _proposal(i), _estimate(True)) for i in range(6)]
    emb = {i: _embedding(i, np.eye(4)[i % 2]) for i in range(6)}
    result = discover([], items, emb, cluster_count=2, mobile_fraction_threshold=0.05, seed=0)
    assert sorted(m.proposal_id for m in result.mobiles) == list(range(6))


def test_discover_all_static_returns_nothing():
    items = [(_proposal(i), _estimate(False)) for i in range(6)]
    emb = {i: _embedding(i, np.eye(4)[i % 2]) for i in range(6)}
    result = discover(items, [], emb, cluster_count=2, mobile_fraction_threshold=0.05, seed=0)
    assert result.mobiles == []


def test_discover_rescues_static_members_of_mobile_archetype():
    # archetype A: 10 members, 1 dynamic; archetype B: 8 members, 0 dynamic
    rng = np.random.default_rng(5)
    static_items, dynamic_items, emb = [], [], {}
    for i in range(10):
        vec = np.array([1.0, 0, 0, 0]) + rng.normal(0, 0.01, 4)
        emb[i] = _embedding(i, vec)
        (dynamic_items if i == 0 else static_items).append((_proposal(i), _estimate(i == 0)))
    for i in range(10, 18):
        vec = np.array([0, 1.0, 0, 0]) + rng.normal(0, 0.01, 4)
        emb[i] = _embedding(i, vec)
        static_items.append((_proposal(i), _estimate(False)))
    result = discover(static_items, dynamic_items, emb, cluster_count=2, mobile_fraction_threshold=0.05, seed=0)
    assert sorted(m.proposal_id for m in result.mobiles) == list(range(10))
    fractions = {c.cluster_id: c.dynamic_fraction for c in result.clusters}
    assert sorted(fractions.values()) == [0.0, 0.1]


def test_discover_cluster_closure():
    # if any member of a cluster is returned, all of its members are
    rng = np.random.default_rng(6)
    static_items, dynamic_items, emb = [], [], {}
    for i in range(30):
        arch = i % 3
        vec = np.eye(4)[arch] + rng.normal(0, 0.02, 4)
        emb[i] = _embedding(i, vec)
        dyn = i in (0, 3, 7)
        (dynamic_items if dyn else static_items).append((_proposal(i), _estimate(dyn)))
    result = discover(static_items, dynamic_items, emb, cluster_count=3, mobile_fraction_threshold=0.05, seed=1)
    by_cluster = {}
    for c in result.clusters:
        for pid in c.member_ids:
            by_cluster[pid] = (c.cluster_id, c.is_mobile)
    returned = {m.proposal_id for m in result.mobiles}
    for c in result.clusters:
        members = set(c.member_ids)
        assert members <= returned if c.is_mobile else members.isdisjoint(returned)


def test_discover_zero_coverage_routed_out():
    items = [(_proposal(0), _estimate(True)), (_proposal(1), _estimate(False))]
    emb = {
        0: _embedding(0, [1.0, 0.0]),
        1: AppearanceEmbedding(proposal_id=1, vector=np.zeros(2, dtype=np.float32), coverage=0.0),
    }
    result = discover([items[1]], [items[0]], emb, cluster_count=1, mobile_fraction_threshold=0.05, seed=0)
    assert result.unembeddable_ids == [1]
    assert sorted(m.proposal_id for m in result.mobiles) == [0]


def test_discover_lowers_k_with_warning():
    items = [(_proposal(i), _estimate(True)) for i in range(3)]
    emb = {i: _embedding(i, np.eye(4)[i]) for i in range(3)}
    with pytest.warns(RuntimeWarning, match="lowering"):
        result = discover([], items, emb, cluster_count=10, mobile_fraction_threshold=0.05, seed=0)
    assert len(result.clusters) <= 3


# ---------------------------------------------------------------------------
# pseudo-classes and prototypes
# ---------------------------------------------------------------------------


def _mobile(pid, vec):
    from mobidisc.discovery import MobileObject

    return MobileObject(
        proposal_id=pid,
        proposal=_proposal(pid),
        motion=_estimate(False),
        embedding=_embedding(pid, vec),
        cluster_id=1,
    )


def test_assign_pseudo_classes_single_class():
    mobiles = [_mobile(i, [1.0, 0.0]) for i in range(4)]
    out, centroids = assign_pseudo_classes(mobiles, 1, seed=0)
    assert all(m.pseudo_class == 1 for m in out)
    assert centroids.shape == (1, 2)


def test_assign_pseudo_classes_pure_archetypes():
    mobiles = [_mobile(i, np.eye(2)[i % 2]) for i in range(8)]
    out, _ = assign_pseudo_classes(mobiles, 2, seed=0)
    groups = {}
    for m in out:
        groups.setdefault(m.pseudo_class, set()).add(m.proposal_id % 2)
    assert all(len(v) == 1 for v in groups.values())
    assert {m.pseudo_class for m in out} == {1, 2}


def test_assign_pseudo_classes_too_many_classes():
    mobiles = [_mobile(0, [1.0, 0.0])]
    with pytest.raises(ValueError):
        assign_pseudo_classes(mobiles, 2, seed=0)


def test_match_prototypes_identity_and_orthogonal():
    protos = [
        ClassPrototype("vehicle", np.array([1.0, 0.0, 0.0])),
        ClassPrototype("pedestrian", np.array([0.0, 1.0, 0.0])),
    ]
    centroids = np.array([[0.0, 2.0, 0.0], [0.5, 0.0, 0.0]])
    mapping = match_prototypes(centroids, protos)
    assert mapping == {1: "pedestrian", 2: "vehicle"}


def test_match_prototypes_table_oracle():
    rng = np.random.default_rng(8)
    protos = []
    for i, name in enumerate(("a", "b")):
        v = rng.normal(size=5)
        protos.append(ClassPrototype(name, v / np.linalg.norm(v)))
    centroids = rng.normal(size=(3, 5))
    mapping = match_prototypes(centroids, protos)
    for row, assigned in zip(centroids, mapping.values()):
        sims = [float(row @ p.vector / np.linalg.norm(row)) for p in protos]
        assert assigned == protos[int(np.argmax(sims))].label


def test_match_prototypes_scale_invariant():
    protos = [
        ClassPrototype("a", np.array([1.0, 0.0])),
        ClassPrototype("b", np.array([0.0, 1.0])),
    ]
    centroids = np.array([[0.3, 0.8]])
    assert match_prototypes(centroids, protos) == match_prototypes(100.0 * centroids, protos)


def test_match_prototypes_zero_centroid_rejected():
    protos = [ClassPrototype("a", np.array([1.0, 0.0]))]
    with pytest.raises(ValueError):
        match_prototypes(np.zeros((1, 2)), protos)


def test_prototype_must_be_unit_norm():
    with pytest.raises(ValueError):
        ClassPrototype("a", np.array([1.0, 1.0]))


# ---------------------------------------------------------------------------
# size prior
# ---------------------------------------------------------------------------


def test_size_prior_basic():
    protos = [("car", 4.6, 1.9), ("pedestrian", 0.7, 0.7)]
    assert size_prior_assign([(4.5, 1.9)], protos) == ["car"]
    assert size_prior_assign([(0.8, 0.6)], protos) == ["pedestrian"]


def test_size_prior_exact_match():
    protos = [("car", 4.6, 1.9), ("pedestrian", 0.7, 0.7)]
    assert size_prior_assign([(0.7, 0.7)], protos) == ["pedestrian"]


def test_size_prior_degenerate_box_ties_to_first():
    protos = [("car", 4.6, 1.9), ("pedestrian", 0.7, 0.7)]
    assert size_prior_assign([(0.0, 0.0)], protos) == ["car"]


def test_size_prior_matches_direct_iou_table():
    rng = np.random.default_rng(9)
    protos = [("a", 4.0, 2.0), ("b", 1.0, 1.0), ("c", 10.0, 3.0)]
    for _ in range(50):
        l, w = sorted(rng.uniform(0.2, 12, 2), reverse=True)
        best = None
        for name, pl, pw in protos:
            inter = min(l, pl) * min(w, pw)
            iou = inter / (l * w + pl * pw - inter)
            if best is None or iou > best[0]:
                best = (iou, name)
        assert size_prior_assign([(l, w)], protos) == [best[1]]


def test_median_area_prototypes_picks_actual_box():
    boxes = [("car", 4.0, 2.0), ("car", 4.5, 1.8), ("car", 5.0, 2.2), ("ped", 0.7, 0.6)]
    protos = dict()
    for name, l, w in median_area_prototypes(boxes):
        protos[name] = (l, w)
    assert protos["car"] == (4.5, 1.8)
    assert protos["ped"] == (0.7, 0.6)
