import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from conftest import random_pose
from sibsgrasp.errors import EmptyInput
from sibsgrasp.geometry import PointCloud, RigidTransform, random_rotation
from sibsgrasp.hand_model import GraspPose
from sibsgrasp.ibs import CanonicalFrame, SparseIbsVolume, compute_ibs
from sibsgrasp.quality import (ContactSet, IbsScore, contact_set_from_volume, force_closure_score,
                               grasp_ranking_rows, ibs_ranking_json, max_penetration_depth,
                               rank_grasps, rank_ibs, rank_residuals, rank_scores)

ORIGIN = CanonicalFrame(np.zeros(3))
X = np.array([1.0, 0, 0])


def fib(n):
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = i * np.pi * (3 - 5 ** 0.5)
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], 1)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def contact_set(normals, n_thumb=1):
    normals = unit(normals)
    pts = np.zeros_like(normals)
    return ContactSet(pts[:n_thumb], normals[:n_thumb], pts[n_thumb:], normals[n_thumb:])


def slab_volume(thumb_at=None, n=40):
    s = np.zeros((n, n, n), bool)
    s[20] = True
    t = np.zeros_like(s)
    if thumb_at is not None:
        t[thumb_at] = True
    return SparseIbsVolume.from_channels(s, t, np.zeros_like(s), ORIGIN)


# contact_set_from_volume


def test_no_contacts_empty():
    cs = contact_set_from_volume(slab_volume())
    assert len(cs) == 0 and cs.thumb == [] and cs.others == []


def test_planar_inward_normal():
    cs = contact_set_from_volume(slab_volume(thumb_at=(20, 5, 5)), hand_hint=[-0.1, 0, 0])
    assert len(cs.thumb) == 1
    assert np.max(np.abs(cs.thumb_normals[0] - X)) <= 1e-6


def shell_volume():
    """Scene sphere (r 3 cm) inside a hand shell (r 4.2 cm) whose +x cap is the
    thumb and -x cap the other finger: a concentric grasp with a known centre."""
    c = np.array([0.0021, -0.0013, 0.0017])
    scene = PointCloud(c + 0.03 * fib(1500))
    d = fib(4000)
    t, o = d[:, 0] > 0.7, d[:, 0] < -0.7
    p = ~t & ~o
    tags = np.r_[np.full(t.sum(), 1), np.full(o.sum(), 2), np.full(p.sum(), 0)]
    hand = PointCloud(c + 0.042 * np.concatenate([d[t], d[o], d[p]]), tags=tags)
    return c, compute_ibs(hand, scene, ORIGIN)


def test_sphere_grasp_normals_point_at_centre():
    c, vol = shell_volume()
    cs = contact_set_from_volume(vol)
    assert len(cs.thumb) > 0 and len(cs.others) > 0
    for p, n in ((cs.thumb_points, cs.thumb_normals), (cs.other_points, cs.other_normals)):
        want = unit(c - p)
        ang = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", want, n), -1, 1)))
        assert ang.max() <= 15
    assert force_closure_score(cs).value > -0.01


def test_contact_set_validates_normals():
    with pytest.raises(ValueError):
        ContactSet(np.zeros((1, 3)), [[2, 0, 0]], np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        ContactSet(np.zeros((2, 3)), [[1, 0, 0]], np.zeros((0, 3)), np.zeros((0, 3)))


# force_closure_score


def test_antipodal_is_zero():
    s = force_closure_score(contact_set([X, -X]))
    assert s.feasible and s.value == 0


def test_parallel_is_minus_one():
    s = force_closure_score(contact_set([X, X]))
    assert s.feasible and s.value == -1


def test_thumb_only_infeasible():
    s = force_closure_score(contact_set([X], n_thumb=1))
    assert not s.feasible and s.value == -math.inf


def test_three_way_fan():
    ang = np.radians([90, 210, 330])
    s = force_closure_score(contact_set(np.c_[np.cos(ang), np.sin(ang), np.zeros(3)]))
    assert abs(s.value) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_score_rotation_invariant(seed, nt, no):
    rng = np.random.default_rng(seed)
    cs = contact_set(rng.normal(size=(nt + no, 3)), n_thumb=nt)
    r = random_rotation(rng)
    a, b = force_closure_score(cs).value, force_closure_score(cs.rotated(r)).value
    assert a == pytest.approx(b, abs=1e-12)
    assert -1 - 1e-12 <= a <= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_antipodal_dominates(seed):
    rng = np.random.default_rng(seed)
    n = unit(rng.normal(size=3))
    other = unit(rng.normal(size=3))
    assert force_closure_score(contact_set([n, -n])).value >= \
        force_closure_score(contact_set([n, other])).value


# ranking


def test_rank_scores_sort():
    scores = [IbsScore(v, True) for v in (-0.3, 0.0, -1.0)]
    assert rank_scores(scores) == [1, 0, 2]


def test_rank_scores_stable():
    assert rank_scores([IbsScore(-0.5, True)] * 4) == [0, 1, 2, 3]


def test_infeasible_ranked_last():
    scores = [IbsScore.infeasible(), IbsScore(-1.0, True), IbsScore.infeasible()]
    assert rank_scores(scores) == [1, 0, 2]


def test_rank_ibs_matches_rescoring():
    rng = np.random.default_rng(0)
    vols = []
    for _ in range(5):
        s = np.zeros((40, 40, 40), bool)
        i = int(rng.integers(12, 28))
        s[i] = True
        t = np.zeros_like(s)
        o = np.zeros_like(s)
        t[i, rng.integers(0, 40), rng.integers(0, 40)] = True
        if rng.random() < 0.8:
            o[i, rng.integers(0, 40), rng.integers(0, 40)] = True
        o &= ~t
        vols.append(SparseIbsVolume.from_channels(s, t, o, ORIGIN))
    _, shell = shell_volume()
    vols.append(shell)
    ranked = rank_ibs(vols)
    rescored = [force_closure_score(contact_set_from_volume(v)).value for v in vols]
    assert ranked[0][0] is vols[int(np.argmax(rescored))]
    assert [s.value for _, s in ranked] == sorted(rescored, reverse=True)


def test_rank_ibs_empty():
    with pytest.raises(EmptyInput):
        rank_ibs([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([-1.0, -0.5, -0.25, 0.0]), min_size=1, max_size=8))
def test_rank_scores_is_sorted_permutation(vals):
    order = rank_scores([IbsScore(v, True) for v in vals])
    assert sorted(order) == list(range(len(vals)))
    ranked = [vals[i] for i in order]
    assert ranked == sorted(vals, reverse=True)
    # ties keep input order
    for a, b in zip(order, order[1:]):
        if vals[a] == vals[b]:
            assert a < b


def test_rank_residuals():
    assert rank_residuals([3.0, 1.0, 2.0]) == [1, 2, 0]
    assert rank_residuals([1.0, float("nan"), 0.5]) == [2, 0, 1]
    assert rank_residuals([float("inf"), float("nan"), 2.0]) == [2, 0, 1]


def test_rank_grasps_selects_argmin():
    rng = np.random.default_rng(1)
    pose = GraspPose(RigidTransform.identity(), [0.0])
    for _ in range(20):
        res = rng.random(5)
        ranked = rank_grasps([(pose, r, k) for k, r in enumerate(res)])
        assert ranked[0].index == int(np.argmin(res)) and ranked[0].detail == ranked[0].index
        assert all(ranked[0].residual <= g.residual for g in ranked)
    with pytest.raises(EmptyInput):
        rank_grasps([])


def test_ranking_json_shapes():
    scores = [IbsScore(-0.2, True), IbsScore.infeasible()]
    doc = ibs_ranking_json([0, 1], scores)
    assert '"score": null' in doc and '"feasible": false' in doc
    pose = GraspPose(RigidTransform.identity(), [0.0])
    rows = grasp_ranking_rows(rank_grasps([(pose, 2.0), (pose, float("nan"))]))
    assert rows == [{"index": 0, "residual": 2.0, "feasible": True},
                    {"index": 1, "residual": None, "feasible": False}]


# max_penetration_depth


def test_no_contact(jaw):
    pose = GraspPose(RigidTransform.identity(), [0.0, 0.0])
    # every sphere of the jaw hand has radius <= 0.01; 1 m away is clear
    assert max_penetration_depth(PointCloud([[1.0, 0, 0]]), jaw, pose) == 0


def test_point_at_twice_radius(jaw):
    pose = GraspPose(RigidTransform.identity(), [0.0, 0.0])
    # thumb sphere centre (0.02, 0, 0.02), radius 0.005; finger sphere at (-0.02, 0, 0.02)
    p = np.array([[0.02, 0, 0.02 + 0.01]])
    assert max_penetration_depth(p, jaw, pose) == 0


def test_full_depth(jaw):
    pose = GraspPose(RigidTransform.identity(), [0.0, 0.0])
    assert max_penetration_depth(PointCloud([[0, 0, 0]]), jaw, pose) == pytest.approx(0.01, abs=1e-15)


def brute_depth(hand, pose, pts):
    best = 0.0
    for kind, a, b, r, _ in hand.world_primitives(pose):
        for p in pts:
            if kind == "sphere":
                d = np.linalg.norm(p - a)
            else:
                d = minimize_scalar(lambda t: np.linalg.norm(p - a - t * (b - a)),
                                    bounds=(0, 1), method="bounded",
                                    options={"xatol": 1e-12}).fun
            best = max(best, r - d)
    return best


def test_depth_matches_brute_force(pinch4):
    rng = np.random.default_rng(2)
    for _ in range(5):
        pose = random_pose(pinch4, rng)
        pts = pose.wrist.translation + rng.normal(scale=0.03, size=(40, 3))
        assert max_penetration_depth(pts, pinch4, pose) == pytest.approx(
            brute_depth(pinch4, pose, pts), abs=1e-9)


def test_empty_scene_depth(pinch4):
    pose = GraspPose(RigidTransform.identity(), pinch4.mid_joints())
    assert max_penetration_depth(np.zeros((0, 3)), pinch4, pose) == 0
