import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import JAW, random_pose
from sibsgrasp.errors import ChartOverflow, ParseError, ValidationError
from sibsgrasp.geometry import RigidTransform, so3_exp
from sibsgrasp.hand_model import (OTHER, PALM, SHIPPED_HANDS, THUMB, GraspPose, PoseParams,
                                  forward_kinematics, hand_config_text, load_hand,
                                  params_from_pose, pose_from_params, poses_from_json,
                                  poses_to_json, primitive_axis_distances, resolve_hand,
                                  sample_hand_surface, shipped_hand, shipped_hand_text,
                                  surface_jacobian)

ONE_LINK = """\
links:
- name: a
  tag: thumb
  primitives: [{type: sphere, center: [0, 0, 0], radius: 0.01}]
  samples: [[0, 0, 0.01]]
- name: b
  tag: other_finger
  primitives: [{type: sphere, center: [0, 0, 0], radius: 0.01}]
  samples: [[0, 0, -0.01]]
joints:
- {name: j, parent: a, child: b, axis: [0, 0, 1], limits: [-1, 1]}
"""


def test_minimal_jaw(jaw):
    assert jaw.dof == 2
    assert jaw.n_samples == 2
    assert sorted(jaw.sample_tag.tolist()) == [THUMB, OTHER]


def test_shipped_hands_load():
    dofs = {name: shipped_hand(name).dof for name in SHIPPED_HANDS}
    assert dofs == {"pinch4": 4, "quad16": 16}


def test_resolve_hand_builtin_and_file(tmp_path):
    p = tmp_path / "jaw.yaml"
    p.write_text(JAW)
    assert resolve_hand(str(p)).dof == 2
    assert resolve_hand("builtin:pinch4").dof == 4
    assert hand_config_text("builtin:quad16") == shipped_hand_text("quad16")


def test_bad_limits():
    bad = JAW.replace("limits: [-1, 1],\n   origin: {translation: [0.02",
                      "limits: [1, 1],\n   origin: {translation: [0.02")
    with pytest.raises(ValidationError) as exc:
        load_hand(bad)
    assert exc.value.invariant == "limits"


def test_cycle_rejected():
    # palm -> thumb -> palm
    bad = JAW + "- {name: j_back, parent: thumb, child: palm, axis: [0, 1, 0], limits: [-1, 1]}\n"
    with pytest.raises(ValidationError) as exc:
        load_hand(bad)
    assert exc.value.invariant in ("cycle", "tree")
    self_loop = JAW.replace("parent: palm, child: thumb", "parent: thumb, child: thumb")
    with pytest.raises(ValidationError) as exc:
        load_hand(self_loop)
    assert exc.value.invariant == "cycle"


def test_sample_off_primitive_rejected():
    bad = JAW.replace("- [0, 0, 0.025]", "- [0, 0, 0.03]", 1)
    with pytest.raises(ValidationError) as exc:
        load_hand(bad)
    assert exc.value.invariant == "samples_on_boundary"


def test_missing_thumb_rejected():
    with pytest.raises(ValidationError):
        load_hand(JAW.replace("tag: thumb", "tag: other_finger"))


@pytest.mark.parametrize("text, line", [
    ("links: [", None),
    ("links:\n- name: a\n  tag: thumb\n", 2),
])
def test_parse_errors(text, line):
    with pytest.raises(ParseError) as exc:
        load_hand(text)
    if line is not None:
        assert exc.value.line == line


def test_unit_axis_required():
    with pytest.raises(ValidationError):
        load_hand(JAW.replace("axis: [0, 1, 0], limits: [-1, 1],\n   origin: {translation: [0.02",
                              "axis: [0, 2, 0], limits: [-1, 1],\n   origin: {translation: [0.02"))


def test_zero_configuration(jaw):
    fk = forward_kinematics(jaw, GraspPose(RigidTransform.identity(), [0, 0]))
    assert fk["palm"].allclose(RigidTransform.identity(), 0)
    assert np.array_equal(fk["thumb"].translation, [0.02, 0, 0])
    assert np.array_equal(fk["finger"].rotation, np.eye(3))


def test_quarter_turn():
    h = load_hand(ONE_LINK)
    fk = forward_kinematics(h, GraspPose(RigidTransform.identity(), [np.pi / 2]))
    assert np.allclose(fk["b"].rotation[:, 0], [0, 1, 0], atol=1e-12)


def test_fk_left_invariance(hand):
    rng = np.random.default_rng(0)
    for _ in range(10):
        pose = random_pose(hand, rng)
        local = GraspPose(RigidTransform.identity(), pose.joints)
        inv = pose.wrist.inverse()
        a = forward_kinematics(hand, pose)
        b = forward_kinematics(hand, local)
        for name in a:
            assert inv.compose(a[name]).allclose(b[name], atol=1e-12)


def test_single_sample_identity():
    h = load_hand(ONE_LINK)
    c = sample_hand_surface(h, GraspPose(RigidTransform.identity(), [0]))
    assert np.array_equal(c.points[0], [0, 0, 0.01])
    assert c.tags[0] == THUMB


def test_sample_free_finger_link_allowed():
    h = load_hand(ONE_LINK.replace("samples: [[0, 0, -0.01]]", "samples: []"))
    assert h.n_samples == 1 and not np.any(h.sample_tag == OTHER)


def test_shipped_tag_partition(hand):
    tags = set(hand.sample_tag.tolist())
    assert tags == {PALM, THUMB, OTHER}


def test_translation_shift(hand):
    q = hand.mid_joints()
    base = sample_hand_surface(hand, GraspPose(RigidTransform.identity(), q)).points
    moved = sample_hand_surface(hand, GraspPose(RigidTransform(np.eye(3), [0.1, 0, 0]), q)).points
    assert np.max(np.abs(moved - base - [0.1, 0, 0])) <= 1e-15


def test_samples_on_primitive_boundary(hand):
    rng = np.random.default_rng(1)
    for _ in range(5):
        pose = random_pose(hand, rng)
        pts = hand.surface_points(pose)
        for li in range(len(hand.links)):
            mask = hand.sample_link == li
            if not mask.any():
                continue
            d, r = primitive_axis_distances(hand, pose, pts[mask], links={li})
            assert np.max(np.min(np.abs(d - r), axis=1)) <= 1e-6


def test_palm_tag_present(hand):
    assert np.any(hand.sample_tag == PALM)


def test_zero_params_identity(hand):
    ref = random_pose(hand, np.random.default_rng(2))
    out = pose_from_params(ref, np.zeros(6 + hand.dof))
    assert np.array_equal(out.wrist.rotation, ref.wrist.rotation)
    assert np.array_equal(out.wrist.translation, ref.wrist.translation)
    assert np.array_equal(out.joints, ref.joints)


def test_local_quarter_turn():
    ref = GraspPose(RigidTransform.identity(), [0.0])
    out = pose_from_params(ref, PoseParams(np.zeros(3), np.array([0, 0, np.pi / 2]), np.zeros(1)))
    rz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    assert np.max(np.abs(out.wrist.rotation - rz)) <= 1e-12


def test_chart_overflow():
    ref = GraspPose(RigidTransform.identity(), [0.0])
    with pytest.raises(ChartOverflow):
        pose_from_params(ref, np.r_[0, 0, 0, np.pi, 0, 0, 0])


def test_chart_roundtrip(hand):
    rng = np.random.default_rng(3)
    for _ in range(100):
        ref = random_pose(hand, rng)
        x = rng.normal(scale=0.2, size=6 + hand.dof)
        back = params_from_pose(ref, pose_from_params(ref, x)).as_vector()
        assert np.max(np.abs(back - x)) <= 1e-10


def test_translation_columns_identity(hand):
    jac = surface_jacobian(hand, random_pose(hand, np.random.default_rng(4)))
    assert np.array_equal(jac[:, :, :3], np.broadcast_to(np.eye(3), (len(jac), 3, 3)))


def test_joint_column_is_rigid_velocity():
    h = load_hand(ONE_LINK)
    pose = GraspPose(RigidTransform.identity(), [0.3])
    jac = surface_jacobian(h, pose)
    # link b's sample is on the joint axis, so its column vanishes
    assert np.allclose(jac[1, :, 6], 0)
    h2 = load_hand(ONE_LINK.replace("samples: [[0, 0, -0.01]]", "samples: [[0.01, 0, 0]]"))
    jac = surface_jacobian(h2, pose)
    x = h2.surface_points(pose)
    col = jac[1, :, 6]
    radial = x[1] - np.array([0, 0, x[1][2]])
    assert np.linalg.norm(col) == pytest.approx(np.linalg.norm(radial), abs=1e-15)
    assert abs(col @ [0, 0, 1]) <= 1e-15 and abs(col @ radial) <= 1e-15


def fd_jacobian(hand, pose, eps=1e-6):
    n = 6 + hand.dof
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = eps
        xp = hand.surface_points(pose_from_params(pose, e))
        xm = hand.surface_points(pose_from_params(pose, -e))
        cols.append((xp - xm) / (2 * eps))
    return np.stack(cols, axis=-1)


def test_jacobian_vs_finite_differences(hand):
    rng = np.random.default_rng(5)
    for _ in range(5):
        pose = random_pose(hand, rng)
        jac = surface_jacobian(hand, pose)
        fd = fd_jacobian(hand, pose)
        rel = np.abs(jac - fd) / np.maximum(np.abs(fd), 1e-3)
        assert rel.max() <= 1e-3


def test_pose_json_roundtrip():
    rng = np.random.default_rng(6)
    poses = [GraspPose(RigidTransform(so3_exp(rng.normal(size=3)), rng.normal(size=3)),
                       rng.normal(size=4)) for _ in range(3)]
    back = poses_from_json(poses_to_json(poses))
    assert all(a.allclose(b, 0) for a, b in zip(poses, back))


def test_pose_wrong_dof(hand):
    with pytest.raises(ValueError):
        hand.surface_points(GraspPose(RigidTransform.identity(), np.zeros(hand.dof + 1)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_jaw_samples_stay_on_spheres(a, b):
    from sibsgrasp.hand_model import primitive_axis_distances as pad
    h = load_hand(JAW)
    pose = GraspPose(RigidTransform.identity(), [a, b])
    d, r = pad(h, pose, h.surface_points(pose))
    assert np.min(np.abs(d - r), axis=1).max() <= 1e-12


def test_documented_example_loads():
    import re
    from pathlib import Path
    text = (Path(__file__).resolve().parents[1] / "docs" / "hand_config.md").read_text()
    h = load_hand(re.search(r"```yaml\n(.*?)```", text, re.S).group(1))
    assert h.dof == 2 and h.n_samples == 2
