"""Config documents, point-cloud files and procedural scenes."""

import numpy as np
import pytest

from sibsgrasp.config import RunConfig, dump_config, load_config
from sibsgrasp.errors import FormatError, ParseError
from sibsgrasp.geometry import PointCloud
from sibsgrasp.hand_model import primitive_axis_distances
from sibsgrasp.pointio import ply_bytes, read_cloud, read_ply, write_ply, write_xyz
from sibsgrasp.scenes import (CLUTTER, RECIPES, TABLE, TARGET, clearance, make_fixture,
                              make_scene, perturb_pose)
from sibsgrasp.geometry import so3_log

# config


def test_config_defaults_roundtrip():
    cfg = load_config(dump_config(RunConfig()))
    assert cfg == RunConfig()
    assert cfg.weights.lambdas == (5.0, 1.0, 1000.0, 1.0)
    assert cfg.weights.alphas == (80.0, 100.0, 2.0)
    assert cfg.optimizer.trials == 5 and cfg.ibs.resolution == 40


def test_config_partial_override():
    cfg = load_config("optimizer: {trials: 3}\npipeline:\n  init_joints: open\n")
    assert cfg.optimizer.trials == 3 and cfg.optimizer.max_iters == 300
    assert cfg.pipeline.init_joints == "open"


def test_empty_config():
    assert load_config("") == RunConfig()


@pytest.mark.parametrize("text, line", [
    ("optimiser: {trials: 3}\n", 1),
    ("weights:\n  lambda1: 5\noptimizer:\n  trails: 3\n", 3),
    ("optimizer: {trials: 0}\n", 1),
    ("pipeline: {init_joints: closed}\n", 1),
    # unclosed flow sequence is reported where the document ends
    ("optimizer: [1, 2\n", 2),
])
def test_config_errors_carry_line(text, line):
    with pytest.raises(ParseError) as exc:
        load_config(text)
    assert exc.value.line == line


# point clouds


@pytest.mark.parametrize("binary", [False, True])
def test_ply_roundtrip(tmp_path, binary):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(50, 3))
    cols = rng.integers(0, 256, (50, 3))
    p = tmp_path / "c.ply"
    write_ply(p, PointCloud(pts), colors=cols, binary=binary)
    cloud, back = read_ply(p, with_colors=True)
    assert np.array_equal(cloud.points, pts)
    assert np.array_equal(back, cols)


def test_xyz_roundtrip(tmp_path):
    pts = np.random.default_rng(1).normal(size=(20, 3))
    write_xyz(tmp_path / "c.xyz", PointCloud(pts))
    assert np.array_equal(read_cloud(tmp_path / "c.xyz").points, pts)


def test_ply_rejects_garbage():
    with pytest.raises(FormatError):
        read_ply(b"not a ply")
    head = ply_bytes(PointCloud(np.zeros((3, 3))), binary=True)
    with pytest.raises(FormatError):
        read_ply(head[:-5])


def test_empty_ply(tmp_path):
    write_ply(tmp_path / "e.ply", PointCloud(np.zeros((0, 3))))
    assert len(read_cloud(tmp_path / "e.ply")) == 0


# scenes


@pytest.mark.parametrize("recipe", RECIPES)
def test_scene_deterministic_and_dense(recipe):
    a, b = make_scene(recipe, 4), make_scene(recipe, 4)
    assert np.array_equal(a.cloud.points, b.cloud.points)
    assert not np.array_equal(a.cloud.points, make_scene(recipe, 5).cloud.points)
    table = a.points_with_tag(TABLE)
    # table spans 0.4 m x 0.4 m
    assert len(table) / 0.16 >= 1e4
    assert len(a.points_with_tag(TARGET)) > 0
    assert (len(a.points_with_tag(CLUTTER)) > 0) == (recipe == "two-object-clutter")


def test_unknown_recipe():
    with pytest.raises(ValueError):
        make_scene("teapot", 0)


def test_scene_points_on_objects():
    s = make_scene("two-object-clutter", 2)
    for obj in s.objects:
        pts = s.points_with_tag(obj.tag)
        assert np.abs(obj.signed_distance(pts)).max() <= 1e-9


@pytest.mark.parametrize("recipe", ["sphere-on-plane", "box-on-plane", "two-object-clutter"])
def test_fixture_grasp_is_clear_and_touching(hand, recipe):
    fx = make_fixture(recipe, 0, hand)
    assert fx is not None
    assert clearance(hand, fx.pose, fx.scene.cloud.points) >= 0
    assert np.all(fx.pose.joints >= hand.theta_min) and np.all(fx.pose.joints <= hand.theta_max)
    d, r = primitive_axis_distances(hand, fx.pose, fx.scene.points_with_tag(TARGET))
    assert (d - r).min() <= 2 * fx.contact_gap


def test_perturbation_bounds(pinch4):
    fx = make_fixture("sphere-on-plane", 0, pinch4)
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = perturb_pose(fx.pose, rng)
        assert np.linalg.norm(p.wrist.translation - fx.pose.wrist.translation) <= 0.01
        rel = fx.pose.wrist.rotation.T @ p.wrist.rotation
        assert np.linalg.norm(so3_log(rel)) <= np.radians(10) + 1e-12
        assert np.abs(p.joints - fx.pose.joints).max() <= 0.2
