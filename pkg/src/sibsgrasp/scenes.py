"""Procedural desk-scale scenes and ground-truth grasp synthesis.

Scenes are a square table patch at ``z = 0`` with one or two objects resting
on it.  Per-point tags: 0 table, 1 target object, 2 clutter object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .geometry import PointCloud, RigidTransform
from .hand_model import GraspPose, HandModel, primitive_axis_distances

TABLE, TARGET, CLUTTER = 0, 1, 2
RECIPES = ("sphere-on-plane", "box-on-plane", "two-object-clutter")

TABLE_SPACING = 0.005
OBJECT_SPACING = 0.003
TABLE_HALF = 0.2


@dataclass(frozen=True)
class SceneObject:
    kind: str  # "sphere" | "box"
    center: np.ndarray
    size: np.ndarray  # sphere: (r, r, r); box: half extents in its own frame
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    tag: int = TARGET

    def signed_distance(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        if self.kind == "sphere":
            return np.linalg.norm(pts - self.center, axis=-1) - self.size[0]
        local = (pts - self.center) @ self.rotation
        q = np.abs(local) - self.size
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside


@dataclass(frozen=True, eq=False)
class Scene:
    cloud: PointCloud
    objects: tuple
    name: str = "scene"

    @property
    def target(self) -> SceneObject:
        return next(o for o in self.objects if o.tag == TARGET)

    def points_with_tag(self, tag):
        return self.cloud.points[self.cloud.tags == tag]


def _grid_square(half, spacing):
    ax = np.arange(-half, half + 1e-12, spacing)
    gx, gy = np.meshgrid(ax, ax, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _sphere_points(center, radius, spacing):
    n = max(32, int(round(4 * np.pi * radius**2 / spacing**2)))
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    r = np.sqrt(1.0 - z * z)
    pts = center + radius * np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return pts[pts[:, 2] >= 0.0]


def _box_points(center, half, rotation, spacing):
    faces = []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        u = np.arange(-half[others[0]], half[others[0]] + 1e-12,
                      2 * half[others[0]] / max(1, round(2 * half[others[0]] / spacing)))
        v = np.arange(-half[others[1]], half[others[1]] + 1e-12,
                      2 * half[others[1]] / max(1, round(2 * half[others[1]] / spacing)))
        gu, gv = np.meshgrid(u, v, indexing="ij")
        for sign in (-1.0, 1.0):
            if axis == 2 and sign < 0:
                continue  # resting face is not visible
            p = np.zeros((gu.size, 3))
            p[:, others[0]] = gu.ravel()
            p[:, others[1]] = gv.ravel()
            p[:, axis] = sign * half[axis]
            faces.append(p)
    local = np.unique(np.round(np.concatenate(faces), 12), axis=0)
    return local @ rotation.T + center


def _table(center_xy, objects):
    xy = _grid_square(TABLE_HALF, TABLE_SPACING) + center_xy
    pts = np.column_stack([xy, np.zeros(len(xy))])
    # drop table points hidden inside an object footprint
    keep = np.ones(len(pts), dtype=bool)
    for o in objects:
        keep &= o.signed_distance(pts + [0, 0, 1e-4]) > 0
    return pts[keep]


def _make_sphere(rng, xy, tag):
    r = rng.uniform(0.024, 0.032)
    return SceneObject("sphere", np.array([xy[0], xy[1], r]), np.array([r, r, r]), np.eye(3), tag)


def _make_box(rng, xy, tag):
    half = np.array([rng.uniform(0.018, 0.026), rng.uniform(0.02, 0.03), rng.uniform(0.025, 0.04)])
    yaw = rng.uniform(-np.pi, np.pi)
    rot = Rotation.from_euler("z", yaw).as_matrix()
    return SceneObject("box", np.array([xy[0], xy[1], half[2]]), half, rot, tag)


def _assemble(objects, name):
    parts, tags = [], []
    for o in objects:
        pts = (_sphere_points(o.center, o.size[0], OBJECT_SPACING) if o.kind == "sphere"
               else _box_points(o.center, o.size, o.rotation, OBJECT_SPACING))
        parts.append(pts)
        tags.append(np.full(len(pts), o.tag))
    target = next(o for o in objects if o.tag == TARGET)
    table = _table(target.center[:2], objects)
    parts.insert(0, table)
    tags.insert(0, np.full(len(table), TABLE))
    return Scene(PointCloud(np.concatenate(parts), tags=np.concatenate(tags)), tuple(objects), name)


def make_scene(recipe: str, seed: int = 0) -> Scene:
    """Deterministic scene for one of :data:`RECIPES`."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-0.05, 0.05, size=2)
    if recipe == "sphere-on-plane":
        objs = [_make_sphere(rng, xy, TARGET)]
    elif recipe == "box-on-plane":
        objs = [_make_box(rng, xy, TARGET)]
    elif recipe == "two-object-clutter":
        target = _make_sphere(rng, xy, TARGET) if rng.random() < 0.5 else _make_box(rng, xy, TARGET)
        ang = rng.uniform(-np.pi, np.pi)
        dist = rng.uniform(0.085, 0.10)
        other_xy = xy + dist * np.array([np.cos(ang), np.sin(ang)])
        other = _make_box(rng, other_xy, CLUTTER)
        objs = [target, other]
    else:
        raise ValueError(f"unknown scene recipe {recipe!r}; choose from {RECIPES}")
    return _assemble(objs, f"{recipe}:{seed}")


def parse_scene_spec(spec: str):
    """``recipe:<name>:<seed>`` -> Scene; anything else is treated as a file path."""
    if spec.startswith("recipe:"):
        _, name, seed = (spec.split(":") + ["0"])[:3]
        return make_scene(name, int(seed))
    return None


# --------------------------------------------------------------------------
# hand-vs-points clearance


def clearance(hand: HandModel, pose: GraspPose, points, links=None) -> float:
    """Smallest signed gap between points and hand primitives (negative = inside)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.inf
    d, r = primitive_axis_distances(hand, pose, pts, links)
    if d.size == 0:
        return np.inf
    return float(np.min(d - r[None, :]))


# --------------------------------------------------------------------------
# grasp synthesis


def finger_chains(hand: HandModel):
    """Joint indices of each finger (subtree hanging off the root link), plus the
    link indices in that subtree."""
    chains = []
    for ji, j in enumerate(hand.joints):
        if hand.link_index[j.parent_link] != hand.root:
            continue
        joints, links = [ji], [hand.link_index[j.child_link]]
        frontier = [hand.link_index[j.child_link]]
        while frontier:
            li = frontier.pop()
            for jk, jj in enumerate(hand.joints):
                if hand.link_index[jj.parent_link] == li:
                    joints.append(jk)
                    links.append(hand.link_index[jj.child_link])
                    frontier.append(hand.link_index[jj.child_link])
        chains.append((sorted(joints), sorted(links)))
    return chains


def _closing_path(hand: HandModel):
    """Per-joint (open, closed) angles.  Joints whose range straddles zero by a
    small margin on both sides (abduction) stay fixed; flexion joints sweep."""
    q_open = np.empty(hand.dof)
    q_close = np.empty(hand.dof)
    for ji, j in enumerate(hand.joints):
        if j.theta_min < 0 and j.theta_max <= 0.5:
            q_open[ji] = q_close[ji] = 0.0  # abduction-like joint
        else:
            q_open[ji] = j.theta_min
            q_close[ji] = j.theta_min + 0.85 * (j.theta_max - j.theta_min)
    return q_open, q_close


def open_joints(hand: HandModel) -> np.ndarray:
    """Flexion joints at their lower limit, abduction joints at zero."""
    return _closing_path(hand)[0]


@dataclass
class GraspFixture:
    scene: Scene
    hand: HandModel
    pose: GraspPose
    contact_gap: float


def synthesize_grasp(hand: HandModel, scene: Scene, rng: np.random.Generator,
                     gap: float = 0.0015, max_tilt: float = np.radians(25), attempts: int = 200):
    """Close each finger of ``hand`` onto the target object until its clearance
    reaches ``gap``; returns a pose whose thumb and at least one other finger
    touch the target and nothing penetrates the scene, or ``None``."""
    from .hand_model import OTHER, THUMB

    target = scene.target
    pts = scene.cloud.points
    tree = cKDTree(pts)
    near = np.asarray(tree.query_ball_point(target.center, 0.2), dtype=int)
    objects = pts[near][scene.cloud.tags[near] != TABLE]
    target_pts = scene.points_with_tag(TARGET)
    q_open, q_close = _closing_path(hand)
    chains = finger_chains(hand)
    # open-hand reach along the approach axis decides how far the palm can sink
    reach = float(np.max(hand.surface_points(GraspPose(RigidTransform.identity(), q_open))[:, 2]))
    height = float(target.center[2])
    depth_lo = height + 0.008
    depth_hi = max(depth_lo + 0.02, reach + 0.005)

    for _ in range(attempts):
        tilt = rng.uniform(0, max_tilt)
        az = rng.uniform(-np.pi, np.pi)
        approach = np.array([np.sin(tilt) * np.cos(az), np.sin(tilt) * np.sin(az), -np.cos(tilt)])
        if target.kind == "box":
            # close across a vertical box face
            face = target.rotation[:, rng.integers(0, 2)]
            xh = face - (face @ approach) * approach
        else:
            ang = rng.uniform(-np.pi, np.pi)
            tmp = np.array([np.cos(ang), np.sin(ang), 0.0])
            xh = tmp - (tmp @ approach) * approach
        xh /= np.linalg.norm(xh)
        yh = np.cross(approach, xh)
        rot = np.column_stack([xh, yh, approach])
        depth = rng.uniform(depth_lo, depth_hi)
        wrist = RigidTransform(rot, target.center - approach * depth)

        joints = q_open.copy()
        # the open hand may graze the table; only the objects block the sweep
        if clearance(hand, GraspPose(wrist, joints), objects) < 3 * gap:
            continue
        for cj, cl in chains:
            def clear_at(s):
                q = joints.copy()
                q[cj] = q_open[cj] + s * (q_close[cj] - q_open[cj])
                return clearance(hand, GraspPose(wrist, q), objects, links=set(cl))

            # coarse scan for the first blocked step, fingers can pass clean through
            steps = np.linspace(0.0, 1.0, 25)
            hit = next((k for k, st in enumerate(steps) if clear_at(st) <= gap), None)
            if hit is None:
                # finger closes on nothing: leave it half closed
                joints[cj] = q_open[cj] + 0.5 * (q_close[cj] - q_open[cj])
                continue
            lo, hi = steps[max(hit - 1, 0)], steps[hit]
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                if clear_at(mid) > gap:
                    lo = mid
                else:
                    hi = mid
            joints[cj] = q_open[cj] + lo * (q_close[cj] - q_open[cj])
        pose = GraspPose(wrist, joints)
        if clearance(hand, pose, pts) < 0:
            continue
        # thumb and some other finger must end on the target
        touching = set()
        for cj, cl in chains:
            if clearance(hand, pose, target_pts, links=set(cl)) <= 2 * gap:
                touching.add(hand.link_tag(cl[0]))
        if THUMB in touching and OTHER in touching:
            return pose
    return None


def make_fixture(recipe: str, seed: int, hand: HandModel, gap: float = 0.0015):
    """Scene plus a synthesized ground-truth grasp; deterministic in ``seed``."""
    scene = make_scene(recipe, seed)
    rng = np.random.default_rng(10_000 + seed)
    pose = synthesize_grasp(hand, scene, rng, gap=gap)
    if pose is None:
        return None
    return GraspFixture(scene, hand, pose, gap)


def perturb_pose(pose: GraspPose, rng: np.random.Generator, max_translation=0.01,
                 max_rotation=np.radians(10), max_joint=0.2) -> GraspPose:
    """Random perturbation bounded by the given norms (translation, rotation angle,
    per-joint offset)."""
    from .geometry import so3_exp

    def ball(radius):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        return v * radius * rng.uniform() ** (1 / 3)

    dt = ball(max_translation)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    w = axis * rng.uniform(0, max_rotation)
    dq = rng.uniform(-max_joint, max_joint, size=len(pose.joints))
    rot = pose.wrist.rotation @ so3_exp(w)
    return GraspPose(RigidTransform(rot, pose.wrist.translation + dt), pose.joints + dq)
