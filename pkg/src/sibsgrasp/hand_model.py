"""Parametric dexterous hands: config loading, kinematics, surface samples, Jacobians.

A hand is a tree of links joined by revolute joints.  Each link carries sphere
and capsule primitives plus authored surface samples tagged ``thumb``,
``other_finger`` or ``palm``.  The optimisation chart over a pose is

    translation  -> added to the wrist translation
    rotation     -> wrist rotation is right-multiplied by ``Exp(rotation)``
    joints       -> added to the joint vector

so the Jacobian columns are ordered ``[tx, ty, tz, wx, wy, wz, q_0 .. q_{dof-1}]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ChartOverflow, ParseError, ValidationError
from .geometry import PointCloud, RigidTransform, so3_exp, so3_log

PALM, THUMB, OTHER = 0, 1, 2
TAG_NAMES = {"palm": PALM, "thumb": THUMB, "other_finger": OTHER}
TAG_LABELS = {v: k for k, v in TAG_NAMES.items()}

SAMPLE_TOL = 1e-6


# --------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def axis_distance(self, pts):
        return np.linalg.norm(np.asarray(pts) - self.center, axis=-1)

    def surface_distance(self, pts):
        """Signed distance of link-frame points to the sphere surface."""
        return self.axis_distance(pts) - self.radius


@dataclass(frozen=True)
class Capsule:
    a: np.ndarray
    b: np.ndarray
    radius: float

    def axis_distance(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        ab = self.b - self.a
        denom = float(ab @ ab)
        if denom == 0.0:
            return np.linalg.norm(pts - self.a, axis=-1)
        t = np.clip((pts - self.a) @ ab / denom, 0.0, 1.0)
        return np.linalg.norm(pts - (self.a + t[..., None] * ab), axis=-1)

    def surface_distance(self, pts):
        return self.axis_distance(pts) - self.radius


# --------------------------------------------------------------------------
# model types


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    parent_link: str
    child_link: str
    axis: np.ndarray
    origin: RigidTransform
    theta_min: float
    theta_max: float


@dataclass(frozen=True, eq=False)
class LinkSpec:
    name: str
    primitives: tuple
    surface_samples: np.ndarray
    finger_tag: str


@dataclass(frozen=True, eq=False)
class GraspPose:
    """Wrist transform plus joint angles (radians)."""

    wrist: RigidTransform
    joints: np.ndarray

    def __post_init__(self):
        j = np.array(self.joints, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(j)):
            raise ValueError("joint angles must be finite")
        j.setflags(write=False)
        object.__setattr__(self, "joints", j)

    def to_dict(self):
        return {
            "wrist": {
                "rotation": [float(v) for v in self.wrist.rotation.reshape(-1)],
                "translation": [float(v) for v in self.wrist.translation],
            },
            "joints": [float(v) for v in self.joints],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            w = d["wrist"]
            rot = np.asarray(w["rotation"], dtype=np.float64)
            if rot.size != 9:
                raise ValueError("rotation needs 9 row-major floats")
            return cls(RigidTransform(rot.reshape(3, 3), w["translation"]), d["joints"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed grasp pose: {exc}") from exc

    def allclose(self, other, atol=1e-12):
        return self.wrist.allclose(other.wrist, atol) and np.allclose(
            self.joints, other.joints, rtol=0, atol=atol)


def poses_to_json(poses) -> str:
    return json.dumps([p.to_dict() for p in poses], indent=2)


def poses_from_json(text):
    data = json.loads(text)
    if isinstance(data, dict):
        data = [data]
    return [GraspPose.from_dict(d) for d in data]


@dataclass(frozen=True)
class PoseParams:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation_local: np.ndarray = field(default_factory=lambda: np.zeros(3))
    joints: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:3].copy(), x[3:6].copy(), x[6:].copy())

    def as_vector(self):
        return np.concatenate([self.translation, self.rotation_local, self.joints])


def _rodrigues(axis, theta):
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


class HandModel:
    """Validated kinematic tree.  Immutable; all methods are pure."""

    def __init__(self, links, joints, name="hand"):
        self.name = name
        self.links = tuple(links)
        self.joints = tuple(joints)
        self._validate_and_index()

    # -- construction ---------------------------------------------------------

    def _validate_and_index(self):
        names = [ln.name for ln in self.links]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate link names", "unique_links")
        self.link_index = {n: i for i, n in enumerate(names)}
        jnames = [j.name for j in self.joints]
        if len(set(jnames)) != len(jnames):
            raise ValidationError("duplicate joint names", "unique_joints")

        parent_joint = [-1] * len(self.links)
        children = {i: [] for i in range(len(self.links))}
        for ji, j in enumerate(self.joints):
            for end in (j.parent_link, j.child_link):
                if end not in self.link_index:
                    raise ValidationError(f"joint {j.name!r} references unknown link {end!r}",
                                          "unknown_link")
            if not (np.isfinite(j.theta_min) and np.isfinite(j.theta_max)):
                raise ValidationError(f"joint {j.name!r} has non-finite limits", "limits")
            if not j.theta_min < j.theta_max:
                raise ValidationError(f"joint {j.name!r}: theta_min must be < theta_max", "limits")
            if max(abs(j.theta_min), abs(j.theta_max)) > 2 * np.pi:
                raise ValidationError(f"joint {j.name!r}: limits outside [-2pi, 2pi]", "limits")
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise ValidationError(f"joint {j.name!r}: axis must be unit length", "axis")
            c = self.link_index[j.child_link]
            p = self.link_index[j.parent_link]
            if c == p:
                raise ValidationError(f"joint {j.name!r} connects a link to itself", "cycle")
            if parent_joint[c] != -1:
                raise ValidationError(f"link {j.child_link!r} has two parent joints", "tree")
            parent_joint[c] = ji
            children[p].append(ji)

        roots = [i for i, pj in enumerate(parent_joint) if pj == -1]
        # walk up from every link; revisiting a link means a cycle
        for start in range(len(self.links)):
            seen = set()
            cur = start
            while parent_joint[cur] != -1:
                if cur in seen:
                    raise ValidationError(
                        f"kinematic loop through link {self.links[cur].name!r}", "cycle")
                seen.add(cur)
                cur = self.link_index[self.joints[parent_joint[cur]].parent_link]
        if len(roots) != 1:
            raise ValidationError(f"expected a single root link, found {len(roots)}", "tree")
        self.root = roots[0]

        order = []
        queue = [self.root]
        while queue:
            li = queue.pop(0)
            for ji in children[li]:
                order.append(ji)
                queue.append(self.link_index[self.joints[ji].child_link])
        self._joint_order = order
        self._parent_joint = parent_joint
        self._joint_parent_link = np.array([self.link_index[j.parent_link] for j in self.joints])
        self._joint_child_link = np.array([self.link_index[j.child_link] for j in self.joints])

        # ancestor joints per link
        anc = np.zeros((len(self.links), len(self.joints)), dtype=bool)
        for li in range(len(self.links)):
            cur = li
            while parent_joint[cur] != -1:
                anc[li, parent_joint[cur]] = True
                cur = self.link_index[self.joints[parent_joint[cur]].parent_link]
        self._ancestors = anc

        tags = {ln.finger_tag for ln in self.links}
        unknown = tags - set(TAG_NAMES)
        if unknown:
            raise ValidationError(f"unknown finger tags {sorted(unknown)}", "tags")
        if "thumb" not in tags or "other_finger" not in tags:
            raise ValidationError("hand needs at least one thumb and one other_finger link", "tags")

        local, link_of, tag_of = [], [], []
        for li, ln in enumerate(self.links):
            s = np.asarray(ln.surface_samples, dtype=np.float64).reshape(-1, 3)
            if len(s):
                if not ln.primitives:
                    raise ValidationError(f"link {ln.name!r} has samples but no primitives",
                                          "samples_on_boundary")
                dist = np.min(np.abs(np.stack([p.surface_distance(s) for p in ln.primitives])),
                              axis=0)
                if np.max(dist) > SAMPLE_TOL:
                    bad = int(np.argmax(dist))
                    raise ValidationError(
                        f"link {ln.name!r} sample {bad} is {dist[bad]:.3g} m off every primitive",
                        "samples_on_boundary")
            local.append(s)
            link_of.append(np.full(len(s), li))
            tag_of.append(np.full(len(s), TAG_NAMES[ln.finger_tag]))
        self.sample_local = np.concatenate(local)
        self.sample_link = np.concatenate(link_of).astype(np.int64)
        self.sample_tag = np.concatenate(tag_of).astype(np.int64)
        for arr in (self.sample_local, self.sample_link, self.sample_tag):
            arr.setflags(write=False)

        adjacent = np.eye(len(self.links), dtype=bool)
        for j in self.joints:
            p, c = self.link_index[j.parent_link], self.link_index[j.child_link]
            adjacent[p, c] = adjacent[c, p] = True
        self.collision_links = ~adjacent
        self.theta_min = np.array([j.theta_min for j in self.joints])
        self.theta_max = np.array([j.theta_max for j in self.joints])

    # -- basic properties -----------------------------------------------------

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def n_samples(self) -> int:
        return len(self.sample_local)

    def mid_joints(self):
        return 0.5 * (self.theta_min + self.theta_max)

    def link_tag(self, li) -> int:
        return TAG_NAMES[self.links[li].finger_tag]

    # -- kinematics -----------------------------------------------------------

    def _frames(self, pose: GraspPose):
        """Link rotations/translations plus joint axes/origins, all in world."""
        joints = np.asarray(pose.joints, dtype=np.float64)
        if joints.shape != (self.dof,):
            raise ValueError(f"pose has {joints.size} joints, hand has {self.dof}")
        L = len(self.links)
        rot = np.empty((L, 3, 3))
        pos = np.empty((L, 3))
        rot[self.root] = pose.wrist.rotation
        pos[self.root] = pose.wrist.translation
        axes = np.empty((self.dof, 3))
        origins = np.empty((self.dof, 3))
        for ji in self._joint_order:
            j = self.joints[ji]
            p = self._joint_parent_link[ji]
            c = self._joint_child_link[ji]
            jr = rot[p] @ j.origin.rotation
            jt = rot[p] @ j.origin.translation + pos[p]
            axes[ji] = jr @ j.axis
            origins[ji] = jt
            rot[c] = jr @ _rodrigues(j.axis, joints[ji])
            pos[c] = jt
        return rot, pos, axes, origins

    def forward_kinematics(self, pose: GraspPose) -> dict:
        """World transform of every link, keyed by link name."""
        rot, pos, _, _ = self._frames(pose)
        return {ln.name: RigidTransform(rot[i], pos[i]) for i, ln in enumerate(self.links)}

    def surface_points(self, pose: GraspPose) -> np.ndarray:
        rot, pos, _, _ = self._frames(pose)
        return self._apply_links(rot, pos)

    def _apply_links(self, rot, pos):
        r = rot[self.sample_link]
        return np.einsum("nij,nj->ni", r, self.sample_local) + pos[self.sample_link]

    def surface_points_and_jacobian(self, pose: GraspPose):
        """World samples ``(N, 3)`` and their Jacobian ``(N, 3, 6 + dof)``."""
        rot, pos, axes, origins = self._frames(pose)
        x = self._apply_links(rot, pos)
        n = len(x)
        jac = np.zeros((n, 3, 6 + self.dof))
        jac[:, 0, 0] = jac[:, 1, 1] = jac[:, 2, 2] = 1.0
        rw = pose.wrist.rotation
        r = x - pose.wrist.translation
        # d x / d w = -(x - t) x (R_w e_k)
        for k in range(3):
            jac[:, :, 3 + k] = np.cross(rw[:, k][None, :], r)
        anc = self._ancestors[self.sample_link]  # (N, dof)
        for ji in range(self.dof):
            mask = anc[:, ji]
            if np.any(mask):
                jac[mask, :, 6 + ji] = np.cross(axes[ji][None, :], x[mask] - origins[ji])
        return x, jac

    def world_primitives(self, pose: GraspPose):
        """Primitives of every link mapped to world: list of (kind, p0, p1, radius, link)."""
        rot, pos, _, _ = self._frames(pose)
        out = []
        for li, ln in enumerate(self.links):
            for prim in ln.primitives:
                if isinstance(prim, Sphere):
                    c = rot[li] @ prim.center + pos[li]
                    out.append(("sphere", c, c, prim.radius, li))
                else:
                    out.append(("capsule", rot[li] @ prim.a + pos[li],
                                rot[li] @ prim.b + pos[li], prim.radius, li))
        return out


# --------------------------------------------------------------------------
# free functions mirroring the operation list


def forward_kinematics(hand: HandModel, pose: GraspPose) -> dict:
    return hand.forward_kinematics(pose)


def sample_hand_surface(hand: HandModel, pose: GraspPose) -> PointCloud:
    """World-frame surface samples, ordered by link then sample, tagged by finger."""
    return PointCloud(hand.surface_points(pose), tags=hand.sample_tag)


def surface_jacobian(hand: HandModel, pose: GraspPose) -> np.ndarray:
    return hand.surface_points_and_jacobian(pose)[1]


def primitive_axis_distances(hand: HandModel, pose: GraspPose, points, links=None):
    """``(P, M)`` distances of points to primitive axes/centres and ``(M,)`` radii."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    prims = [p for p in hand.world_primitives(pose) if links is None or p[4] in links]
    dists = np.empty((len(pts), len(prims)))
    radii = np.empty(len(prims))
    for m, (kind, p0, p1, radius, _) in enumerate(prims):
        ab = p1 - p0
        denom = float(ab @ ab)
        if kind == "sphere" or denom == 0.0:
            dists[:, m] = np.linalg.norm(pts - p0, axis=1)
        else:
            t = np.clip((pts - p0) @ ab / denom, 0.0, 1.0)
            dists[:, m] = np.linalg.norm(pts - (p0 + t[:, None] * ab), axis=1)
        radii[m] = radius
    return dists, radii


def pose_from_params(reference: GraspPose, params) -> GraspPose:
    if not isinstance(params, PoseParams):
        params = PoseParams.from_vector(params)
    w = np.asarray(params.rotation_local, dtype=np.float64)
    if not np.linalg.norm(w) < np.pi:
        raise ChartOverflow(f"|rotation_local| = {np.linalg.norm(w):.6g} >= pi")
    rot = reference.wrist.rotation @ so3_exp(w) if np.any(w) else reference.wrist.rotation
    trans = reference.wrist.translation + np.asarray(params.translation, dtype=np.float64)
    dj = np.asarray(params.joints, dtype=np.float64)
    joints = reference.joints + dj if dj.size else reference.joints
    return GraspPose(RigidTransform(rot, trans), joints)


def params_from_pose(reference: GraspPose, pose: GraspPose) -> PoseParams:
    """Inverse chart (log map) of :func:`pose_from_params`."""
    rel = reference.wrist.rotation.T @ pose.wrist.rotation
    return PoseParams(pose.wrist.translation - reference.wrist.translation,
                      so3_log(rel), pose.joints - reference.joints)


# --------------------------------------------------------------------------
# config loading


class _Lined(dict):
    line = None


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_lined(loader, node):
    d = _Lined(loader.construct_mapping(node, deep=True))
    d.line = node.start_mark.line + 1
    return d


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_lined)


def _req(d, key, path):
    if not isinstance(d, dict):
        raise ParseError(f"expected a mapping at {path}", None, path)
    if key not in d:
        raise ParseError(f"missing key {key!r}", getattr(d, "line", None), f"{path}.{key}")
    return d[key]


def _vec(value, n, d, path):
    try:
        arr = np.asarray(value, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError):
        raise ParseError(f"expected {n} numbers", getattr(d, "line", None), path) from None
    if arr.size != n or not np.all(np.isfinite(arr)):
        raise ParseError(f"expected {n} finite numbers", getattr(d, "line", None), path)
    return arr


def _num(value, d, path):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ParseError("expected a number", getattr(d, "line", None), path) from None
    return v


def _parse_primitive(d, path):
    kind = _req(d, "type", path)
    radius = _num(_req(d, "radius", path), d, f"{path}.radius")
    if not radius > 0:
        raise ValidationError(f"{path}: radius must be positive", "radius")
    if kind == "sphere":
        return Sphere(_vec(_req(d, "center", path), 3, d, f"{path}.center"), radius)
    if kind == "capsule":
        return Capsule(_vec(_req(d, "a", path), 3, d, f"{path}.a"),
                       _vec(_req(d, "b", path), 3, d, f"{path}.b"), radius)
    raise ParseError(f"unknown primitive type {kind!r}", getattr(d, "line", None), f"{path}.type")


def _parse_origin(d, path):
    if d is None:
        return RigidTransform.identity()
    t = _vec(d.get("translation", [0, 0, 0]), 3, d, f"{path}.translation")
    if "rotation" in d:
        r = _vec(d["rotation"], 9, d, f"{path}.rotation").reshape(3, 3)
    elif "rotvec" in d:
        r = so3_exp(_vec(d["rotvec"], 3, d, f"{path}.rotvec"))
    else:
        r = np.eye(3)
    try:
        return RigidTransform(r, t)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}", "rotation") from None


def load_hand(config_text: str) -> HandModel:
    """Build a :class:`HandModel` from YAML hand-config text (see docs/hand_config.md)."""
    try:
        doc = yaml.load(config_text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ParseError(f"invalid YAML: {exc.problem}",
                         None if mark is None else mark.line + 1) from None
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("hand config must be a mapping", 1)

    links = []
    raw_links = _req(doc, "links", "hand")
    if not isinstance(raw_links, list) or not raw_links:
        raise ParseError("links must be a non-empty list", getattr(doc, "line", None), "links")
    for i, ld in enumerate(raw_links):
        path = f"links[{i}]"
        name = str(_req(ld, "name", path))
        tag = str(_req(ld, "tag", path))
        if tag not in TAG_NAMES:
            raise ValidationError(f"{path}: unknown tag {tag!r}", "tags")
        prims = tuple(_parse_primitive(pd, f"{path}.primitives[{k}]")
                      for k, pd in enumerate(_req(ld, "primitives", path) or []))
        raw_s = ld.get("samples") or []
        samples = np.array([_vec(s, 3, ld, f"{path}.samples[{k}]") for k, s in enumerate(raw_s)],
                           dtype=np.float64).reshape(-1, 3)
        links.append(LinkSpec(name, prims, samples, tag))

    joints = []
    for i, jd in enumerate(doc.get("joints") or []):
        path = f"joints[{i}]"
        lim = _vec(_req(jd, "limits", path), 2, jd, f"{path}.limits")
        axis = _vec(_req(jd, "axis", path), 3, jd, f"{path}.axis")
        joints.append(JointSpec(
            name=str(_req(jd, "name", path)),
            parent_link=str(_req(jd, "parent", path)),
            child_link=str(_req(jd, "child", path)),
            axis=axis,
            origin=_parse_origin(jd.get("origin"), f"{path}.origin"),
            theta_min=float(lim[0]),
            theta_max=float(lim[1]),
        ))
    return HandModel(links, joints, name=str(doc.get("name", "hand")))


def load_hand_file(path) -> HandModel:
    return load_hand(Path(path).read_text())


SHIPPED_HANDS = ("pinch4", "quad16")


def shipped_hand(name: str) -> HandModel:
    """One of the bundled reference hands: ``pinch4`` (2 fingers, 4 DoF) or
    ``quad16`` (4 fingers, 16 DoF)."""
    return load_hand(shipped_hand_text(name))


def shipped_hand_text(name: str) -> str:
    if name not in SHIPPED_HANDS:
        raise KeyError(f"unknown shipped hand {name!r}; choose from {SHIPPED_HANDS}")
    return resources.files("sibsgrasp").joinpath("data", "hands", f"{name}.yaml").read_text()


def hand_config_text(spec: str) -> str:
    """Raw config text behind a ``builtin:<name>`` spec or a file path."""
    if spec.startswith("builtin:"):
        return shipped_hand_text(spec.split(":", 1)[1])
    return Path(spec).read_text()


def resolve_hand(spec: str) -> HandModel:
    """``builtin:<name>`` or a path to a config file."""
    return load_hand(hand_config_text(spec))
