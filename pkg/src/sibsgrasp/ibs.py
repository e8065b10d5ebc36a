"""Sparse interaction bisector surface (IBS) volumes.

A volume is a cubic occupancy grid in a canonical frame (grasp seed point +
wrist rotation) with three boolean channels:

* ``ibs_surface``   voxels on the discrete bisector between hand and scene
* ``thumb_contact`` surface voxels where the thumb touches the scene
* ``other_contact`` surface voxels where another finger touches the scene

The bisector is located as a zero crossing of ``f(v) = d(v, scene) - d(v, hand)``
between 6-neighbouring voxel centres.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from .errors import EmptyCrop, EmptyInput, FormatError, InsufficientPoints, NoSurface
from .geometry import (PointCloud, SpatialIndex, VoxelGrid, as_point, check_rotation,
                       estimate_normals)
from .hand_model import (OTHER, THUMB, GraspPose, HandModel, primitive_axis_distances,
                         sample_hand_surface)

CHANNELS = ("ibs_surface", "thumb_contact", "other_contact")
DEFAULT_VOXEL_SIZE = 0.005
DEFAULT_RESOLUTION = 40

SIBS_MAGIC = b"SIBS"
SIBS_VERSION = 1
_HEAD = struct.Struct("<4sHHd3d9d")
SIBS_HEADER_SIZE = _HEAD.size  # 112


@dataclass(frozen=True, eq=False)
class CanonicalFrame:
    """Seed point (world) plus the wrist rotation that orients the volume."""

    seed: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        s = as_point(self.seed).copy()
        s.setflags(write=False)
        r = check_rotation(self.rotation).copy()
        r.setflags(write=False)
        object.__setattr__(self, "seed", s)
        object.__setattr__(self, "rotation", r)

    def to_canonical(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.seed) @ self.rotation

    def to_world(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.seed

    def pose_to_canonical(self, pose: GraspPose) -> GraspPose:
        from .geometry import RigidTransform

        w = RigidTransform(self.rotation.T @ pose.wrist.rotation,
                           self.to_canonical(pose.wrist.translation))
        return GraspPose(w, pose.joints)


@dataclass(frozen=True)
class IbsConfig:
    voxel_size: float = DEFAULT_VOXEL_SIZE
    resolution: int = DEFAULT_RESOLUTION
    relevance_radius: float = 0.05
    contact_factor: float = 1.5

    @property
    def edge(self) -> float:
        return self.voxel_size * self.resolution


@dataclass(frozen=True, eq=False)
class SparseIbsVolume:
    grid: VoxelGrid
    frame: CanonicalFrame

    def __post_init__(self):
        if set(self.grid.channels) != set(CHANNELS):
            raise ValueError(f"volume needs exactly the channels {CHANNELS}")
        surf = self.grid.channels["ibs_surface"]
        for name in CHANNELS[1:]:
            if np.any(self.grid.channels[name] & ~surf):
                raise ValueError(f"{name} voxels must be a subset of ibs_surface")
        if np.any(self.grid.channels["thumb_contact"] & self.grid.channels["other_contact"]):
            raise ValueError("a voxel cannot be both thumb and other contact")

    @classmethod
    def from_channels(cls, surface, thumb, other, frame, voxel_size=DEFAULT_VOXEL_SIZE):
        n = np.asarray(surface).shape[0]
        grid = VoxelGrid.centered(voxel_size, n, {
            "ibs_surface": surface, "thumb_contact": thumb, "other_contact": other})
        return cls(grid, frame)

    @property
    def voxel_size(self) -> float:
        return self.grid.voxel_size

    @property
    def resolution(self) -> int:
        return self.grid.resolution

    @property
    def surface(self) -> np.ndarray:
        return self.grid.channels["ibs_surface"]

    @property
    def thumb(self) -> np.ndarray:
        return self.grid.channels["thumb_contact"]

    @property
    def other(self) -> np.ndarray:
        return self.grid.channels["other_contact"]

    @property
    def is_empty(self) -> bool:
        """True for the NoSurface outcome of :func:`compute_ibs`."""
        return not bool(self.surface.any())

    def counts(self):
        return {name: int(self.grid.channels[name].sum()) for name in CHANNELS}

    def to_signed_array(self) -> np.ndarray:
        """``(n, n, n, 3)`` float array with values in {-1, +1} (learning convention)."""
        stacked = np.stack([self.grid.channels[c] for c in CHANNELS], axis=-1)
        return np.where(stacked, 1.0, -1.0)

    def equals(self, other: "SparseIbsVolume") -> bool:
        return (
            self.resolution == other.resolution
            and self.voxel_size == other.voxel_size
            and np.array_equal(self.frame.seed, other.frame.seed)
            and np.array_equal(self.frame.rotation, other.frame.rotation)
            and all(np.array_equal(self.grid.channels[c], other.grid.channels[c]) for c in CHANNELS)
        )


@dataclass(frozen=True, eq=False)
class IbsPointSet:
    """Surface voxel centres (canonical frame) with oriented normals.

    ``thumb_contacts`` / ``other_contacts`` index into ``points``.
    """

    points: np.ndarray
    normals: np.ndarray
    thumb_contacts: np.ndarray
    other_contacts: np.ndarray

    def __len__(self):
        return len(self.points)

    @property
    def thumb_points(self):
        return self.points[self.thumb_contacts]

    @property
    def other_points(self):
        return self.points[self.other_contacts]

    @property
    def contact_points(self):
        return self.points[np.concatenate([self.thumb_contacts, self.other_contacts])]

    @cached_property
    def index(self) -> cKDTree:
        return cKDTree(self.points)

    @cached_property
    def contact_index(self) -> cKDTree:
        return cKDTree(self.contact_points)

    def to_world(self, frame: "CanonicalFrame") -> "IbsPointSet":
        """Same set with points and normals mapped out of ``frame``."""
        return IbsPointSet(frame.to_world(self.points), self.normals @ frame.rotation.T,
                           self.thumb_contacts, self.other_contacts)


# --------------------------------------------------------------------------
# canonicalisation / voxelisation


def in_cube(points, edge) -> np.ndarray:
    """Half-open membership test for the cube ``[-edge/2, edge/2)^3``."""
    h = edge / 2.0
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.all((pts >= -h) & (pts < h), axis=1)


def canonicalize_and_crop(scene: PointCloud, frame: CanonicalFrame, volume_edge: float,
                          allow_empty=False) -> PointCloud:
    """Map ``scene`` into the canonical frame and keep points inside the cube."""
    if len(scene) == 0:
        raise EmptyInput("scene cloud is empty")
    canon = frame.to_canonical(scene.points)
    keep = in_cube(canon, volume_edge)
    normals = None if scene.normals is None else scene.normals[keep] @ frame.rotation
    out = PointCloud(canon[keep], normals, None if scene.tags is None else scene.tags[keep])
    if len(out) == 0 and not allow_empty:
        raise EmptyCrop("no points survive cropping to the canonical volume")
    return out


def voxelize(cloud: PointCloud, voxel_size: float = DEFAULT_VOXEL_SIZE,
             resolution: int = DEFAULT_RESOLUTION, name="occupancy") -> VoxelGrid:
    """Occupancy of a canonical-frame cloud on a grid centred at the origin."""
    grid = VoxelGrid.centered(voxel_size, resolution)
    occ = np.zeros((resolution,) * 3, dtype=bool)
    if len(cloud):
        idx, inside = grid.world_to_voxel(cloud.points)
        idx = idx[inside]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(grid.origin, grid.voxel_size, resolution, {name: occ})


# --------------------------------------------------------------------------
# IBS construction


def _sign_change_mask(f, active):
    """Voxels adjacent to a zero crossing of ``f``; of each crossing pair the
    voxel with the smaller ``|f|`` is kept (both on a tie)."""
    marked = np.zeros(f.shape, dtype=bool)
    af = np.abs(f)
    for axis in range(3):
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[axis] = slice(0, -1)
        sl_b[axis] = slice(1, None)
        sa, sb = tuple(sl_a), tuple(sl_b)
        fa, fb = f[sa], f[sb]
        both = active[sa] & active[sb]
        crossing = both & (((fa < 0) & (fb > 0)) | ((fa > 0) & (fb < 0)))
        # exact zeros only count next to a non-zero value
        crossing |= both & (((fa == 0) & (fb != 0)) | ((fa != 0) & (fb == 0)))
        pick_a = crossing & (af[sa] <= af[sb])
        pick_b = crossing & (af[sb] <= af[sa])
        marked[sa] |= pick_a
        marked[sb] |= pick_b
    return marked


def compute_ibs(hand_points: PointCloud, scene_points: PointCloud, frame: CanonicalFrame,
                cfg: IbsConfig = IbsConfig(), strict=False) -> SparseIbsVolume:
    """Sparse IBS between a tagged hand cloud and a scene cloud.

    Both clouds must already be in canonical coordinates; points outside the
    volume are dropped.  With no zero crossing the returned volume is empty
    (``volume.is_empty``); ``strict=True`` raises :class:`NoSurface` instead.
    """
    edge = cfg.edge
    hand = hand_points.subset(in_cube(hand_points.points, edge)) if len(hand_points) else hand_points
    scene = scene_points.subset(in_cube(scene_points.points, edge)) if len(scene_points) else scene_points
    if len(hand) == 0 or len(scene) == 0:
        raise EmptyInput("hand and scene must both have points inside the volume")

    n = cfg.resolution
    vs = cfg.voxel_size
    grid = VoxelGrid.centered(vs, n)
    centers = grid.centers().reshape(-1, 3)
    d_hand = SpatialIndex(hand.points).distances(centers)
    d_scene = SpatialIndex(scene.points).distances(centers)
    f = (d_scene - d_hand).reshape(n, n, n)
    excluded = ((d_hand < vs / 2) & (d_scene < vs / 2)).reshape(n, n, n)
    relevant = (np.minimum(d_hand, d_scene) <= cfg.relevance_radius).reshape(n, n, n)
    surface = _sign_change_mask(f, ~excluded) & relevant

    thumb = np.zeros_like(surface)
    other = np.zeros_like(surface)
    flat = np.flatnonzero(surface)
    if len(flat):
        tau = cfg.contact_factor * vs
        near_scene = d_scene[flat] <= tau
        tags = hand.tags if hand.tags is not None else np.zeros(len(hand), dtype=np.int64)

        def dist_to(tag):
            pts = hand.points[tags == tag]
            if len(pts) == 0:
                return np.full(len(flat), np.inf)
            return SpatialIndex(pts).distances(centers[flat])

        dt, do = dist_to(THUMB), dist_to(OTHER)
        is_t = near_scene & (dt <= tau)
        is_o = near_scene & (do <= tau)
        both = is_t & is_o
        is_t = is_t & ~(both & (do < dt))
        is_o = is_o & ~(both & (dt <= do))
        thumb.reshape(-1)[flat[is_t]] = True
        other.reshape(-1)[flat[is_o]] = True

    vol = SparseIbsVolume(VoxelGrid(grid.origin, vs, n, {
        "ibs_surface": surface, "thumb_contact": thumb, "other_contact": other}), frame)
    if strict and vol.is_empty:
        raise NoSurface("no zero crossing of the hand/scene distance difference in the volume")
    return vol


def seed_point(scene: PointCloud, wrist_origin) -> np.ndarray:
    """Scene point nearest to the palm-frame origin (the grasp seed)."""
    return SpatialIndex(scene.points).nearest(as_point(wrist_origin))[0]


def ground_truth_ibs(hand: HandModel, pose: GraspPose, scene: PointCloud,
                     cfg: IbsConfig = IbsConfig(), strict=False) -> SparseIbsVolume:
    """Full ground-truth pipeline for one grasp: sample hand, canonicalize, crop, IBS."""
    frame = CanonicalFrame(seed_point(scene, pose.wrist.translation), pose.wrist.rotation)
    scene_c = canonicalize_and_crop(scene, frame, cfg.edge)
    hand_w = sample_hand_surface(hand, pose)
    hand_c = canonicalize_and_crop(hand_w, frame, cfg.edge)
    vol = compute_ibs(hand_c, scene_c, frame, cfg)
    vol = drop_inside_hand(vol, hand, pose)
    if strict and vol.is_empty:
        raise NoSurface("no zero crossing of the hand/scene distance difference in the volume")
    return vol


def drop_inside_hand(volume: SparseIbsVolume, hand: HandModel, pose: GraspPose) -> SparseIbsVolume:
    """Clear surface voxels whose centre lies strictly inside a hand primitive.

    Point-sampled hands leave gaps between samples, so a sign change can sit
    just under the true hand surface.
    """
    idx = volume.grid.occupied("ibs_surface")
    if len(idx) == 0:
        return volume
    centers = volume.frame.to_world(volume.grid.voxel_to_world(idx))
    d, r = primitive_axis_distances(hand, pose, centers)
    inside = np.any(d < r, axis=1)
    if not inside.any():
        return volume
    i, j, k = idx[inside].T
    chans = {}
    for name in CHANNELS:
        a = volume.grid.channels[name].copy()
        a[i, j, k] = False
        chans[name] = a
    g = volume.grid
    return SparseIbsVolume(VoxelGrid(g.origin, g.voxel_size, g.resolution, chans), volume.frame)


# --------------------------------------------------------------------------
# surface points and normals


def _orient_by_hint(points, normals, hint):
    d = (hint - points)
    dots = np.einsum("ij,ij->i", normals, d)
    flip = (dots < 0) | ((dots == 0) & (normals[:, 2] < 0))
    normals = normals.copy()
    normals[flip] *= -1.0
    return normals


def _orient_by_propagation(points, normals, hint, k):
    """Consistent orientation along a normal-similarity spanning tree.

    Each connected piece is seeded at its point closest to ``hint`` (oriented
    towards the hint) and signs are propagated outward so that neighbouring
    normals agree.
    """
    n = len(points)
    index = SpatialIndex(points)
    kk = min(k, n)
    nbr = index.knn(points, kk)
    rows = np.repeat(np.arange(n), kk)
    cols = nbr.reshape(-1)
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    w = 1.0 + 1e-3 - np.abs(np.einsum("ij,ij->i", normals[rows], normals[cols]))
    graph = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    graph = graph.maximum(graph.T)
    mst = minimum_spanning_tree(graph)
    mst = mst.maximum(mst.T)
    ncomp, labels = connected_components(mst, directed=False)
    out = normals.copy()
    dist_hint = np.linalg.norm(points - hint, axis=1)
    for c in range(ncomp):
        members = np.nonzero(labels == c)[0]
        root = int(members[np.argmin(dist_hint[members])])
        out[root] = _orient_by_hint(points[root:root + 1], out[root:root + 1], hint)[0]
        order, pred = breadth_first_order(mst, root, directed=False, return_predecessors=True)
        for node in order[1:]:
            if out[node] @ out[pred[node]] < 0:
                out[node] = -out[node]
    return out


def extract_ibs_points(volume: SparseIbsVolume, hand_hint=None, k_normals: int = 16,
                       orientation: str = "propagate") -> IbsPointSet:
    """Surface voxel centres, PCA normals oriented to the hand side, contact subsets.

    ``hand_hint`` is a canonical-frame point on the hand side (default: a point
    on the -z face of the volume, where the wrist approaches from).
    ``orientation="hint"`` flips every normal independently towards the hint;
    ``"propagate"`` (default) orients one seed per connected piece that way and
    propagates signs through the neighbour graph, which also handles surfaces
    that wrap around an object.
    """
    idx = volume.grid.occupied("ibs_surface")
    if len(idx) < k_normals:
        raise InsufficientPoints(f"volume has {len(idx)} surface voxels, need {k_normals}")
    hint = np.array([0.0, 0.0, -volume.grid.edge / 2]) if hand_hint is None else as_point(hand_hint)
    pts = volume.grid.voxel_to_world(idx)
    normals = estimate_normals(PointCloud(pts), k_normals).normals
    if orientation == "hint":
        normals = _orient_by_hint(pts, normals, hint)
    elif orientation == "propagate":
        normals = _orient_by_propagation(pts, normals, hint, k_normals)
    else:
        raise ValueError(f"unknown orientation mode {orientation!r}")
    thumb = np.nonzero(volume.thumb[idx[:, 0], idx[:, 1], idx[:, 2]])[0]
    other = np.nonzero(volume.other[idx[:, 0], idx[:, 1], idx[:, 2]])[0]
    for a in (pts, normals, thumb, other):
        a.setflags(write=False)
    return IbsPointSet(pts, normals, thumb, other)


# --------------------------------------------------------------------------
# SIBS binary format


def sibs_size(resolution: int) -> int:
    return SIBS_HEADER_SIZE + 3 * math.ceil(resolution**3 / 8)


def _pack(channel):
    return np.packbits(np.asarray(channel, dtype=bool).ravel(order="F"), bitorder="little").tobytes()


def write_sibs(volume: SparseIbsVolume, stream=None) -> bytes:
    """Serialize ``volume``; returns the bytes and also writes them to ``stream``."""
    head = _HEAD.pack(SIBS_MAGIC, SIBS_VERSION, volume.resolution, volume.voxel_size,
                      *volume.frame.seed.tolist(), *volume.frame.rotation.reshape(-1).tolist())
    data = head + b"".join(_pack(volume.grid.channels[c]) for c in CHANNELS)
    if stream is not None:
        stream.write(data)
    return data


def read_sibs(source) -> SparseIbsVolume:
    """Parse SIBS bytes (or a binary stream)."""
    data = source.read() if isinstance(source, io.IOBase) or hasattr(source, "read") else bytes(source)
    if len(data) < 4 or data[:4] != SIBS_MAGIC:
        raise FormatError("bad magic", 0)
    if len(data) < SIBS_HEADER_SIZE:
        raise FormatError("truncated header", len(data))
    magic, version, n, vs, *rest = _HEAD.unpack_from(data, 0)
    if version != SIBS_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if n < 2:
        raise FormatError(f"invalid resolution {n}", 6)
    if not (math.isfinite(vs) and vs > 0):
        raise FormatError(f"invalid voxel size {vs}", 8)
    seed = np.array(rest[:3])
    rot = np.array(rest[3:]).reshape(3, 3)
    try:
        frame = CanonicalFrame(seed, rot)
    except ValueError as exc:
        raise FormatError(f"invalid frame: {exc}", 16) from None
    chunk = math.ceil(n**3 / 8)
    expected = SIBS_HEADER_SIZE + 3 * chunk
    if len(data) < expected:
        raise FormatError("truncated channel data", len(data))
    if len(data) > expected:
        raise FormatError("trailing bytes after channel data", expected)
    chans = {}
    for i, name in enumerate(CHANNELS):
        off = SIBS_HEADER_SIZE + i * chunk
        bits = np.unpackbits(np.frombuffer(data, np.uint8, chunk, off), bitorder="little")[: n**3]
        chans[name] = bits.astype(bool).reshape((n, n, n), order="F")
    for i, name in enumerate(CHANNELS[1:], start=1):
        if np.any(chans[name] & ~chans["ibs_surface"]):
            raise FormatError(f"{name} not contained in ibs_surface",
                              SIBS_HEADER_SIZE + i * chunk)
    if np.any(chans["thumb_contact"] & chans["other_contact"]):
        raise FormatError("thumb and other contact overlap", SIBS_HEADER_SIZE + 2 * chunk)
    grid = VoxelGrid.centered(vs, n, chans)
    return SparseIbsVolume(grid, frame)


def save_sibs(path, volume: SparseIbsVolume):
    with open(path, "wb") as fh:
        write_sibs(volume, fh)


def load_sibs(path) -> SparseIbsVolume:
    with open(path, "rb") as fh:
        return read_sibs(fh.read())
