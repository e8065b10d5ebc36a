"""Spatial primitives: point clouds, rigid transforms, voxel grids, nearest neighbours.

Points are stored as ``(N, 3)`` float64 arrays in meters.  All containers are
immutable after construction (their arrays are flagged read-only).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import DegenerateNeighborhood, EmptyInput, InsufficientPoints

ROTATION_TOL = 1e-9
NORMAL_TOL = 1e-6


def _frozen(a, dtype=np.float64, shape=None):
    a = np.array(a, dtype=dtype, copy=True)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


def as_point(p) -> np.ndarray:
    """Coerce ``p`` to a finite length-3 float array."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"non-finite point {p}")
    return p


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered set of points with optional unit normals and integer tags.

    ``tags`` is an arbitrary per-point integer label; the hand model uses it to
    mark thumb / other-finger / palm samples.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    tags: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValueError("normals count must equal point count")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > NORMAL_TOL:
                raise ValueError("normals must have unit length")
            object.__setattr__(self, "normals", _frozen(nrm))
        if self.tags is not None:
            tags = np.asarray(self.tags).reshape(-1)
            if len(tags) != len(pts):
                raise ValueError("tags count must equal point count")
            object.__setattr__(self, "tags", _frozen(tags, dtype=np.int64))

    def __len__(self):
        return len(self.points)

    def subset(self, mask_or_index) -> "PointCloud":
        return PointCloud(
            self.points[mask_or_index],
            None if self.normals is None else self.normals[mask_or_index],
            None if self.tags is None else self.tags[mask_or_index],
        )

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.points, normals, self.tags)


def so3_exp(omega) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(omega, dtype=np.float64)).as_matrix()


def so3_log(rotation) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_rotvec()


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def check_rotation(r, tol=ROTATION_TOL) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation must be finite")
    if np.max(np.abs(r @ r.T - np.eye(3))) > tol or abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("rotation must be orthonormal with determinant +1")
    return r


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``p -> rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(check_rotation(self.rotation)))
        object.__setattr__(self, "translation", _frozen(as_point(self.translation)))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def allclose(self, other: "RigidTransform", atol=1e-12) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def transform_cloud(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    normals = None if cloud.normals is None else t.apply_vectors(cloud.normals)
    return PointCloud(t.apply(cloud.points), normals, cloud.tags)


class SpatialIndex:
    """Exact nearest-neighbour queries over a fixed point set.

    Backed by a k-d tree; results are post-processed so that they agree with an
    exhaustive scan, including the tie-break by lowest point index.
    """

    _CANDIDATES = 4

    def __init__(self, points):
        pts = np.asarray(points.points if isinstance(points, PointCloud) else points,
                         dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyInput("cannot index an empty cloud")
        self.points = _frozen(pts)
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def _exact_dist(self, query, idx):
        d = self.points[idx] - query[:, None, :]
        return np.sqrt(np.einsum("qkc,qkc->qk", d, d))

    def nearest(self, queries):
        """Nearest indexed point for each query.

        Returns ``(points, distances, indices)``; a single ``(3,)`` query yields
        scalars / a single point.
        """
        q = np.asarray(queries, dtype=np.float64)
        single = q.ndim == 1
        q = q.reshape(-1, 3)
        k = min(self._CANDIDATES, len(self.points))
        _, idx = self._tree.query(q, k=k)
        idx = np.asarray(idx).reshape(len(q), k)
        dist = self._exact_dist(q, idx)
        best = np.empty(len(q), dtype=np.int64)
        best_d = np.empty(len(q))
        dmin = dist.min(axis=1)
        cand = np.where(dist == dmin[:, None], idx, np.iinfo(np.int64).max)
        best[:] = cand.min(axis=1)
        best_d[:] = dmin
        # all k candidates tied (or k-th could hide an equal one): widen the search
        if k < len(self.points):
            suspect = np.nonzero(dist[:, -1] <= dmin * (1 + 1e-12) + 1e-300)[0]
            for i in suspect:
                hits = np.array(
                    sorted(self._tree.query_ball_point(q[i], dmin[i] * (1 + 1e-9) + 1e-12)),
                    dtype=np.int64,
                )
                dd = self._exact_dist(q[i : i + 1], hits[None, :])[0]
                j = int(np.argmin(dd))
                best[i], best_d[i] = hits[j], dd[j]
        if single:
            return self.points[best[0]].copy(), float(best_d[0]), int(best[0])
        return self.points[best], best_d, best

    def within_radius(self, query, r) -> np.ndarray:
        """Sorted indices of points with distance ``<= r`` from ``query``."""
        q = as_point(query)
        hits = np.array(sorted(self._tree.query_ball_point(q, r * (1 + 1e-9) + 1e-15)),
                        dtype=np.int64)
        if len(hits) == 0:
            return hits
        d = np.linalg.norm(self.points[hits] - q, axis=1)
        return hits[d <= r]

    def knn(self, queries, k):
        """Indices of the ``k`` nearest points per query (distance order)."""
        _, idx = self._tree.query(np.asarray(queries, dtype=np.float64).reshape(-1, 3), k=k)
        return np.asarray(idx).reshape(-1, k)

    def distances(self, queries) -> np.ndarray:
        """Fast nearest distances (no tie bookkeeping; ties do not change the value)."""
        d, _ = self._tree.query(np.asarray(queries, dtype=np.float64).reshape(-1, 3), k=1)
        return np.asarray(d)


def build_index(cloud) -> SpatialIndex:
    return SpatialIndex(cloud)


def nearest(index: SpatialIndex, query):
    return index.nearest(query)


def estimate_normals(cloud: PointCloud, k: int = 16) -> PointCloud:
    """PCA normals from the ``k`` nearest neighbours (the point itself included).

    Signs are arbitrary; orient them afterwards.
    """
    n = len(cloud)
    if k < 3:
        raise ValueError("k must be at least 3")
    if k > n:
        raise InsufficientPoints(f"need at least k={k} points, got {n}")
    index = SpatialIndex(cloud.points)
    nbr = index.knn(cloud.points, k)
    local = cloud.points[nbr]
    local = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / k
    evals, evecs = np.linalg.eigh(cov)
    scale = np.maximum(evals[:, 2], 1e-300)
    # rank < 2: smallest-eigenvalue direction is not unique
    degenerate = evals[:, 1] <= 1e-10 * scale
    if np.any(degenerate):
        bad = int(np.nonzero(degenerate)[0][0])
        raise DegenerateNeighborhood(f"neighbourhood of point {bad} is (nearly) collinear")
    normals = evecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Cubic lattice of ``resolution**3`` voxels with named boolean channels.

    Voxel ``(i, j, k)`` covers ``origin + [i, i+1) * voxel_size`` along x (and
    likewise for y, z).  Channel arrays are indexed ``[i, j, k]``.
    """

    origin: np.ndarray
    voxel_size: float
    resolution: int
    channels: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "origin", _frozen(as_point(self.origin)))
        if int(self.resolution) != self.resolution or self.resolution < 2:
            raise ValueError("resolution must be an integer >= 2")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        object.__setattr__(self, "resolution", int(self.resolution))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        n = self.resolution
        chans = {}
        for name, arr in self.channels.items():
            arr = np.asarray(arr, dtype=bool)
            if arr.shape != (n, n, n):
                raise ValueError(f"channel {name!r} must have shape {(n, n, n)}")
            chans[name] = _frozen(arr, dtype=bool)
        object.__setattr__(self, "channels", chans)

    @classmethod
    def centered(cls, voxel_size, resolution, channels=None):
        """Grid centred on the origin."""
        h = voxel_size * resolution / 2.0
        return cls(np.array([-h, -h, -h]), voxel_size, resolution, channels or {})

    @property
    def edge(self) -> float:
        return self.voxel_size * self.resolution

    def world_to_voxel(self, points):
        """Integer voxel indices and an in-bounds mask for each point."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        idx = np.floor((pts - self.origin) / self.voxel_size).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.resolution), axis=1)
        return idx, inside

    def voxel_to_world(self, indices) -> np.ndarray:
        """Centres of the given voxels."""
        idx = np.asarray(indices, dtype=np.float64)
        return self.origin + (idx + 0.5) * self.voxel_size

    def centers(self) -> np.ndarray:
        """All voxel centres as an ``(n, n, n, 3)`` array."""
        ax = (np.arange(self.resolution) + 0.5) * self.voxel_size
        gx, gy, gz = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1) + self.origin

    def occupied(self, name) -> np.ndarray:
        """Indices ``(M, 3)`` of true voxels of a channel, in x-fastest order."""
        arr = self.channels[name]
        # x-fastest == Fortran order over (i, j, k)
        flat = np.flatnonzero(arr.ravel(order="F"))
        n = self.resolution
        return np.stack([flat % n, (flat // n) % n, flat // (n * n)], axis=1)
