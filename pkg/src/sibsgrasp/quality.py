"""Grasp quality: force-closure surrogate over IBS contacts, rankings, penetration depth.

The force-closure score is the negated squared norm of the mean inward contact
normal.  It is 0 for force-balanced sets (antipodal pairs, symmetric fans) and
-1 when every contact pushes the same way.  Torque balance is not modelled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateNeighborhood, EmptyInput, InsufficientPoints
from .geometry import as_point
from .hand_model import GraspPose, HandModel, primitive_axis_distances
from .ibs import SparseIbsVolume, extract_ibs_points

NORMAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ContactSet:
    """Contact points with unit inward normals (pointing from the IBS into the scene)."""

    thumb_points: np.ndarray
    thumb_normals: np.ndarray
    other_points: np.ndarray
    other_normals: np.ndarray

    def __post_init__(self):
        for name in ("thumb_points", "thumb_normals", "other_points", "other_normals"):
            a = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 3)
            object.__setattr__(self, name, a)
        for pts, nrm in ((self.thumb_points, self.thumb_normals),
                         (self.other_points, self.other_normals)):
            if len(pts) != len(nrm):
                raise ValueError("points and normals differ in length")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > NORMAL_TOL:
                raise ValueError("contact normals must be unit length")

    @classmethod
    def from_pairs(cls, thumb=(), others=()):
        """Build from ``[(point, normal), ...]`` lists."""
        def split(pairs):
            pairs = list(pairs)
            if not pairs:
                return np.zeros((0, 3)), np.zeros((0, 3))
            return (np.array([as_point(p) for p, _ in pairs]),
                    np.array([as_point(n) for _, n in pairs]))
        tp, tn = split(thumb)
        op, on = split(others)
        return cls(tp, tn, op, on)

    @property
    def thumb(self):
        return list(zip(self.thumb_points, self.thumb_normals))

    @property
    def others(self):
        return list(zip(self.other_points, self.other_normals))

    @property
    def normals(self) -> np.ndarray:
        return np.concatenate([self.thumb_normals, self.other_normals])

    def __len__(self):
        return len(self.thumb_points) + len(self.other_points)

    def rotated(self, rotation) -> "ContactSet":
        r = np.asarray(rotation, dtype=np.float64)
        return ContactSet(self.thumb_points @ r.T, self.thumb_normals @ r.T,
                          self.other_points @ r.T, self.other_normals @ r.T)


@dataclass(frozen=True)
class IbsScore:
    value: float
    feasible: bool

    def __post_init__(self):
        if not self.feasible:
            object.__setattr__(self, "value", -math.inf)

    def __lt__(self, other: "IbsScore"):
        return self.value < other.value

    @classmethod
    def infeasible(cls) -> "IbsScore":
        return cls(-math.inf, False)


def contact_set_from_volume(volume: SparseIbsVolume, hand_hint=None) -> ContactSet:
    """Contact voxel centres with inward normals (negated hand-side IBS normals)."""
    n_thumb = int(volume.thumb.sum())
    n_other = int(volume.other.sum())
    if n_thumb + n_other == 0:
        return ContactSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)))
    n_surface = int(volume.surface.sum())
    try:
        ps = extract_ibs_points(volume, hand_hint=hand_hint, k_normals=max(3, min(16, n_surface)))
        normals = ps.normals
    except (InsufficientPoints, DegenerateNeighborhood):
        # too few or collinear voxels for PCA: fall back to the direction away from the hint
        idx = volume.grid.occupied("ibs_surface")
        pts = volume.grid.voxel_to_world(idx)
        hint = (np.array([0.0, 0.0, -volume.grid.edge / 2]) if hand_hint is None
                else as_point(hand_hint))
        d = hint - pts
        normals = d / np.maximum(np.linalg.norm(d, axis=1), 1e-300)[:, None]
        thumb = np.nonzero(volume.thumb[idx[:, 0], idx[:, 1], idx[:, 2]])[0]
        other = np.nonzero(volume.other[idx[:, 0], idx[:, 1], idx[:, 2]])[0]
        return ContactSet(pts[thumb], -normals[thumb], pts[other], -normals[other])
    return ContactSet(ps.points[ps.thumb_contacts], -normals[ps.thumb_contacts],
                      ps.points[ps.other_contacts], -normals[ps.other_contacts])


def force_closure_score(contacts: ContactSet) -> IbsScore:
    """``-||mean inward normal||^2``; infeasible unless both thumb and others touch."""
    if len(contacts.thumb_points) == 0 or len(contacts.other_points) == 0:
        return IbsScore.infeasible()
    mean = contacts.normals.mean(axis=0)
    return IbsScore(-float(mean @ mean), True)


def _stable_order(keys) -> list:
    return sorted(range(len(keys)), key=lambda i: keys[i])


def rank_scores(scores: Sequence[IbsScore]) -> list:
    """Indices by descending score; ties keep input order."""
    return _stable_order([-s.value for s in scores])


def rank_ibs(candidates: Sequence[SparseIbsVolume], hand_hint=None):
    """Score every candidate volume and return ``[(volume, score), ...]`` best first."""
    if len(candidates) == 0:
        raise EmptyInput("no IBS candidates to rank")
    scores = [force_closure_score(contact_set_from_volume(v, hand_hint)) for v in candidates]
    return [(candidates[i], scores[i]) for i in rank_scores(scores)]


class RankedGrasp(NamedTuple):
    index: int
    pose: GraspPose
    residual: float
    detail: Any = None


def rank_residuals(residuals) -> list:
    """Indices by ascending residual, non-finite values last, ties stable."""
    keys = []
    for r in residuals:
        r = float(r)
        keys.append((0, r) if math.isfinite(r) else (1, 0.0))
    return _stable_order(keys)


def rank_grasps(trials) -> list:
    """Rank ``(pose, residual[, detail])`` trials; the first entry is the selected grasp."""
    trials = list(trials)
    if not trials:
        raise EmptyInput("no grasp trials to rank")
    order = rank_residuals([t[1] for t in trials])
    return [RankedGrasp(i, trials[i][0], float(trials[i][1]),
                        trials[i][2] if len(trials[i]) > 2 else None) for i in order]


def max_penetration_depth(scene, hand: HandModel, pose: GraspPose) -> float:
    """Deepest intrusion of scene points into the hand primitives, 0 if none.

    ``scene`` is a :class:`PointCloud` or an ``(N, 3)`` array.
    """
    pts = getattr(scene, "points", scene)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return 0.0
    d, r = primitive_axis_distances(hand, pose, pts)
    if d.size == 0:
        return 0.0
    return max(0.0, float(np.max(r[None, :] - d)))


# --------------------------------------------------------------------------
# JSON export


def _json_number(x):
    x = float(x)
    return x if math.isfinite(x) else None


def ibs_ranking_json(order, scores, names=None, errors=None) -> str:
    """``[{index, score, feasible}]`` in rank order; infeasible scores are ``null``."""
    rows = []
    for i in order:
        row = {"index": int(i), "score": _json_number(scores[i].value),
               "feasible": bool(scores[i].feasible)}
        if names is not None:
            row["file"] = str(names[i])
        rows.append(row)
    doc = rows if errors is None else {"ranking": rows, "errors": list(errors)}
    return json.dumps(doc, indent=2)


def grasp_ranking_rows(ranked) -> list:
    return [{"index": int(g.index), "residual": _json_number(g.residual),
             "feasible": bool(math.isfinite(g.residual))} for g in ranked]
