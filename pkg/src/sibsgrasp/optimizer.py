"""Energy terms over a hand pose and the multi-start descent that minimises them.

All gradients are taken with respect to the local chart at the current pose
(``PoseParams`` = translation, wrist rotation vector, joint offsets), so the
gradient of a term is ``sum_p J_p^T dE/dp`` with ``J`` from
:meth:`HandModel.surface_points_and_jacobian`.

Nearest-neighbour correspondences used by the sidedness and contact terms are
computed from the current hand points unless passed in explicitly; passing
them freezes the assignment, which is what a finite-difference check needs.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import (BadInit, CannotOptimize, DegenerateNeighborhood, InsufficientPoints,
                     OptimizationFailed)
from .geometry import RigidTransform, so3_exp
from .hand_model import OTHER, THUMB, GraspPose, HandModel, pose_from_params
from .ibs import IbsPointSet, SparseIbsVolume, extract_ibs_points
from .quality import rank_grasps

log = logging.getLogger(__name__)

COINCIDENT = 1e-9
TERMS = ("e_joint", "e_selfpen", "e_sidedness", "e_contact")


@dataclass(frozen=True)
class EnergyWeights:
    lambda1: float = 5.0
    lambda2: float = 1.0
    lambda3: float = 1000.0
    lambda4: float = 1.0
    alpha1: float = 80.0
    alpha2: float = 100.0
    alpha3: float = 2.0
    delta: float = 0.003

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be a finite non-negative number, got {v!r}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def lambdas(self):
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    @property
    def alphas(self):
        return (self.alpha1, self.alpha2, self.alpha3)

    def scaled(self, factor: float) -> "EnergyWeights":
        """All four lambdas multiplied by ``factor``."""
        return replace(self, lambda1=self.lambda1 * factor, lambda2=self.lambda2 * factor,
                       lambda3=self.lambda3 * factor, lambda4=self.lambda4 * factor)


@dataclass(frozen=True, eq=False)
class EnergyBreakdown:
    e_joint: float
    e_selfpen: float
    e_sidedness: float
    e_contact: float
    total: float
    gradient: np.ndarray
    parts: dict = field(default_factory=dict, repr=False)  # per-term gradients

    def as_dict(self):
        return {k: float(getattr(self, k)) for k in TERMS + ("total",)}


# --------------------------------------------------------------------------
# individual terms


def _pullback(jac, point_grad):
    """``sum_p J_p^T g_p`` for ``jac`` of shape (N, 3, P) and ``point_grad`` (N, 3)."""
    return np.einsum("nij,ni->j", jac, point_grad)


def energy_joint(hand: HandModel, pose: GraspPose):
    """Mean limit violation and its (sub)gradient over the joints."""
    q = pose.joints
    d = max(len(q), 1)
    over = q - hand.theta_max
    under = hand.theta_min - q
    value = float(np.sum(np.maximum(over, 0.0)) + np.sum(np.maximum(under, 0.0))) / d
    grad = (np.where(over > 0, 1.0, 0.0) - np.where(under > 0, 1.0, 0.0)) / d
    return value, grad


def self_penetration_pairs(hand: HandModel, points, radius):
    """Unordered sample pairs closer than ``radius`` that may collide."""
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    la, lb = hand.sample_link[pairs[:, 0]], hand.sample_link[pairs[:, 1]]
    return pairs[hand.collision_links[la, lb]]


def _selfpen_point_terms(hand, x, delta, pairs):
    n = len(x)
    if pairs is None:
        pairs = self_penetration_pairs(hand, x, delta)
    g = np.zeros_like(x)
    if len(pairs) == 0 or n < 2:
        return 0.0, g
    diff = x[pairs[:, 0]] - x[pairs[:, 1]]
    dist = np.linalg.norm(diff, axis=1)
    active = dist < delta
    value = 2.0 * float(np.sum(delta - dist[active])) / n**2
    ok = active & (dist > 0)
    u = np.zeros_like(diff)
    u[ok] = diff[ok] / dist[ok, None]
    # d/dp (delta - |p - q|) = -u ; both ordered pairs contribute
    scale = 2.0 / n**2
    np.add.at(g, pairs[:, 0], -scale * u)
    np.add.at(g, pairs[:, 1], scale * u)
    return value, g


def energy_self_penetration(hand: HandModel, pose: GraspPose, delta: float = 0.003, pairs=None):
    """Mean over ordered sample pairs of ``max(delta - d, 0)`` and its chart gradient.

    Pairs on one link or on a parent/child link pair are skipped.  ``pairs``
    (unordered index pairs) fixes the candidate set.
    """
    x, jac = hand.surface_points_and_jacobian(pose)
    value, g = _selfpen_point_terms(hand, x, delta, pairs)
    return value, _pullback(jac, g)


def nearest_ibs(ibs: IbsPointSet, points):
    return ibs.index.query(points)[1]


def _sidedness_point_terms(x, ibs, nearest):
    if nearest is None:
        nearest = nearest_ibs(ibs, x)
    d = x - ibs.points[nearest]
    n = ibs.normals[nearest]
    r = np.linalg.norm(d, axis=1)
    coincident = r < COINCIDENT
    safe_r = np.where(coincident, 1.0, r)
    u = d / safe_r[:, None]
    s = np.einsum("ij,ij->i", u, n)
    per = np.where(coincident, 1.0, np.maximum(0.0, -s))
    active = (~coincident) & (s < 0)
    # d/dx [-(u . n)] = -(I - u u^T) n / r
    tang = n - s[:, None] * u
    g = np.where(active[:, None], -tang / safe_r[:, None], 0.0) / len(x)
    return float(np.mean(per)), g


def energy_sidedness(hand: HandModel, pose: GraspPose, ibs: IbsPointSet, nearest=None):
    """Mean of ``max(0, -(unit(p - p*) . n*))`` over hand samples.

    ``ibs`` must be expressed in the same frame as ``pose``.
    """
    if len(ibs) == 0:
        raise CannotOptimize("sidedness needs a non-empty IBS point set")
    x, jac = hand.surface_points_and_jacobian(pose)
    value, g = _sidedness_point_terms(x, ibs, nearest)
    return value, _pullback(jac, g)


@dataclass(frozen=True, eq=False)
class ContactMatches:
    """Frozen nearest-neighbour assignments for the contact term.

    ``thumb``: per thumb-contact point, index of the nearest thumb sample;
    ``other``: likewise for other-finger contacts; ``finger``: per finger
    sample (thumb then others, in :func:`finger_samples` order), index into the
    concatenated contact points.
    """

    thumb: np.ndarray
    other: np.ndarray
    finger: np.ndarray


def finger_samples(hand: HandModel):
    thumb = np.nonzero(hand.sample_tag == THUMB)[0]
    other = np.nonzero(hand.sample_tag == OTHER)[0]
    return thumb, other


def match_contacts(hand: HandModel, points, ibs: IbsPointSet) -> ContactMatches:
    thumb_idx, other_idx = finger_samples(hand)
    tp, op = ibs.thumb_points, ibs.other_points
    empty = np.zeros(0, dtype=np.int64)
    mt = cKDTree(points[thumb_idx]).query(tp)[1] if len(tp) and len(thumb_idx) else empty
    mo = cKDTree(points[other_idx]).query(op)[1] if len(op) and len(other_idx) else empty
    contacts = np.concatenate([tp, op])
    fingers = np.concatenate([thumb_idx, other_idx])
    mf = ibs.contact_index.query(points[fingers])[1] if len(contacts) and len(fingers) else empty
    return ContactMatches(np.asarray(mt), np.asarray(mo), np.asarray(mf))


def _contact_point_terms(hand, x, ibs, alphas, matches):
    a1, a2, a3 = alphas
    if matches is None:
        matches = match_contacts(hand, x, ibs)
    thumb_idx, other_idx = finger_samples(hand)
    g = np.zeros_like(x)
    value = 0.0
    for alpha, contacts, samples, m in ((a1, ibs.thumb_points, thumb_idx, matches.thumb),
                                        (a2, ibs.other_points, other_idx, matches.other)):
        if len(contacts) == 0 or len(samples) == 0:
            continue
        hit = samples[m]
        diff = x[hit] - contacts
        value += alpha * float(np.mean(np.sum(diff**2, axis=1)))
        np.add.at(g, hit, 2.0 * alpha / len(contacts) * diff)
    contacts = np.concatenate([ibs.thumb_points, ibs.other_points])
    fingers = np.concatenate([thumb_idx, other_idx])
    if len(contacts) and len(fingers):
        diff = x[fingers] - contacts[matches.finger]
        value += a3 * float(np.mean(np.sum(diff**2, axis=1)))
        g[fingers] += 2.0 * a3 / len(fingers) * diff
    return value, g


def energy_contact(hand: HandModel, pose: GraspPose, ibs: IbsPointSet, alphas=(80.0, 100.0, 2.0),
                   matches: ContactMatches | None = None):
    """Chamfer-style pull between finger samples and the matching contact points."""
    x, jac = hand.surface_points_and_jacobian(pose)
    value, g = _contact_point_terms(hand, x, ibs, alphas, matches)
    return value, _pullback(jac, g)


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Everything that :func:`energy_total` would otherwise recompute from the pose."""

    pairs: np.ndarray
    nearest: np.ndarray
    matches: ContactMatches


def correspondences(hand: HandModel, pose: GraspPose, ibs: IbsPointSet, delta: float,
                    pair_margin: float = 0.0) -> Correspondences:
    x = hand.surface_points(pose)
    return Correspondences(self_penetration_pairs(hand, x, delta + pair_margin),
                           nearest_ibs(ibs, x), match_contacts(hand, x, ibs))


def energy_total(hand: HandModel, pose: GraspPose, ibs: IbsPointSet,
                 weights: EnergyWeights = EnergyWeights(), corr: Correspondences | None = None
                 ) -> EnergyBreakdown:
    """All four terms, their weighted sum and the chart gradient of the sum."""
    if len(ibs) == 0:
        raise CannotOptimize("energy needs a non-empty IBS point set")
    x, jac = hand.surface_points_and_jacobian(pose)
    ej, gj = energy_joint(hand, pose)
    esp, gsp = _selfpen_point_terms(hand, x, weights.delta, corr.pairs if corr else None)
    ep, gp = _sidedness_point_terms(x, ibs, corr.nearest if corr else None)
    ed, gd = _contact_point_terms(hand, x, ibs, weights.alphas, corr.matches if corr else None)
    p = 6 + hand.dof
    parts = {
        "e_joint": np.concatenate([np.zeros(6), gj]) if p > 6 else np.zeros(6),
        "e_selfpen": _pullback(jac, gsp),
        "e_sidedness": _pullback(jac, gp),
        "e_contact": _pullback(jac, gd),
    }
    l1, l2, l3, l4 = weights.lambdas
    total = l1 * ej + l2 * esp + l3 * ep + l4 * ed
    grad = (l1 * parts["e_joint"] + l2 * parts["e_selfpen"] + l3 * parts["e_sidedness"]
            + l4 * parts["e_contact"])
    return EnergyBreakdown(ej, esp, ep, ed, total, grad, parts)


# --------------------------------------------------------------------------
# descent


@dataclass(frozen=True)
class OptimizerConfig:
    trials: int = 5
    max_iters: int = 300
    step_size: float = 5e-3
    decay_every: int = 100
    decay: float = 0.5
    tolerance: float = 1e-8
    patience: int = 10
    init_translation: float = 0.01
    init_rotation: float = 0.1
    init_joints: float = 0.1
    seed: int = 0
    # per-iteration trust region on the step, applied after scaling by step_size
    max_translation_step: float = 0.0005
    max_rotation_step: float = 0.005
    max_joint_step: float = 0.02
    project_joints: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")

    def to_dict(self):
        return asdict(self)


def _clip_step(step, cfg: OptimizerConfig):
    out = step.copy()
    for sl, limit in ((slice(0, 3), cfg.max_translation_step),
                      (slice(3, 6), cfg.max_rotation_step)):
        norm = np.linalg.norm(out[sl])
        if norm > limit:
            out[sl] *= limit / norm
    out[6:] = np.clip(out[6:], -cfg.max_joint_step, cfg.max_joint_step)
    return out


def volume_points(volume: SparseIbsVolume, hand_hint=None, orientation="propagate") -> IbsPointSet:
    """World-frame IBS points of ``volume`` (raises :class:`CannotOptimize`)."""
    if volume.is_empty:
        raise CannotOptimize("IBS volume has no surface voxels")
    try:
        ps = extract_ibs_points(volume, hand_hint=hand_hint, orientation=orientation)
    except (InsufficientPoints, DegenerateNeighborhood) as exc:
        raise CannotOptimize(f"cannot extract IBS points: {exc}") from None
    return ps.to_world(volume.frame)


@dataclass(frozen=True, eq=False)
class TrialResult:
    pose: GraspPose
    energy: EnergyBreakdown
    trace: list  # per-iteration dicts
    iterations: int
    converged: bool


def optimize_grasp(hand: HandModel, init: GraspPose, volume, weights: EnergyWeights = EnergyWeights(),
                   cfg: OptimizerConfig = OptimizerConfig(), ibs: IbsPointSet | None = None
                   ) -> TrialResult:
    """Descend the total energy from ``init``; returns the best pose seen.

    ``volume`` may be a :class:`SparseIbsVolume` or, with ``volume=None``, a
    world-frame ``ibs`` point set can be given directly.
    """
    if ibs is None:
        ibs = volume_points(volume)
    if len(ibs) == 0:
        raise CannotOptimize("empty IBS point set")
    lo = hand.theta_min - 0.5
    hi = hand.theta_max + 0.5
    if np.any(init.joints < lo) or np.any(init.joints > hi):
        raise BadInit("initial joints are more than 0.5 rad outside their limits")

    pose = init
    e = energy_total(hand, pose, ibs, weights)
    if not (math.isfinite(e.total) and np.all(np.isfinite(e.gradient))):
        raise BadInit(f"non-finite energy at the initial pose ({e.total})")
    best_pose, best = pose, e
    trace = []
    still = 0
    prev = e.total
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        lr = cfg.step_size * cfg.decay ** ((it - 1) // cfg.decay_every)
        step = _clip_step(-lr * e.gradient, cfg)
        pose = pose_from_params(pose, step)
        if cfg.project_joints:
            pose = GraspPose(pose.wrist, np.clip(pose.joints, hand.theta_min, hand.theta_max))
        e = energy_total(hand, pose, ibs, weights)
        trace.append({"iteration": it, **e.as_dict()})
        if not math.isfinite(e.total):
            log.debug("non-finite energy at iteration %d; stopping", it)
            break
        if e.total < best.total:
            best_pose, best = pose, e
        still = still + 1 if abs(prev - e.total) < cfg.tolerance else 0
        prev = e.total
        if still >= cfg.patience:
            converged = True
            break
    return TrialResult(best_pose, best, trace, it, converged)


def perturbed_init(seed_pose: GraspPose, rng: np.random.Generator, cfg: OptimizerConfig) -> GraspPose:
    dt = rng.normal(scale=cfg.init_translation, size=3)
    w = rng.normal(scale=cfg.init_rotation, size=3)
    dq = rng.normal(scale=cfg.init_joints, size=len(seed_pose.joints))
    rot = seed_pose.wrist.rotation @ so3_exp(w)
    return GraspPose(RigidTransform(rot, seed_pose.wrist.translation + dt), seed_pose.joints + dq)


def multi_start(hand: HandModel, seed_pose: GraspPose, volume, weights: EnergyWeights = EnergyWeights(),
                cfg: OptimizerConfig = OptimizerConfig(), ibs: IbsPointSet | None = None):
    """``cfg.trials`` descents (trial 0 from ``seed_pose`` itself), ranked by residual.

    Returns :func:`quality.rank_grasps` output whose ``detail`` holds the
    :class:`TrialResult` (or the exception of a failed trial).
    """
    if ibs is None:
        try:
            ibs = volume_points(volume)
        except CannotOptimize as exc:
            raise OptimizationFailed(str(exc), [{"trial": i, "error": str(exc)}
                                                for i in range(cfg.trials)]) from None
    rng = np.random.default_rng(cfg.seed)
    inits = [seed_pose] + [perturbed_init(seed_pose, rng, cfg) for _ in range(cfg.trials - 1)]
    results, diagnostics = [], []
    for i, init in enumerate(inits):
        try:
            r = optimize_grasp(hand, init, None, weights, cfg, ibs=ibs)
            results.append((r.pose, r.energy.total, r))
            diagnostics.append({"trial": i, "residual": r.energy.total, "iterations": r.iterations})
        except (CannotOptimize, BadInit) as exc:
            results.append((init, math.nan, exc))
            diagnostics.append({"trial": i, "error": f"{type(exc).__name__}: {exc}"})
    if all(isinstance(r[2], Exception) for r in results):
        raise OptimizationFailed("every optimisation trial failed", diagnostics)
    return rank_grasps(results)


def trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration",) + TERMS + ("total",))
    for row in trace:
        w.writerow([row["iteration"]] + [repr(float(row[k])) for k in TERMS + ("total",)])
    return buf.getvalue()


# --------------------------------------------------------------------------
# evaluation helpers


def fingertip_contact_rms(hand: HandModel, pose: GraspPose, ibs: IbsPointSet) -> float:
    """RMS over contact points of the distance to the nearest sample of the matching finger set."""
    x = hand.surface_points(pose)
    thumb_idx, other_idx = finger_samples(hand)
    sq = []
    for contacts, samples in ((ibs.thumb_points, thumb_idx), (ibs.other_points, other_idx)):
        if len(contacts) and len(samples):
            sq.append(cKDTree(x[samples]).query(contacts)[0] ** 2)
    if not sq:
        return math.nan
    return float(np.sqrt(np.mean(np.concatenate(sq))))
