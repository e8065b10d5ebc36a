"""Central finite-difference checks of the energy gradients.

Correspondences (self-penetration candidate pairs, nearest IBS points and
contact matches) are frozen at the centre of the stencil.  The hinge terms
are only piecewise smooth, so a state whose activity pattern (which hinges
are on) differs anywhere on the stencil sits on a kink; such states are
rejected and redrawn rather than scored.

The sidedness term normalises by the sample-to-IBS distance, so its
curvature grows like 1/d^2 near the sheet.  With a 1e-5 step the truncation
error reached 2.6e-3 for a sample 0.14 mm from its IBS point and fell as h^2
with smaller steps; 1e-6 keeps it two orders below the tolerance while
roundoff stays negligible.
"""

import numpy as np

from sibsgrasp.geometry import RigidTransform
from sibsgrasp.hand_model import GraspPose, pose_from_params
from sibsgrasp.ibs import ground_truth_ibs
from sibsgrasp.optimizer import (TERMS, EnergyWeights, correspondences, energy_total,
                                 volume_points)
from sibsgrasp.scenes import make_fixture, perturb_pose

STEP = 1e-6
FLOOR = 1e-8


def activity(hand, pose, ibs, corr, delta):
    x = hand.surface_points(pose)
    q = pose.joints
    joints = np.r_[q > hand.theta_max, q < hand.theta_min]
    if len(corr.pairs):
        d = np.linalg.norm(x[corr.pairs[:, 0]] - x[corr.pairs[:, 1]], axis=1)
        pairs = d < delta
    else:
        pairs = np.zeros(0, bool)
    diff = x - ibs.points[corr.nearest]
    side = np.einsum("ij,ij->i", diff, ibs.normals[corr.nearest]) < 0
    return np.concatenate([joints, pairs, side])


def rel_error(analytic, fd):
    return float(np.max(np.abs(analytic - fd)) / max(np.max(np.abs(fd)), FLOOR))


def check_state(hand, pose, ibs, weights=EnergyWeights(), step=STEP):
    """Relative errors per term plus the total, or ``None`` on a kink."""
    corr = correspondences(hand, pose, ibs, weights.delta, pair_margin=0.01)
    centre = energy_total(hand, pose, ibs, weights, corr)
    act = activity(hand, pose, ibs, corr, weights.delta)
    n = 6 + hand.dof
    fd = {k: np.zeros(n) for k in TERMS + ("total",)}
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        vals = []
        for sign in (1, -1):
            p = pose_from_params(pose, sign * e)
            if not np.array_equal(activity(hand, p, ibs, corr, weights.delta), act):
                return None
            vals.append(energy_total(hand, p, ibs, weights, corr))
        for k in fd:
            fd[k][i] = (getattr(vals[0], k) - getattr(vals[1], k)) / (2 * step)
    errs = {k: rel_error(centre.parts[k], fd[k]) for k in TERMS}
    errs["total"] = rel_error(centre.gradient, fd["total"])
    return errs, centre


def fixture_states(hand, n_fixtures, rng):
    """Ground-truth IBS sets paired with their poses."""
    out = []
    for i in range(n_fixtures):
        recipe = ("sphere-on-plane", "box-on-plane")[i % 2]
        fx = make_fixture(recipe, i // 2, hand)
        vol = ground_truth_ibs(hand, fx.pose, fx.scene.cloud)
        out.append((fx.pose, volume_points(vol)))
    return out


def random_state(hand, fixtures, rng):
    """Perturbed fixture pose with joints drawn 0.3 rad past either limit, so
    the joint and self-penetration hinges switch on often."""
    pose, ibs = fixtures[rng.integers(len(fixtures))]
    p = perturb_pose(pose, rng)
    q = rng.uniform(hand.theta_min - 0.3, hand.theta_max + 0.3) if rng.random() < 0.5 else p.joints
    return GraspPose(RigidTransform(p.wrist.rotation, p.wrist.translation), q), ibs


def run(hand, n_states, rng, n_fixtures=4, max_draws=None):
    """Check ``n_states`` smooth states.  Returns (max errors, draws, activity counts)."""
    fixtures = fixture_states(hand, n_fixtures, rng)
    worst = {k: 0.0 for k in TERMS + ("total",)}
    nonzero = {k: 0 for k in TERMS}
    draws = done = 0
    max_draws = max_draws or 20 * n_states
    while done < n_states and draws < max_draws:
        draws += 1
        pose, ibs = random_state(hand, fixtures, rng)
        res = check_state(hand, pose, ibs)
        if res is None:
            continue
        errs, centre = res
        for k in worst:
            worst[k] = max(worst[k], errs[k])
        for k in TERMS:
            nonzero[k] += getattr(centre, k) > 0
        done += 1
    return worst, done, draws, nonzero
