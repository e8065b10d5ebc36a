"""
One IBS, two hands
==================

The IBS volume only encodes where the hand surface and the object meet, so a
volume made with one hand can guide another.  Here a volume generated by the
two-finger pinch4 hand is reused, unchanged, to place the four-finger quad16
hand.
"""

import numpy as np

from sibsgrasp.hand_model import GraspPose, shipped_hand
from sibsgrasp.ibs import ground_truth_ibs
from sibsgrasp.optimizer import fingertip_contact_rms, optimize_grasp, volume_points
from sibsgrasp.quality import max_penetration_depth
from sibsgrasp.scenes import make_fixture, open_joints

pinch = shipped_hand("pinch4")
quad = shipped_hand("quad16")
print(f"pinch4: {pinch.dof} DoF, {pinch.n_samples} samples")
print(f"quad16: {quad.dof} DoF, {quad.n_samples} samples")

fx = make_fixture("sphere-on-plane", 2, pinch)
ibs = volume_points(ground_truth_ibs(pinch, fx.pose, fx.scene.cloud))

# %% both hands start at the source wrist with their fingers open
for hand in (pinch, quad):
    init = GraspPose(fx.pose.wrist, open_joints(hand))
    r = optimize_grasp(hand, init, None, ibs=ibs)
    print(f"{hand.name}: {r.iterations} iterations, sidedness {r.energy.e_sidedness:.2e}, "
          f"contact RMS {fingertip_contact_rms(hand, r.pose, ibs) * 1e3:.1f} mm, "
          f"penetration {max_penetration_depth(fx.scene.cloud, hand, r.pose) * 1e3:.2f} mm")
    print("   joints", np.round(r.pose.joints, 2))
