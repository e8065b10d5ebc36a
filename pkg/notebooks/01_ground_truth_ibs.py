"""
Ground-truth sparse IBS for a synthetic grasp
=============================================

Build a sphere-on-plane scene, synthesise a pinch grasp on it and turn the
grasp into a 40^3 sparse IBS volume.  The volume is written to disk and
exported as coloured point clouds for inspection in any PLY viewer.

    python notebooks/01_ground_truth_ibs.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from sibsgrasp.hand_model import sample_hand_surface, shipped_hand
from sibsgrasp.ibs import ground_truth_ibs, load_sibs, save_sibs, write_sibs
from sibsgrasp.pipeline import export_volume
from sibsgrasp.pointio import write_ply
from sibsgrasp.scenes import TARGET, make_scene, synthesize_grasp

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ibs_"))
out.mkdir(parents=True, exist_ok=True)

# %% scene: a sphere resting on a 40 cm table, sampled as a point cloud
scene = make_scene("sphere-on-plane", seed=0)
print(f"scene: {len(scene.cloud)} points, {len(scene.points_with_tag(TARGET))} on the target")

# %% a grasp found by closing the open hand onto the object
hand = shipped_hand("pinch4")
pose = synthesize_grasp(hand, scene, np.random.default_rng(0))
print("wrist at", np.round(pose.wrist.translation, 4), "joints", np.round(pose.joints, 3))

# %% the IBS lives in a 0.2 m cube around the seed point, axes from the wrist
vol = ground_truth_ibs(hand, pose, scene.cloud)
print("voxels per channel:", vol.counts())
print("seed point:", np.round(vol.frame.seed, 4))

# %% save, reload and check the round trip
save_sibs(out / "grasp.sibs", vol)
assert write_sibs(load_sibs(out / "grasp.sibs")) == write_sibs(vol)
print(f"{(out / 'grasp.sibs').stat().st_size} bytes on disk")

# %% PLY exports: IBS voxels in world coordinates, the scene, the posed hand
export_volume(out / "grasp.sibs", out / "ibs.ply", world=True)
write_ply(out / "scene.ply", scene.cloud)
write_ply(out / "hand.ply", sample_hand_surface(hand, pose))
print("wrote", sorted(p.name for p in out.iterdir()), "to", out)
