"""Invariant checks shared by the IBS, pipeline and acceptance tests."""

import numpy as np
from scipy.spatial import cKDTree

from sibsgrasp.hand_model import sample_hand_surface
from sibsgrasp.ibs import canonicalize_and_crop


def equidistance_gap(vol, hand, pose, scene, edge=0.2):
    """Largest |d_hand - d_scene| over surface voxel centres, measured against
    the same cropped canonical clouds the volume was built from."""
    idx = vol.grid.occupied("ibs_surface")
    if len(idx) == 0:
        return 0.0
    c = vol.grid.voxel_to_world(idx)
    hand_c = canonicalize_and_crop(sample_hand_surface(hand, pose), vol.frame, edge)
    scene_c = canonicalize_and_crop(scene, vol.frame, edge)
    dh = cKDTree(hand_c.points).query(c)[0]
    ds = cKDTree(scene_c.points).query(c)[0]
    return float(np.abs(dh - ds).max())


def contained(vol):
    return (not (vol.thumb & ~vol.surface).any() and not (vol.other & ~vol.surface).any()
            and not (vol.thumb & vol.other).any())
