"""End-to-end commands: dataset generation, IBS ranking, optimisation, metrics, export.

Every command writes its outputs plus a ``manifest.json`` recording the
normalised arguments, the config snapshot, input hashes and output hashes.
:func:`replay` re-executes a manifest into a fresh directory; outputs are
bit-identical because all randomness flows from the recorded seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_from_dict
from .errors import (AllItemsFailed, CannotOptimize, EmptyCrop, EmptyInput, FormatError,
                     InputChanged, NoSurface, OptimizationFailed)
from .geometry import PointCloud, RigidTransform, as_point
from .hand_model import (PALM, THUMB, GraspPose, HandModel, hand_config_text, load_hand,
                         poses_from_json, poses_to_json)
from .ibs import SparseIbsVolume, ground_truth_ibs, load_sibs, save_sibs
from .optimizer import volume_points, energy_total, fingertip_contact_rms, multi_start, trace_csv
from .pointio import read_cloud, write_ply
from .quality import (contact_set_from_volume, force_closure_score, grasp_ranking_rows,
                      max_penetration_depth, rank_scores)
from .scenes import Scene, make_scene, open_joints, synthesize_grasp

log = logging.getLogger("sibsgrasp")

MANIFEST = "manifest.json"
SURFACE_RGB = (170, 170, 170)
THUMB_RGB = (230, 90, 40)
OTHER_RGB = (40, 120, 230)
TAG_RGB = {PALM: SURFACE_RGB, THUMB: THUMB_RGB}


def configure_logging(env=None):
    """Set the package log level from ``SIBS_LOG`` (error, info or debug)."""
    env = os.environ if env is None else env
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        env.get("SIBS_LOG", "error").lower(), logging.ERROR)
    if not log.handlers:
        h = logging.StreamHandler()
        h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(h)
    log.setLevel(level)


# --------------------------------------------------------------------------
# manifests


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


@dataclass
class RunManifest:
    command: str
    args: dict
    config: dict
    inputs: dict = field(default_factory=dict)   # label -> sha256
    seeds: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # file name -> sha256
    tool: str = "sibsgrasp"
    version: str = __version__

    def to_json(self) -> str:
        return dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        return cls(**d)

    def record_output(self, out_dir: Path, name: str):
        self.outputs[name] = sha256_file(out_dir / name)

    def write(self, out_dir: Path):
        (out_dir / MANIFEST).write_text(self.to_json())


def _write(out_dir: Path, name: str, data, manifest: RunManifest):
    path = out_dir / name
    if isinstance(data, str):
        path.write_text(data)
    else:
        path.write_bytes(data)
    manifest.record_output(out_dir, name)
    return path


# --------------------------------------------------------------------------
# input resolution


def load_scene(spec: str):
    """``recipe:<name>:<seed>`` or a point-cloud file.  Returns ``(scene | None, cloud, digest)``."""
    if spec.startswith("recipe:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"scene recipe must look like recipe:<name>:<seed>, got {spec!r}")
        scene = make_scene(parts[1], int(parts[2]))
        return scene, scene.cloud, sha256_bytes(spec.encode())
    cloud = read_cloud(spec)
    if len(cloud) == 0:
        raise EmptyInput(f"scene file {spec!r} has no points")
    return None, cloud, sha256_file(spec)


def load_hand_spec(spec: str):
    text = hand_config_text(spec)
    return load_hand(text), sha256_bytes(text.encode())


def read_grasp_file(path) -> GraspPose:
    """First pose of a poses array, or the selected pose of a ``grasp.json``."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict) and "selected" in doc:
        return GraspPose.from_dict(doc["selected"])
    poses = poses_from_json(json.dumps(doc))
    if not poses:
        raise EmptyInput(f"{path}: no grasp poses")
    return poses[0]


def frame_init(volume: SparseIbsVolume, hand: HandModel, standoff=0.12, joints="mid") -> GraspPose:
    """Wrist on the frame's -z axis ``standoff`` behind the seed, joints mid-range or open."""
    r = volume.frame.rotation
    wrist = RigidTransform(r, volume.frame.seed - standoff * r[:, 2])
    q = hand.mid_joints() if joints == "mid" else open_joints(hand)
    return GraspPose(wrist, q)


# --------------------------------------------------------------------------
# commands


@dataclass
class DatasetResult:
    files: list
    failures: list
    manifest: RunManifest


def dataset_gen(scene_spec: str, hand_spec: str, out_dir, poses_path=None, seed: int = 0,
                cfg: RunConfig = RunConfig(), count: int | None = None) -> DatasetResult:
    """One SIBS file per grasp pose.

    Without ``poses_path`` the poses are synthesised on a procedural scene
    (``count`` of them, default from the config) from ``seed``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene, cloud, scene_hash = load_scene(scene_spec)
    hand, hand_hash = load_hand_spec(hand_spec)
    n = count if count is not None else cfg.pipeline.poses_per_scene
    manifest = RunManifest("dataset-gen", {"scene": scene_spec, "hand": hand_spec,
                                           "poses": None if poses_path is None else str(poses_path),
                                           "count": n}, cfg.to_dict(),
                           {"scene": scene_hash, "hand": hand_hash}, {"seed": int(seed)})
    if poses_path is not None:
        manifest.inputs["poses"] = sha256_file(poses_path)
        poses = poses_from_json(Path(poses_path).read_text())
    else:
        if scene is None:
            raise EmptyInput("a poses file is required for scenes loaded from files")
        poses = _synthesize(hand, scene, n, seed)
    if not poses:
        raise EmptyInput("no grasp poses to process")

    files, failures = [], []
    for i, pose in enumerate(poses):
        name = f"ibs_{i:03d}.sibs"
        try:
            vol = ground_truth_ibs(hand, pose, cloud, cfg.ibs, strict=True)
        except (EmptyCrop, NoSurface, EmptyInput) as exc:
            log.warning("pose %d skipped: %s: %s", i, type(exc).__name__, exc)
            failures.append({"pose": i, "error": type(exc).__name__, "message": str(exc)})
            continue
        save_sibs(out / name, vol)
        manifest.record_output(out, name)
        files.append(out / name)
        log.info("pose %d -> %s %s", i, name, vol.counts())
    _write(out, "poses.json", poses_to_json(poses) + "\n", manifest)
    _write(out, "failures.json", dumps(failures), manifest)
    manifest.write(out)
    if not files:
        raise AllItemsFailed("every grasp pose failed", failures)
    return DatasetResult(files, failures, manifest)


def _synthesize(hand, scene: Scene, n, seed):
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(n):
        pose = synthesize_grasp(hand, scene, rng)
        if pose is None:
            log.warning("grasp synthesis gave up for one pose")
            continue
        poses.append(pose)
    return poses


def ibs_rank(paths, hand_hint=None, out_path=None):
    """Score readable SIBS files; unreadable ones are listed under ``errors``."""
    vols, names, errors = [], [], []
    for p in paths:
        try:
            vols.append(load_sibs(p))
            names.append(str(p))
        except (OSError, FormatError) as exc:
            log.warning("cannot read %s: %s", p, exc)
            errors.append({"file": str(p), "error": type(exc).__name__, "message": str(exc)})
    if not vols:
        raise EmptyInput("no readable SIBS files to rank")
    hint = None if hand_hint is None else as_point(hand_hint)
    scores = [force_closure_score(contact_set_from_volume(v, hint)) for v in vols]
    order = rank_scores(scores)
    doc = {
        "ranking": [{"index": int(i), "file": names[i],
                     "score": scores[i].value if scores[i].feasible else None,
                     "feasible": scores[i].feasible} for i in order],
        "errors": errors,
    }
    text = dumps(doc)
    if out_path is not None:
        Path(out_path).write_text(text)
    return doc


@dataclass
class OptimizeResult:
    ranked: list
    document: dict
    manifest: RunManifest


def grasp_optimize(sibs_path, hand_spec: str, out_dir, init_path=None, init_from_frame=False,
                   cfg: RunConfig = RunConfig(), seed: int | None = None,
                   trials: int | None = None) -> OptimizeResult:
    """Multi-start optimisation against one SIBS volume."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    volume = load_sibs(sibs_path)
    hand, hand_hash = load_hand_spec(hand_spec)
    opt = cfg.optimizer
    if seed is not None:
        opt = replace(opt, seed=int(seed))
    if trials is not None:
        opt = replace(opt, trials=int(trials))
    cfg = replace(cfg, optimizer=opt)
    if (init_path is None) == (not init_from_frame):
        raise ValueError("give exactly one of an init pose file or init_from_frame")
    manifest = RunManifest("grasp-optimize", {
        "sibs": str(sibs_path), "hand": hand_spec,
        "init": None if init_path is None else str(init_path),
        "init_from_frame": bool(init_from_frame)}, cfg.to_dict(),
        {"sibs": sha256_file(sibs_path), "hand": hand_hash}, {"seed": int(opt.seed)})
    if init_path is not None:
        manifest.inputs["init"] = sha256_file(init_path)
        init = read_grasp_file(init_path)
    else:
        init = frame_init(volume, hand, cfg.pipeline.standoff, cfg.pipeline.init_joints)
    if len(init.joints) != hand.dof:
        raise ValueError(f"init pose has {len(init.joints)} joints, hand has {hand.dof}")

    try:
        ibs = volume_points(volume, orientation=cfg.pipeline.orientation)
    except CannotOptimize as exc:
        diag = [{"trial": i, "error": f"CannotOptimize: {exc}"} for i in range(opt.trials)]
        _write(out, "diagnostics.json", dumps(diag), manifest)
        manifest.write(out)
        raise OptimizationFailed(str(exc), diag) from None

    try:
        ranked = multi_start(hand, init, None, cfg.weights, opt, ibs=ibs)
    except OptimizationFailed as exc:
        _write(out, "diagnostics.json", dumps(exc.diagnostics), manifest)
        manifest.write(out)
        raise
    trials_doc = []
    for g in sorted(ranked, key=lambda g: g.index):
        row = {"index": g.index, "pose": g.pose.to_dict(),
               "residual": g.residual if math.isfinite(g.residual) else None}
        if isinstance(g.detail, Exception):
            row["error"] = f"{type(g.detail).__name__}: {g.detail}"
        else:
            row["energy"] = g.detail.energy.as_dict()
            row["iterations"] = g.detail.iterations
            row["converged"] = g.detail.converged
            _write(out, f"trace_{g.index:02d}.csv", trace_csv(g.detail.trace), manifest)
        trials_doc.append(row)
    best = ranked[0]
    doc = {
        "selected": best.pose.to_dict(),
        "selected_index": best.index,
        "residuals": [r["residual"] for r in trials_doc],
        "ranking": grasp_ranking_rows(ranked),
        "trials": trials_doc,
        "hand": hand.name,
    }
    _write(out, "grasp.json", dumps(doc), manifest)
    manifest.write(out)
    return OptimizeResult(ranked, doc, manifest)


def metrics(scene_spec: str, hand_spec: str, grasp_path, sibs_path=None,
            cfg: RunConfig = RunConfig()) -> dict:
    """Penetration depth against the full scene, plus the energy breakdown when a
    SIBS volume is given."""
    _, cloud, _ = load_scene(scene_spec)
    hand, _ = load_hand_spec(hand_spec)
    pose = read_grasp_file(grasp_path)
    doc = {"max_penetration_depth": max_penetration_depth(cloud, hand, pose),
           "energy": None, "fingertip_contact_rms": None}
    if sibs_path is not None:
        vol = load_sibs(sibs_path)
        ibs = volume_points(vol, orientation=cfg.pipeline.orientation)
        e = energy_total(hand, pose, ibs, cfg.weights)
        doc["energy"] = e.as_dict()
        doc["fingertip_contact_rms"] = fingertip_contact_rms(hand, pose, ibs)
    return doc


def volume_colors(volume: SparseIbsVolume):
    idx = volume.grid.occupied("ibs_surface").reshape(-1, 3)
    cols = np.tile(np.array(SURFACE_RGB, dtype=np.uint8), (len(idx), 1))
    i, j, k = idx.T
    cols[volume.thumb[i, j, k]] = THUMB_RGB
    cols[volume.other[i, j, k]] = OTHER_RGB
    return idx, cols


def export_volume(sibs_path, out_path, world=False, binary=False):
    """IBS surface voxel centres as a PLY coloured by channel."""
    vol = load_sibs(sibs_path)
    idx, cols = volume_colors(vol)
    pts = vol.grid.voxel_to_world(idx) if len(idx) else np.zeros((0, 3))
    if world:
        pts = vol.frame.to_world(pts)
    write_ply(out_path, PointCloud(pts), colors=cols, binary=binary)
    return len(pts)


def export_hand(hand_spec: str, grasp_path, out_path, binary=False):
    """Hand surface samples at a grasp pose as a PLY coloured by finger tag."""
    hand, _ = load_hand_spec(hand_spec)
    pose = read_grasp_file(grasp_path)
    pts = hand.surface_points(pose)
    cols = np.array([TAG_RGB.get(t, OTHER_RGB) for t in hand.sample_tag], dtype=np.uint8)
    write_ply(out_path, PointCloud(pts), colors=cols, binary=binary)
    return len(pts)


# --------------------------------------------------------------------------
# replay


def _check_inputs(manifest: RunManifest, current: dict):
    for label, digest in current.items():
        recorded = manifest.inputs.get(label)
        if recorded is not None and recorded != digest:
            raise InputChanged(f"input {label!r} differs from the manifest")


def replay(manifest_path, out_dir):
    """Re-run the command recorded in a manifest, writing into ``out_dir``."""
    m = RunManifest.from_json(Path(manifest_path).read_text())
    cfg = config_from_dict(m.config)
    a = m.args
    seed = m.seeds.get("seed", 0)
    if m.command == "dataset-gen":
        cur = {"scene": load_scene(a["scene"])[2], "hand": load_hand_spec(a["hand"])[1]}
        if a.get("poses"):
            cur["poses"] = sha256_file(a["poses"])
        _check_inputs(m, cur)
        return dataset_gen(a["scene"], a["hand"], out_dir, a.get("poses"), seed, cfg,
                           count=a.get("count"))
    if m.command == "grasp-optimize":
        cur = {"sibs": sha256_file(a["sibs"]), "hand": load_hand_spec(a["hand"])[1]}
        if a.get("init"):
            cur["init"] = sha256_file(a["init"])
        _check_inputs(m, cur)
        return grasp_optimize(a["sibs"], a["hand"], out_dir, a.get("init"),
                              a.get("init_from_frame", False), cfg, seed)
    raise ValueError(f"cannot replay command {m.command!r}")
