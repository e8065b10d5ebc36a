"""Regenerate the bundled hand configs in src/sibsgrasp/data/hands/.

Surface samples are laid out on every primitive at roughly ``SPACING`` meters
and written into the YAML so that loading a hand never has to sample.

    python scripts/build_hand_configs.py
"""

from pathlib import Path

import numpy as np
import yaml

SPACING = 0.005
OUT = Path(__file__).resolve().parents[1] / "src" / "sibsgrasp" / "data" / "hands"


def _basis(w):
    w = w / np.linalg.norm(w)
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(w, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(w, u), w


def _fibonacci_dirs(n, hemisphere=False):
    i = np.arange(n) + 0.5
    z = 1.0 - i / n if hemisphere else 1.0 - 2.0 * i / n
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sample_sphere(center, radius, spacing=SPACING):
    n = max(8, int(round(4 * np.pi * radius**2 / spacing**2)))
    return np.asarray(center) + radius * _fibonacci_dirs(n)


def sample_capsule(a, b, radius, spacing=SPACING):
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = np.linalg.norm(b - a)
    u, v, w = _basis(b - a)
    n_around = max(6, int(round(2 * np.pi * radius / spacing)))
    n_rings = max(2, int(np.ceil(length / spacing)) + 1)
    pts = []
    for k, t in enumerate(np.linspace(0.0, length, n_rings)):
        phase = 0.5 * (k % 2)
        ang = 2 * np.pi * (np.arange(n_around) + phase) / n_around
        ring = a + t * w + radius * (np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v)
        pts.append(ring)
    n_cap = max(4, int(round(2 * np.pi * radius**2 / spacing**2)))
    d = _fibonacci_dirs(n_cap, hemisphere=True)
    # keep strictly-curved cap points, the equator ring is already covered
    d = d[d[:, 2] > 0.25 * spacing / radius]
    for end, sgn in ((b, 1.0), (a, -1.0)):
        dirs = d[:, 0:1] * u + d[:, 1:2] * (sgn * v) + d[:, 2:3] * (sgn * w)
        pts.append(end + radius * dirs)
    return np.concatenate(pts)


def _signed(prim, pts):
    if prim["type"] == "sphere":
        return np.linalg.norm(pts - np.asarray(prim["center"]), axis=1) - prim["radius"]
    a, b = np.asarray(prim["a"], float), np.asarray(prim["b"], float)
    ab = b - a
    t = np.clip((pts - a) @ ab / (ab @ ab), 0, 1)
    return np.linalg.norm(pts - (a + t[:, None] * ab), axis=1) - prim["radius"]


def link(name, tag, prims):
    samples = []
    for i, p in enumerate(prims):
        s = sample_sphere(p["center"], p["radius"]) if p["type"] == "sphere" else \
            sample_capsule(p["a"], p["b"], p["radius"])
        for j, q in enumerate(prims):
            if j != i:
                s = s[_signed(q, s) > -1e-4]
        samples.append(s)
    samples = np.concatenate(samples)
    return {
        "name": name,
        "tag": tag,
        "primitives": prims,
        "samples": [[float(c) for c in row] for row in samples],
    }


def capsule(a, b, r):
    return {"type": "capsule", "a": [float(x) for x in a], "b": [float(x) for x in b], "radius": r}


def sphere(c, r):
    return {"type": "sphere", "center": [float(x) for x in c], "radius": r}


def joint(name, parent, child, axis, translation, limits):
    return {
        "name": name,
        "parent": parent,
        "child": child,
        "axis": [float(x) for x in axis],
        "origin": {"translation": [float(x) for x in translation]},
        "limits": [float(limits[0]), float(limits[1])],
    }


def pinch4():
    links = [link("palm", "palm", [capsule((-0.03, y, -0.012), (0.03, y, -0.012), 0.012)
                                   for y in (-0.008, 0.008)])]
    joints = []
    for prefix, tag, x, flex in (("thumb", "thumb", 0.035, (0, -1, 0)),
                                 ("finger", "other_finger", -0.035, (0, 1, 0))):
        links.append(link(f"{prefix}_prox", tag, [capsule((0, 0, 0.011), (0, 0, 0.045), 0.009)]))
        links.append(link(f"{prefix}_dist", tag, [capsule((0, 0, 0.008), (0, 0, 0.032), 0.0085)]))
        joints.append(joint(f"{prefix}_j0", "palm", f"{prefix}_prox", flex, (x, 0, 0.012),
                            (-0.35, 1.3)))
        joints.append(joint(f"{prefix}_j1", f"{prefix}_prox", f"{prefix}_dist", flex,
                            (0, 0, 0.05), (0.0, 1.4)))
    return {"name": "pinch4", "links": links, "joints": joints}


def quad16():
    links = [link("palm", "palm", [capsule((x, -0.035, -0.012), (x, 0.035, -0.012), 0.012)
                                   for x in (-0.025, 0.0, 0.025)])]
    joints = []
    fingers = [("thumb", "thumb", 0.04, 0.0, (0, -1, 0))]
    fingers += [(f"f{i}", "other_finger", -0.04, y, (0, 1, 0))
                for i, y in enumerate((-0.03, 0.0, 0.03))]
    for prefix, tag, x, y, flex in fingers:
        links.append(link(f"{prefix}_base", tag, [sphere((0, 0, 0), 0.009)]))
        links.append(link(f"{prefix}_prox", tag, [capsule((0, 0, 0.011), (0, 0, 0.033), 0.009)]))
        links.append(link(f"{prefix}_mid", tag, [capsule((0, 0, 0.008), (0, 0, 0.022), 0.0085)]))
        links.append(link(f"{prefix}_dist", tag, [capsule((0, 0, 0.007), (0, 0, 0.02), 0.008)]))
        joints.append(joint(f"{prefix}_abd", "palm", f"{prefix}_base", (1, 0, 0), (x, y, 0.012),
                            (-0.25, 0.25)))
        joints.append(joint(f"{prefix}_j1", f"{prefix}_base", f"{prefix}_prox", flex, (0, 0, 0),
                            (-0.3, 1.4)))
        joints.append(joint(f"{prefix}_j2", f"{prefix}_prox", f"{prefix}_mid", flex,
                            (0, 0, 0.038), (0.0, 1.5)))
        joints.append(joint(f"{prefix}_j3", f"{prefix}_mid", f"{prefix}_dist", flex,
                            (0, 0, 0.027), (0.0, 1.4)))
    return {"name": "quad16", "links": links, "joints": joints}


HEADER = """\
# Generated by scripts/build_hand_configs.py -- edit the script, not this file.
# Wrist frame: origin at the palm face centre, +z is the approach direction.
"""


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (pinch4, quad16):
        doc = build()
        text = HEADER + yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)
        (OUT / f"{doc['name']}.yaml").write_text(text)
        n = sum(len(ln["samples"]) for ln in doc["links"])
        print(f"{doc['name']}: {len(doc['links'])} links, {len(doc['joints'])} joints, {n} samples")


if __name__ == "__main__":
    main()
