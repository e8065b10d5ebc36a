"""PLY and XYZ point-cloud files.

Only the ``vertex`` element is interpreted.  ``x y z`` are required,
``nx ny nz`` and ``red green blue`` are optional.  ASCII and
binary_little_endian encodings are read; both can be written.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError("not a PLY stream", 0)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []  # (name, count, [(prop, dtype)])
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError("property before element", 0)
            if parts[1] == "list":
                elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"unsupported PLY format {fmt!r}", 0)
    return fmt, elements, body_start


def _vertex_columns(props, table):
    names = [p for p, _ in props]
    for req in "xyz":
        if req not in names:
            raise FormatError(f"vertex property {req!r} missing", 0)
    pts = np.stack([table[n] for n in "xyz"], axis=1).astype(np.float64)
    normals = None
    if all(n in names for n in ("nx", "ny", "nz")):
        normals = np.stack([table[n] for n in ("nx", "ny", "nz")], axis=1).astype(np.float64)
    colors = None
    if all(n in names for n in ("red", "green", "blue")):
        colors = np.stack([table[n] for n in ("red", "green", "blue")], axis=1).astype(np.uint8)
    return pts, normals, colors


def read_ply(source, with_colors=False):
    """Read a PLY file or byte string into a :class:`PointCloud`.

    With ``with_colors`` a ``(cloud, colors)`` pair is returned (colors may be
    ``None``).
    """
    data = Path(source).read_bytes() if not isinstance(source, (bytes, bytearray)) else bytes(source)
    fmt, elements, pos = _parse_header(data)
    result = None
    if fmt == "ascii":
        lines = data[pos:].decode("ascii").split("\n")
        li = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                while li < len(lines) and not lines[li].strip():
                    li += 1
                if li >= len(lines):
                    raise FormatError(f"truncated {name} element", len(data))
                rows.append(lines[li].split())
                li += 1
            if name == "vertex":
                if any(isinstance(t, tuple) for _, t in props):
                    raise FormatError("list properties on vertices are not supported", pos)
                arr = np.array(rows, dtype=np.float64).reshape(count, len(props))
                table = {p: arr[:, i] for i, (p, _) in enumerate(props)}
                result = _vertex_columns(props, table)
    else:
        for name, count, props in elements:
            if any(isinstance(t, tuple) for _, t in props):
                if name == "vertex":
                    raise FormatError("list properties on vertices are not supported", pos)
                break  # cannot size list elements; vertices must come first
            dt = np.dtype([(p, "<" + t) for p, t in props])
            need = dt.itemsize * count
            if pos + need > len(data):
                raise FormatError(f"truncated {name} element", len(data))
            table = np.frombuffer(data, dtype=dt, count=count, offset=pos)
            pos += need
            if name == "vertex":
                result = _vertex_columns(props, table)
                break
    if result is None:
        raise FormatError("no vertex element", 0)
    pts, normals, colors = result
    if normals is not None:
        norms = np.linalg.norm(normals, axis=1)
        if len(norms) and np.max(np.abs(norms - 1.0)) > 1e-6:
            ok = norms > 0
            normals = np.where(ok[:, None], normals / np.where(ok, norms, 1.0)[:, None], 0.0)
            if not np.all(ok):
                normals = None
    cloud = PointCloud(pts, normals)
    return (cloud, colors) if with_colors else cloud


def ply_bytes(cloud: PointCloud, colors=None, binary=False) -> bytes:
    n = len(cloud)
    props = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if cloud.normals is not None:
        props += [("nx", "f8"), ("ny", "f8"), ("nz", "f8")]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(n, 3)
        props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    ply_name = {"f8": "double", "u1": "uchar"}
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}"]
    header += [f"property {ply_name[t]} {p}" for p, t in props]
    header.append("end_header")
    out = io.BytesIO()
    out.write(("\n".join(header) + "\n").encode("ascii"))
    table = np.zeros(n, dtype=np.dtype([(p, "<" + t) for p, t in props]))
    for i, c in enumerate("xyz"):
        table[c] = cloud.points[:, i]
    if cloud.normals is not None:
        for i, c in enumerate(("nx", "ny", "nz")):
            table[c] = cloud.normals[:, i]
    if colors is not None:
        for i, c in enumerate(("red", "green", "blue")):
            table[c] = colors[:, i]
    if binary:
        out.write(table.tobytes())
    else:
        for row in table:
            out.write((" ".join(repr(float(v)) if t == "f8" else str(int(v))
                                for v, (_, t) in zip(row, props)) + "\n").encode("ascii"))
    return out.getvalue()


def write_ply(path, cloud: PointCloud, colors=None, binary=False):
    Path(path).write_bytes(ply_bytes(cloud, colors=colors, binary=binary))


def read_xyz(path) -> PointCloud:
    """Whitespace separated ``x y z`` rows; extra columns are ignored."""
    arr = np.loadtxt(path, dtype=np.float64, ndmin=2, comments="#")
    if arr.size == 0:
        return PointCloud(np.zeros((0, 3)))
    return PointCloud(arr[:, :3])


def write_xyz(path, cloud: PointCloud):
    np.savetxt(path, cloud.points, fmt="%.17g")


def read_cloud(path) -> PointCloud:
    """Dispatch on file extension (``.ply`` or anything else as XYZ text)."""
    return read_ply(path) if str(path).lower().endswith(".ply") else read_xyz(path)
