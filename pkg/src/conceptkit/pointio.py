"""ASCII XYZ and binary little-endian PLY point cloud files."""
from __future__ import annotations

import os

import numpy as np

from .geometry import PointCloud


class PointCloudFormatError(ValueError):
    pass


def read_xyz(path) -> PointCloud:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise PointCloudFormatError(f"{path}:{lineno}: expected 'x y z'")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise PointCloudFormatError(f"{path}:{lineno}: non-numeric coordinate") from None
    if not rows:
        raise PointCloudFormatError(f"{path}: no points")
    return PointCloud(np.array(rows))


def write_xyz(path, P: PointCloud) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y, z in P.points.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def write_ply(path, P: PointCloud) -> None:
    has_n = P.normals is not None
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(P)}",
              "property double x", "property double y", "property double z"]
    if has_n:
        header += ["property double nx", "property double ny", "property double nz"]
    header.append("end_header")
    data = np.hstack([P.points, P.normals]) if has_n else P.points
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
}


def read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise PointCloudFormatError(f"{path}: not a PLY file")
    lines = blob[:end].decode("ascii", errors="replace").splitlines()
    body = blob[end + len(b"end_header\n"):]
    fmt, count, props, in_vertex = None, None, [], False
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
            elif count is None:
                raise PointCloudFormatError(f"{path}: vertex element must come first")
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list" or tok[1] not in _PLY_TYPES:
                raise PointCloudFormatError(f"{path}: unsupported vertex property {line!r}")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt != "binary_little_endian":
        raise PointCloudFormatError(f"{path}: only binary_little_endian PLY is supported")
    names = [p[0] for p in props]
    if count is None or not {"x", "y", "z"} <= set(names):
        raise PointCloudFormatError(f"{path}: missing vertex positions")
    dtype = np.dtype(props)
    if len(body) < dtype.itemsize * count:
        raise PointCloudFormatError(f"{path}: truncated vertex data")
    arr = np.frombuffer(body, dtype=dtype, count=count)
    pts = np.column_stack([arr["x"], arr["y"], arr["z"]]).astype(float)
    normals = None
    if {"nx", "ny", "nz"} <= set(names):
        normals = np.column_stack([arr["nx"], arr["ny"], arr["nz"]]).astype(float)
    return PointCloud(pts, normals)


def read_cloud(path) -> PointCloud:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        return read_ply(path)
    return read_xyz(path)


def write_cloud(path, P: PointCloud) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        write_ply(path, P)
    else:
        write_xyz(path, P)
