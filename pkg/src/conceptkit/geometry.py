"""Rigid transforms, primitive assemblies, surface sampling and chamfer distance.

Primitive local frames:

* ``Cuboid``   size ``(a, b, c)``, centered at the local origin.
* ``Cylinder`` size ``(radius, height)``, axis along local +Z, centered.
* ``Sphere``   size ``(radius,)``, centered.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

PRIMITIVE_KINDS = ("Cylinder", "Cuboid", "Sphere")
SIZE_DIMS = {"Cylinder": 2, "Cuboid": 3, "Sphere": 1}


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RigidTransform:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def is_valid(self, tol: float = 1e-9) -> bool:
        if not (np.all(np.isfinite(self.R)) and np.all(np.isfinite(self.t))):
            return False
        ortho = np.abs(self.R.T @ self.R - np.eye(3)).max()
        return ortho < tol and abs(np.linalg.det(self.R) - 1.0) < tol

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def apply_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.R.T + self.t

    def apply_vectors(self, vecs) -> np.ndarray:
        return np.asarray(vecs, dtype=float) @ self.R.T

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash((self.R.tobytes(), self.t.tobytes()))

    def __repr__(self):
        return f"RigidTransform(R={self.R.tolist()}, t={self.t.tolist()})"

    def to_json(self) -> dict:
        return {"R": [float(v) for v in self.R.ravel()], "t": [float(v) for v in self.t]}

    @classmethod
    def from_json(cls, d: dict) -> "RigidTransform":
        return cls(np.reshape(d["R"], (3, 3)), d["t"])


def compose(T1: RigidTransform, T2: RigidTransform) -> RigidTransform:
    return T1 @ T2


def invert(T: RigidTransform) -> RigidTransform:
    return T.inverse()


def apply(T: RigidTransform, P: "PointCloud") -> "PointCloud":
    normals = None if P.normals is None else T.apply_vectors(P.normals)
    return PointCloud(T.apply_points(P.points), normals)


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    # uniform via unit quaternion
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_transform(rng: np.random.Generator, translation_scale: float = 1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


def rotation_angle(R: np.ndarray) -> float:
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def pose_error(T_est: RigidTransform, T_ref: RigidTransform) -> tuple[float, float]:
    """(translation error in m, rotation error in rad)."""
    dt = float(np.linalg.norm(T_est.t - T_ref.t))
    dr = rotation_angle(T_ref.R.T @ T_est.R)
    return dt, dr


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(self.points) < 1:
            raise GeometryError("point cloud must contain at least one point")
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("point cloud coordinates must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if self.normals.shape != self.points.shape:
                raise GeometryError("normals must match points in shape")

    def __len__(self):
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.points.max(0) - self.points.min(0)))


@dataclass(frozen=True, eq=False)
class Primitive:
    kind: str
    size: np.ndarray
    pose: RigidTransform

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise GeometryError(f"unknown primitive kind {self.kind!r}")
        size = np.array(self.size, dtype=float).reshape(-1)
        if len(size) != SIZE_DIMS[self.kind]:
            raise GeometryError(f"{self.kind} expects {SIZE_DIMS[self.kind]} size values")
        object.__setattr__(self, "size", size)

    def area(self) -> float:
        return float(_face_areas(self.kind, self.size).sum())


@dataclass(frozen=True, eq=False)
class PrimitiveAssembly:
    primitives: tuple

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        for p in self.primitives:
            if not np.all(p.size > 0):
                raise GeometryError(f"{p.kind} size must be positive, got {p.size.tolist()}")
            if not p.pose.is_valid():
                raise GeometryError("primitive pose must be a proper rigid transform")

    def __len__(self):
        return len(self.primitives)

    def __iter__(self):
        return iter(self.primitives)

    def transformed(self, T: RigidTransform) -> "PrimitiveAssembly":
        return PrimitiveAssembly(tuple(Primitive(p.kind, p.size, T @ p.pose) for p in self.primitives))

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        corners = []
        for p in self.primitives:
            h = _half_extents(p.kind, p.size)
            c = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * h
            corners.append(p.pose.apply_points(c))
        c = np.vstack(corners)
        return c.min(0), c.max(0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))


def _half_extents(kind: str, size: np.ndarray) -> np.ndarray:
    if kind == "Cuboid":
        return size / 2.0
    if kind == "Cylinder":
        return np.array([size[0], size[0], size[1] / 2.0])
    return np.array([size[0]] * 3)


def _face_areas(kind: str, size: np.ndarray) -> np.ndarray:
    if kind == "Cuboid":
        a, b, c = size
        # +x, -x, +y, -y, +z, -z
        return np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    if kind == "Cylinder":
        r, h = size
        # lateral, top cap, bottom cap
        return np.array([2 * np.pi * r * h, np.pi * r * r, np.pi * r * r])
    r = size[0]
    return np.array([4 * np.pi * r * r])


def _sample_cuboid(size, u):
    h = size / 2.0
    areas = _face_areas("Cuboid", size)
    cdf = np.cumsum(areas) / areas.sum()
    face = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), 5)
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts = np.empty((len(u), 3))
    normals = np.zeros((len(u), 3))
    a1 = (axis + 1) % 3
    a2 = (axis + 2) % 3
    rows = np.arange(len(u))
    pts[rows, axis] = sign * h[axis]
    pts[rows, a1] = (2 * u[:, 1] - 1) * h[a1]
    pts[rows, a2] = (2 * u[:, 2] - 1) * h[a2]
    normals[rows, axis] = sign
    return pts, normals


def _sample_cylinder(size, u):
    r, hgt = size
    areas = _face_areas("Cylinder", size)
    cdf = np.cumsum(areas) / areas.sum()
    part = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), 2)
    pts = np.empty((len(u), 3))
    normals = np.zeros((len(u), 3))
    lat = part == 0
    ang = 2 * np.pi * u[:, 1]
    pts[lat, 0] = r * np.cos(ang[lat])
    pts[lat, 1] = r * np.sin(ang[lat])
    pts[lat, 2] = (u[lat, 2] - 0.5) * hgt
    normals[lat, 0] = np.cos(ang[lat])
    normals[lat, 1] = np.sin(ang[lat])
    cap = ~lat
    rad = r * np.sqrt(u[cap, 2])
    pts[cap, 0] = rad * np.cos(ang[cap])
    pts[cap, 1] = rad * np.sin(ang[cap])
    zs = np.where(part[cap] == 1, 1.0, -1.0)
    pts[cap, 2] = zs * hgt / 2.0
    normals[cap, 2] = zs
    return pts, normals


def _sample_sphere(size, u):
    r = size[0]
    z = 1.0 - 2.0 * u[:, 1]
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    ang = 2 * np.pi * u[:, 2]
    n = np.column_stack([s * np.cos(ang), s * np.sin(ang), z])
    return r * n, n


_SAMPLERS = {"Cuboid": _sample_cuboid, "Cylinder": _sample_cylinder, "Sphere": _sample_sphere}


def sample_from_variates(assembly: PrimitiveAssembly, u: np.ndarray) -> PointCloud:
    """Map uniform variates ``u`` of shape (n, 4) onto the assembly surface.

    Column 0 picks the primitive (area weighted), column 1 the face, columns
    2-3 the location. Reusing the same ``u`` while the assembly changes gives
    a sample that moves continuously with the geometry.
    """
    areas = np.array([p.area() for p in assembly.primitives])
    cdf = np.cumsum(areas) / areas.sum()
    which = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), len(areas) - 1)
    pts = np.empty((len(u), 3))
    normals = np.empty((len(u), 3))
    for i, prim in enumerate(assembly.primitives):
        m = which == i
        if not m.any():
            continue
        lp, ln = _SAMPLERS[prim.kind](prim.size, u[m, 1:])
        pts[m] = prim.pose.apply_points(lp)
        normals[m] = prim.pose.apply_vectors(ln)
    return PointCloud(pts, normals)


def sample_surface(assembly: PrimitiveAssembly, n: int, seed=0) -> PointCloud:
    if n < 1:
        raise GeometryError("n must be >= 1")
    u = np.random.default_rng(seed).random((n, 4))
    return sample_from_variates(assembly, u)


def primitive_residual(prim: Primitive, pts: np.ndarray) -> np.ndarray:
    """Unsigned implicit-surface residual of world points w.r.t. one primitive."""
    q = prim.pose.inverse().apply_points(pts)
    if prim.kind == "Cuboid":
        d = np.abs(q) - prim.size / 2.0
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(d.max(axis=1), 0.0)
        return np.abs(outside + inside)
    if prim.kind == "Cylinder":
        r, h = prim.size
        d = np.column_stack([np.hypot(q[:, 0], q[:, 1]) - r, np.abs(q[:, 2]) - h / 2.0])
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(d.max(axis=1), 0.0)
        return np.abs(outside + inside)
    return np.abs(np.linalg.norm(q, axis=1) - prim.size[0])


def surface_residual(assembly: PrimitiveAssembly, pts) -> np.ndarray:
    """Distance of each point to the nearest primitive surface."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    return np.min([primitive_residual(p, pts) for p in assembly.primitives], axis=0)


def _closest_local(kind: str, size: np.ndarray, q: np.ndarray):
    """Closest surface point and outward unit normal there, in the primitive frame."""
    n_pts = len(q)
    rows = np.arange(n_pts)
    if kind == "Cuboid":
        h = size / 2.0
        c = np.clip(q, -h, h)
        gap = h - np.abs(q)
        k = np.argmin(gap, axis=1)
        sgn = np.where(q[rows, k] >= 0, 1.0, -1.0)
        inside = np.all(gap > 0, axis=1)
        c[inside, k[inside]] = sgn[inside] * h[k[inside]]
        normal = np.zeros_like(q)
        normal[rows, k] = sgn
        off = q - c
        dist = np.linalg.norm(off, axis=1)
        out = ~inside & (dist > 1e-12)
        normal[out] = off[out] / dist[out, None]
        return c, normal
    if kind == "Cylinder":
        r, hh = size[0], size[1] / 2.0
        rho = np.hypot(q[:, 0], q[:, 1])
        safe = rho > 1e-15
        ux = np.where(safe, q[:, 0] / np.where(safe, rho, 1.0), 1.0)
        uy = np.where(safe, q[:, 1] / np.where(safe, rho, 1.0), 0.0)
        z = q[:, 2]
        zs = np.where(z >= 0, 1.0, -1.0)
        rc = np.minimum(rho, r)
        zc = np.clip(z, -hh, hh)
        side_gap, cap_gap = r - rho, hh - np.abs(z)
        to_side = side_gap < cap_gap
        inside = (side_gap > 0) & (cap_gap > 0)
        rc = np.where(inside & to_side, r, rc)
        zc = np.where(inside & ~to_side, zs * hh, zc)
        # 2-D normal in the (rho, z) half plane
        nr = np.where(to_side, 1.0, 0.0)
        nz = np.where(to_side, 0.0, zs)
        dr_, dz_ = rho - rc, z - zc
        dist = np.hypot(dr_, dz_)
        out = ~inside & (dist > 1e-12)
        nr = np.where(out, dr_ / np.where(out, dist, 1.0), nr)
        nz = np.where(out, dz_ / np.where(out, dist, 1.0), nz)
        c = np.column_stack([rc * ux, rc * uy, zc])
        normal = np.column_stack([nr * ux, nr * uy, nz])
        return c, normal
    n = np.linalg.norm(q, axis=1)
    safe = n > 1e-15
    u = np.where(safe[:, None], q / np.where(safe, n, 1.0)[:, None], np.array([0.0, 0.0, 1.0]))
    return size[0] * u, u


def closest_surface_points(assembly: PrimitiveAssembly, pts, return_normals: bool = False):
    """Closest point on the union of primitive surfaces for each point and its
    distance; with ``return_normals`` also the outward surface normal there."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    best = np.full(len(pts), np.inf)
    out = np.empty_like(pts)
    nrm = np.empty_like(pts)
    for prim in assembly.primitives:
        R, t = prim.pose.R, prim.pose.t
        c, n = _closest_local(prim.kind, prim.size, (pts - t) @ R)
        c = c @ R.T + t
        d = np.linalg.norm(c - pts, axis=1)
        m = d < best
        best[m] = d[m]
        out[m] = c[m]
        nrm[m] = n[m] @ R.T
    if return_normals:
        return out, best, nrm
    return out, best


def inside_primitive(prim: Primitive, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
    """Points strictly inside the primitive shrunk by ``margin``."""
    q = prim.pose.inverse().apply_points(pts)
    if prim.kind == "Cuboid":
        return np.all(np.abs(q) < prim.size / 2.0 - margin, axis=1)
    if prim.kind == "Cylinder":
        r, h = prim.size
        return (np.hypot(q[:, 0], q[:, 1]) < r - margin) & (np.abs(q[:, 2]) < h / 2.0 - margin)
    return np.linalg.norm(q, axis=1) < prim.size[0] - margin


def nearest(tree_points: np.ndarray, query: np.ndarray, tree: Optional[cKDTree] = None):
    tree = tree if tree is not None else cKDTree(tree_points)
    return tree.query(query, k=1)


def chamfer(P, Q) -> float:
    """Symmetric chamfer: mean NN distance P->Q plus mean NN distance Q->P."""
    p = P.points if isinstance(P, PointCloud) else np.asarray(P, dtype=float).reshape(-1, 3)
    q = Q.points if isinstance(Q, PointCloud) else np.asarray(Q, dtype=float).reshape(-1, 3)
    if len(p) == 0 or len(q) == 0:
        raise GeometryError("chamfer needs non-empty clouds")
    d_pq, _ = cKDTree(q).query(p, k=1)
    d_qp, _ = cKDTree(p).query(q, k=1)
    return float(np.mean(d_pq) + np.mean(d_qp))


def farthest_point_downsample(P: PointCloud, n: int) -> PointCloud:
    pts = P.points
    if n >= len(pts):
        return P
    idx = np.empty(n, dtype=int)
    # start from the point farthest from the centroid so the result is pose-independent
    idx[0] = int(np.argmax(np.einsum("ij,ij->i", pts - pts.mean(0), pts - pts.mean(0))))
    d = np.einsum("ij,ij->i", pts - pts[idx[0]], pts - pts[idx[0]])
    for i in range(1, n):
        idx[i] = int(np.argmax(d))
        diff = pts - pts[idx[i]]
        d = np.minimum(d, np.einsum("ij,ij->i", diff, diff))
    return P.subset(np.sort(idx))


def uniform_downsample(P: PointCloud, n: int, seed=0) -> PointCloud:
    if n >= len(P):
        return P
    idx = np.random.default_rng(seed).choice(len(P), size=n, replace=False)
    return P.subset(np.sort(idx))


def downsample(P: PointCloud, n: int, method: str = "farthest", seed=0) -> PointCloud:
    if method == "farthest":
        return farthest_point_downsample(P, n)
    if method == "uniform":
        return uniform_downsample(P, n, seed)
    raise ValueError(f"unknown downsampling method {method!r}")
