"""Single-view partial point clouds of articulated objects."""
from __future__ import annotations

import numpy as np

from ..geometry import PointCloud, sample_surface
from .objects import ArticulatedObject

GRID = 256
ELEVATION_RANGE = (30.0, 60.0)


def camera_direction(azimuth: float, elevation: float) -> np.ndarray:
    """Unit vector from the object towards the camera (degrees, +Z up, azimuth 0 = +X)."""
    a, e = np.radians(azimuth), np.radians(elevation)
    return np.array([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])


def _surface(obj: ArticulatedObject, n: int, seed):
    parts = obj.world_parts()
    areas = np.array([sum(p.area() for p in asm.primitives) for _, _, asm in parts])
    counts = np.maximum(1, np.round(n * areas / areas.sum()).astype(int))
    ss = np.random.SeedSequence(seed).spawn(len(parts))
    pts, nrm, lab = [], [], []
    for (lid, name, asm), k, s in zip(parts, counts, ss):
        pc = sample_surface(asm, int(k), np.random.default_rng(s))
        pts.append(pc.points)
        nrm.append(pc.normals)
        lab += [name] * int(k)
    return np.vstack(pts), np.vstack(nrm), np.array(lab)


def visible_mask(points, normals, view_dir, grid: int = GRID, tol_cells: float = 1.5) -> np.ndarray:
    """Back-face culling followed by a z-buffer on a ``grid`` x ``grid`` raster.

    Orthographic projection along ``view_dir``; a point survives when it lies
    within ``tol_cells`` cell sizes of the nearest surface in its cell."""
    d = np.asarray(view_dir, float)
    d = d / np.linalg.norm(d)
    front = normals @ d > 0
    # image basis
    up = np.array([0.0, 0.0, 1.0])
    u = np.cross(up, d)
    if np.linalg.norm(u) < 1e-9:
        u = np.array([0.0, 1.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    uv = np.column_stack([points @ u, points @ v])
    depth = -(points @ d)  # smaller is closer to the camera
    lo = uv.min(0)
    span = max(float((uv.max(0) - lo).max()), 1e-9)
    cell = span / grid
    ij = np.minimum(((uv - lo) / cell).astype(int), grid - 1)
    flat = ij[:, 0] * grid + ij[:, 1]
    zbuf = np.full(grid * grid, np.inf)
    np.minimum.at(zbuf, flat[front], depth[front])
    return front & (depth <= zbuf[flat] + tol_cells * cell)


def render_view(obj: ArticulatedObject, azimuth: float, elevation: float, n_points: int = 2048,
                seed=0, return_labels: bool = False, oversample: int = 8):
    """Visible surface samples of ``obj`` seen from (azimuth, elevation) in degrees.

    Returns exactly ``n_points`` world-frame points with outward normals, and
    with ``return_labels`` also the part name of every point."""
    if not ELEVATION_RANGE[0] <= elevation <= ELEVATION_RANGE[1]:
        raise ValueError(f"elevation {elevation} outside [{ELEVATION_RANGE[0]}, {ELEVATION_RANGE[1]}] degrees")
    if not 0.0 <= azimuth < 360.0:
        raise ValueError(f"azimuth {azimuth} outside [0, 360) degrees")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    rng = np.random.default_rng(seed)
    d = camera_direction(azimuth, elevation)
    m = max(oversample * n_points, 20000)
    for _ in range(3):
        pts, nrm, lab = _surface(obj, m, rng.integers(2**63))
        vis = np.flatnonzero(visible_mask(pts, nrm, d))
        if len(vis) >= n_points:
            break
        m *= 4
    if len(vis) >= n_points:
        pick = np.sort(rng.choice(vis, n_points, replace=False))
    else:
        pick = np.sort(rng.choice(vis, n_points, replace=True))
    cloud = PointCloud(pts[pick], nrm[pick])
    return (cloud, lab[pick]) if return_labels else cloud
