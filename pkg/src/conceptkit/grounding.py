"""Grounding a concept onto a part point cloud.

Pose is estimated by Umeyama alignment on nearest-neighbour correspondences
(ICP style) with RANSAC outlier rejection; structural parameters by
chamfer-minimizing coordinate descent in the concept's canonical space. The
two are refined alternately from a small set of principal-axes hypotheses.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.spatial import cKDTree

from .assembly import clamp_params, instantiate_structure, symmetry_frames
from .concepts import AnalyticConcept
from .geometry import (
    PointCloud,
    PrimitiveAssembly,
    RigidTransform,
    closest_surface_points,
    apply,
    downsample,
    pose_error,
    rotation_about,
    sample_from_variates,
)
from .optimize import coordinate_descent


class GroundingError(Exception):
    pass


class DegenerateConfiguration(GroundingError, ValueError):
    pass


class NoConsensus(GroundingError):
    pass


class FitDiverged(GroundingError):
    def __init__(self, message, residual=float("nan"), grounding=None):
        super().__init__(message)
        self.residual = residual
        self.grounding = grounding


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 100
    inlier_threshold: float = 0.005
    min_inliers: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3")


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 2
    max_evals: int = 300
    downsample_to: int = 1024
    convergence_tol: float = 1e-5
    seed: int = 0
    template_points: int = 1024
    max_rounds: int = 5
    hypotheses_kept: int = 3
    icp_iterations: int = 20
    ransac_iterations: int = 40
    downsample_method: str = "farthest"
    reject_ratio: float = 0.10
    coverage_weight: float = 0.5

    def __post_init__(self):
        for name in ("restarts", "max_evals", "downsample_to", "template_points", "max_rounds",
                     "hypotheses_kept", "icp_iterations", "ransac_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.convergence_tol > 0 or not self.reject_ratio > 0 or not self.coverage_weight > 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class Grounding:
    concept_id: str
    params: Mapping[str, float]
    pose: RigidTransform
    residual: float
    inlier_fraction: float = 1.0

    def to_json(self) -> dict:
        return {
            "concept_id": self.concept_id,
            "params": {k: float(v) for k, v in self.params.items()},
            "pose": self.pose.to_json(),
            "residual": float(self.residual),
            "inlier_fraction": float(self.inlier_fraction),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, d: dict) -> "Grounding":
        return cls(d["concept_id"], dict(d["params"]), RigidTransform.from_json(d["pose"]),
                   float(d["residual"]), float(d.get("inlier_fraction", 1.0)))


# ---------------------------------------------------------------------------
# rigid alignment

def _as_points(X) -> np.ndarray:
    if isinstance(X, PointCloud):
        return X.points
    return np.asarray(X, dtype=float).reshape(-1, 3)


def umeyama(src, dst, correspondence=None) -> RigidTransform:
    """Least-squares rigid transform T minimizing sum |T src_i - dst_i|^2 (no scale)."""
    a, b = _as_points(src), _as_points(dst)
    if correspondence is not None:
        pairs = np.asarray(correspondence, dtype=int).reshape(-1, 2)
        a, b = a[pairs[:, 0]], b[pairs[:, 1]]
    if len(a) != len(b):
        raise ValueError("src and dst must be index-paired")
    if len(a) < 3:
        raise DegenerateConfiguration("need at least 3 corresponding pairs")
    mu_a, mu_b = a.mean(0), b.mean(0)
    A, B = a - mu_a, b - mu_b
    ev = np.linalg.eigvalsh(A.T @ A)  # ascending squared singular values
    if not ev[2] > 0 or ev[1] <= 1e-12 * ev[2]:
        raise DegenerateConfiguration("source points are coincident or collinear")
    H = B.T @ A / len(a)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return RigidTransform(R, mu_b - R @ mu_a)


def _batched_umeyama(a: np.ndarray, b: np.ndarray):
    """Umeyama on a batch of (k, m, 3) paired samples; returns R (k,3,3), t (k,3)."""
    mu_a, mu_b = a.mean(1), b.mean(1)
    A, B = a - mu_a[:, None], b - mu_b[:, None]
    H = np.einsum("kni,knj->kij", B, A)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    d[d == 0] = 1.0
    S = np.tile(np.eye(3), (len(a), 1, 1))
    S[:, 2, 2] = d
    R = U @ S @ Vt
    t = mu_b - np.einsum("kij,kj->ki", R, mu_a)
    return R, t


def ransac_align(src, dst, cfg: RansacConfig = RansacConfig()):
    """RANSAC over minimal 3-pair samples, refit by Umeyama on the consensus set.

    Hypotheses are ranked by inlier count, ties broken by inlier RMS.
    Returns (transform, inlier mask).
    """
    a, b = _as_points(src), _as_points(dst)
    if len(a) != len(b):
        raise ValueError("src and dst must be index-paired")
    n = len(a)
    if n < 3:
        raise DegenerateConfiguration("need at least 3 corresponding pairs")
    rng = np.random.default_rng(cfg.seed)
    idx = np.array([rng.choice(n, 3, replace=False) for _ in range(cfg.iterations)])
    sa = a[idx]
    area = np.linalg.norm(np.cross(sa[:, 1] - sa[:, 0], sa[:, 2] - sa[:, 0]), axis=1)
    scale = max(float(np.ptp(a, axis=0).max()), 1e-12)
    ok = area > 1e-10 * scale * scale
    if not ok.any():
        raise DegenerateConfiguration("every minimal sample was collinear")
    R, t = _batched_umeyama(sa[ok], b[idx[ok]])
    pred = np.einsum("kij,nj->kni", R, a) + t[:, None, :]
    res = np.linalg.norm(pred - b[None], axis=2)
    inl = res < cfg.inlier_threshold
    counts = inl.sum(1)
    rms = np.sqrt(np.where(inl, res * res, 0.0).sum(1) / np.maximum(counts, 1))
    best = np.lexsort((rms, -counts))[0]
    mask = inl[best]
    if mask.sum() < max(cfg.min_inliers, 3):
        raise NoConsensus(f"best hypothesis has {int(mask.sum())} inliers, need {cfg.min_inliers}")
    T = umeyama(a[mask], b[mask])
    for _ in range(3):
        new_mask = np.linalg.norm(T.apply_points(a) - b, axis=1) < cfg.inlier_threshold
        if new_mask.sum() < max(cfg.min_inliers, 3) or np.array_equal(new_mask, mask):
            break
        mask = new_mask
        T = umeyama(a[mask], b[mask])
    return T, mask


# ---------------------------------------------------------------------------
# template sampling and objectives

class TemplateSampler:
    """Surface samples of a concept template with frozen uniform variates, so the
    sample moves smoothly as parameters change (common random numbers)."""

    def __init__(self, concept: AnalyticConcept, n: int, seed=0):
        self.concept = concept
        self.names = concept.structure.param_names
        self.u = np.random.default_rng(seed).random((n, 4))

    def params_dict(self, x) -> dict:
        return dict(zip(self.names, (float(v) for v in x)))

    def assembly(self, params):
        if not isinstance(params, Mapping):
            params = self.params_dict(params)
        return instantiate_structure(self.concept, params, check_range=False)

    def points(self, params) -> np.ndarray:
        asm = params if isinstance(params, PrimitiveAssembly) else self.assembly(params)
        return sample_from_variates(asm, self.u).points


def _chamfer_fixed(tree_data: cKDTree, data: np.ndarray, model: np.ndarray) -> float:
    d_md, _ = tree_data.query(model, k=1)
    d_dm, _ = cKDTree(model).query(data, k=1)
    return float(d_md.mean() + d_dm.mean())


def _surface_chamfer(asm, model: np.ndarray, data_local: np.ndarray, tree_local: cKDTree) -> float:
    """Chamfer with the data->template half measured to the exact primitive
    surfaces instead of to template samples; both clouds in the canonical frame."""
    _, d_dm = closest_surface_points(asm, data_local)
    d_md, _ = tree_local.query(model, k=1)
    return float(d_dm.mean() + d_md.mean())


def canonicalize(P: PointCloud, grounding: Grounding) -> PointCloud:
    return apply(grounding.pose.inverse(), P)


def _bounds(concept):
    specs = concept.structure.params
    return (np.array([p.lo for p in specs]), np.array([p.hi for p in specs]),
            np.array([p.default for p in specs]))


def fit_structural_params(concept: AnalyticConcept, P_star: PointCloud, cfg: FitConfig = FitConfig(),
                          init: Optional[Mapping[str, float]] = None) -> dict:
    """Parameters minimizing the template-to-``P_star`` chamfer inside the declared
    ranges, with the pose held at the identity."""
    data = downsample(P_star, cfg.downsample_to, cfg.downsample_method, cfg.seed).points
    sampler = TemplateSampler(concept, cfg.template_points, cfg.seed)
    lo, hi, x_def = _bounds(concept)
    tree = cKDTree(data)
    diag = float(np.linalg.norm(np.ptp(data, axis=0)))

    def f(x):
        asm = sampler.assembly(x)
        return _surface_chamfer(asm, sampler.points(asm), data, tree)

    if len(lo) == 0:
        best_x, best_f = x_def, f(x_def)
    else:
        rng = np.random.default_rng(cfg.seed)
        starts = [x_def if init is None else np.array([float(init[n]) for n in sampler.names])]
        starts += [rng.uniform(lo, hi) for _ in range(cfg.restarts - 1)]
        best_x, best_f = None, np.inf
        for x0 in starts:
            res = coordinate_descent(f, x0, lo, hi, max_evals=cfg.max_evals, tol=1e-3, sweeps=5)
            if res.fun < best_f:
                best_x, best_f = res.x, res.fun
    params = clamp_params(concept.structure.params, sampler.params_dict(best_x))
    if best_f > cfg.reject_ratio * diag:
        raise FitDiverged(f"{concept.id}: residual {best_f:.4g} exceeds {cfg.reject_ratio:g} x cloud diagonal",
                          best_f)
    return params


# ---------------------------------------------------------------------------
# pose hypotheses and ICP

def _principal_frame(X: np.ndarray):
    mu = X.mean(0)
    C = X - mu
    w, V = np.linalg.eigh(C.T @ C / len(X))
    V = V[:, ::-1]
    # sign convention from third moments keeps the frame rotation-equivariant
    for k in range(3):
        proj = C @ V[:, k]
        if np.mean(proj ** 3) < 0:
            V[:, k] = -V[:, k]
    if np.linalg.det(V) < 0:
        V[:, 2] = -V[:, 2]
    return mu, V


def _axis_hypotheses() -> list[np.ndarray]:
    """The 24 proper rotations that permute and sign-flip coordinate axes."""
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            M = np.zeros((3, 3))
            M[range(3), perm] = signs
            if np.linalg.det(M) > 0:
                out.append(M)
    return out


_HYPOTHESES = _axis_hypotheses()


def _trimmed(d: np.ndarray, floor: float) -> np.ndarray:
    # the floor matters: on clean data the median is close to zero
    keep = d < max(2.5 * float(np.median(d)), floor)
    return keep if keep.sum() >= 3 else np.ones(len(d), bool)


def _plane_step(asm, data: np.ndarray, T: RigidTransform, floor: float) -> RigidTransform:
    """One Gauss-Newton point-to-plane step against the exact template surfaces."""
    local = T.inverse().apply_points(data)
    c, d, n = closest_surface_points(asm, local, return_normals=True)
    keep = _trimmed(d, floor)
    p, q, nn = local[keep], c[keep], n[keep]
    A = np.hstack([np.cross(p, nn), nn])
    b = -np.einsum("ij,ij->i", p - q, nn)
    sol = np.linalg.lstsq(A, b, rcond=1e-10)[0]
    w, v = sol[:3], sol[3:]
    angle = float(np.linalg.norm(w))
    R = rotation_about(w / angle, angle) if angle > 0 else np.eye(3)
    # local' = R local + v, so the new canonical->world pose is T @ inv(delta)
    return T @ RigidTransform(R, v).inverse()


def _icp(asm, data: np.ndarray, T: RigidTransform, iterations: int, rng_seed: int,
         ransac_iters: int, floor: float, tol: float = 1e-7) -> RigidTransform:
    """Register the data onto the exact template surfaces; returns canonical->world.

    Two RANSAC-screened point-to-point steps on closest-point correspondences
    shed outliers, then point-to-plane steps converge quickly along surfaces."""
    for it in range(iterations):
        try:
            if ransac_iters > 0 and it < 2:
                src, d = closest_surface_points(asm, T.inverse().apply_points(data))
                thr = max(2.5 * float(np.median(d)), floor)
                T_new, _ = ransac_align(src, data, RansacConfig(ransac_iters, thr, 3, rng_seed + it))
            else:
                T_new = _plane_step(asm, data, T, floor)
        except (NoConsensus, DegenerateConfiguration, np.linalg.LinAlgError):
            break
        dt, dr = pose_error(T_new, T)
        T = T_new
        if dt < tol and dr < tol:
            break
    return T


def _initial_poses(model: np.ndarray, data: np.ndarray) -> list[RigidTransform]:
    mu_m, Vm = _principal_frame(model)
    mu_d, Vd = _principal_frame(data)
    out = []
    for M in _HYPOTHESES:
        R = Vd @ M @ Vm.T
        out.append(RigidTransform(R, mu_d - R @ mu_m))
    return out


class _ProfiledObjective:
    """Surface chamfer of template(x) against the data after re-fitting the pose
    from ``base`` with a few ICP steps, so parameter moves that shift the part as
    a whole are absorbed by the pose instead of being penalized."""

    def __init__(self, sampler, data, tree_data, base: RigidTransform, x_base, floor: float,
                 steps: int = 1, fit_pose: bool = True, anchor: str = "centroid",
                 weight: float = 1.0):
        self.floor = floor
        self.weight = weight
        self.sampler = sampler
        self.data = data
        self.tree_data = tree_data
        self.base = base
        self.fit_pose = fit_pose
        self.steps = steps if fit_pose else 0
        self.anchor = anchor
        self.centroid = sampler.points(x_base).mean(0)
        self.poses = {}

    def __call__(self, x) -> float:
        asm = self.sampler.assembly(x)
        model = self.sampler.points(asm)
        T = self.base
        if self.fit_pose and self.anchor == "centroid":
            # keep the template centroid where it was, then let ICP correct the rest
            T = T @ RigidTransform(np.eye(3), self.centroid - model.mean(0))
        for _ in range(self.steps):
            T = _plane_step(asm, self.data, T, self.floor)
        _, d_dm = closest_surface_points(asm, T.inverse().apply_points(self.data))
        d_md, _ = self.tree_data.query(T.apply_points(model), k=1)
        self.poses[np.asarray(x, dtype=float).tobytes()] = T
        return float(d_dm.mean() + self.weight * d_md.mean())

    def pose_for(self, x) -> RigidTransform:
        return self.poses.get(np.asarray(x, dtype=float).tobytes(), self.base)


def ground(concept: AnalyticConcept, P: PointCloud, cfg: FitConfig = FitConfig(),
           init_params: Optional[Mapping[str, float]] = None,
           fixed_params: Optional[Mapping[str, float]] = None,
           fixed_pose: Optional[RigidTransform] = None,
           return_history: bool = False):
    """Estimate structural parameters and the canonical->world pose of ``concept`` in ``P``.

    ``fixed_params`` / ``fixed_pose`` pin one stage to known values (used when a
    benchmark replaces a stage with ground truth).
    """
    if P is None or len(_as_points(P)) == 0:
        raise ValueError("ground() needs a non-empty point cloud")
    P = P if isinstance(P, PointCloud) else PointCloud(P)
    data = downsample(P, cfg.downsample_to, cfg.downsample_method, cfg.seed).points
    diag = float(np.linalg.norm(np.ptp(data, axis=0)))
    if not diag > 0:
        raise DegenerateConfiguration("point cloud has zero extent")
    tree_data = cKDTree(data)
    floor = 0.05 * diag
    search = data[:: max(1, len(data) // 512)]
    tree_search = cKDTree(search)
    sampler = TemplateSampler(concept, cfg.template_points // 2, cfg.seed)
    dense = TemplateSampler(concept, cfg.template_points, cfg.seed + 1)
    lo, hi, x_def = _bounds(concept)
    names = sampler.names

    if fixed_params is not None:
        x0 = np.array([float(fixed_params[n]) for n in names])
    elif init_params is not None:
        x0 = np.array([float(init_params[n]) for n in names])
    else:
        x0 = x_def.copy()

    def score(x, T):
        asm = dense.assembly(x)
        _, d_dm = closest_surface_points(asm, T.inverse().apply_points(data))
        d_md, _ = tree_data.query(T.apply_points(dense.points(asm)), k=1)
        return float(d_dm.mean() + cfg.coverage_weight * d_md.mean())

    if fixed_pose is not None:
        seeds = [fixed_pose]
    else:
        # screen all axis hypotheses with a short ICP on a coarse sample
        asm0 = sampler.assembly(x0)
        model0 = sampler.points(asm0)
        coarse = data[:: max(1, len(data) // 256)]
        scored = []
        for k, T0 in enumerate(_initial_poses(model0, data)):
            T = _icp(asm0, coarse, T0, 6, cfg.seed, 0, floor)
            local = T.inverse().apply_points(search)
            scored.append((_surface_chamfer(asm0, model0, local, cKDTree(local)), k, T))
        scored.sort(key=lambda s: (s[0], s[1]))
        # hypotheses far behind the leader rarely win and cost a full round each
        seeds = [s[2] for s in scored[: cfg.hypotheses_kept] if s[0] <= 2.0 * scored[0][0]]

    free = fixed_params is None and len(lo) > 0

    def refine(x, T, rnd):
        x_new, T_new = x, T
        if free:
            # alternating the gauge lets parameters that grow a part at one end
            # escape valleys that the centroid-fixed gauge cannot leave
            obj = _ProfiledObjective(sampler, search, tree_search, T, x, floor,
                                     fit_pose=fixed_pose is None,
                                     anchor="origin" if rnd % 2 else "centroid",
                                     weight=cfg.coverage_weight)
            radius = 1.0 if rnd == 0 else 0.1
            lo_b = np.maximum(lo, x - radius * (hi - lo))
            hi_b = np.minimum(hi, x + radius * (hi - lo))
            res = coordinate_descent(obj, x, lo_b, hi_b, max_evals=cfg.max_evals,
                                     tol=1e-2 if rnd == 0 else 5e-4, sweeps=2)
            x_new, T_new = res.x, obj.pose_for(res.x)
        if fixed_pose is None:
            T_new = _icp(dense.assembly(x_new), data, T_new, cfg.icp_iterations,
                         cfg.seed + 97 * rnd, cfg.ransac_iterations, floor)
        return x_new, T_new, score(x_new, T_new)

    # one coarse round per hypothesis, then polish only the winner
    history_all = []
    best = None
    for h, T in enumerate(seeds):
        f0 = score(x0, T)
        x, T1, f1 = refine(x0.copy(), T, 0)
        if f1 >= f0:
            x, T1, f1 = x0.copy(), T, f0
        history_all.append([f0, f1])
        if best is None or f1 < best[0]:
            best = (f1, h, x, T1)
    f_best, h, x, T = best
    stalled = 0
    for rnd in range(1, cfg.max_rounds):
        x_new, T_new, f_new = refine(x, T, rnd)
        improved = f_best - f_new
        if f_new < f_best:
            x, T, f_best = x_new, T_new, f_new
        history_all[h].append(f_best)
        stalled = stalled + 1 if improved < cfg.convergence_tol else 0
        if stalled == 2:  # both gauges
            break

    params = clamp_params(concept.structure.params, sampler.params_dict(x))
    model = T.apply_points(dense.points(x))
    d_dm, _ = cKDTree(model).query(data, k=1)
    d_md, _ = tree_data.query(model, k=1)
    residual = float(d_dm.mean() + d_md.mean())
    inlier_fraction = float(np.mean(d_dm < max(0.005, 0.02 * diag)))
    g = Grounding(concept.id, params, T, residual, inlier_fraction)
    if residual > cfg.reject_ratio * diag:
        raise FitDiverged(f"{concept.id}: residual {residual:.4g} exceeds {cfg.reject_ratio:g} x cloud diagonal",
                          residual, g)
    if return_history:
        return g, history_all
    return g


# ---------------------------------------------------------------------------
# symmetry-aware pose comparison

def symmetric_pose_error(concept: AnalyticConcept, params: Mapping[str, float],
                         T_est: RigidTransform, T_ref: RigidTransform,
                         angle_steps: int = 720) -> tuple[float, float]:
    """Smallest (translation, rotation) error between ``T_est`` and any pose
    equivalent to ``T_ref`` under the concept's declared symmetries."""
    syms = symmetry_frames(concept, params)
    for kind, F in syms:
        if kind == "spherical":
            # rotation is free about F's origin: only that point has to match
            c_est = T_est.apply_points(F.t)
            c_ref = T_ref.apply_points(F.t)
            return float(np.linalg.norm(c_est - c_ref)), 0.0
    # candidate symmetries as stacked (R, t), starting from the identity
    Rs = [np.eye(3)] + [F.R for kind, F in syms if kind == "discrete"]
    ts = [np.zeros(3)] + [F.t for kind, F in syms if kind == "discrete"]
    Rs, ts = np.array(Rs), np.array(ts)
    angles = np.linspace(0.0, 2 * np.pi, angle_steps, endpoint=False)
    c, s = np.cos(angles), np.sin(angles)
    Rz = np.zeros((angle_steps, 3, 3))
    Rz[:, 0, 0], Rz[:, 0, 1], Rz[:, 1, 0], Rz[:, 1, 1], Rz[:, 2, 2] = c, -s, s, c, 1.0
    for kind, F in syms:
        if kind != "axial":
            continue
        # S' = S @ F @ Rz(a) @ F^-1 for every S and a
        Ra = F.R @ Rz @ F.R.T
        ta = F.t - Ra @ F.t
        Rs_new = np.einsum("sij,ajk->saik", Rs, Ra).reshape(-1, 3, 3)
        ts_new = (np.einsum("sij,aj->sai", Rs, ta) + ts[:, None, :]).reshape(-1, 3)
        Rs, ts = Rs_new, ts_new
    R_c = T_ref.R @ Rs
    t_c = ts @ T_ref.R.T + T_ref.t
    dt = np.linalg.norm(t_c - T_est.t, axis=1)
    cos = (np.einsum("nji,jk->nik", R_c, T_est.R).trace(axis1=1, axis2=2) - 1.0) / 2.0
    dr = np.arccos(np.clip(cos, -1.0, 1.0))
    k = int(np.argmin(dt / 0.005 + dr / np.radians(3.0)))
    return float(dt[k]), float(dr[k])
