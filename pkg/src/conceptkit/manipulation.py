"""Grasp poses, candidate generation and scoring, and force directions.

Gripper frame: +Z is the approach direction, +X the closing line, origin at
the centre of the closing region. The fingers span z in [-L/2, L/2] and the
palm sits behind them, at z < -L/2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Optional

import numpy as np
from scipy.spatial import cKDTree

from .assembly import attachment_frame, bind_params
from .concepts import AnalyticConcept, ForceRule, GraspFamily
from .expr import DomainError, eval_expr
from .geometry import PointCloud, RigidTransform
from .grounding import Grounding


class OutOfRangeTheta(ValueError):
    pass


class GraspError(ValueError):
    pass


class AllCandidatesRejected(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class GripperSpec:
    max_width: float = 0.14
    finger_length: float = 0.05
    finger_thickness: float = 0.01
    palm_depth: float = 0.02

    def __post_init__(self):
        for k in ("max_width", "finger_length", "finger_thickness", "palm_depth"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")


@dataclass(frozen=True)
class GraspPose:
    pose: RigidTransform
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise GraspError(f"grasp width must be positive, got {self.width!r}")

    @property
    def position(self) -> np.ndarray:
        return self.pose.t

    @property
    def approach(self) -> np.ndarray:
        return self.pose.R[:, 2]

    @property
    def closing(self) -> np.ndarray:
        return self.pose.R[:, 0]

    def to_json(self) -> dict:
        return {"pose": self.pose.to_json(), "width": float(self.width)}

    @classmethod
    def from_json(cls, d) -> "GraspPose":
        return cls(RigidTransform.from_json(d["pose"]), float(d["width"]))


@dataclass(frozen=True)
class ForceDirection:
    dir: np.ndarray
    mode: str = "linear"
    axis: Optional[tuple] = None  # (point, unit direction) for tangential mode

    def __post_init__(self):
        if abs(np.linalg.norm(self.dir) - 1.0) > 1e-12:
            raise ValueError("force direction must be a unit vector")
        if self.mode not in ("linear", "tangential"):
            raise ValueError(f"unknown force mode {self.mode!r}")
        if self.axis is not None and abs(np.linalg.norm(self.axis[1]) - 1.0) > 1e-12:
            raise ValueError("axis direction must be a unit vector")

    def to_json(self) -> dict:
        out = {"dir": [float(v) for v in self.dir], "mode": self.mode}
        if self.axis is not None:
            out["axis"] = {"point": [float(v) for v in self.axis[0]],
                           "direction": [float(v) for v in self.axis[1]]}
        return out

    @classmethod
    def from_json(cls, d) -> "ForceDirection":
        axis = None
        if d.get("axis"):
            axis = (np.array(d["axis"]["point"], float), np.array(d["axis"]["direction"], float))
        return cls(np.array(d["dir"], float), d["mode"], axis)


@dataclass(frozen=True)
class GraspCandidate:
    family: str
    theta: Mapping[str, float]
    grasp: GraspPose
    score: float
    index: int = 0

    def to_json(self) -> dict:
        return {"family": self.family, "theta": {k: float(v) for k, v in self.theta.items()},
                **self.grasp.to_json(), "score": float(self.score)}


# ---------------------------------------------------------------------------
# grasp instantiation and sampling

def _canonical_grasp(family: GraspFamily, params: Mapping[str, float], theta: Mapping[str, float]):
    b = {**params, **theta}
    pose = eval_expr(family.pose_expr, b)
    width = float(eval_expr(family.width_expr, b))
    return pose, width


def instantiate_grasp(family: GraspFamily, grounding: Grounding,
                      theta: Optional[Mapping[str, float]] = None,
                      gripper: Optional[GripperSpec] = None) -> GraspPose:
    """World-frame grasp of ``family`` at ``theta`` on the grounded part."""
    th = bind_params(family.theta, theta, error=OutOfRangeTheta)
    pose, width = _canonical_grasp(family, grounding.params, th)
    if gripper is not None and width > gripper.max_width:
        raise GraspError(f"{family.name}: width {width:.4g} exceeds gripper opening {gripper.max_width:g}")
    return GraspPose(grounding.pose @ pose, width)


def sample_candidates(family: GraspFamily, grounding: Grounding = None, k: int = 16, seed=0) -> list[dict]:
    """``k`` theta bindings, Latin-hypercube stratified over the family ranges.

    k = 1 gives the midpoint of every range. The sampler never looks at the
    cloud; all cloud dependence lives in the scorer."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    out = [dict() for _ in range(k)]
    for spec in family.theta:
        if spec.fixed:
            vals = np.full(k, spec.default)
        elif k == 1:
            vals = np.array([(spec.lo + spec.hi) / 2.0])
        else:
            strata = rng.permutation(k)
            vals = spec.lo + (strata + rng.random(k)) / k * (spec.hi - spec.lo)
        for i in range(k):
            out[i][spec.name] = float(vals[i])
    return out


# ---------------------------------------------------------------------------
# scoring

@lru_cache(maxsize=None)
def _packaged_config() -> str:
    return (resources.files("conceptkit") / "data" / "grasp_score.json").read_text()


def load_score_config(path=None) -> dict:
    text = _packaged_config() if path is None else open(path).read()
    cfg = json.loads(text)
    for k in ("coverage", "antipodal", "collision", "emptiness"):
        if k not in cfg["weights"]:
            raise ValueError(f"score config lacks weight {k!r}")
    return cfg


def estimate_normals(points: np.ndarray, k: int = 12) -> np.ndarray:
    """Unoriented normals from local principal components."""
    k = min(k, len(points))
    if k < 3:
        return np.tile([0.0, 0.0, 1.0], (len(points), 1))
    _, idx = cKDTree(points).query(points, k=k)
    nb = points[idx] - points[idx].mean(1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def grasp_terms(grasp: GraspPose, P: PointCloud, gripper: GripperSpec, cfg: Optional[dict] = None) -> dict:
    """Raw geometric terms of the grasp score."""
    cfg = cfg or load_score_config()
    pts = P.points
    q = (pts - grasp.pose.t) @ grasp.pose.R
    half_w, ft, half_l = grasp.width / 2.0, gripper.finger_thickness, gripper.finger_length / 2.0
    in_y = np.abs(q[:, 1]) <= ft
    in_z = np.abs(q[:, 2]) <= half_l
    region = (np.abs(q[:, 0]) < half_w) & in_y & in_z
    finger = (np.abs(q[:, 0]) >= half_w) & (np.abs(q[:, 0]) <= half_w + ft) & in_y & in_z
    palm = ((q[:, 2] < -half_l) & (q[:, 2] >= -half_l - gripper.palm_depth)
            & (np.abs(q[:, 0]) <= half_w + ft) & in_y)
    n_in = int(region.sum())
    n_coll = int((finger | palm).sum())
    antipodal = 0.0
    if n_in:
        normals = P.normals
        if normals is None:
            normals = estimate_normals(pts, int(cfg.get("normal_neighbors", 12)))
        antipodal = float(np.mean(np.abs(normals[region] @ grasp.pose.R[:, 0])))
    return {
        "n_region": n_in,
        "n_collision": n_coll,
        "coverage": 1.0 - float(np.exp(-n_in / cfg["coverage_scale"])),
        "antipodal": antipodal,
        "collision": 1.0 - float(np.exp(-n_coll / cfg["collision_scale"])),
        "emptiness": 1.0 if n_in == 0 else 0.0,
    }


def score_grasp(grasp: GraspPose, P: PointCloud, gripper: GripperSpec = GripperSpec(),
                cfg: Optional[dict] = None) -> float:
    """Logistic of weighted coverage, antipodality, collision and emptiness terms."""
    cfg = cfg or load_score_config()
    t = grasp_terms(grasp, P, gripper, cfg)
    w = cfg["weights"]
    z = (w["coverage"] * t["coverage"] + w["antipodal"] * t["antipodal"]
         - w["collision"] * t["collision"] - w["emptiness"] * t["emptiness"])
    return float(1.0 / (1.0 + np.exp(-z)))


def select_grasp(family: GraspFamily, grounding: Grounding, P: PointCloud,
                 gripper: GripperSpec = GripperSpec(), k: int = 32, seed=0,
                 cfg: Optional[dict] = None) -> GraspCandidate:
    """Best-scoring of ``k`` sampled candidates; ties go to the lowest index."""
    cfg = cfg or load_score_config()
    if P.normals is None:
        P = PointCloud(P.points, estimate_normals(P.points, int(cfg.get("normal_neighbors", 12))))
    best = None
    for i, theta in enumerate(sample_candidates(family, grounding, k, seed)):
        try:
            grasp = instantiate_grasp(family, grounding, theta, gripper)
        except GraspError:
            continue
        s = score_grasp(grasp, P, gripper, cfg)
        if best is None or s > best.score:
            best = GraspCandidate(family.name, theta, grasp, s, i)
    if best is None or best.score < cfg["floor"]:
        raise AllCandidatesRejected(
            f"{family.name}: no candidate scored above {cfg['floor']:g}"
            + ("" if best is None else f" (best {best.score:.3g})"), best)
    return best


# ---------------------------------------------------------------------------
# force directions

def force_direction(rule: ForceRule, grounding: Grounding, grasp: GraspPose,
                    concept: Optional[AnalyticConcept] = None) -> ForceDirection:
    """World-frame unit force direction of ``rule`` for ``grasp`` on the grounded part.

    Tangential rules carry the articulation axis (the attachment frame's Z)
    and their direction is made exactly orthogonal to it."""
    if concept is None:
        from .concepts import builtin_registry

        concept = builtin_registry().get(grounding.concept_id)
    if concept is None or concept.id != grounding.concept_id:
        raise ValueError(f"no concept {grounding.concept_id!r} to check rule {rule.name!r} against")
    if rule not in concept.force_rules:
        raise ValueError(f"force rule {rule.name!r} does not belong to concept {concept.id!r}")
    T = grounding.pose
    local = T.inverse() @ grasp.pose
    attach = attachment_frame(concept, grounding.params)
    b = {**grounding.params, "grasp_pos": local.t, "approach": local.R[:, 2],
         "closing": local.R[:, 0], "grasp_width": grasp.width, "attach_frame": attach}
    d = T.R @ np.asarray(eval_expr(rule.dir_expr, b), dtype=float)
    axis = None
    if rule.mode == "tangential":
        a = T.R @ attach.R[:, 2]
        a = a / np.linalg.norm(a)
        d = d - np.dot(d, a) * a
        axis = (T.apply_points(attach.t), a)
    n = float(np.linalg.norm(d))
    if not n > 1e-12:
        raise DomainError(f"force rule {rule.name!r} gives a zero direction")
    d = d / n
    # one more pass so the norm is 1 to the last bit or two
    d = d / np.linalg.norm(d)
    return ForceDirection(d, rule.mode, axis)
