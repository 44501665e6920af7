"""Kinematic grasp-and-move rollouts and the success metric."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np

from ..geometry import inside_primitive
from ..manipulation import ForceDirection, GraspPose, GripperSpec
from .objects import ArticulatedObject, SimError

FAILURE_REASONS = ("collision", "slip", "no-motion", "wrong-part")
ABSOLUTE_THRESHOLD = 0.01
COLLISION_MARGIN = 1e-4


class InvalidGrasp(SimError, ValueError):
    pass


@dataclass(frozen=True)
class RolloutConfig:
    step_size: float = 0.002
    max_steps: int = 200
    grasp_slip_tolerance: float = 0.02
    budget: int = 5
    relative_threshold: float = 0.5
    workspace_radius: float = 2.0

    def __post_init__(self):
        for k in ("step_size", "max_steps", "grasp_slip_tolerance", "budget",
                  "relative_threshold", "workspace_radius"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")


@dataclass(frozen=True)
class InteractionOutcome:
    joint_id: str
    displacement: float
    relative_displacement: float
    success: bool
    steps_used: int
    failure_reason: Optional[str] = None
    attempts: int = 1

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def success(outcome, relative_threshold: float = 0.5) -> bool:
    return bool(outcome.displacement > ABSOLUTE_THRESHOLD
                or outcome.relative_displacement > relative_threshold)


def _outcome(joint, q0, q, steps, reason, cfg) -> InteractionOutcome:
    disp = abs(q - q0)
    rel = min(max(disp / joint.range, 0.0), 1.0)
    probe = InteractionOutcome(joint.id, disp, rel, False, steps)
    ok = success(probe, cfg.relative_threshold)
    if ok:
        reason = None
    elif reason is None or (reason == "slip" and disp < 1e-9):
        reason = "no-motion"
    return InteractionOutcome(joint.id, float(disp), float(rel), ok, int(steps), reason)


def _box_grid(center_x, half, n):
    axes = [np.linspace(c - h, c + h, k) for c, h, k in zip(center_x, half, n)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    return g.reshape(-1, 3)


def gripper_volumes(grasp: GraspPose, gripper: GripperSpec = GripperSpec()):
    """World-frame probe points filling the closing region and the finger/palm bodies."""
    hw, ft, hl = grasp.width / 2.0, gripper.finger_thickness, gripper.finger_length / 2.0
    region = _box_grid([0, 0, 0], [hw * 0.999, ft, hl], [11, 5, 11])
    fingers = np.vstack([_box_grid([s * (hw + ft / 2), 0, 0], [ft / 2, ft, hl], [3, 5, 11])
                         for s in (-1, 1)])
    palm = _box_grid([0, 0, -hl - gripper.palm_depth / 2], [hw + ft, ft, gripper.palm_depth / 2],
                     [11, 5, 3])
    T = grasp.pose
    return T.apply_points(region), T.apply_points(np.vstack([fingers, palm]))


def _touches(asm, pts, margin: float = 0.0) -> bool:
    return any(bool(inside_primitive(p, pts, margin).any()) for p in asm.primitives)


def attach_check(obj: ArticulatedObject, target_part: str, grasp: GraspPose,
                 gripper: GripperSpec = GripperSpec()) -> Optional[str]:
    """None when the closing region holds target-part geometry and the
    fingers and palm are clear of everything, the target included."""
    region, body = gripper_volumes(grasp, gripper)
    parts = obj.world_parts()
    if any(_touches(asm, body, COLLISION_MARGIN) for _, _, asm in parts):
        return "collision"
    if any(name == target_part and _touches(asm, region) for _, name, asm in parts):
        return None
    if any(_touches(asm, region) for _, _, asm in parts):
        return "wrong-part"
    return "no-motion"


def _target_part(obj: ArticulatedObject, joint) -> str:
    name = obj.oracle.get("target_part") if obj.oracle else None
    if name is not None and obj.part_link(name) == joint.child:
        return name
    return obj.link(joint.child).parts[0].name


def _attach_point(obj, joint, q, a_local):
    return obj.with_state(joint.id, q).link_pose(joint.child).apply_points(a_local[None])[0]


def rollout(obj: ArticulatedObject, target_joint: str, grasp: GraspPose, force: ForceDirection,
            cfg: RolloutConfig = RolloutConfig(), gripper: GripperSpec = GripperSpec()) -> InteractionOutcome:
    """Grasp, then drive the gripper along ``force`` step by step.

    The gripper follows its own commanded path; the joint takes the state that
    best follows the gripper and the grasp slips once the two drift apart by
    more than the tolerance."""
    if np.linalg.norm(grasp.position - obj.base_pose.t) > cfg.workspace_radius:
        raise InvalidGrasp(f"grasp at {np.round(grasp.position, 3).tolist()} is outside the workspace")
    joint = obj.joint(target_joint)
    q0 = joint.state
    reason = attach_check(obj, _target_part(obj, joint), grasp, gripper)
    if reason is not None:
        return _outcome(joint, q0, q0, 0, reason, cfg)

    T0 = obj.link_pose(joint.child)
    a_local = T0.inverse().apply_points(grasp.position[None])[0]
    parent = obj.link_pose(joint.parent)
    u = parent.apply_vectors(np.asarray(joint.axis_dir))
    p = parent.apply_points(np.asarray(joint.axis_point)[None])[0]

    d0 = np.asarray(force.dir, float)
    sense = 1.0
    if force.mode == "tangential" and force.axis is not None:
        fp, fu = np.asarray(force.axis[0], float), np.asarray(force.axis[1], float)
        t0 = np.cross(fu, grasp.position - fp)
        sense = 1.0 if np.dot(t0, d0) >= 0 else -1.0

    g = grasp.position.copy()
    a = g.copy()
    q = q0
    steps = 0
    reason = None
    for _ in range(cfg.max_steps):
        if force.mode == "tangential" and force.axis is not None:
            t = sense * np.cross(fu, g - fp)
            n = np.linalg.norm(t)
            step_dir = t / n if n > 1e-9 else d0
        else:
            step_dir = d0
        g = g + cfg.step_size * step_dir
        if joint.kind == "prismatic":
            q_new = joint.clamp(q + float(np.dot(g - a, u)))
        else:
            ra, rg = a - p, g - p
            ra = ra - np.dot(ra, u) * u
            rg = rg - np.dot(rg, u) * u
            if np.linalg.norm(ra) < 1e-9 or np.linalg.norm(rg) < 1e-9:
                dq = 0.0
            else:
                dq = float(np.arctan2(np.dot(u, np.cross(ra, rg)), np.dot(ra, rg)))
            q_new = joint.clamp(q + dq)
        steps += 1
        at_limit = q_new == q and (q_new in (joint.lo, joint.hi))
        q = q_new
        a = _attach_point(obj, joint, q, a_local)
        if np.linalg.norm(a - g) > cfg.grasp_slip_tolerance:
            reason = "slip"
            break
        if at_limit and steps > 1:
            break
    return _outcome(joint, q0, q, steps, reason, cfg)


def run_with_budget(proposals: Iterable, obj: ArticulatedObject, joint: str,
                    cfg: RolloutConfig = RolloutConfig(),
                    gripper: GripperSpec = GripperSpec()) -> InteractionOutcome:
    """Try ``(grasp, force)`` proposals in order, at most ``cfg.budget`` of them.

    Every attempt starts from ``obj`` as given. Returns the first success or
    the last failure, with ``steps_used`` summed over the attempts made."""
    last = None
    total = 0
    attempts = 0
    for grasp, force in proposals:
        if attempts >= cfg.budget:
            break
        attempts += 1
        out = rollout(obj, joint, grasp, force, cfg, gripper)
        total += out.steps_used
        last = InteractionOutcome(out.joint_id, out.displacement, out.relative_displacement,
                                  out.success, total, out.failure_reason, attempts)
        if out.success:
            return last
    if last is None:
        j = obj.joint(joint)
        return InteractionOutcome(j.id, 0.0, 0.0, False, 0, "no-motion", 0)
    return last
