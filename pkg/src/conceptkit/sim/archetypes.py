"""Synthetic articulated objects.

World frame: +Z up, the object's front faces +X, the base sits on z = 0.
Each object carries an oracle record for its actionable part: concept id,
parameters, canonical pose (object frame, zero configuration), the scripted
grasp family and force rule, and a task sentence.
"""
from __future__ import annotations

from typing import Mapping, Optional

import numpy as np

from ..assembly import instantiate_structure, sample_params
from ..concepts import builtin_registry
from ..geometry import Primitive, PrimitiveAssembly, RigidTransform
from .objects import BASE, ArticulatedObject, Joint, Link, Part, UnknownArchetype

I3 = np.eye(3)


def _box(center, size) -> Primitive:
    return Primitive("Cuboid", size, RigidTransform(I3, center))


def _cyl(center, radius, height) -> Primitive:
    return Primitive("Cylinder", (radius, height), RigidTransform(I3, center))


def _frame(origin, z, y) -> RigidTransform:
    z = np.asarray(z, float)
    y = np.asarray(y, float)
    return RigidTransform(np.column_stack([np.cross(y, z), y, z]), origin)


def _uniform(rng, lo, hi):
    return float(rng.uniform(lo, hi))


class _Draw:
    """Dimension draws, any of which may be pinned through ``params``."""

    def __init__(self, rng, params):
        self.rng = rng
        self.params = dict(params or {})
        self.used = {}

    def __call__(self, name, lo, hi):
        v = float(self.params[name]) if name in self.params else _uniform(self.rng, lo, hi)
        self.used[name] = v
        return v

    def concept_params(self, concept):
        drawn = sample_params(concept.structure.params, self.rng)
        out = {k: float(self.params.get(k, v)) for k, v in drawn.items()}
        self.used.update(out)
        return out


def _actionable(concept, params, pose: RigidTransform, name: str):
    asm = instantiate_structure(concept, params).transformed(pose)
    return Part(name, asm)


def _oracle(concept, params, pose, part, joint, family, rule, task, dims):
    fam = concept.grasp_family(family)
    return {
        "task": task,
        "target_part": part,
        "target_joint": joint,
        "concept_id": concept.id,
        "group": concept.group,
        "params": dict(params),
        "pose": pose.to_json(),
        "grasp_family": family,
        "theta": fam.defaults(),
        "force_rule": rule,
        "dims": dict(dims),
    }


def _cabinet(d: _Draw, reg):
    W, H, D = d("width", 0.3, 0.5), d("height", 0.4, 0.7), d("depth", 0.3, 0.45)
    t = 0.02
    c = reg["L_Handle"]
    hp = d.concept_params(c)
    zh = d("handle_height", 0.4 * H, 0.6 * H)
    # bar runs along +Y, towards the hinge
    pose = _frame([t, -W / 2 + 0.04, zh], [1, 0, 0], [0, 0, 1])
    body = Link(BASE, (Part("body", PrimitiveAssembly((_box([-D / 2, 0, H / 2], [D, W, H]),))),))
    door = Link("door", (Part("door_panel", PrimitiveAssembly((_box([t / 2, 0, H / 2], [t, W, H]),))),
                         _actionable(c, hp, pose, "handle")))
    joint = Joint("hinge", "revolute", BASE, "door", (0.0, W / 2, 0.0), (0, 0, 1), 0.0, np.pi / 2)
    task = "open the cabinet door by pulling its lever handle"
    return (body, door), (joint,), _oracle(c, hp, pose, "handle", "hinge", "grasp_above",
                                            "pull_out", task, d.used)


def _drawer(d: _Draw, reg):
    W, Hf, D = d("width", 0.35, 0.55), d("front_height", 0.12, 0.2), d("depth", 0.3, 0.5)
    t, wall = 0.02, 0.015
    z0 = wall
    c = reg["U_Handle"]
    hp = d.concept_params(c)
    zc = z0 + Hf / 2
    pose = _frame([t, 0.0, zc], [1, 0, 0], [0, 0, 1])
    Hc = Hf + 2 * wall
    carcass = PrimitiveAssembly((
        _box([-D / 2, 0, wall / 2], [D, W + 2 * wall, wall]),
        _box([-D / 2, 0, Hc - wall / 2], [D, W + 2 * wall, wall]),
        _box([-D / 2, -(W + wall) / 2, Hc / 2], [D, wall, Hc]),
        _box([-D / 2, (W + wall) / 2, Hc / 2], [D, wall, Hc]),
        _box([-D - wall / 2, 0, Hc / 2], [wall, W + 2 * wall, Hc]),
    ))
    tray_h = 0.8 * Hf
    tray = PrimitiveAssembly((
        _box([-D / 2 + 0.01, 0, z0 + 0.005], [D - 0.02, W - 0.01, 0.01]),
        _box([-D / 2 + 0.01, -(W - 0.02) / 2, z0 + tray_h / 2], [D - 0.02, 0.01, tray_h]),
        _box([-D / 2 + 0.01, (W - 0.02) / 2, z0 + tray_h / 2], [D - 0.02, 0.01, tray_h]),
        _box([-D + 0.015, 0, z0 + tray_h / 2], [0.01, W - 0.01, tray_h]),
    ))
    body = Link(BASE, (Part("carcass", carcass),))
    drawer = Link("drawer", (Part("front", PrimitiveAssembly((_box([t / 2, 0, zc], [t, W, Hf]),))),
                             Part("tray", tray), _actionable(c, hp, pose, "handle")))
    joint = Joint("slide", "prismatic", BASE, "drawer", (0, 0, 0), (1, 0, 0), 0.0, 0.8 * D)
    task = "pull the drawer open by its bar handle"
    return (body, drawer), (joint,), _oracle(c, hp, pose, "handle", "slide", "grasp_above",
                                              "pull_out", task, d.used)


def _pot(d: _Draw, reg):
    c = reg["Round_Lid"]
    hp = d.concept_params(c)
    Hp = d("pot_height", 0.1, 0.2)
    r = hp["radius"]
    pose = RigidTransform(I3, [0, 0, Hp])
    body = Link(BASE, (Part("pot", PrimitiveAssembly((
        _cyl([0, 0, Hp / 2], r - 0.004, Hp),
        _box([r + 0.01, 0, 0.8 * Hp], [0.04, 0.03, 0.012]),
        _box([-r - 0.01, 0, 0.8 * Hp], [0.04, 0.03, 0.012]),
    ))),))
    lid = Link("lid", (_actionable(c, hp, pose, "lid"),))
    joint = Joint("lift", "prismatic", BASE, "lid", (0, 0, 0), (0, 0, 1), 0.0, 0.3)
    task = "lift the lid off the pot"
    return (body, lid), (joint,), _oracle(c, hp, pose, "lid", "lift", "grasp_above",
                                           "lift_up", task, d.used)


def _faucet(d: _Draw, reg):
    c = reg["L_Handle"]
    hp = d.concept_params(c)
    Hb = d("body_height", 0.1, 0.2)
    rb = d("body_radius", 0.025, 0.035)
    # stem up, bar along -Y, so the front grasp comes in from +X
    pose = _frame([0, 0, Hb], [0, 0, 1], [1, 0, 0])
    body = Link(BASE, (Part("body", PrimitiveAssembly((
        _cyl([0, 0, Hb / 2], rb, Hb),
        _box([rb + 0.06, 0, 0.6 * Hb], [0.12, 0.02, 0.02]),
    ))),))
    lever = Link("lever", (_actionable(c, hp, pose, "lever"),))
    joint = Joint("swivel", "revolute", BASE, "lever", (0, 0, Hb), (0, 0, -1), 0.0, np.pi / 2)
    task = "turn the faucet lever clockwise"
    return (body, lever), (joint,), _oracle(c, hp, pose, "lever", "swivel", "grasp_front",
                                             "push_clockwise", task, d.used)


def _laptop(d: _Draw, reg):
    c = reg["Hinged_Board"]
    hp = d.concept_params(c)
    hb = d("base_height", 0.012, 0.02)
    depth = hp["length"] - 0.045
    xh = -hp["length"] / 2
    pose = _frame([xh, 0, hb], [0, 0, 1], [1, 0, 0])
    body = Link(BASE, (Part("keyboard", PrimitiveAssembly((
        _box([xh + depth / 2, 0, hb / 2], [depth, hp["board_w"], hb]),))),))
    lid = Link("screen", (_actionable(c, hp, pose, "screen"),))
    joint = Joint("hinge", "revolute", BASE, "screen", (xh, 0, hb), (0, -1, 0), 0.0, 2.0)
    task = "open the laptop"
    return (body, lid), (joint,), _oracle(c, hp, pose, "screen", "hinge", "grasp_edge",
                                           "open", task, d.used)


ARCHETYPES = {
    "cabinet": _cabinet,
    "drawer": _drawer,
    "pot": _pot,
    "faucet": _faucet,
    "laptop": _laptop,
}


def synth_object(archetype: str, params: Optional[Mapping[str, float]] = None, seed=0,
                 registry=None) -> ArticulatedObject:
    """Randomized instance of ``archetype``; entries of ``params`` pin dimensions."""
    if archetype not in ARCHETYPES:
        raise UnknownArchetype(f"unknown archetype {archetype!r}; known: {', '.join(ARCHETYPES)}")
    reg = registry or builtin_registry()
    rng = np.random.default_rng(seed)
    links, joints, oracle = ARCHETYPES[archetype](_Draw(rng, params), reg)
    return ArticulatedObject(archetype, links, joints, RigidTransform(), oracle,
                             int(seed) if np.isscalar(seed) else 0)


def joint_state_init(obj: ArticulatedObject, seed=0, p_closed: float = 0.5) -> ArticulatedObject:
    """Closed with probability ``p_closed``, otherwise uniform over the motion range."""
    rng = np.random.default_rng(seed)
    for j in obj.joints:
        closed = rng.random() < p_closed
        q = rng.uniform(j.lo, j.hi)
        obj = obj.with_state(j.id, j.lo if closed else q)
    return obj
