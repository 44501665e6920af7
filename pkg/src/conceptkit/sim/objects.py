"""Articulated objects as immutable values.

All link geometry is stored in the object frame at the zero joint
configuration. A joint's axis is given in that same frame, so the pose of a
child link is ``pose(parent) @ motion(joint, state)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from ..geometry import Primitive, PrimitiveAssembly, RigidTransform, rotation_about

JOINT_KINDS = ("revolute", "prismatic")
BASE = "base"


class SimError(Exception):
    pass


class UnknownArchetype(SimError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown archetype"


@dataclass(frozen=True)
class Joint:
    id: str
    kind: str
    parent: str
    child: str
    axis_point: tuple
    axis_dir: tuple
    lo: float
    hi: float
    state: float = 0.0

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise SimError(f"unknown joint kind {self.kind!r}")
        if not self.lo < self.hi:
            raise SimError(f"joint {self.id}: limits need lo < hi")
        if not self.lo <= self.state <= self.hi:
            raise SimError(f"joint {self.id}: state {self.state} outside [{self.lo}, {self.hi}]")
        d = np.asarray(self.axis_dir, float)
        n = np.linalg.norm(d)
        if not n > 0:
            raise SimError("joint axis must be non-zero")
        object.__setattr__(self, "axis_dir", tuple(float(v) for v in d / n))
        object.__setattr__(self, "axis_point", tuple(float(v) for v in self.axis_point))
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "state", float(self.state))

    @property
    def range(self) -> float:
        return self.hi - self.lo

    def motion(self, q: Optional[float] = None) -> RigidTransform:
        q = self.state if q is None else q
        p = np.asarray(self.axis_point)
        u = np.asarray(self.axis_dir)
        if self.kind == "prismatic":
            return RigidTransform(np.eye(3), q * u)
        R = rotation_about(u, q)
        return RigidTransform(R, p - R @ p)

    def clamp(self, q: float) -> float:
        return float(min(max(q, self.lo), self.hi))

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind, "parent": self.parent, "child": self.child,
                "axis_point": list(self.axis_point), "axis_dir": list(self.axis_dir),
                "lo": self.lo, "hi": self.hi, "state": self.state}

    @classmethod
    def from_json(cls, d) -> "Joint":
        return cls(d["id"], d["kind"], d["parent"], d["child"], tuple(d["axis_point"]),
                   tuple(d["axis_dir"]), d["lo"], d["hi"], d["state"])


@dataclass(frozen=True)
class Part:
    name: str
    geometry: PrimitiveAssembly

    def to_json(self) -> dict:
        return {"name": self.name, "primitives": [
            {"kind": p.kind, "size": [float(v) for v in p.size], "pose": p.pose.to_json()}
            for p in self.geometry.primitives]}

    @classmethod
    def from_json(cls, d) -> "Part":
        prims = tuple(Primitive(p["kind"], p["size"], RigidTransform.from_json(p["pose"]))
                      for p in d["primitives"])
        return cls(d["name"], PrimitiveAssembly(prims))


@dataclass(frozen=True)
class Link:
    id: str
    parts: tuple

    @property
    def collision(self) -> PrimitiveAssembly:
        return PrimitiveAssembly(tuple(p for part in self.parts for p in part.geometry.primitives))

    def to_json(self) -> dict:
        return {"id": self.id, "parts": [p.to_json() for p in self.parts]}

    @classmethod
    def from_json(cls, d) -> "Link":
        return cls(d["id"], tuple(Part.from_json(p) for p in d["parts"]))


@dataclass(frozen=True)
class ArticulatedObject:
    archetype: str
    links: tuple
    joints: tuple
    base_pose: RigidTransform = field(default_factory=RigidTransform)
    oracle: Mapping = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "joints", tuple(self.joints))
        ids = [l.id for l in self.links]
        if len(set(ids)) != len(ids):
            raise SimError("link ids must be unique")
        if BASE not in ids:
            raise SimError(f"object needs a {BASE!r} link")
        children = [j.child for j in self.joints]
        if len(set(children)) != len(children) or BASE in children:
            raise SimError("each link may have at most one parent joint; the base has none")
        for j in self.joints:
            if j.parent not in ids or j.child not in ids:
                raise SimError(f"joint {j.id} refers to an unknown link")
        # every link must reach the base
        parent = {j.child: j.parent for j in self.joints}
        for lid in ids:
            seen = set()
            while lid != BASE:
                if lid in seen or lid not in parent:
                    raise SimError("links must form a tree rooted at the base")
                seen.add(lid)
                lid = parent[lid]

    def link(self, link_id: str) -> Link:
        for l in self.links:
            if l.id == link_id:
                return l
        raise KeyError(link_id)

    def joint(self, joint_id: str) -> Joint:
        for j in self.joints:
            if j.id == joint_id:
                return j
        raise KeyError(joint_id)

    def part_link(self, part_name: str) -> str:
        for l in self.links:
            if any(p.name == part_name for p in l.parts):
                return l.id
        raise KeyError(part_name)

    def part(self, part_name: str) -> Part:
        for l in self.links:
            for p in l.parts:
                if p.name == part_name:
                    return p
        raise KeyError(part_name)

    def link_pose(self, link_id: str) -> RigidTransform:
        """World pose of a link's zero-configuration frame."""
        chain = []
        lid = link_id
        by_child = {j.child: j for j in self.joints}
        while lid != BASE:
            j = by_child[lid]
            chain.append(j)
            lid = j.parent
        T = self.base_pose
        for j in reversed(chain):
            T = T @ j.motion()
        return T

    def with_state(self, joint_id: str, q: float) -> "ArticulatedObject":
        joints = tuple(replace(j, state=j.clamp(q)) if j.id == joint_id else j for j in self.joints)
        return replace(self, joints=joints)

    def part_geometry(self, part_name: str) -> PrimitiveAssembly:
        """World-frame primitives of a part at the current joint states."""
        return self.part(part_name).geometry.transformed(self.link_pose(self.part_link(part_name)))

    def world_parts(self) -> list[tuple[str, str, PrimitiveAssembly]]:
        out = []
        for l in self.links:
            T = self.link_pose(l.id)
            for p in l.parts:
                out.append((l.id, p.name, p.geometry.transformed(T)))
        return out

    def oracle_pose(self) -> RigidTransform:
        """World pose of the target part's canonical frame."""
        o = self.oracle
        return self.link_pose(self.part_link(o["target_part"])) @ RigidTransform.from_json(o["pose"])

    def to_json(self) -> dict:
        return {"archetype": self.archetype, "seed": int(self.seed),
                "base_pose": self.base_pose.to_json(),
                "links": [l.to_json() for l in self.links],
                "joints": [j.to_json() for j in self.joints],
                "oracle": _plain(self.oracle)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, d) -> "ArticulatedObject":
        return cls(d["archetype"], tuple(Link.from_json(l) for l in d["links"]),
                   tuple(Joint.from_json(j) for j in d["joints"]),
                   RigidTransform.from_json(d["base_pose"]), d.get("oracle", {}), d.get("seed", 0))


def _plain(x):
    if isinstance(x, Mapping):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x
