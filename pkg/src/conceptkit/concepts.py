"""Analytic concepts and the concept registry.

A concept bundles an identity, a parametric structural template built from
primitives, a set of grasp families and a set of force rules. Every numeric
quantity is an expression over the declared parameters (see :mod:`conceptkit.dsl`).

Canonical frame: the part's mounting point at the origin, +Z the outward
normal, +Y "up" when the part is shown in its usual orientation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

from .expr import POSE, SCALAR, VEC3, Expr, Sym, free_symbols, infer_type
from .geometry import SIZE_DIMS

# symbols available to force-rule direction expressions besides the parameters
FORCE_SYMBOLS = {
    "grasp_pos": VEC3,
    "approach": VEC3,
    "closing": VEC3,
    "grasp_width": SCALAR,
    "attach_frame": POSE,
}

SYMMETRY_KINDS = ("discrete", "axial", "spherical")
FORCE_MODES = ("linear", "tangential")


class ConceptError(Exception):
    pass


class InvalidConcept(ConceptError, ValueError):
    pass


class DuplicateId(ConceptError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownGroup(ConceptError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


@dataclass(frozen=True)
class ConceptIdentity:
    id: str
    synopsis: str
    group: str


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lo: float
    hi: float
    default: float
    fixed: bool = False

    @property
    def range(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def contains(self, value: float, tol: float = 1e-12) -> bool:
        return self.lo - tol <= value <= self.hi + tol


@dataclass(frozen=True)
class PrimitiveSpec:
    kind: str
    size: tuple
    local_pose: Expr


@dataclass(frozen=True)
class Symmetry:
    """A symmetry of the template, expressed in the canonical frame.

    ``discrete``: the pose itself maps the template onto itself.
    ``axial``: any rotation about the Z axis of ``frame`` does.
    ``spherical``: any rotation about the origin of ``frame`` does.
    """
    kind: str
    frame: Expr


@dataclass(frozen=True)
class StructuralTemplate:
    params: tuple
    primitives: tuple
    attachment_frame: Expr = Sym("identity")
    symmetries: tuple = ()

    def param(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]

    def defaults(self) -> dict[str, float]:
        return {p.name: p.default for p in self.params}


@dataclass(frozen=True)
class GraspFamily:
    name: str
    synopsis: str
    theta: tuple
    pose_expr: Expr
    width_expr: Expr

    def defaults(self) -> dict[str, float]:
        return {p.name: p.default for p in self.theta}


@dataclass(frozen=True)
class ForceRule:
    name: str
    synopsis: str
    dir_expr: Expr
    mode: str = "linear"


@dataclass(frozen=True)
class AnalyticConcept:
    identity: ConceptIdentity
    structure: StructuralTemplate
    grasp_families: tuple
    force_rules: tuple

    @property
    def id(self) -> str:
        return self.identity.id

    @property
    def group(self) -> str:
        return self.identity.group

    def grasp_family(self, name: str) -> GraspFamily:
        for g in self.grasp_families:
            if g.name == name:
                return g
        raise KeyError(f"{self.id} has no grasp family {name!r}")

    def force_rule(self, name: str) -> ForceRule:
        for f in self.force_rules:
            if f.name == name:
                return f
        raise KeyError(f"{self.id} has no force rule {name!r}")


def _check_params(specs, where, problems):
    for p in specs:
        if p.fixed:
            if not p.lo == p.default == p.hi:
                problems.append(f"{where}: fixed parameter {p.name} must have lo == default == hi")
        elif not p.lo < p.hi:
            problems.append(f"{where}: parameter {p.name} has an empty range [{p.lo}, {p.hi}]")
        if not p.lo <= p.default <= p.hi:
            problems.append(f"{where}: default of {p.name} lies outside its range")


def _check_expr(expr, env, want, where, problems):
    unbound = free_symbols(expr) - set(env)
    if unbound:
        problems.append(f"{where}: undeclared symbols {sorted(unbound)}")
        return
    try:
        got = infer_type(expr, env)
    except (TypeError, KeyError) as exc:
        problems.append(f"{where}: {exc}")
        return
    if got != want:
        problems.append(f"{where}: expected {want}, got {got}")


def concept_problems(concept: AnalyticConcept) -> list[str]:
    """All static invariant violations of a concept (empty when valid)."""
    problems = []
    ident = concept.identity
    if not ident.id or not ident.id.isidentifier():
        problems.append(f"concept id {ident.id!r} is not a symbol")
    if not ident.synopsis.strip():
        problems.append("synopsis is empty")
    if not ident.group.strip():
        problems.append("group is empty")
    st = concept.structure
    names = [p.name for p in st.params]
    if len(set(names)) != len(names):
        problems.append("duplicate parameter names")
    _check_params(st.params, "structure", problems)
    env = {n: SCALAR for n in names}
    if not st.primitives:
        problems.append("structure has no primitives")
    for i, prim in enumerate(st.primitives):
        where = f"primitive {i + 1}"
        if prim.kind not in SIZE_DIMS:
            problems.append(f"{where}: unknown kind {prim.kind!r}")
        elif len(prim.size) != SIZE_DIMS[prim.kind]:
            problems.append(f"{where}: {prim.kind} takes {SIZE_DIMS[prim.kind]} size values")
        for s in prim.size:
            _check_expr(s, env, SCALAR, where, problems)
        _check_expr(prim.local_pose, env, POSE, where, problems)
    _check_expr(st.attachment_frame, env, POSE, "attachment frame", problems)
    for sym in st.symmetries:
        if sym.kind not in SYMMETRY_KINDS:
            problems.append(f"unknown symmetry kind {sym.kind!r}")
        _check_expr(sym.frame, env, POSE, "symmetry", problems)
    if not concept.grasp_families:
        problems.append("no grasp families")
    if not concept.force_rules:
        problems.append("no force rules")
    gnames = [g.name for g in concept.grasp_families]
    if len(set(gnames)) != len(gnames):
        problems.append("duplicate grasp family names")
    for g in concept.grasp_families:
        where = f"grasp {g.name}"
        tnames = [t.name for t in g.theta]
        if set(tnames) & set(names) or len(set(tnames)) != len(tnames):
            problems.append(f"{where}: theta names clash")
        _check_params(g.theta, where, problems)
        genv = dict(env, **{t: SCALAR for t in tnames})
        _check_expr(g.pose_expr, genv, POSE, where, problems)
        _check_expr(g.width_expr, genv, SCALAR, where, problems)
    fnames = [f.name for f in concept.force_rules]
    if len(set(fnames)) != len(fnames):
        problems.append("duplicate force rule names")
    for f in concept.force_rules:
        if f.mode not in FORCE_MODES:
            problems.append(f"force {f.name}: unknown mode {f.mode!r}")
        _check_expr(f.dir_expr, dict(env, **FORCE_SYMBOLS), VEC3, f"force {f.name}", problems)
    return problems


def check_concept(concept: AnalyticConcept) -> None:
    problems = concept_problems(concept)
    if problems:
        raise InvalidConcept(f"{concept.identity.id}: " + "; ".join(problems))


@dataclass(frozen=True)
class ConceptRegistry:
    """Immutable id -> concept map with a group index."""
    concepts: Mapping[str, AnalyticConcept] = field(default_factory=dict)
    groups: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "concepts", MappingProxyType(dict(self.concepts)))
        object.__setattr__(self, "groups", MappingProxyType(dict(self.groups)))

    def __getitem__(self, concept_id: str) -> AnalyticConcept:
        return self.concepts[concept_id]

    def __contains__(self, concept_id) -> bool:
        return concept_id in self.concepts

    def __iter__(self):
        return iter(sorted(self.concepts))

    def __len__(self):
        return len(self.concepts)

    def get(self, concept_id: str) -> Optional[AnalyticConcept]:
        return self.concepts.get(concept_id)


def register(registry: ConceptRegistry, concept: AnalyticConcept) -> ConceptRegistry:
    """Return a new registry that also holds ``concept``."""
    check_concept(concept)
    cid = concept.identity.id
    if cid in registry.concepts:
        raise DuplicateId(f"concept {cid!r} already registered")
    concepts = dict(registry.concepts)
    concepts[cid] = concept
    groups = dict(registry.groups)
    groups[concept.group] = tuple(sorted(groups.get(concept.group, ()) + (cid,)))
    return ConceptRegistry(concepts, groups)


def concepts_in_group(registry: ConceptRegistry, group: str) -> list[tuple[str, str]]:
    if group not in registry.groups:
        raise UnknownGroup(f"unknown concept group {group!r}")
    return [(cid, registry.concepts[cid].identity.synopsis) for cid in registry.groups[group]]


def builtin_registry() -> ConceptRegistry:
    """The shipped concept library, parsed from the bundled ``.acon`` files."""
    from .dsl import load_library

    return load_library()
