"""Evaluating structural templates into concrete primitive assemblies."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .concepts import AnalyticConcept, ParamSpec, StructuralTemplate
from .expr import eval_expr
from .geometry import Primitive, PrimitiveAssembly, RigidTransform


class OutOfRangeParam(ValueError):
    pass


def bind_params(specs, values: Mapping[str, float] | None, error=OutOfRangeParam) -> dict:
    """Fill missing values with defaults and range-check the rest."""
    values = dict(values or {})
    out = {}
    for p in specs:
        v = float(values.pop(p.name, p.default))
        if not p.contains(v):
            raise error(f"{p.name}={v!r} outside [{p.lo}, {p.hi}]")
        out[p.name] = v
    if values:
        raise error(f"unknown parameters {sorted(values)}")
    return out


def clamp_params(specs, values: Mapping[str, float]) -> dict:
    return {p.name: float(np.clip(values.get(p.name, p.default), p.lo, p.hi)) for p in specs}


def sample_params(specs, rng: np.random.Generator) -> dict:
    return {p.name: (p.default if p.fixed else float(rng.uniform(p.lo, p.hi))) for p in specs}


def _template(obj) -> StructuralTemplate:
    return obj.structure if isinstance(obj, AnalyticConcept) else obj


def instantiate_structure(template, params: Mapping[str, float] | None = None,
                          check_range: bool = True) -> PrimitiveAssembly:
    st = _template(template)
    b = bind_params(st.params, params) if check_range else {**st.defaults(), **dict(params or {})}
    prims = []
    for spec in st.primitives:
        size = np.array([eval_expr(s, b) for s in spec.size], dtype=float)
        prims.append(Primitive(spec.kind, size, eval_expr(spec.local_pose, b)))
    return PrimitiveAssembly(tuple(prims))


def attachment_frame(template, params: Mapping[str, float]) -> RigidTransform:
    st = _template(template)
    return eval_expr(st.attachment_frame, {**st.defaults(), **params})


def symmetry_frames(template, params: Mapping[str, float]) -> list[tuple[str, RigidTransform]]:
    st = _template(template)
    b = {**st.defaults(), **params}
    return [(s.kind, eval_expr(s.frame, b)) for s in st.symmetries]


def template_scale(template, params: Mapping[str, float] | None = None) -> float:
    """Bounding-box diagonal of the template at ``params`` (defaults when None)."""
    return instantiate_structure(template, params, check_range=False).bbox_diagonal()


def param_specs(concept: AnalyticConcept) -> tuple[ParamSpec, ...]:
    return concept.structure.params
