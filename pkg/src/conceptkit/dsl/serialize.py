from __future__ import annotations

from ..concepts import AnalyticConcept, ParamSpec
from ..expr import to_source


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _param(keyword: str, p: ParamSpec) -> str:
    if p.fixed:
        return f"{keyword} {p.name} fixed {_num(p.default)}"
    return f"{keyword} {p.name} in [{_num(p.lo)}, {_num(p.hi)}] default {_num(p.default)}"


def _num(v: float) -> str:
    # negative constants are written as unary minus so they re-parse exactly
    return repr(float(v))


def serialize_concept(concept: AnalyticConcept) -> str:
    """Canonical ``.acon`` text for a concept (LF line endings, trailing newline)."""
    ident = concept.identity
    st = concept.structure
    out = [
        f"concept {ident.id}",
        f"group {ident.group}",
        f"synopsis {_quote(ident.synopsis)}",
        "",
    ]
    out += [_param("param", p) for p in st.params]
    out.append(f"attach {to_source(st.attachment_frame)}")
    for prim in st.primitives:
        sizes = ", ".join(to_source(s) for s in prim.size)
        out.append(f"primitive {prim.kind} size {sizes} at {to_source(prim.local_pose)}")
    for sym in st.symmetries:
        out.append(f"symmetry {sym.kind} {to_source(sym.frame)}")
    for g in concept.grasp_families:
        out.append("")
        out.append(f"grasp {g.name} {_quote(g.synopsis)}")
        out += ["  " + _param("theta", t) for t in g.theta]
        out.append(f"  pose {to_source(g.pose_expr)}")
        out.append(f"  width {to_source(g.width_expr)}")
        out.append("end")
    for f in concept.force_rules:
        out.append("")
        out.append(f"force {f.name} {_quote(f.synopsis)} {f.mode}")
        out.append(f"  dir {to_source(f.dir_expr)}")
        out.append("end")
    return "\n".join(out) + "\n"
