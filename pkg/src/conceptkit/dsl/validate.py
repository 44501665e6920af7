from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assembly import sample_params
from ..concepts import AnalyticConcept
from ..expr import EvalError, eval_expr


@dataclass(frozen=True)
class Violation:
    check: str  # positivity | orthonormality | width | zero-norm | domain
    where: str
    message: str
    binding: dict


@dataclass
class ValidationReport:
    concept_id: str
    n_samples: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def lines(self) -> list[str]:
        out = []
        for v in self.violations:
            binding = ", ".join(f"{k}={val:.6g}" for k, val in sorted(v.binding.items()))
            out.append(f"{self.concept_id}: {v.where}: {v.check}: {v.message} [{binding}]")
        return out


def _rotation_ok(T, tol=1e-9) -> bool:
    R = T.R
    return bool(np.abs(R.T @ R - np.eye(3)).max() < tol and np.linalg.det(R) > 0)


def validate_concept(concept: AnalyticConcept, n_samples: int = 1000, seed=0,
                     max_violations: int = 1000) -> ValidationReport:
    """Sample the parameter space and collect every numeric invariant violation."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    report = ValidationReport(concept.id, n_samples)
    st = concept.structure

    def flag(check, where, message, binding):
        if len(report.violations) < max_violations:
            report.violations.append(Violation(check, where, message, dict(binding)))

    def safe(where, binding, fn):
        try:
            return fn()
        except EvalError as exc:
            flag("domain", where, str(exc), binding)
            return None

    for _ in range(n_samples):
        b = sample_params(st.params, rng)
        for i, prim in enumerate(st.primitives):
            where = f"primitive {i + 1} ({prim.kind})"
            for k, s in enumerate(prim.size):
                v = safe(where, b, lambda: eval_expr(s, b))
                if v is not None and not v > 0:
                    flag("positivity", where, f"size[{k}] = {v:.6g} is not positive", b)
            pose = safe(where, b, lambda: eval_expr(prim.local_pose, b))
            if pose is not None and not _rotation_ok(pose):
                flag("orthonormality", where, "local pose rotation is not proper orthonormal", b)
        attach = safe("attach", b, lambda: eval_expr(st.attachment_frame, b))
        for g in concept.grasp_families:
            gb = {**b, **sample_params(g.theta, rng)}
            where = f"grasp {g.name}"
            pose = safe(where, gb, lambda: eval_expr(g.pose_expr, gb))
            width = safe(where, gb, lambda: eval_expr(g.width_expr, gb))
            if pose is not None and not _rotation_ok(pose):
                flag("orthonormality", where, "grasp rotation is not proper orthonormal", gb)
            if width is not None and not width > 0:
                flag("width", where, f"width {width:.6g} is not positive", gb)
            if pose is None or width is None or attach is None:
                continue
            fb = {**b, "grasp_pos": pose.t, "approach": pose.R[:, 2], "closing": pose.R[:, 0],
                  "grasp_width": width, "attach_frame": attach}
            for f in concept.force_rules:
                d = safe(f"force {f.name}", gb, lambda: eval_expr(f.dir_expr, fb))
                if d is not None and not np.linalg.norm(d) > 1e-9:
                    flag("zero-norm", f"force {f.name}", f"direction has zero norm with grasp {g.name}", gb)
    return report
