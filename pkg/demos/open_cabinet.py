"""Open a synthetic cabinet door from one rendered view.

Walks the pipeline by hand: render, crop the handle, pick a concept with the
offline reasoner, ground it, choose a grasp and a force, then roll out.
"""
import numpy as np

from conceptkit.concepts import builtin_registry, concepts_in_group
from conceptkit.grounding import FitConfig, ground, symmetric_pose_error
from conceptkit.manipulation import force_direction, select_grasp
from conceptkit.reasoner import DefaultMock, ReasonerQuery, ask
from conceptkit.sim import joint_state_init, render_view, rollout, synth_object

reg = builtin_registry()
obj = joint_state_init(synth_object("cabinet", seed=3), seed=3, p_closed=1.0)
task = obj.oracle["task"]
print(f"task: {task!r}")

view, labels = render_view(obj, azimuth=20.0, elevation=40.0, n_points=16384, seed=0, return_labels=True)
part = view.subset(np.flatnonzero(labels == obj.oracle["target_part"]))
print(f"view has {len(view)} points, {len(part)} on the handle")

backend = DefaultMock()
cid = ask(backend, ReasonerQuery("ConceptSelect", task, tuple(concepts_in_group(reg, "handle")))).chosen
concept = reg[cid]
print(f"concept: {cid} (ground truth {obj.oracle['concept_id']})")

g = ground(concept, part, FitConfig(seed=0))
dt, dr = symmetric_pose_error(concept, g.params, g.pose, obj.oracle_pose())
print(f"grounded params {', '.join(f'{k}={v:.4f}' for k, v in g.params.items())}")
print(f"pose error {1000 * dt:.2f} mm, {np.degrees(dr):.2f} deg; residual {g.residual:.4f}")

fams = tuple((f.name, f.synopsis) for f in concept.grasp_families)
family = concept.grasp_family(ask(backend, ReasonerQuery("GraspSelect", task, fams)).chosen)
best = select_grasp(family, g, view, k=32, seed=0)
print(f"grasp: {family.name} candidate {best.index} score {best.score:.3f}")

rules = tuple((r.name, r.synopsis) for r in concept.force_rules)
rule = concept.force_rule(ask(backend, ReasonerQuery("ForceSelect", task, rules)).chosen)
force = force_direction(rule, g, best.grasp, concept)
print(f"force: {rule.name} {force.mode} {np.round(force.dir, 3)}")

out = rollout(obj, obj.oracle["target_joint"], best.grasp, force)
print(f"rollout: moved {np.degrees(out.displacement):.1f} deg in {out.steps_used} steps, "
      f"success={out.success} reason={out.failure_reason}")
