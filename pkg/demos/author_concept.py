"""Write a new concept in the DSL, check it, and fit it to a synthetic cloud."""
import numpy as np

from conceptkit.assembly import instantiate_structure
from conceptkit.dsl import ParseError, parse_concept, serialize_concept, validate_concept
from conceptkit.geometry import apply, random_transform, sample_surface
from conceptkit.grounding import ground, symmetric_pose_error

SOURCE = """\
# A T-bar: a stem out of the surface with a crossbar centred on its tip.
concept T_Bar
group handle
synopsis "Stem with a centred crossbar."

param stem in [0.03, 0.06] default 0.04
param bar in [0.08, 0.14] default 0.1
param t in [0.012, 0.02] default 0.016

primitive Cylinder size t / 2, stem at translate([0, 0, stem / 2])
primitive Cuboid size bar, t, t at translate([0, 0, stem + t / 2])

grasp pinch "Pinch one arm of the bar from outside."
  theta s in [0.2, 0.45] default 0.3
  pose frame([s * bar, 0, stem + t / 2], [0, 0, -1], [0, 1, 0])
  width t + 0.02
end

force pull_out "Pull away from the surface." linear
  dir zaxis(attach_frame)
end
"""

concept = parse_concept(SOURCE)
report = validate_concept(concept, n_samples=500, seed=0)
print(f"parsed {concept.id}: {len(concept.structure.primitives)} primitives, validation ok={report.ok}")
assert parse_concept(serialize_concept(concept)) == concept

try:
    parse_concept(SOURCE.replace("stem + t / 2]", "stem + t / 2"))
except ParseError as exc:
    print(f"a typo is reported with its position: {exc}")

theta = {"stem": 0.05, "bar": 0.12, "t": 0.014}
T = random_transform(np.random.default_rng(1), 0.3)
cloud = apply(T, sample_surface(instantiate_structure(concept, theta), 3000, seed=1))
g = ground(concept, cloud)
dt, dr = symmetric_pose_error(concept, g.params, g.pose, T)
print("recovered", {k: round(v, 4) for k, v in g.params.items()}, "true", theta)
print(f"pose error {1000 * dt:.2f} mm, {np.degrees(dr):.2f} deg")
