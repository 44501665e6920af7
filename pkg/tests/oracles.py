"""Synthesis oracles shared by the test modules."""
import numpy as np

from conceptkit.assembly import instantiate_structure, sample_params
from conceptkit.concepts import builtin_registry
from conceptkit.geometry import apply, random_transform, sample_surface
from conceptkit.grounding import symmetric_pose_error

REG = builtin_registry()
POSE_TOL = (0.005, np.radians(3.0))
PARAM_TOL = 0.05


def synth_part(cid, seed, n=4000, translation=0.5, params=None):
    """(cloud, true params, true pose) for a concept at a random pose."""
    c = REG[cid]
    rng = np.random.default_rng(1000 + seed)
    theta = sample_params(c.structure.params, rng) if params is None else dict(params)
    T = random_transform(rng, translation)
    P = apply(T, sample_surface(instantiate_structure(c, theta), n, seed=seed))
    return P, theta, T


def max_rel_error(est, ref):
    return max((abs(est[k] - ref[k]) / abs(ref[k]) for k in ref), default=0.0)


def grounding_ok(cid, g, theta, T):
    dt, dr = symmetric_pose_error(REG[cid], theta, g.pose, T)
    rel = max_rel_error(g.params, theta)
    return dt < POSE_TOL[0] and dr < POSE_TOL[1] and rel < PARAM_TOL, (dt, dr, rel)


def binomial_sigma(p, n):
    return float(np.sqrt(max(p * (1 - p), 1e-12) / n))


def oracle_proposal(obj, theta=None):
    """Scripted grasp and force from an object's ground-truth annotation."""
    from conceptkit.grounding import Grounding
    from conceptkit.manipulation import force_direction, instantiate_grasp

    o = obj.oracle
    c = REG[o["concept_id"]]
    g = Grounding(c.id, o["params"], obj.oracle_pose(), 0.0)
    grasp = instantiate_grasp(c.grasp_family(o["grasp_family"]), g, theta or o["theta"])
    return grasp, force_direction(c.force_rule(o["force_rule"]), g, grasp, c)
