"""Kinematic simulation of articulated objects and a parallel gripper."""
from .archetypes import ARCHETYPES, joint_state_init, synth_object
from .objects import ArticulatedObject, Joint, Link, Part, SimError, UnknownArchetype
from .render import camera_direction, render_view, visible_mask
from .rollout import (FAILURE_REASONS, InteractionOutcome, InvalidGrasp, RolloutConfig,
                      attach_check, rollout, run_with_budget, success)

__all__ = [
    "ARCHETYPES", "ArticulatedObject", "FAILURE_REASONS", "InteractionOutcome", "InvalidGrasp",
    "Joint", "Link", "Part", "RolloutConfig", "SimError", "UnknownArchetype", "attach_check",
    "camera_direction", "joint_state_init", "render_view", "rollout", "run_with_budget",
    "success", "synth_object", "visible_mask",
]
