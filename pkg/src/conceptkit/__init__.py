"""Analytic part concepts: authoring, grounding to point clouds, grasping and
articulation benchmarks."""

__version__ = "0.1.0"

from .concepts import AnalyticConcept, ConceptRegistry, builtin_registry, concepts_in_group
from .geometry import PointCloud, PrimitiveAssembly, RigidTransform
from .grounding import FitConfig, Grounding, ground

__all__ = [
    "AnalyticConcept", "ConceptRegistry", "FitConfig", "Grounding", "PointCloud",
    "PrimitiveAssembly", "RigidTransform", "__version__", "builtin_registry",
    "concepts_in_group", "ground",
]
