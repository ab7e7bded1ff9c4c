"""Differentiable rigid-body contact potentials with hierarchical evaluation."""

from .barriers import RECIPROCAL, ClampedLogBarrier, ReciprocalBarrier
from .blending import BlendSpec, blend, smoothstep
from .bsh import (
    BshTree,
    InteractionCounts,
    build_bsh,
    count_interactions,
    process_pair,
    total_potential,
)
from .evals import PotentialEval
from .geometry import (
    Pose,
    SeparationCertificate,
    SystemState,
    TriMeshBody,
    min_pair_distance,
    triangles_disjoint,
    world_vertices,
)
from .pair_potential import (
    NotSeparableError,
    PlaneSolveError,
    SeparatingPlane,
    centered_potential,
    pair_potential,
    solve_separating_plane,
)

__version__ = "0.1.0"

__all__ = [
    "RECIPROCAL",
    "ClampedLogBarrier",
    "ReciprocalBarrier",
    "BlendSpec",
    "blend",
    "smoothstep",
    "BshTree",
    "InteractionCounts",
    "build_bsh",
    "count_interactions",
    "process_pair",
    "total_potential",
    "PotentialEval",
    "Pose",
    "SeparationCertificate",
    "SystemState",
    "TriMeshBody",
    "min_pair_distance",
    "triangles_disjoint",
    "world_vertices",
    "NotSeparableError",
    "PlaneSolveError",
    "SeparatingPlane",
    "centered_potential",
    "pair_potential",
    "solve_separating_plane",
    "__version__",
]
