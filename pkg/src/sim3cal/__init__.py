"""Intrinsic LiDAR calibration with per-collection similarity transforms.

Modules:
    liegroup: rotations, rigid and similarity transforms, spherical coordinates.
    scene: planar targets, scenes and placement checks.
    simulator: spinning and solid-state LiDAR simulation.
    parsing: splitting returns into collections; target plane estimation.
    cost: point-to-plane metrics and quadratic forms for the global solver.
    sdp: certified global SE(3) solver (dual semidefinite relaxation).
    solvers: baseline models, the Sim(3) solver and alternating refinement.
    io, cli: file formats and the command-line tool.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceWarning, DegenerateIntersection, DegeneratePoint,
                     EmptyInput, EmptyScene, FitFailed, NormalizationError, NotCertified,
                     PlacementError, RankDeficient, ScaleUnidentifiable, Sim3CalError,
                     TranslationUnobservable)
from .liegroup import (RigidTransform, Rotation, SimilarityTransform, SphericalPoint,
                       cartesian_to_spherical, spherical_to_cartesian)
from .scene import PlanarTarget, Scene, make_tetrahedron_scene, placement_report
from .solvers import (Bl1Params, Bl2Params, CalibrationResult, alternate_refine, solve_baseline,
                      solve_se3_global, solve_sim3_global)

__all__ = [
    "__version__",
    "Rotation", "SimilarityTransform", "RigidTransform", "SphericalPoint",
    "cartesian_to_spherical", "spherical_to_cartesian",
    "PlanarTarget", "Scene", "make_tetrahedron_scene", "placement_report",
    "Bl1Params", "Bl2Params", "CalibrationResult",
    "solve_baseline", "solve_se3_global", "solve_sim3_global", "alternate_refine",
    "Sim3CalError", "DegeneratePoint", "NormalizationError", "DegenerateIntersection",
    "PlacementError", "EmptyScene", "EmptyInput", "FitFailed", "RankDeficient",
    "TranslationUnobservable", "ScaleUnidentifiable", "NotCertified", "ConfigError",
    "ConvergenceWarning",
]
