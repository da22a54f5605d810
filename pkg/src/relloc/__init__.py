"""Relative localization of robot tetrahedra from angle measurements."""

from .errors import RellocError
from .geometry import aoa_to_interior, distances_to_angles, tetra_angle_array, tetra_angles, wrap_angle
from .linear import RelativeState, solve_aligned, solve_unaligned, stacked_system
from .manifold import ProductManifold, trust_region_minimize
from .map_estimator import GaussianPrior, NoiseConfig, SlidingWindowConfig, run_sliding_window
from .nde import MdnConfig, MdnModel, PriorBox, build_nde_prior
from .robust import FailureMonitor, detect_outliers, mitigate_outlier
from .topology import SystemTopology, Tetrahedron, compose_relative, is_rigid
from .wtls import wtls_from_measurements, wtls_solve

__version__ = "0.1.0"

__all__ = [
    "FailureMonitor",
    "GaussianPrior",
    "MdnConfig",
    "MdnModel",
    "NoiseConfig",
    "PriorBox",
    "ProductManifold",
    "RelativeState",
    "RellocError",
    "SlidingWindowConfig",
    "SystemTopology",
    "Tetrahedron",
    "aoa_to_interior",
    "build_nde_prior",
    "compose_relative",
    "detect_outliers",
    "distances_to_angles",
    "is_rigid",
    "mitigate_outlier",
    "run_sliding_window",
    "solve_aligned",
    "solve_unaligned",
    "stacked_system",
    "tetra_angle_array",
    "tetra_angles",
    "trust_region_minimize",
    "wrap_angle",
    "wtls_from_measurements",
    "wtls_solve",
]
