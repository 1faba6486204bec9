"""Robust, uncertainty-aware multiview triangulation."""

from .config import RansacConfig
from .geometry import (
    CameraView,
    Observation,
    PointScore,
    TriangulationProblem,
    build_view,
    max_parallax_exhaustive,
    precompute_problem,
    score_point,
    world_ray,
)
from .midpoint import MidpointStatus, pair_geometry, screen_and_midpoint
from .ransac import (
    Status,
    TriangulationResult,
    baseline_triangulate,
    msac_cost,
    required_samples,
    triangulate,
)
from .refine import jacobian_block, refine_dlt, refine_gn, refine_linls
from .scene import SyntheticScene, generate_scene
from .uncertainty import (
    UncertaintyGrid,
    estimate_sigma,
    learn_grid,
    monotone_smooth,
    sampled_max_parallax,
)

__version__ = "0.1.0"
