"""Two-view RANSAC with MSAC scoring, adaptive stopping and final refinement."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import RansacConfig
from .errors import PointAtInfinity
from .geometry import PointScore, TriangulationProblem, score_point
from .midpoint import MidpointStatus, screen_and_midpoint, two_view_check
from .refine import refine, solve_dlt
from .uncertainty import estimate_sigma, sampled_max_parallax


class Status(str, enum.Enum):
    OK = "Ok"
    NO_HYPOTHESIS = "NoHypothesis"
    REFINEMENT_COLLAPSED = "RefinementCollapsed"


@dataclass
class Diagnostics:
    hypotheses_drawn: int = 0
    # full two-view triangulations: midpoints formed, or DLT solves for the baseline
    midpoints_computed: int = 0
    stage_entries: dict = field(default_factory=dict)
    stage_rejections: dict = field(default_factory=dict)
    refine_iterations: int = 0
    refinement_failure: Optional[str] = None
    cost_trace: list = field(default_factory=list)
    best_hypothesis: Optional[np.ndarray] = None
    best_score: Optional[PointScore] = None
    beta_max_deg: float = math.nan


@dataclass
class TriangulationResult:
    x_est: np.ndarray
    inliers: tuple
    mean_e2d: float
    sigma_3d: float
    status: Status
    diagnostics: Diagnostics

    @property
    def n_inliers(self) -> int:
        return len(self.inliers)


def msac_cost(e2d, inliers, delta_2d: float) -> float:
    """Truncated quadratic cost: inlier errors squared, everything else ``delta_2d**2``.

    ``inliers`` may be a boolean mask or an iterable of view indices.
    """
    e2d = np.asarray(e2d, dtype=float)
    mask = np.asarray(inliers)
    if mask.dtype != bool:
        m = np.zeros(len(e2d), dtype=bool)
        m[list(inliers)] = True
        mask = m
    n_out = len(e2d) - int(np.count_nonzero(mask))
    inl = e2d[mask]
    return float(np.dot(inl, inl)) + n_out * delta_2d * delta_2d


def required_samples(inlier_count: int, n: int, eta: float,
                     max_hypotheses: Optional[int] = None) -> int:
    """Number of pair draws needed to hit an all-inlier pair with confidence ``eta``."""
    if n < 2 or not 0 <= inlier_count <= n:
        raise ValueError(f"need 2 <= n and 0 <= inlier_count <= n, got {inlier_count}, {n}")
    eps = max(inlier_count, 2) / n
    if eps >= 1.0:
        return 0
    m = math.ceil(math.log(1.0 - eta) / math.log(1.0 - eps * eps))
    m = max(m, 0)
    if max_hypotheses is not None:
        m = min(m, max_hypotheses)
    return m


def _empty_result(diag: Diagnostics) -> TriangulationResult:
    return TriangulationResult(
        x_est=np.zeros(3), inliers=(), mean_e2d=math.inf, sigma_3d=math.inf,
        status=Status.NO_HYPOTHESIS, diagnostics=diag,
    )


def _run(problem: TriangulationProblem, config: RansacConfig, grid,
         hypothesize: Callable) -> TriangulationResult:
    rng = np.random.default_rng(config.seed)
    n = problem.n
    pair_j, pair_k = np.triu_indices(n, k=1)
    n_pairs = len(pair_j)
    cap = min(max(n_pairs, 1), config.max_hypotheses)
    m_min = n_pairs
    c_min = math.inf
    diag = Diagnostics()
    rejections: dict = {}
    best_x = best_score = None

    m = 0
    while m < min(m_min, cap):
        m += 1
        p = int(rng.integers(n_pairs))
        j, k = int(pair_j[p]), int(pair_k[p])
        status, x = hypothesize(j, k, diag)
        if status is not MidpointStatus.ACCEPTED:
            rejections[status.value] = rejections.get(status.value, 0) + 1
            continue
        score = score_point(problem, x, config.delta_2d)
        cost = msac_cost(score.e2d, score.inlier_mask, config.delta_2d)
        if cost >= c_min:
            continue
        c_min = cost
        best_x, best_score = x, score
        diag.cost_trace.append(cost)
        m_min = required_samples(score.n_inliers, n, config.eta, cap)

    diag.hypotheses_drawn = m
    diag.stage_rejections = rejections
    if best_x is None:
        return _empty_result(diag)
    diag.best_hypothesis = best_x
    diag.best_score = best_score

    status = Status.OK
    if config.refiner == "none" or best_score.n_inliers < 2:
        x_est = best_x
        inliers = best_score.inliers
        mean_e2d = best_score.mean_inlier_error()
        if best_score.n_inliers < 2:
            status = Status.REFINEMENT_COLLAPSED
    else:
        state = refine(config.refiner, problem, best_x, best_score.inliers, config)
        x_est, inliers, mean_e2d = state.x_est, state.inliers, state.mean_e2d
        diag.refine_iterations = state.iterations
        diag.refinement_failure = state.failure
        if state.failure is not None:
            status = Status.REFINEMENT_COLLAPSED

    sigma_3d = math.inf
    if grid is not None and len(inliers) >= 2:
        diag.beta_max_deg = sampled_max_parallax(problem, inliers, config.delta_pair, rng)
        sigma_3d = estimate_sigma(grid, len(inliers), mean_e2d, diag.beta_max_deg)
    return TriangulationResult(
        x_est=np.asarray(x_est, dtype=float), inliers=tuple(inliers),
        mean_e2d=float(mean_e2d), sigma_3d=float(sigma_3d), status=status,
        diagnostics=diag,
    )


def triangulate(problem: TriangulationProblem, config: RansacConfig = RansacConfig(),
                grid=None) -> TriangulationResult:
    """Robust multiview triangulation of one point.

    Random view pairs are screened and triangulated with the midpoint method;
    each surviving midpoint is scored against all views with the MSAC cost. The
    best hypothesis and its support are then refined with ``config.refiner``.
    If ``grid`` is given, the 3D uncertainty is interpolated from it.
    """
    def hypothesize(j, k, diag):
        outcome = screen_and_midpoint(problem, j, k, config, diag.stage_entries)
        return outcome.status, outcome.x_mid

    result = _run(problem, config, grid, hypothesize)
    result.diagnostics.midpoints_computed = result.diagnostics.stage_entries.get("midpoint", 0)
    return result


def baseline_triangulate(problem: TriangulationProblem, config: RansacConfig = RansacConfig(),
                         grid=None) -> TriangulationResult:
    """Comparator without prescreening: every sampled pair is solved by two-view DLT.

    Scoring, adaptive stopping and refinement are shared with :func:`triangulate`.
    """
    def hypothesize(j, k, diag):
        diag.midpoints_computed += 1
        try:
            x = solve_dlt(problem, (j, k))
        except PointAtInfinity:
            return MidpointStatus.REJECTED_DEGENERACY, None
        rejected = two_view_check(problem, j, k, x, config.delta_2d)
        if rejected is not None:
            return rejected, None
        return MidpointStatus.ACCEPTED, x

    return _run(problem, config, grid, hypothesize)
