"""Local refinement of a triangulated point with iterative inlier-set update.

Three refiners share one contract: start from a point and an inlier set,
re-solve on the current inliers, rescore every view and repeat until the
inlier set settles (at most ``MAX_ITERATIONS`` solves).

``dlt``   homogeneous linear system, smallest right singular vector
``linls`` same rows with the homogeneous scale fixed to one
``gn``    Gauss-Newton on the reprojection residuals, closed-form Jacobian
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import PointAtInfinity, SingularDepth, SingularSystem
from .geometry import CameraView, PointScore, TriangulationProblem, score_point

MAX_ITERATIONS = 10
DEPTH_TOL = 1e-12
INFINITY_TOL = 1e-12
SINGULAR_COND = 1e14


@dataclass
class RefinementState:
    x_est: np.ndarray
    inliers: tuple
    mean_e2d: float
    iterations: int
    converged: bool
    score: PointScore
    failure: Optional[str] = None

    @property
    def collapsed(self) -> bool:
        return self.failure is not None


def jacobian_block(view: CameraView, x_est) -> np.ndarray:
    """2x3 derivative of the (projected - observed) pixel residual w.r.t. the point.

    Raises:
        SingularDepth: if the point lies on the camera's principal plane.
    """
    xt = np.array([x_est[0], x_est[1], x_est[2], 1.0])
    depth = view.P[2] @ xt
    if abs(depth) < DEPTH_TOL:
        raise SingularDepth(f"view {view.id}: depth {depth:g} too small")
    return np.reshape(view.A.T @ xt, (2, 3), order="F") / (depth * depth)


def _stacked_jacobian(problem: TriangulationProblem, idx: np.ndarray, xt, depth):
    v = xt @ problem.A[idx]          # (m, 6), column-major 2x3 per view
    scale = 1.0 / (depth * depth)
    J = np.empty((2 * len(idx), 3))
    J[0::2] = v[:, 0::2] * scale[:, None]
    J[1::2] = v[:, 1::2] * scale[:, None]
    return J


def _linear_rows(problem: TriangulationProblem, idx: np.ndarray) -> np.ndarray:
    P = problem.P[idx]
    f = problem.normalized[idx]
    rows = np.empty((2 * len(idx), 4))
    rows[0::2] = f[:, 0, None] * P[:, 2, :] - P[:, 0, :]
    rows[1::2] = f[:, 1, None] * P[:, 2, :] - P[:, 1, :]
    return rows


def solve_dlt(problem: TriangulationProblem, indices) -> np.ndarray:
    """Closed-form homogeneous triangulation from the views in ``indices``."""
    rows = _linear_rows(problem, np.asarray(indices, dtype=int))
    _, _, vt = np.linalg.svd(rows)
    X = vt[-1]
    if abs(X[3]) < INFINITY_TOL * np.linalg.norm(X):
        raise PointAtInfinity("homogeneous solution has a vanishing scale")
    return X[:3] / X[3]


def solve_linls(problem: TriangulationProblem, indices) -> np.ndarray:
    """Inhomogeneous linear least squares with the homogeneous scale fixed to one."""
    rows = _linear_rows(problem, np.asarray(indices, dtype=int))
    C, b = rows[:, :3], -rows[:, 3]
    N = C.T @ C
    if not np.isfinite(N).all() or np.linalg.cond(N) > SINGULAR_COND:
        raise SingularSystem("normal matrix is rank deficient")
    return np.linalg.solve(N, C.T @ b)


def _mask_of(problem: TriangulationProblem, inliers) -> np.ndarray:
    mask = np.zeros(problem.n, dtype=bool)
    mask[list(inliers)] = True
    return mask


def _state(x, mask, score, iterations, converged=False, failure=None):
    mean = float(np.mean(score.e2d[mask])) if mask.any() else math.inf
    return RefinementState(
        x_est=np.array(x, dtype=float),
        inliers=tuple(int(i) for i in np.flatnonzero(mask)),
        mean_e2d=mean,
        iterations=iterations,
        converged=converged,
        score=score,
        failure=failure,
    )


def _refine_linear(solver, problem, x_init, inliers_init, config, update_inliers):
    mask = _mask_of(problem, inliers_init)
    if mask.sum() < 2:
        raise ValueError("refinement needs at least 2 inliers")
    state = _state(x_init, mask, score_point(problem, x_init, config.delta_2d), 0)
    for it in range(1, MAX_ITERATIONS + 1):
        try:
            x = solver(problem, np.flatnonzero(mask))
        except (PointAtInfinity, SingularSystem) as exc:
            state.failure = type(exc).__name__
            return state
        score = score_point(problem, x, config.delta_2d)
        new_mask = score.inlier_mask if update_inliers else mask
        if new_mask.sum() < 2:
            state.failure = "RefinementCollapsed"
            return state
        settled = bool(np.array_equal(new_mask, mask))
        state = _state(x, new_mask, score, it, converged=settled)
        if settled:
            break
        mask = new_mask
    return state


def refine_dlt(problem, x_init, inliers_init, config, update_inliers=True) -> RefinementState:
    return _refine_linear(solve_dlt, problem, x_init, inliers_init, config, update_inliers)


def refine_linls(problem, x_init, inliers_init, config, update_inliers=True) -> RefinementState:
    return _refine_linear(solve_linls, problem, x_init, inliers_init, config, update_inliers)


def refine_gn(problem: TriangulationProblem, x_init, inliers_init, config,
              update_inliers: bool = True) -> RefinementState:
    """Gauss-Newton with the inlier set re-estimated after every full step.

    Stops once the inlier set is unchanged and the mean inlier error moved by
    less than ``config.delta_update`` pixels, or after ``MAX_ITERATIONS`` steps.
    No damping or line search is applied. When the inlier set drops below two
    views, or the normal matrix is singular, the last valid state is returned
    with ``failure`` set.
    """
    mask = _mask_of(problem, inliers_init)
    if mask.sum() < 2:
        raise ValueError("refinement needs at least 2 inliers")
    x = np.array(x_init, dtype=float)
    score = score_point(problem, x, config.delta_2d)
    state = _state(x, mask, score, 0)
    mean_e2d = 0.0
    for it in range(1, MAX_ITERATIONS + 1):
        prev_mean, prev_mask = mean_e2d, mask
        idx = np.flatnonzero(mask)
        r = np.empty(2 * len(idx))
        r[0::2] = score.M7[idx]
        r[1::2] = score.M8[idx]
        xt = np.array([x[0], x[1], x[2], 1.0])
        J = _stacked_jacobian(problem, idx, xt, score.M6[idx])
        JtJ = J.T @ J
        if not np.isfinite(JtJ).all() or np.linalg.cond(JtJ) > SINGULAR_COND:
            state.failure = "SingularSystem"
            return state
        x = x - np.linalg.solve(JtJ, J.T @ r)

        score = score_point(problem, x, config.delta_2d)
        mask = score.inlier_mask if update_inliers else prev_mask
        if mask.sum() < 2:
            state.failure = "RefinementCollapsed"
            return state
        mean_e2d = float(np.mean(score.e2d[mask]))
        settled = (np.array_equal(mask, prev_mask)
                   and abs(mean_e2d - prev_mean) < config.delta_update)
        state = _state(x, mask, score, it, converged=settled)
        if settled:
            break
    return state


REFINERS = {"gn": refine_gn, "dlt": refine_dlt, "linls": refine_linls}


def refine(name: str, problem, x_init, inliers_init, config, update_inliers=True):
    return REFINERS[name](problem, x_init, inliers_init, config, update_inliers)
