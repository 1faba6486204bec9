"""Camera model, point-independent precomputation and fast reprojection scoring.

A problem with ``n`` views stores five matrices that do not depend on the
candidate point. Scoring a candidate then costs three small matrix products::

    M6 = x~^T M5                   depth of the point in every view
    M7 = M1 + (x~^T M3) / M6       horizontal residual, projected - observed
    M8 = M2 + (x~^T M4) / M6       vertical residual, projected - observed
    e2d = sqrt(M7**2 + M8**2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BadIntrinsics,
    DegenerateRay,
    DuplicateView,
    NonRotation,
    SizeMismatch,
    TooFewRays,
    TooFewViews,
)

ROTATION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CameraView:
    """Calibrated, posed camera with everything that is independent of the point.

    ``R`` and ``t`` map world coordinates into the camera frame. ``A`` is the
    4x6 helper whose transpose, applied to the homogeneous point, yields the
    column-major vectorised 2x3 Jacobian up to the inverse squared depth.
    """

    id: int
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    P: np.ndarray
    c_w: np.ndarray
    K_inv: np.ndarray
    A: np.ndarray


@dataclass(frozen=True)
class Observation:
    view_id: int
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).reshape(2)
        if not np.all(np.isfinite(u)):
            raise ValueError(f"observation in view {self.view_id} is not finite")
        object.__setattr__(self, "u", u)


@dataclass
class PointScore:
    M6: np.ndarray
    M7: np.ndarray
    M8: np.ndarray
    e2d: np.ndarray
    inlier_mask: np.ndarray

    @property
    def inliers(self) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.inlier_mask))

    @property
    def n_inliers(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))

    def mean_inlier_error(self) -> float:
        if not self.inlier_mask.any():
            return math.inf
        return float(np.mean(self.e2d[self.inlier_mask]))


def _jacobian_helper(K: np.ndarray, R: np.ndarray, t: np.ndarray) -> np.ndarray:
    (r11, r12, r13), (r21, r22, r23), (r31, r32, r33) = R.tolist()
    t1, t2, t3 = t.tolist()
    B = np.array([
        [0.0, r11 * r32 - r31 * r12, r11 * r33 - r31 * r13, r11 * t3 - r31 * t1],
        [0.0, r21 * r32 - r31 * r22, r21 * r33 - r31 * r23, r21 * t3 - r31 * t2],
        [r12 * r31 - r32 * r11, 0.0, r12 * r33 - r32 * r13, r12 * t3 - r32 * t1],
        [r22 * r31 - r32 * r21, 0.0, r22 * r33 - r32 * r23, r22 * t3 - r32 * t2],
        [r13 * r31 - r33 * r11, r13 * r32 - r33 * r12, 0.0, r13 * t3 - r33 * t1],
        [r23 * r31 - r33 * r21, r23 * r32 - r33 * r22, 0.0, r23 * t3 - r33 * t2],
    ])
    k11, k12, k21, k22 = K[0, 0], K[0, 1], K[1, 0], K[1, 1]
    A = np.empty((4, 6))
    for col, (b_u, b_v) in enumerate(((0, 1), (2, 3), (4, 5))):
        A[:, 2 * col] = k11 * B[b_u] + k12 * B[b_v]
        A[:, 2 * col + 1] = k21 * B[b_u] + k22 * B[b_v]
    return A


def build_view(id: int, K, R, t) -> CameraView:
    """Validate a camera and precompute its point-independent quantities.

    Raises:
        BadIntrinsics: if ``K`` is not 3x3 with third row exactly ``[0, 0, 1]``
            or is singular.
        NonRotation: if ``R`` is not orthonormal with determinant +1 within 1e-9.
    """
    K = np.array(K, dtype=float)
    R = np.array(R, dtype=float)
    t = np.array(t, dtype=float).reshape(-1)
    if K.shape != (3, 3):
        raise BadIntrinsics(f"view {id}: K must be 3x3, got {K.shape}")
    if not (K[2, 0] == 0.0 and K[2, 1] == 0.0 and K[2, 2] == 1.0):
        raise BadIntrinsics(f"view {id}: third row of K must be [0, 0, 1], got {K[2]}")
    if K[0, 0] * K[1, 1] - K[0, 1] * K[1, 0] == 0.0:
        raise BadIntrinsics(f"view {id}: K is singular")
    if R.shape != (3, 3):
        raise NonRotation(f"view {id}: R must be 3x3, got {R.shape}")
    if t.shape != (3,):
        raise SizeMismatch(f"view {id}: t must have 3 entries, got {t.size}")
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
        raise ValueError(f"view {id}: non-finite camera parameters")
    if np.max(np.abs(R.T @ R - np.eye(3))) > ROTATION_TOL:
        raise NonRotation(f"view {id}: R is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
        raise NonRotation(f"view {id}: det(R) must be +1")

    P = np.hstack([R, t[:, None]])
    c_w = -R.T @ t
    K_inv = np.linalg.inv(K)
    A = _jacobian_helper(K, R, t)
    for arr in (K, R, t, P, c_w, K_inv, A):
        arr.setflags(write=False)
    return CameraView(id=int(id), K=K, R=R, t=t, P=P, c_w=c_w, K_inv=K_inv, A=A)


def world_ray(view: CameraView, u) -> np.ndarray:
    """Unit bearing of pixel ``u`` expressed in the world frame."""
    f = view.K_inv @ np.array([u[0], u[1], 1.0])
    norm = math.sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2])
    if norm == 0.0:
        raise DegenerateRay(f"view {view.id}: zero-length ray")
    return view.R.T @ (f / norm)


class TriangulationProblem:
    """Aligned views and observations of a single 3D point.

    The world rays of the observations are computed on first use and memoised;
    filling the memo twice writes the same value, so concurrent readers are safe.
    """

    def __init__(self, views: Sequence[CameraView], observations: Sequence[Observation]):
        views = list(views)
        observations = list(observations)
        if len(views) != len(observations):
            raise SizeMismatch(
                f"{len(views)} views but {len(observations)} observations"
            )
        if len(views) < 2:
            raise TooFewViews(f"need at least 2 views, got {len(views)}")
        ids = [v.id for v in views]
        if len(set(ids)) != len(ids):
            raise DuplicateView("view ids must be unique")
        for v, o in zip(views, observations):
            if v.id != o.view_id:
                raise SizeMismatch(
                    f"observation for view {o.view_id} aligned with view {v.id}"
                )

        self.views = views
        self.observations = observations
        self.n = len(views)
        self.uv = np.array([o.u for o in observations], dtype=float)

        K = np.stack([v.K for v in views])
        P = np.stack([v.P for v in views])
        self.M1 = K[:, 0, 2] - self.uv[:, 0]
        self.M2 = K[:, 1, 2] - self.uv[:, 1]
        self.M3 = (K[:, 0, 0, None] * P[:, 0, :] + K[:, 0, 1, None] * P[:, 1, :]).T
        self.M4 = (K[:, 1, 0, None] * P[:, 0, :] + K[:, 1, 1, None] * P[:, 1, :]).T
        self.M5 = P[:, 2, :].T.copy()
        # stacked copies for the vectorised refiners
        self.P = P
        self.A = np.stack([v.A for v in views])
        uv1 = np.column_stack([self.uv, np.ones(self.n)])
        self.normalized = np.einsum("ijk,ik->ij", np.stack([v.K_inv for v in views]), uv1)[:, :2]
        for m in (self.uv, self.M1, self.M2, self.M3, self.M4, self.M5, self.P, self.A,
                  self.normalized):
            m.setflags(write=False)

        self.centers = [tuple(float(c) for c in v.c_w) for v in views]
        self._rays: list[Optional[tuple]] = [None] * self.n

    def ray(self, i: int) -> np.ndarray:
        return np.array(self.ray_tuple(i))

    def ray_tuple(self, i: int) -> tuple:
        f = self._rays[i]
        if f is None:
            f = tuple(float(c) for c in world_ray(self.views[i], self.uv[i]))
            self._rays[i] = f
        return f

    def ray_is_cached(self, i: int) -> bool:
        return self._rays[i] is not None

    def rays(self, indices=None) -> np.ndarray:
        if indices is None:
            indices = range(self.n)
        return np.array([self.ray_tuple(i) for i in indices]).reshape(-1, 3)


def precompute_problem(views, observations) -> TriangulationProblem:
    return TriangulationProblem(views, observations)


def score_point(problem: TriangulationProblem, x_est, delta_2d: float) -> PointScore:
    """Reprojection errors of ``x_est`` in all views and the resulting inlier set.

    A view in which the point has exactly zero depth gets an infinite error.
    Inliers need a strictly positive depth and an error strictly below
    ``delta_2d``.
    """
    xt = np.array([x_est[0], x_est[1], x_est[2], 1.0], dtype=float)
    M6 = xt @ problem.M5
    with np.errstate(divide="ignore", invalid="ignore"):
        M7 = problem.M1 + (xt @ problem.M3) / M6
        M8 = problem.M2 + (xt @ problem.M4) / M6
        e2d = np.sqrt(M7 * M7 + M8 * M8)
    e2d[M6 == 0.0] = np.inf
    mask = (e2d < delta_2d) & (M6 > 0.0)
    return PointScore(M6=M6, M7=M7, M8=M8, e2d=e2d, inlier_mask=mask)


def max_parallax_exhaustive(rays) -> float:
    """Largest pairwise angle between unit rays, in degrees within [0, 90].

    Antiparallel rays count as parallel: the comparison uses ``|f_j . f_k|``.
    """
    F = np.asarray(rays, dtype=float).reshape(-1, 3)
    m = len(F)
    if m < 2:
        raise TooFewRays(f"need at least 2 rays, got {m}")
    G = np.abs(F @ F.T)
    iu = np.triu_indices(m, k=1)
    p_min = min(float(np.min(G[iu])), 1.0)
    return math.degrees(math.acos(p_min))
