"""Synthetic triangulation scenes with unit camera span."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import VisibilityTimeout
from .geometry import Observation, TriangulationProblem, build_view

IMAGE_WIDTH = 640
IMAGE_HEIGHT = 480
FOCAL = 525.0
K_DEFAULT = np.array([
    [FOCAL, 0.0, IMAGE_WIDTH / 2],
    [0.0, FOCAL, IMAGE_HEIGHT / 2],
    [0.0, 0.0, 1.0],
])
MAX_ORIENTATION_ATTEMPTS = 10_000
OUTLIER_MIN_PX = 10.0
OUTLIER_MAX_PX = 100.0
_BATCH = 64


@dataclass
class SyntheticScene:
    point_gt: np.ndarray
    views: list
    obs_clean: np.ndarray
    obs_noisy: np.ndarray
    outlier_mask: np.ndarray
    perturbation: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.views)

    def problem(self, noisy: bool = True) -> TriangulationProblem:
        uv = self.obs_noisy if noisy else self.obs_clean
        obs = [Observation(v.id, u) for v, u in zip(self.views, uv)]
        return TriangulationProblem(self.views, obs)


def _unit_vector(rng) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def _inside_ball(rng, radius: float) -> np.ndarray:
    while True:
        c = _unit_vector(rng) * radius * rng.random() ** (1.0 / 3.0)
        if np.linalg.norm(c) < radius:
            return c


def _visible(xc: np.ndarray) -> np.ndarray:
    z = xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = FOCAL * xc[..., 0] / z + IMAGE_WIDTH / 2
        v = FOCAL * xc[..., 1] / z + IMAGE_HEIGHT / 2
    return (z > 0) & (u >= 0) & (u < IMAGE_WIDTH) & (v >= 0) & (v < IMAGE_HEIGHT)


def orient_cameras(centers, point: np.ndarray, rng,
                   max_attempts: int = MAX_ORIENTATION_ATTEMPTS) -> list:
    """Draw uniform random rotations per camera until ``point`` projects into its image."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    out = [None] * len(centers)
    pending = np.arange(len(centers))
    attempts = 0
    while len(pending) and attempts < max_attempts:
        batch = min(_BATCH, max_attempts - attempts)
        R = Rotation.random(len(pending) * batch, random_state=rng).as_matrix()
        R = R.reshape(len(pending), batch, 3, 3)
        xc = np.einsum("pbij,pj->pbi", R, point - centers[pending])
        ok = _visible(xc)
        first = np.argmax(ok, axis=1)
        found = ok[np.arange(len(pending)), first]
        for p, b in zip(pending[found], first[found]):
            out[p] = R[np.flatnonzero(pending == p)[0], b]
        pending = pending[~found]
        attempts += batch
    if len(pending):
        raise VisibilityTimeout(
            f"point not visible in view(s) {pending.tolist()} after {max_attempts} orientations"
        )
    return out


def generate_scene(n: int, d: float, sigma: float, outlier_ratio: float, rng,
                   first_view_id: int = 0) -> SyntheticScene:
    """Random cameras of unit span observing the point ``(0, 0, d)``.

    Two cameras sit at antipodes of the sphere of unit diameter around the
    origin; the other ``n - 2`` are uniform inside it. Inlying observations get
    Gaussian pixel noise of standard deviation ``sigma``; the
    ``round(outlier_ratio * n)`` outlying ones are instead displaced by 10 to
    100 pixels in a uniformly random direction.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if not d > 0:
        raise ValueError(f"need d > 0, got {d}")
    if sigma < 0:
        raise ValueError(f"need sigma >= 0, got {sigma}")
    if not 0.0 <= outlier_ratio < 1.0:
        raise ValueError(f"outlier_ratio must be in [0, 1), got {outlier_ratio}")

    point = np.array([0.0, 0.0, float(d)])
    axis = _unit_vector(rng)
    centers = [0.5 * axis, -0.5 * axis] + [_inside_ball(rng, 0.5) for _ in range(n - 2)]
    centers = [centers[i] for i in rng.permutation(n)]

    views = []
    clean = np.empty((n, 2))
    rotations = orient_cameras(centers, point, rng)
    for i, (c, R) in enumerate(zip(centers, rotations)):
        view = build_view(first_view_id + i, K_DEFAULT, R, -R @ c)
        views.append(view)
        xc = view.P @ np.append(point, 1.0)
        clean[i] = (K_DEFAULT @ xc)[:2] / xc[2]

    n_out = int(np.floor(outlier_ratio * n + 0.5))
    outlier_mask = np.zeros(n, dtype=bool)
    outlier_mask[rng.choice(n, size=n_out, replace=False)] = True
    noise = rng.standard_normal((n, 2)) * sigma
    angle = rng.uniform(0.0, 2.0 * np.pi, n)
    magnitude = rng.uniform(OUTLIER_MIN_PX, OUTLIER_MAX_PX, n)
    offset = np.column_stack([np.cos(angle), np.sin(angle)]) * magnitude[:, None]
    perturbation = np.where(outlier_mask[:, None], offset, noise)
    noisy = clean + perturbation

    return SyntheticScene(
        point_gt=point, views=views, obs_clean=clean, obs_noisy=noisy,
        outlier_mask=outlier_mask, perturbation=perturbation,
        params={"n": n, "d": float(d), "sigma": float(sigma),
                "outlier_ratio": float(outlier_ratio)},
    )
