"""Learned lookup of 3D uncertainty from (inlier count, mean 2D error, max parallax).

The grid is filled by simulation: every simulated point is triangulated with
all views as inliers, and its squared 3D error is binned by view count, mean
reprojection error and maximum parallax angle. Cells hold the RMS 3D error in
units of the camera span, truncated at one. Smoothing then makes the grid
non-increasing in view count and parallax and non-decreasing in 2D error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import (
    AllCellsEmpty,
    EmptySpec,
    InvalidGrid,
    PointAtInfinity,
    SingularSystem,
    TooFewInliers,
)
from .geometry import max_parallax_exhaustive
from .refine import refine_gn, solve_dlt
from .scene import generate_scene

N_MAX = 50
E_MAX_PX = 20.0
BETA_MAX_DEG = 20.0
SIGMA_CAP = 1.0
MIN_CELL_COUNT = 10
SMOOTH_TOL = 1e-6
SMOOTH_MAX_SWEEPS = 100
EMPTY_WEIGHT = 1e-3

DEFAULT_SIM_N = (2, 3, 4, 5, 7, 10, 15, 20, 30, 50)

# +1: value must not decrease along the axis, -1: must not increase
AXIS_DIRECTIONS = (-1, +1, -1)


@dataclass
class UncertaintyGrid:
    n_axis: np.ndarray
    e_range: tuple
    e_bins: int
    beta_range: tuple
    beta_bins: int
    sigma: np.ndarray
    counts: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n_axis = np.asarray(self.n_axis, dtype=int)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.n_axis.ndim != 1 or len(self.n_axis) == 0 or np.any(np.diff(self.n_axis) <= 0):
            raise InvalidGrid("n_axis must be a non-empty ascending sequence")
        if self.e_bins < 1 or self.beta_bins < 1:
            raise InvalidGrid("need at least one bin per axis")
        if not (self.e_range[1] > self.e_range[0] and self.beta_range[1] > self.beta_range[0]):
            raise InvalidGrid("axis ranges must have positive width")
        if self.sigma.shape != self.shape or self.counts.shape != self.shape:
            raise InvalidGrid(f"sigma/counts must have shape {self.shape}")

    @property
    def shape(self) -> tuple:
        return (len(self.n_axis), self.e_bins, self.beta_bins)

    @property
    def e_axis(self) -> np.ndarray:
        return _centers(self.e_range, self.e_bins)

    @property
    def beta_axis(self) -> np.ndarray:
        return _centers(self.beta_range, self.beta_bins)

    @property
    def smoothed(self) -> bool:
        return bool(self.meta.get("smoothed", False))

    def monotonicity_violations(self, tol: float = 0.0) -> int:
        """Number of adjacent cell pairs breaking the required ordering."""
        bad = 0
        for axis, sign in enumerate(AXIS_DIRECTIONS):
            bad += int(np.count_nonzero(sign * np.diff(self.sigma, axis=axis) < -tol))
        return bad

    def is_monotone(self) -> bool:
        return np.isfinite(self.sigma).all() and self.monotonicity_violations() == 0

    def interpolate(self, n: float, e: float, beta: float) -> float:
        """Trilinear interpolation, clamped to the node range of each axis."""
        axes = (self.n_axis.astype(float), self.e_axis, self.beta_axis)
        lo, frac = zip(*(_locate(a, x) for a, x in zip(axes, (n, e, beta))))
        hi = [min(i + 1, len(a) - 1) for i, a in zip(lo, axes)]
        v = 0.0
        for a in (0, 1):
            wa = frac[0] if a else 1.0 - frac[0]
            if wa == 0.0:
                continue
            ia = hi[0] if a else lo[0]
            for b in (0, 1):
                wb = frac[1] if b else 1.0 - frac[1]
                if wb == 0.0:
                    continue
                ib = hi[1] if b else lo[1]
                for c in (0, 1):
                    wc = frac[2] if c else 1.0 - frac[2]
                    if wc == 0.0:
                        continue
                    ic = hi[2] if c else lo[2]
                    v += wa * wb * wc * self.sigma[ia, ib, ic]
        return float(v)


def _centers(rng_: tuple, bins: int) -> np.ndarray:
    lo, hi = rng_
    width = (hi - lo) / bins
    return lo + width * (np.arange(bins) + 0.5)


def _locate(axis: np.ndarray, x: float):
    if len(axis) == 1 or x <= axis[0]:
        return 0, 0.0
    if x >= axis[-1]:
        return len(axis) - 2, 1.0
    i = int(np.searchsorted(axis, x, side="right")) - 1
    return i, (x - axis[i]) / (axis[i + 1] - axis[i])


def _bin(value: float, rng_: tuple, bins: int) -> int:
    # values past the upper edge land in the last bin, mirroring the query clamp
    lo, hi = rng_
    i = int(math.floor((value - lo) / (hi - lo) * bins))
    return min(max(i, 0), bins - 1)


def estimate_sigma(grid: UncertaintyGrid, inlier_count: int, mean_e2d: float,
                   beta_max_deg: float) -> float:
    """Interpolated 3D uncertainty of a triangulated point.

    Each factor is first clamped to the grid's upper limit (50 views, 20 px,
    20 degrees for the default grid), then to the outermost node.
    Fewer than two inliers give ``inf``.
    """
    if not np.isfinite(grid.sigma).all():
        raise InvalidGrid("grid has empty cells; smooth it before querying")
    if inlier_count < 2:
        return math.inf
    n_in = min(inlier_count, int(grid.n_axis[-1]))
    e = min(mean_e2d, grid.e_range[1])
    beta = min(beta_max_deg, grid.beta_range[1])
    return grid.interpolate(n_in, e, beta)


def sampled_max_parallax(problem, inliers, delta_pair: int, rng) -> float:
    """Maximum parallax over at most ``delta_pair`` random inlier pairs, in degrees.

    Pairs are drawn uniformly with replacement, so the result never exceeds
    :func:`max_parallax_exhaustive` over the same rays.
    """
    idx = list(inliers)
    m = len(idx)
    if m < 2:
        raise TooFewInliers(f"need at least 2 inliers, got {m}")
    pj, pk = np.triu_indices(m, k=1)
    budget = min(int(delta_pair), len(pj))
    draws = rng.integers(len(pj), size=budget)
    rays = {}
    for v in np.unique(np.concatenate([pj[draws], pk[draws]])):
        rays[int(v)] = problem.ray_tuple(idx[v])
    p_min = math.inf
    for d in draws:
        a, b = rays[int(pj[d])], rays[int(pk[d])]
        p = abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
        if p < p_min:
            p_min = p
    return math.degrees(math.acos(min(p_min, 1.0)))


def pav(values, weights=None, increasing: bool = True) -> np.ndarray:
    """Weighted pool-adjacent-violators isotonic fit.

    Elements that are never pooled keep their exact input value.
    """
    y = np.asarray(values, dtype=float)
    if not increasing:
        return -pav(-y, weights, True)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    means, wsum, sizes = [], [], []
    for yi, wi in zip(y.tolist(), w.tolist()):
        mean, weight, size = yi, wi, 1
        while means and means[-1] > mean:
            pm, pw, ps = means.pop(), wsum.pop(), sizes.pop()
            mean = (pm * pw + mean * weight) / (pw + weight)
            weight += pw
            size += ps
        means.append(mean)
        wsum.append(weight)
        sizes.append(size)
    return np.repeat(means, sizes)


def _pav_axis(v: np.ndarray, w: np.ndarray, axis: int, sign: int) -> None:
    vm = np.moveaxis(v, axis, -1)
    wm = np.moveaxis(w, axis, -1)
    bad = np.any(sign * np.diff(vm, axis=-1) < 0, axis=-1)
    for idx in zip(*np.nonzero(bad)):
        vm[idx] = pav(vm[idx], wm[idx], increasing=sign > 0)


def monotone_smooth(grid: UncertaintyGrid, tol: float = SMOOTH_TOL,
                    max_sweeps: int = SMOOTH_MAX_SWEEPS) -> UncertaintyGrid:
    """Fill empty cells and enforce the three monotonicity constraints.

    Empty (NaN) cells take the value of the nearest populated cell and a
    negligible weight. Weighted PAV is then applied along the view, error and
    parallax axes in turn until a sweep moves no cell by more than ``tol``.
    A final running-max pass removes any residual violation so the result is
    exactly monotone.
    """
    v = np.array(grid.sigma, dtype=float)
    empty = ~np.isfinite(v)
    if empty.all():
        raise AllCellsEmpty("no populated cell to smooth from")
    if empty.any():
        _, nearest = ndimage.distance_transform_edt(empty, return_indices=True)
        v = v[tuple(nearest)]
    w = np.maximum(np.asarray(grid.counts, dtype=float), EMPTY_WEIGHT)
    w[empty] = EMPTY_WEIGHT

    sweeps, change = 0, 0.0
    for sweeps in range(1, max_sweeps + 1):
        before = v.copy()
        for axis, sign in enumerate(AXIS_DIRECTIONS):
            _pav_axis(v, w, axis, sign)
        change = float(np.max(np.abs(v - before)))
        if change < tol:
            break

    # flip decreasing axes so every axis must be non-decreasing, then take
    # running maxima; each pass keeps the other axes sorted
    flip = tuple(slice(None, None, -1) if s < 0 else slice(None) for s in AXIS_DIRECTIONS)
    h = v[flip]
    for axis in range(3):
        h = np.maximum.accumulate(h, axis=axis)
    v = np.clip(h[flip], 0.0, SIGMA_CAP)

    meta = dict(grid.meta)
    meta["smoothed"] = True
    meta["smoothing"] = {
        "method": "cyclic weighted PAV + running-max cleanup",
        "tol": tol, "max_sweeps": max_sweeps, "sweeps": sweeps,
        "last_change": change, "empty_weight": EMPTY_WEIGHT,
        "filled_cells": int(empty.sum()),
    }
    return replace(grid, sigma=v, meta=meta)


def _draw(value, rng, law: str = "uniform") -> float:
    if not isinstance(value, (list, tuple)):
        return float(value)
    lo, hi = value
    if law == "inverse":
        # uniform in 1/value, which spreads the max parallax (about span / d) evenly
        return float(1.0 / rng.uniform(1.0 / hi, 1.0 / lo))
    return float(rng.uniform(lo, hi))


def normalize_sim_spec(sim_spec) -> list:
    configs = sim_spec.get("configs") if isinstance(sim_spec, dict) else sim_spec
    if not configs:
        raise EmptySpec("simulation spec lists no configurations")
    out = []
    for c in configs:
        law = c.get("d_law", "uniform")
        if law not in ("uniform", "inverse"):
            raise ValueError(f"unknown d_law {law!r}")
        out.append({"n": int(c["n"]), "d": c["d"], "sigma": c["sigma"],
                    "runs": int(c.get("runs", c.get("n_run", 0))), "d_law": law})
    return out


def simulate_once(n: int, d: float, sigma: float, rng, config) -> Optional[tuple]:
    """One outlier-free simulation: returns (3D error, mean 2D error, max parallax)."""
    scene = generate_scene(n, d, sigma, 0.0, rng)
    problem = scene.problem()
    everyone = np.arange(n)
    try:
        x0 = solve_dlt(problem, everyone)
    except (PointAtInfinity, SingularSystem):
        return None
    state = refine_gn(problem, x0, everyone, config, update_inliers=False)
    if state.failure is not None:
        return None
    err = float(np.linalg.norm(state.x_est - scene.point_gt))
    if not (math.isfinite(err) and math.isfinite(state.mean_e2d)):
        return None
    beta = max_parallax_exhaustive(problem.rays())
    return err, state.mean_e2d, beta


def learn_grid(sim_spec, rng_seed: int, *, n_axis=None, e_range=(0.0, E_MAX_PX), e_bins=20,
               beta_range=(0.0, BETA_MAX_DEG), beta_bins=20, min_count=MIN_CELL_COUNT,
               smooth=True, progress=None) -> UncertaintyGrid:
    """Simulate, bin and smooth an uncertainty grid.

    ``sim_spec`` is a list of ``{"n", "d", "sigma", "runs"}`` entries (or a
    dict holding such a list under ``"configs"``). ``d`` and ``sigma`` are
    either fixed values or ``[low, high]`` ranges drawn uniformly per run;
    ``"d_law": "inverse"`` draws ``1/d`` uniformly instead.
    Every run uses its own generator seeded by ``(rng_seed, config, run)``.
    """
    from .config import RansacConfig

    configs = normalize_sim_spec(sim_spec)
    n_axis = np.arange(2, N_MAX + 1) if n_axis is None else np.asarray(n_axis, dtype=int)
    shape = (len(n_axis), e_bins, beta_bins)
    sq_sum = np.zeros(shape)
    counts = np.zeros(shape, dtype=np.int64)
    config = RansacConfig()

    for ci, c in enumerate(configs):
        n_idx = int(np.searchsorted(n_axis, min(c["n"], n_axis[-1])))
        if n_idx >= len(n_axis) or n_axis[n_idx] != min(c["n"], n_axis[-1]):
            raise InvalidGrid(f"simulated n={c['n']} is not a node of n_axis")
        for run in range(c["runs"]):
            rng = np.random.default_rng([rng_seed, ci, run])
            d = _draw(c["d"], rng, c["d_law"])
            sigma = _draw(c["sigma"], rng)
            out = simulate_once(c["n"], d, sigma, rng, config)
            if out is None:
                continue
            err, e2d, beta = out
            cell = (n_idx, _bin(e2d, e_range, e_bins), _bin(beta, beta_range, beta_bins))
            sq_sum[cell] += err * err
            counts[cell] += 1
        if progress is not None:
            progress(ci, c)

    sigma = np.full(shape, np.nan)
    ok = counts >= min_count
    sigma[ok] = np.minimum(np.sqrt(sq_sum[ok] / counts[ok]), SIGMA_CAP)
    simulated = sorted({int(np.searchsorted(n_axis, min(c["n"], n_axis[-1]))) for c in configs})
    _interpolate_missing_n(sigma, n_axis, simulated)

    grid = UncertaintyGrid(
        n_axis=n_axis, e_range=tuple(e_range), e_bins=e_bins,
        beta_range=tuple(beta_range), beta_bins=beta_bins, sigma=sigma, counts=counts,
        meta={
            "smoothed": False,
            "seed": int(rng_seed),
            "min_count": int(min_count),
            "sim": configs,
            "statistic": "rms_3d_error",
            "sigma_cap": SIGMA_CAP,
        },
    )
    return monotone_smooth(grid) if smooth else grid


def _interpolate_missing_n(sigma: np.ndarray, n_axis: np.ndarray, simulated: list) -> None:
    """Linearly fill view-count rows lying between two simulated rows."""
    for lo, hi in zip(simulated[:-1], simulated[1:]):
        for i in range(lo + 1, hi):
            t = (n_axis[i] - n_axis[lo]) / (n_axis[hi] - n_axis[lo])
            sigma[i] = (1.0 - t) * sigma[lo] + t * sigma[hi]
