"""Two-view midpoint triangulation with early rejection of bad samples.

The pair is screened from cheapest to most expensive test, and the midpoint
itself is only formed once the rays are known to be epipolar-consistent, to
have a usable parallax, and to meet in front of both cameras:

1. normalised epipolar error ``|t^ . (f_j x f_k)|``
2. raw parallax cosine ``p = f_j . f_k``
3. ray/baseline degeneracy ``q = f_j . t^``, ``r = f_k . t^``
4. signs of the anchor depths ``mu_j = p r - q``, ``mu_k = r - p q``
5. midpoint, then cheirality in both views
6. reprojection error in both views
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ZeroBaseline
from .geometry import CameraView, TriangulationProblem

ZERO_BASELINE_TOL = 1e-12


class MidpointStatus(str, enum.Enum):
    ACCEPTED = "Accepted"
    REJECTED_EPIPOLAR = "RejectedEpipolar"
    REJECTED_PARALLAX = "RejectedParallax"
    REJECTED_DEGENERACY = "RejectedDegeneracy"
    REJECTED_ANCHOR_SIGN = "RejectedAnchorSign"
    REJECTED_CHEIRALITY = "RejectedCheirality"
    REJECTED_REPROJECTION = "RejectedReprojection"
    REJECTED_ZERO_BASELINE = "RejectedZeroBaseline"


# stage names in evaluation order; a counter is bumped when a stage is entered
STAGES = ("epipolar", "parallax", "degeneracy", "anchor", "midpoint")


@dataclass
class PairGeometry:
    """Scalars describing a pair of rays; ``None`` marks a value never computed."""

    j: int
    k: int
    t_jk: tuple
    t_hat: tuple
    baseline_len: float
    e_epi: Optional[float] = None
    p: Optional[float] = None
    q: Optional[float] = None
    r: Optional[float] = None
    mu_j: Optional[float] = None
    mu_k: Optional[float] = None
    s: Optional[float] = None
    lambda_j: Optional[float] = None
    lambda_k: Optional[float] = None
    degenerate: bool = False


@dataclass
class MidpointOutcome:
    status: MidpointStatus
    x_mid: Optional[np.ndarray]
    stage_values: Optional[PairGeometry]

    @property
    def accepted(self) -> bool:
        return self.status is MidpointStatus.ACCEPTED


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _baseline(cj, ck):
    t = (cj[0] - ck[0], cj[1] - ck[1], cj[2] - ck[2])
    norm = math.sqrt(_dot(t, t))
    return t, norm


def _anchor_scale(baseline_len, p):
    denom = 1.0 - p * p
    if denom <= 0.0:
        return math.inf
    return baseline_len / denom


def pair_geometry(view_j: CameraView, view_k: CameraView, ray_j, ray_k) -> PairGeometry:
    """Evaluate every screening scalar of a pair at once.

    Parallel rays (``p**2 == 1``) give ``s = inf`` and ``degenerate=True``.

    Raises:
        ZeroBaseline: if the camera centres coincide.
    """
    cj = tuple(float(c) for c in view_j.c_w)
    ck = tuple(float(c) for c in view_k.c_w)
    fj = tuple(float(c) for c in ray_j)
    fk = tuple(float(c) for c in ray_k)
    t, tn = _baseline(cj, ck)
    if tn < ZERO_BASELINE_TOL:
        raise ZeroBaseline(f"views {view_j.id} and {view_k.id} share a centre")
    th = (t[0] / tn, t[1] / tn, t[2] / tn)
    p = _dot(fj, fk)
    q = _dot(fj, th)
    r = _dot(fk, th)
    mu_j = p * r - q
    mu_k = -p * q + r
    s = _anchor_scale(tn, p)
    with np.errstate(invalid="ignore"):
        lam_j = float(np.float64(s) * mu_j)
        lam_k = float(np.float64(s) * mu_k)
    return PairGeometry(
        j=view_j.id, k=view_k.id, t_jk=t, t_hat=th, baseline_len=tn,
        e_epi=abs(_dot(th, _cross(fj, fk))), p=p, q=q, r=r,
        mu_j=mu_j, mu_k=mu_k, s=s, lambda_j=lam_j, lambda_k=lam_k,
        degenerate=math.isinf(s),
    )


def two_view_check(problem: TriangulationProblem, j: int, k: int, x, delta_2d: float):
    """Cheirality and reprojection test of ``x`` in views ``j`` and ``k``.

    Returns ``None`` when both pass, otherwise the rejecting status. Zero depth
    passes cheirality; only strictly negative depth is behind the camera.
    """
    xt = np.array([x[0], x[1], x[2], 1.0])
    xj = problem.views[j].P @ xt
    xk = problem.views[k].P @ xt
    if xj[2] < 0.0 or xk[2] < 0.0:
        return MidpointStatus.REJECTED_CHEIRALITY
    limit = delta_2d * delta_2d
    for i, xc in ((j, xj), (k, xk)):
        if xc[2] == 0.0:
            return MidpointStatus.REJECTED_REPROJECTION
        proj = problem.views[i].K @ xc
        du = problem.uv[i, 0] - proj[0] / xc[2]
        dv = problem.uv[i, 1] - proj[1] / xc[2]
        if not du * du + dv * dv <= limit:
            return MidpointStatus.REJECTED_REPROJECTION
    return None


def screen_and_midpoint(problem: TriangulationProblem, j: int, k: int, config,
                        counters: Optional[dict] = None) -> MidpointOutcome:
    """Screen the pair ``(j, k)`` and return its midpoint if it survives.

    ``counters``, when given, maps each name in ``STAGES`` to the number of
    times that stage was entered.
    """
    def enter(stage):
        if counters is not None:
            counters[stage] = counters.get(stage, 0) + 1

    fj = problem.ray_tuple(j)
    fk = problem.ray_tuple(k)
    cj = problem.centers[j]
    ck = problem.centers[k]
    t, tn = _baseline(cj, ck)
    g = PairGeometry(j=problem.views[j].id, k=problem.views[k].id, t_jk=t,
                     t_hat=(0.0, 0.0, 0.0), baseline_len=tn)
    if tn < ZERO_BASELINE_TOL:
        return MidpointOutcome(MidpointStatus.REJECTED_ZERO_BASELINE, None, g)
    th = (t[0] / tn, t[1] / tn, t[2] / tn)
    g.t_hat = th

    enter("epipolar")
    g.e_epi = abs(_dot(th, _cross(fj, fk)))
    if g.e_epi > config.delta_epipolar:
        return MidpointOutcome(MidpointStatus.REJECTED_EPIPOLAR, None, g)

    enter("parallax")
    p = g.p = _dot(fj, fk)
    if p < config.delta_lower or p > config.delta_upper:
        return MidpointOutcome(MidpointStatus.REJECTED_PARALLAX, None, g)

    enter("degeneracy")
    q = g.q = _dot(fj, th)
    r = g.r = _dot(fk, th)
    if abs(q) > config.delta_upper or abs(r) > config.delta_upper:
        return MidpointOutcome(MidpointStatus.REJECTED_DEGENERACY, None, g)

    enter("anchor")
    mu_j = g.mu_j = p * r - q
    mu_k = g.mu_k = -p * q + r
    if mu_j < 0.0 or mu_k < 0.0:
        return MidpointOutcome(MidpointStatus.REJECTED_ANCHOR_SIGN, None, g)

    s = g.s = _anchor_scale(tn, p)
    if math.isinf(s):
        # parallel rays slip through only when delta_upper == 1
        g.degenerate = True
        return MidpointOutcome(MidpointStatus.REJECTED_DEGENERACY, None, g)

    enter("midpoint")
    lam_j = g.lambda_j = s * mu_j
    lam_k = g.lambda_k = s * mu_k
    x_mid = np.array([
        0.5 * (cj[0] + lam_j * fj[0] + ck[0] + lam_k * fk[0]),
        0.5 * (cj[1] + lam_j * fj[1] + ck[1] + lam_k * fk[1]),
        0.5 * (cj[2] + lam_j * fj[2] + ck[2] + lam_k * fk[2]),
    ])

    rejected = two_view_check(problem, j, k, x_mid, config.delta_2d)
    if rejected is not None:
        return MidpointOutcome(rejected, None, g)
    return MidpointOutcome(MidpointStatus.ACCEPTED, x_mid, g)
