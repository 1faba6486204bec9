from __future__ import annotations

import math
from dataclasses import dataclass

REFINERS = ("gn", "dlt", "linls", "none")


@dataclass(frozen=True)
class RansacConfig:
    """Thresholds for the two-view RANSAC, refinement and uncertainty lookup.

    ``delta_lower`` and ``delta_upper`` bound the cosine of the raw parallax
    between two rays, so ``delta_upper = cos(4 deg)`` rejects pairs with less
    than 4 degrees of parallax. Defaults are the published settings.
    """

    eta: float = 0.99
    delta_2d: float = 10.0
    delta_epipolar: float = 0.01
    delta_lower: float = 0.0
    delta_upper: float = math.cos(math.radians(4.0))
    delta_update: float = 0.1
    delta_pair: int = 100
    seed: int = 0
    max_hypotheses: int = 1_000_000
    refiner: str = "gn"

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must be in (0, 1), got {self.eta}")
        if not self.delta_2d > 0.0:
            raise ValueError(f"delta_2d must be positive, got {self.delta_2d}")
        if not -1.0 <= self.delta_lower < self.delta_upper <= 1.0:
            raise ValueError(
                "need -1 <= delta_lower < delta_upper <= 1, got "
                f"{self.delta_lower}, {self.delta_upper}"
            )
        if self.max_hypotheses < 1:
            raise ValueError("max_hypotheses must be >= 1")
        if self.delta_pair < 1:
            raise ValueError("delta_pair must be >= 1")
        if self.delta_update < 0.0:
            raise ValueError("delta_update must be non-negative")
        if self.refiner not in REFINERS:
            raise ValueError(f"refiner must be one of {REFINERS}, got {self.refiner!r}")

    @classmethod
    def from_degrees(cls, min_parallax_deg=4.0, max_parallax_deg=90.0, **kwargs):
        """Build a config from parallax limits in degrees instead of cosines."""
        return cls(
            delta_upper=_cos_deg(min_parallax_deg),
            delta_lower=_cos_deg(max_parallax_deg),
            **kwargs,
        )


def _cos_deg(angle: float) -> float:
    # math.cos(pi / 2) is 6.1e-17, not 0
    if angle == 90.0:
        return 0.0
    return math.cos(math.radians(angle))
