"""Physical-layer and geometry constants shared by analytics and simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class NetworkParams:
    """Densities, powers, thresholds, pathloss, and region geometry.

    lambda_g / lambda_u are the transmitter (cache-enabled) and requester
    densities in points/m^2.  P_g is retained for completeness even though it
    cancels inside every interference-limited SIR ratio.  alpha must exceed 2
    so the far-field interference integrals stay finite, and the simulation
    region radius R_s must dominate the D2D range R_d.
    """

    lambda_g: float
    lambda_u: float
    P_g: float
    P_u: float
    theta_u: float
    I_th: float
    alpha: float
    R_d: float
    R_s: float

    def __post_init__(self):
        for name in ("lambda_g", "lambda_u", "P_g", "P_u", "theta_u", "I_th", "alpha", "R_d", "R_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and strictly positive, got {value!r}")
        if self.alpha <= 2:
            raise ValueError("pathloss exponent alpha must exceed 2")
        if self.R_s < 10 * self.R_d:
            raise ValueError("simulation radius R_s must be at least 10 * R_d")

    @property
    def region_area(self) -> float:
        return math.pi * self.R_s**2
