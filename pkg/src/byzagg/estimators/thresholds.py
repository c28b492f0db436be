"""Termination thresholds for the spectral filters.

Every variant scales the per-row variance floor ``eta_t^2 sigma^2 / n`` by a
factor depending on the corruption level, dimension and confidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EPS_MIN = 1e-3

VARIANTS = ("eq1", "eq1b", "eq2", "eq4", "eq5", "eq6", "eq7", "manual")
NO_REGRET_VARIANTS = ("eq1", "eq1b", "eq4", "eq6", "manual")
FILTERING_VARIANTS = ("eq2", "eq5", "eq7", "manual")

DEFAULT_CONSTANTS = {"C1": 2.0, "C2": 2.0, "C3": 2.0, "C4": 2.0, "C_bucket": 4.0}


class ThresholdError(ValueError):
    """Corruption level is at or beyond the breakdown point of a variant."""


@dataclass(frozen=True)
class ThresholdSpec:
    xi: float
    variant: str = "manual"
    floor: float = 0.0

    def __post_init__(self):
        if not self.xi >= 0:
            raise ValueError("threshold must be non-negative")


def variance_floor(sigma: float, n: int, eta_t: float = 1.0) -> float:
    return eta_t**2 * sigma**2 / n


def compute_threshold(
    variant: str,
    epsilon: float,
    eta: float = 0.5,
    sigma: float = 1.0,
    d: int = 1,
    m: int = 1,
    n: int = 1,
    delta: float = 0.1,
    eta_t: float = 1.0,
    k: int | None = None,
    constants: dict | None = None,
    xi: float | None = None,
) -> ThresholdSpec:
    """Evaluate one of the threshold formulas.

    ``epsilon`` is clamped below at ``EPS_MIN`` because the ``1/(m eps)``
    term diverges as the corruption level vanishes. ``eq1b`` is the
    ``1 - (6 + 2 eta) eps`` denominator variant of ``eq1``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown threshold variant {variant!r}")
    floor = variance_floor(sigma, n, eta_t)
    if variant == "manual":
        if xi is None:
            raise ValueError("manual threshold requires xi")
        return ThresholdSpec(float(xi), variant, floor)
    if sigma < 0 or d < 1 or m < 1 or n < 1 or not 0 < delta < 1 + 1e-12:
        raise ValueError("threshold parameters out of range")
    c = dict(DEFAULT_CONSTANTS)
    c.update(constants or {})
    eps = max(float(epsilon), EPS_MIN)
    log_inv_delta = math.log(1.0 / delta)

    if variant in ("eq1", "eq1b"):
        slope = (3.0 + eta) if variant == "eq1" else (6.0 + 2.0 * eta)
        denom = 1.0 - slope * eps
        if denom <= 0:
            raise ThresholdError(f"epsilon={epsilon} beyond breakdown of {variant}")
        factor = ((2.0 * eta + 7.0) / (3.0 * denom)) ** 2
        factor *= 1.0 + d * math.log(d / delta) / (m * eps)
    elif variant == "eq2":
        if eps >= 0.5:
            raise ThresholdError(f"epsilon={epsilon} beyond breakdown of eq2")
        factor = 2.0 * (1.0 - eps) / (1.0 - 2.0 * eps) ** 2
        factor *= 1.0 + d * math.log(d / delta) / (m * eps)
    elif variant in ("eq4", "eq5"):
        c_num, c_den = (c["C1"], c["C2"]) if variant == "eq4" else (c["C3"], c["C4"])
        denom = 1.0 - c_den * (eps + log_inv_delta / n) ** 2
        if denom <= 0:
            raise ThresholdError(f"epsilon={epsilon} beyond breakdown of {variant}")
        factor = c_num / denom
        factor *= 1.0 + (d * math.log(d) + log_inv_delta) / (m * eps)
    else:
        if k is None or k < 1:
            raise ValueError(f"{variant} needs the bucket count k")
        # bucket means of m/k updates each have variance floor * k / m
        floor = floor * k / m
        factor = c["C_bucket"] * (d + k) / k
    return ThresholdSpec(factor * floor, variant, floor)
