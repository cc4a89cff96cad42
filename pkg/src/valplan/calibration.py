"""Logit-linear calibration between predicted and true risks.

The calibration map is logit(p) = intercept + slope * logit(pi).  Reported
evidence may locate the line through the intercept itself, the O/E ratio
E(Y)/E(pi), or mean calibration E(Y - pi); for a fixed slope and risk
distribution each of these pins down the same intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from .errors import DomainError, NumericError
from .riskdist import RiskDistribution

LOCATION_KINDS = ("intercept", "oe_ratio", "mean_calibration")

_EPI_TOL = 1e-8


@dataclass(frozen=True)
class CalibrationModel:
    """Calibration line on the logit scale; slope must be positive."""

    intercept: float
    slope: float

    def __post_init__(self):
        if not np.isfinite(self.intercept) or not np.isfinite(self.slope):
            raise DomainError("calibration parameters must be finite")
        if self.slope <= 0.0:
            raise DomainError(f"calibration slope must be positive, got {self.slope}")

    def apply(self, pi):
        """Calibrated risk p for predicted risk pi."""
        return expit(self.intercept + self.slope * logit(pi))

    def invert(self, p):
        """Predicted risk pi whose calibrated risk is p."""
        return expit((logit(p) - self.intercept) / self.slope)

    def apply_logit(self, logit_pi):
        return self.intercept + self.slope * logit_pi

    def invert_logit(self, logit_p):
        return (logit_p - self.intercept) / self.slope


@dataclass(frozen=True)
class CalibrationLocationSpec:
    """One of the three equivalent ways to locate the calibration line."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in LOCATION_KINDS:
            raise DomainError(f"unknown calibration location kind {self.kind!r}; "
                              f"expected one of {LOCATION_KINDS}")
        if self.kind == "oe_ratio" and self.value <= 0.0:
            raise DomainError(f"O/E ratio must be positive, got {self.value}")
        if self.kind == "mean_calibration" and not -1.0 < self.value < 1.0:
            raise DomainError(f"mean calibration must lie in (-1,1), got {self.value}")


def implied_mean_pi(spec: CalibrationLocationSpec, dist_mean: float) -> float | None:
    """E(pi) implied by the location spec, or None for the intercept kind."""
    if spec.kind == "intercept":
        return None
    if spec.kind == "oe_ratio":
        epi = dist_mean / spec.value
    else:
        epi = dist_mean - spec.value
    if not 0.0 < epi < 1.0:
        raise DomainError(
            f"{spec.kind}={spec.value} with prevalence {dist_mean:.4f} implies "
            f"E(pi)={epi:.4f} outside (0,1)")
    return epi


def expected_pi(alpha: float, slope: float, d: RiskDistribution) -> float:
    """E(pi) = E[expit((logit p - alpha)/slope)] under the risk distribution."""
    return d.expect_logit_scale(lambda L: expit((L - alpha) / slope))


def resolve_intercept(spec: CalibrationLocationSpec, slope: float,
                      d: RiskDistribution) -> CalibrationModel:
    """Calibration model whose intercept realizes the requested location.

    For the O/E and mean-calibration kinds the intercept solves
    E(pi) = target, where E(pi) is strictly decreasing in the intercept, so
    a bracketing root-finder on an expanding interval always succeeds.
    """
    if slope <= 0.0:
        raise DomainError(f"calibration slope must be positive, got {slope}")
    if spec.kind == "intercept":
        return CalibrationModel(spec.value, slope)

    target = implied_mean_pi(spec, d.mean())

    def f(alpha):
        return expected_pi(alpha, slope, d) - target

    lo, hi = -2.0, 2.0
    for _ in range(200):
        if f(hi) <= 0.0:
            break
        hi += (hi - lo)
    else:
        raise NumericError("intercept bracket expansion failed (upper)")
    for _ in range(200):
        if f(lo) >= 0.0:
            break
        lo -= (hi - lo)
    else:
        raise NumericError("intercept bracket expansion failed (lower)")

    alpha = float(optimize.brentq(f, lo, hi, xtol=1e-12, rtol=8.9e-16))
    if abs(f(alpha)) > _EPI_TOL:
        raise NumericError(f"intercept solve residual {f(alpha):.2e} exceeds {_EPI_TOL}")
    return CalibrationModel(alpha, slope)
