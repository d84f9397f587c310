"""Model parameters, correlation thresholds, regime classification and the
small covariance matrices used by the variational problem.

The process pair is (X1(t) - mu1 t, X2(s) - mu2 s) with standard Brownian
components and E[X1(t) X2(s)] = rho * min(t, s).  All downstream code works
with the canonical ordering mu1 <= mu2; the joint tail probability is
symmetric under relabelling, so swapping is harmless.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCovariance,
    InvalidCorrelation,
    NonPositiveDrift,
    NonPositiveTime,
)

EQUAL_DRIFT_RTOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    mu1: float
    mu2: float
    rho: float
    swapped: bool = False

    def __post_init__(self):
        if not (self.mu1 > 0 and self.mu2 > 0):
            raise NonPositiveDrift(f"drifts must be positive, got ({self.mu1}, {self.mu2})")
        if not (-1.0 <= self.rho <= 1.0):
            raise InvalidCorrelation(f"correlation must lie in [-1, 1], got {self.rho}")

    @property
    def equal_drift(self) -> bool:
        return abs(self.mu1 - self.mu2) <= EQUAL_DRIFT_RTOL * max(self.mu1, self.mu2)

    @property
    def mu(self) -> np.ndarray:
        return np.array([self.mu1, self.mu2])

    def with_rho(self, rho: float) -> "ModelParams":
        return ModelParams(self.mu1, self.mu2, rho, self.swapped)

    def as_dict(self) -> dict:
        return {"mu1": self.mu1, "mu2": self.mu2, "rho": self.rho, "swapped": self.swapped}


def canonicalize(mu1: float, mu2: float, rho: float) -> ModelParams:
    """Return parameters ordered so that ``mu1 <= mu2``.

    >>> canonicalize(2, 1, 0.3)
    ModelParams(mu1=1.0, mu2=2.0, rho=0.3, swapped=True)
    """
    mu1, mu2, rho = float(mu1), float(mu2), float(rho)
    if mu1 > mu2:
        return ModelParams(mu2, mu1, rho, swapped=True)
    return ModelParams(mu1, mu2, rho, swapped=False)


def thresholds(params: ModelParams) -> tuple[float, float]:
    """Correlation thresholds (rho_hat1, rho_hat2) separating the regimes."""
    m1, m2 = params.mu1, params.mu2
    if params.equal_drift:
        return 0.0, 1.0
    # (m1 + m2 - sqrt(D)) / (4 m1) rationalised; D = (m2 - m1)^2 + 4 m1^2
    disc = (m2 - m1) ** 2 + 4.0 * m1 * m1
    rho_hat1 = (m2 - m1) / (m1 + m2 + math.sqrt(disc))
    rho_hat2 = (m1 + m2) / (2.0 * m2)
    return rho_hat1, rho_hat2


class RegimeTag(str, enum.Enum):
    RHO_ONE = "RhoOne"
    RHO_ZERO = "RhoZero"
    RHO_MINUS_ONE = "RhoMinusOne"
    BELOW_RHO_HAT1 = "BelowRhoHat1"
    AT_RHO_HAT1 = "AtRhoHat1"
    BETWEEN = "Between"
    AT_RHO_HAT2 = "AtRhoHat2"
    ABOVE_RHO_HAT2 = "AboveRhoHat2"
    EQUAL_DRIFT_NEG = "EqualDriftNeg"
    EQUAL_DRIFT_ZERO = "EqualDriftZero"
    EQUAL_DRIFT_POS = "EqualDriftPos"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Regime:
    tag: RegimeTag
    rho_hat1: float
    rho_hat2: float


def classify(params: ModelParams, tol: float = 0.0) -> Regime:
    """Classify the correlation scenario.

    ``tol`` widens the boundary tags: |rho - rho_hat| <= tol counts as
    sitting on the threshold.  The default 0 dispatches exactly.
    """
    r1, r2 = thresholds(params)
    rho = params.rho
    if rho == 1.0:
        tag = RegimeTag.RHO_ONE
    elif rho == -1.0:
        tag = RegimeTag.RHO_MINUS_ONE
    elif params.equal_drift:
        if abs(rho) <= tol:
            tag = RegimeTag.EQUAL_DRIFT_ZERO
        elif rho < 0:
            tag = RegimeTag.EQUAL_DRIFT_NEG
        else:
            tag = RegimeTag.EQUAL_DRIFT_POS
    elif rho == 0.0:
        tag = RegimeTag.RHO_ZERO
    elif abs(rho - r1) <= tol:
        tag = RegimeTag.AT_RHO_HAT1
    elif abs(rho - r2) <= tol:
        tag = RegimeTag.AT_RHO_HAT2
    elif rho < r1:
        tag = RegimeTag.BELOW_RHO_HAT1
    elif rho < r2:
        tag = RegimeTag.BETWEEN
    else:
        tag = RegimeTag.ABOVE_RHO_HAT2
    return Regime(tag, r1, r2)


@dataclass(frozen=True)
class CovMatrix2:
    """Symmetric 2x2 matrix [[a, b], [b, c]]."""

    a: float
    b: float
    c: float

    @property
    def det(self) -> float:
        return self.a * self.c - self.b * self.b

    @property
    def singular(self) -> bool:
        return self.det <= 1e-14 * max(self.a * self.c, 1e-300)

    def as_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.b, self.c]])

    def inverse(self) -> np.ndarray:
        d = self.det
        return np.array([[self.c, -self.b], [-self.b, self.a]]) / d

    def solve(self, v) -> np.ndarray:
        v1, v2 = v
        d = self.det
        return np.array([(self.c * v1 - self.b * v2) / d, (self.a * v2 - self.b * v1) / d])


def sigma_ts(params: ModelParams, t: float, s: float) -> CovMatrix2:
    """Covariance of (X1(t), X2(s))."""
    if not (t > 0 and s > 0):
        raise NonPositiveTime(f"times must be positive, got ({t}, {s})")
    return CovMatrix2(t, params.rho * min(t, s), s)


def star_t(params: ModelParams) -> float:
    """Diagonal optimiser t* = s* of the diagonal objective g_L."""
    m1, m2, rho = params.mu1, params.mu2, params.rho
    if rho >= 1.0:
        raise DegenerateCovariance("t* is undefined at rho = 1")
    return math.sqrt(2.0 * (1.0 - rho) / (m1 * m1 + m2 * m2 - 2.0 * rho * m1 * m2))


def star_point(params: ModelParams) -> tuple[float, CovMatrix2, np.ndarray]:
    """Return (t*, Sigma_*, b_*) at the diagonal optimiser."""
    ts = star_t(params)
    sigma = CovMatrix2(ts, params.rho * ts, ts)
    b = np.array([1.0 + params.mu1 * ts, 1.0 + params.mu2 * ts])
    return ts, sigma, b
