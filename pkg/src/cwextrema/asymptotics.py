"""Exact asymptotics P(u) ~ C u^p exp(-r u) for every correlation regime."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import InvalidConfig, MissingConstant, UnsupportedRegime
from .model import ModelParams, RegimeTag, classify, star_point, star_t
from .variational import minimize_closed_form


class Exactness(str, enum.Enum):
    EXACT = "exact-for-all-u"
    ASYMPTOTIC = "asymptotic-equivalence"
    BOUNDS = "two-sided-bounds"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class AsymptoticFormula:
    """P(u) ~ C u^power exp(-rate u).

    Exactly one constant representation is populated:
      ``constant``            a known positive number,
      ``constant_interval``   two-sided bounds on C itself,
      ``htilde_factor``       C = htilde_factor * H~, with H~ bounded by
                              ``htilde_interval`` or estimated (``htilde``).
    """

    rate: float
    power: float
    exactness: Exactness
    regime: RegimeTag
    constant: float | None = None
    constant_interval: tuple[float, float] | None = None
    htilde_factor: float | None = None
    htilde_interval: tuple[float, float] | None = None
    htilde: float | None = None

    @property
    def symbolic(self) -> bool:
        return self.htilde_factor is not None and self.htilde is None

    def constant_value(self) -> float:
        if self.constant is not None:
            return self.constant
        if self.htilde_factor is not None and self.htilde is not None:
            return self.htilde_factor * self.htilde
        raise MissingConstant(f"no point value for the constant in regime {self.regime}")

    def constant_bounds(self) -> tuple[float, float]:
        if self.constant_interval is not None:
            return self.constant_interval
        if self.htilde_factor is not None and self.htilde is None:
            lo, hi = self.htilde_interval
            return self.htilde_factor * lo, self.htilde_factor * hi
        c = self.constant_value()
        return c, c

    def as_dict(self) -> dict:
        out = {
            "rate": self.rate,
            "power": self.power,
            "exactness": str(self.exactness),
            "exact": self.exactness == Exactness.EXACT,
            "regime": str(self.regime),
        }
        if self.constant is not None:
            out["constant"] = self.constant
        if self.constant_interval is not None:
            out["constant_interval"] = list(self.constant_interval)
        if self.htilde_factor is not None:
            out["htilde_factor"] = self.htilde_factor
            out["htilde_interval"] = list(self.htilde_interval)
            out["constant_interval"] = list(self.constant_bounds())
            if self.htilde is not None:
                out["htilde"] = self.htilde
                out["constant"] = self.constant_value()
        return out


def star_weights(params: ModelParams):
    """Return (t*, c) with c = Sigma_*^{-1} b_*, the exponential weight of the band constant."""
    ts, sigma, b = star_point(params)
    return ts, sigma.solve(b)


def htilde_bounds(params: ModelParams) -> tuple[float, float]:
    """Known bounds (lower, +inf) on the constant H~."""
    tag = classify(params).tag
    if tag == RegimeTag.EQUAL_DRIFT_POS:
        return (1.0 + params.rho) / 16.0, math.inf
    if tag != RegimeTag.BETWEEN:
        raise UnsupportedRegime(f"H~ only appears in the Between and EqualDriftPos regimes, not {tag}")
    ts, c = star_weights(params)
    lower = ts * float(params.mu @ c) / (16.0 * float(c[0]) * float(c[1]))
    return lower, math.inf


def asymptotic_formula(params: ModelParams, htilde_estimate: float | None = None) -> AsymptoticFormula:
    tag = classify(params).tag
    m1, m2, rho = params.mu1, params.mu2, params.rho

    def make(rate, exactness=Exactness.ASYMPTOTIC, power=0.0, **kw):
        return AsymptoticFormula(rate=float(rate), power=power, exactness=exactness, regime=tag, **kw)

    if tag == RegimeTag.RHO_ONE:
        return make(2.0 * m2, Exactness.EXACT, constant=1.0)
    if tag in (RegimeTag.RHO_ZERO, RegimeTag.EQUAL_DRIFT_ZERO):
        return make(2.0 * (m1 + m2), Exactness.EXACT, constant=1.0)
    if tag == RegimeTag.RHO_MINUS_ONE:
        return make(2.0 * m2 + 6.0 * m1, constant=2.0 if params.equal_drift else 1.0)
    if tag == RegimeTag.BELOW_RHO_HAT1:
        return make(2.0 * (m2 + (1.0 - 2.0 * rho) * m1), constant=1.0)
    if tag == RegimeTag.AT_RHO_HAT1:
        return make(2.0 * (m2 + (1.0 - 2.0 * rho) * m1), constant=0.5)
    if tag == RegimeTag.AT_RHO_HAT2:
        return make(2.0 * m2, Exactness.BOUNDS, constant_interval=(0.5, 1.0))
    if tag == RegimeTag.ABOVE_RHO_HAT2:
        return make(2.0 * m2, constant=1.0)
    if tag == RegimeTag.EQUAL_DRIFT_NEG:
        return make(4.0 * (1.0 - rho) * m2, constant=2.0)
    if tag in (RegimeTag.BETWEEN, RegimeTag.EQUAL_DRIFT_POS):
        ts = star_t(params)
        if tag == RegimeTag.BETWEEN:
            rate = (m1 + m2 + 2.0 / ts) / (1.0 + rho)
            factor = math.sqrt(ts) / (2.0 * math.sqrt(math.pi * (1.0 - rho)))
        else:
            rate = 4.0 * m2 / (1.0 + rho)
            factor = 1.0 / (2.0 * math.sqrt(math.pi * m2 * (1.0 - rho)))
        return make(
            rate,
            power=-0.5,
            htilde_factor=factor,
            htilde_interval=htilde_bounds(params),
            htilde=htilde_estimate,
        )
    raise UnsupportedRegime(f"unhandled regime {tag}")  # pragma: no cover


def approx_p(formula: AsymptoticFormula, u: float, point: bool = False):
    """Evaluate C u^p exp(-r u).

    Returns a float when the constant is known and a (lo, hi) pair when only
    bounds are available.  With ``point=True`` a bounds-only H~ constant
    raises MissingConstant instead.
    """
    if not u > 0:
        raise InvalidConfig(f"u must be positive, got {u}")
    scale = u**formula.power * math.exp(-formula.rate * u)
    if formula.symbolic and point:
        raise MissingConstant("the constant involves H~; supply an estimate for a point value")
    if formula.constant is not None or (formula.htilde_factor is not None and formula.htilde is not None):
        return formula.constant_value() * scale
    lo, hi = formula.constant_bounds()
    return lo * scale, hi * scale


def log_rate(params: ModelParams) -> float:
    """Logarithmic decay rate -lim ln P(u) / u = g(t0) / 2."""
    return minimize_closed_form(params).value / 2.0
