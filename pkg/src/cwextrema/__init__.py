"""Exact tail asymptotics of component-wise extrema of correlated drifted
Brownian motion: the two-layer variational problem, regime-wise asymptotic
formulas, Pickands-type constants and Monte Carlo validation."""

__version__ = "0.1.0"

from .asymptotics import AsymptoticFormula, Exactness, approx_p, asymptotic_formula, htilde_bounds, log_rate
from .errors import CwExtremaError
from .model import CovMatrix2, ModelParams, Regime, RegimeTag, canonicalize, classify, sigma_ts, star_point, thresholds
from .parallel import McEstimate
from .variational import (
    NumericOptions,
    OuterSolution,
    QpSolution,
    TaylorCoeffs,
    g_eval,
    g_pieces,
    inner_qp,
    minimize_closed_form,
    minimize_numeric,
    taylor_coefficients,
    taylor_fd,
)

__all__ = [
    "AsymptoticFormula",
    "CovMatrix2",
    "CwExtremaError",
    "Exactness",
    "McEstimate",
    "ModelParams",
    "NumericOptions",
    "OuterSolution",
    "QpSolution",
    "Regime",
    "RegimeTag",
    "TaylorCoeffs",
    "approx_p",
    "asymptotic_formula",
    "canonicalize",
    "classify",
    "g_eval",
    "g_pieces",
    "htilde_bounds",
    "inner_qp",
    "log_rate",
    "minimize_closed_form",
    "minimize_numeric",
    "sigma_ts",
    "star_point",
    "taylor_coefficients",
    "taylor_fd",
    "thresholds",
]
