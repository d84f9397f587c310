"""Pickands-type constants.

``h_mu_T`` is the one-dimensional constant H(mu; T), computed by quadrature
against the closed-form crossing probability of drifted Brownian motion.
``estimate_h_band`` and ``estimate_htilde`` estimate the two-dimensional
band constant H(T, S) and its linear growth rate H~ by Monte Carlo.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.ndimage import maximum_filter1d
from scipy.special import log_ndtr, ndtr

from .asymptotics import htilde_bounds, star_weights
from .errors import DegenerateWeights, InvalidConfig, NonPositiveDrift, NonPositiveTime, QuadratureFailure, UnsupportedRegime
from .model import ModelParams, RegimeTag, classify
from .parallel import DEFAULT_CHUNK, McEstimate, run_chunks

BAND_METHODS = ("mixture", "crude")


def crossing_prob(mu: float, T: float, x):
    """P(sup_{0<=t<=T} B(t) - mu t > x) by the reflection principle."""
    if not mu > 0:
        raise NonPositiveDrift(f"mu must be positive, got {mu}")
    if not T > 0:
        raise NonPositiveTime(f"T must be positive, got {T}")
    x = np.asarray(x, dtype=float)
    xp = np.maximum(x, 0.0)
    rt = math.sqrt(T)
    val = ndtr(-(xp + mu * T) / rt) + np.exp(-2.0 * mu * xp + log_ndtr(-(xp - mu * T) / rt))
    val = np.where(x < 0, 1.0, np.minimum(val, 1.0))
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class QuadOptions:
    epsabs: float = 1e-9
    epsrel: float = 1e-10
    limit: int = 500


def h_mu_T(mu: float, T: float, quad_opts: QuadOptions = QuadOptions()) -> float:
    """H(mu; T) = int_R exp(2 mu x) P(sup_{[0,T]} B(t) - mu t > x) dx."""
    if not mu > 0:
        raise NonPositiveDrift(f"mu must be positive, got {mu}")
    if not T > 0:
        raise NonPositiveTime(f"T must be positive, got {T}")
    rt = math.sqrt(T)

    def integrand(x):
        # e^{2 mu x} * crossing_prob, expanded so no term overflows
        return math.exp(2.0 * mu * x + log_ndtr(-(x + mu * T) / rt)) + ndtr(-(x - mu * T) / rt)

    # breakpoints at the bulk of the crossing law keep quad from missing it
    edges = [0.0, mu * T, mu * T + 40.0 * rt, math.inf]
    total = 1.0 / (2.0 * mu)
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        val, err, info = integrate.quad(
            integrand, a, b, epsabs=quad_opts.epsabs, epsrel=quad_opts.epsrel, limit=quad_opts.limit, full_output=1
        )[:3]
        if err > max(quad_opts.epsabs, quad_opts.epsrel * abs(val)) * 10.0 or not np.isfinite(val):
            raise QuadratureFailure(f"quadrature on [{a}, {b}] reached error {err:g}")
        total += val
    return total


# ---------------------------------------------------------------------------
# band constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandRegion:
    T: float
    S: float
    grid_step: float

    def __post_init__(self):
        if not (self.T > 0 and self.S > 0 and self.grid_step > 0):
            raise InvalidConfig("band sizes and grid step must be positive")

    @property
    def n_T(self) -> int:
        return int(round(self.T / self.grid_step))

    @property
    def n_S(self) -> int:
        return int(round(self.S / self.grid_step))


def staircase_measure(y1, y2, c) -> float:
    """Measure of the union of quadrants (-inf, y1_k) x (-inf, y2_k) under e^{c.x} dx."""
    c1, c2 = float(c[0]), float(c[1])
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    order = np.argsort(-y1, kind="stable")
    y1s = y1[order]
    m = np.maximum.accumulate(y2[order])
    nxt = np.append(y1s[1:], -np.inf)
    terms = np.exp(c2 * m + c1 * y1s) * -np.expm1(c1 * (nxt - y1s))
    return float(terms.sum() / (c1 * c2))


def _staircase_rows(y1: np.ndarray, w: np.ndarray, c1: float, c2: float, shift: np.ndarray) -> np.ndarray:
    # row-wise staircase_measure times exp(-shift)
    order = np.argsort(-y1, axis=1, kind="stable")
    y1s = np.take_along_axis(y1, order, axis=1)
    m = np.maximum.accumulate(np.take_along_axis(w, order, axis=1), axis=1)
    gap = np.empty_like(y1s)
    gap[:, :-1] = y1s[:, 1:] - y1s[:, :-1]
    gap[:, -1] = -np.inf
    terms = np.exp(c2 * m + c1 * y1s - shift[:, None]) * -np.expm1(c1 * gap)
    return terms.sum(axis=1) / (c1 * c2)


def band_window_max(y2: np.ndarray, n_T: int, n_S: int) -> np.ndarray:
    """For each t-index k, the max of y2 over the s-indices (k, s) in the band.

    Works on the last axis; y2 must cover indices 0 .. n_T + n_S.
    """
    head = maximum_filter1d(y2[..., : n_T + n_S + 1], size=2 * n_S + 1, axis=-1, mode="nearest")[..., : n_T + 1]
    # beyond T only s in [t - S, T] is in the band
    rev = np.flip(np.maximum.accumulate(np.flip(y2[..., : n_T + 1], axis=-1), axis=-1), axis=-1)
    tail = rev[..., np.maximum(np.arange(n_T + 1, n_T + n_S + 1) - n_S, 0)]
    return np.concatenate([head, tail], axis=-1)


def _check_band_params(params: ModelParams) -> np.ndarray:
    tag = classify(params).tag
    if tag not in (RegimeTag.BETWEEN, RegimeTag.EQUAL_DRIFT_POS):
        raise UnsupportedRegime(f"the band constant is defined for Between and EqualDriftPos, not {tag}")
    ts, c = star_weights(params)
    if not (c[0] > 0 and c[1] > 0):
        raise DegenerateWeights(f"weights {c} are not positive")
    return ts, c


def band_samples(
    params: ModelParams,
    T_list,
    S: float,
    grid_step: float,
    n: int,
    seed: int,
    workers: int = 1,
    method: str = "mixture",
    chunk: int = 256,
) -> np.ndarray:
    """Per-sample unbiased draws of H(T, S), one column per T (common paths).

    ``crude`` averages the staircase measure over plain paths.  Its variance
    grows like exp(const * T) because the weight exp(c.Y) on the diagonal is a
    mean-one martingale, so ``mixture`` (the default) samples instead from an
    equal mixture over diagonal grid times tau of the measures exp(c.Y(tau, tau)) dP
    and returns the staircase divided by the mixture density.
    """
    if method not in BAND_METHODS:
        raise InvalidConfig(f"unknown band method {method!r}")
    T_list = sorted(float(T) for T in T_list)
    ts, c = _check_band_params(params)
    if grid_step > 0.01 * ts:
        raise InvalidConfig(f"grid_step {grid_step} does not resolve t* = {ts:g} (need <= {0.01 * ts:g})")
    bands = [BandRegion(T, S, grid_step) for T in T_list]
    n_S = bands[0].n_S
    n_top = bands[-1].n_T
    n_steps = n_top + n_S
    h = grid_step
    rho = params.rho
    c1, c2 = float(c[0]), float(c[1])
    mu1, mu2 = params.mu1, params.mu2
    # Girsanov drift that turns exp(c.X - 1/2 c'Sigma c t) into the density
    theta = np.array([c1 + rho * c2, rho * c1 + c2])
    tgrid = h * np.arange(n_steps + 1)
    sq = math.sqrt(1.0 - rho * rho)

    def work(rng: np.random.Generator, k: int) -> np.ndarray:
        z1 = rng.standard_normal((k, n_steps))
        z2 = rng.standard_normal((k, n_steps))
        dx1 = math.sqrt(h) * z1
        dx2 = math.sqrt(h) * (rho * z1 + sq * z2)
        if method == "mixture":
            tau = rng.integers(0, n_top + 1, size=k)
            on = np.arange(n_steps)[None, :] < tau[:, None]
            dx1 += theta[0] * h * on
            dx2 += theta[1] * h * on
        y1 = np.zeros((k, n_steps + 1))
        y2 = np.zeros((k, n_steps + 1))
        np.cumsum(dx1, axis=1, out=y1[:, 1:])
        np.cumsum(dx2, axis=1, out=y2[:, 1:])
        y1 -= mu1 * tgrid
        y2 -= mu2 * tgrid
        if method == "mixture":
            diag = c1 * y1[:, : n_top + 1] + c2 * y2[:, : n_top + 1]
            shift = diag.max(axis=1)
            log_density = shift + np.log(np.exp(diag - shift[:, None]).mean(axis=1))
        else:
            shift = np.zeros(k)
        out = np.empty((k, len(bands)))
        for j, band in enumerate(bands):
            m = band.n_T + n_S + 1
            w = band_window_max(y2[:, :m], band.n_T, n_S)
            out[:, j] = _staircase_rows(y1[:, :m], w, c1, c2, shift)
        if method == "mixture":
            out *= np.exp(shift - log_density)[:, None]
        return out

    return run_chunks(work, n, seed, workers, chunk)


def estimate_h_band(
    params: ModelParams,
    band: BandRegion,
    n: int,
    seed: int,
    workers: int = 1,
    method: str = "mixture",
) -> McEstimate:
    x = band_samples(params, [band.T], band.S, band.grid_step, n, seed, workers, method)[:, 0]
    return McEstimate.from_samples(x, f"band-{method}", seed, T=band.T, S=band.S, grid_step=band.grid_step)


def estimate_htilde(
    params: ModelParams,
    T_list,
    S: float,
    n: int,
    seed: int,
    grid_step: float = 0.005,
    workers: int = 1,
    method: str = "mixture",
) -> McEstimate:
    """Secant slope of H(T, S) between the last two T, on common paths.

    ``extra`` carries the per-T estimates, H(T, S)/T and subadditivity
    excesses H(T1 + T2) - H(T1) - H(T2) for every pair with T1 + T2 in T_list.
    """
    T_list = [float(T) for T in T_list]
    if len(T_list) < 2 or any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise InvalidConfig("T_list must hold at least two increasing values")
    x = band_samples(params, T_list, S, grid_step, n, seed, workers, method)
    sqn = math.sqrt(n)

    def est(col):
        return float(col.mean()), float(col.std(ddof=1) / sqn)

    per_T = []
    for j, T in enumerate(T_list):
        m, se = est(x[:, j])
        per_T.append({"T": T, "mean": m, "stderr": se, "ratio": m / T, "ratio_stderr": se / T})
    slope = (x[:, -1] - x[:, -2]) / (T_list[-1] - T_list[-2])

    index = {T: j for j, T in enumerate(T_list)}
    subadd = []
    for i, T1 in enumerate(T_list):
        for T2 in T_list[i:]:
            j = index.get(T1 + T2)
            if j is None:
                continue
            m, se = est(x[:, j] - x[:, index[T1]] - x[:, index[T2]])
            subadd.append({"T1": T1, "T2": T2, "excess": m, "stderr": se})
    lower = htilde_bounds(params)[0]
    return McEstimate.from_samples(
        slope,
        f"band-{method}-secant",
        seed,
        S=S,
        grid_step=grid_step,
        T_list=T_list,
        per_T=per_T,
        subadditivity=subadd,
        lower_bound=lower,
    )


__all__ = [
    "BandRegion",
    "QuadOptions",
    "McEstimate",
    "crossing_prob",
    "h_mu_T",
    "staircase_measure",
    "band_window_max",
    "band_samples",
    "estimate_h_band",
    "estimate_htilde",
    "DEFAULT_CHUNK",
]
