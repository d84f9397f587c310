"""The two-layer minimisation behind the logarithmic decay rate.

For fixed times (t, s) the inner layer is the quadratic programme

    g(t, s) = min { v' Sigma_ts^{-1} v : v >= b(t, s) },  b = (1 + mu1 t, 1 + mu2 s),

and the outer layer minimises g over (0, inf)^2.  The inner programme is
solved exactly by enumerating active sets; the outer one both by the known
closed forms (dispatching on the regime) and by an independent numeric
search used as an oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import NoConvergence, NonPositiveTime, SingularCovariance, UnsupportedRegime
from .model import CovMatrix2, ModelParams, RegimeTag, classify, sigma_ts, star_t

REGION_A = "A"
REGION_B = "B"
REGION_L = "L"
REGION_CURVE_G2 = "Curve-g2"


# ---------------------------------------------------------------------------
# inner quadratic programme
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QpSolution:
    value: float
    optimizer_v: tuple[float, float]
    active_set: frozenset
    multipliers: tuple[float, float]
    degenerate: bool = False


def _qp_candidates(sigma: CovMatrix2, b, tol: float):
    """Yield (active_set, v, value, multipliers, passes) for every candidate.

    Multipliers are Sigma^{-1} v (half the KKT multipliers of v' Sigma^{-1} v).
    Candidates come largest-set first so that ties resolve toward it.
    """
    a, c, d = sigma.a, sigma.b, sigma.c
    b1, b2 = float(b[0]), float(b[1])
    scale = max(abs(b1), abs(b2), 1e-300)
    det = sigma.det

    lam = ((d * b1 - c * b2) / det, (a * b2 - c * b1) / det)
    lam_scale = scale / min(a, d)
    yield (
        frozenset({1, 2}),
        (b1, b2),
        b1 * lam[0] + b2 * lam[1],
        lam,
        lam[0] >= -tol * lam_scale and lam[1] >= -tol * lam_scale,
    )
    # only constraint 1 binding: v2 is the conditional mean given v1 = b1
    v2 = c / a * b1
    yield (
        frozenset({1}),
        (b1, v2),
        b1 * b1 / a,
        (b1 / a, 0.0),
        v2 >= b2 - tol * scale and b1 >= -tol * scale,
    )
    v1 = c / d * b2
    yield (
        frozenset({2}),
        (v1, b2),
        b2 * b2 / d,
        (0.0, b2 / d),
        v1 >= b1 - tol * scale and b2 >= -tol * scale,
    )
    yield (frozenset(), (0.0, 0.0), 0.0, (0.0, 0.0), b1 <= tol * scale and b2 <= tol * scale)


def qp_passing_sets(sigma: CovMatrix2, b, tol: float = 1e-10) -> list[frozenset]:
    """Active sets whose candidate is primal feasible and dual nonnegative."""
    return [cand[0] for cand in _qp_candidates(sigma, b, tol) if cand[4]]


def inner_qp(sigma: CovMatrix2, b, tol: float = 1e-10) -> QpSolution:
    """Minimise v' Sigma^{-1} v subject to v >= b."""
    if sigma.a <= 0 or sigma.c <= 0 or sigma.singular:
        raise SingularCovariance(f"covariance is not positive definite (det={sigma.det:g})")
    passing = [cand for cand in _qp_candidates(sigma, b, tol) if cand[4]]
    if not passing:
        # unreachable for a positive definite sigma; kept as a guard
        raise NoConvergence("no active set satisfies the KKT conditions")
    active, v, value, lam, _ = passing[0]
    return QpSolution(
        value=float(value),
        optimizer_v=(float(v[0]), float(v[1])),
        active_set=active,
        multipliers=(float(lam[0]), float(lam[1])),
        degenerate=len(passing) > 1,
    )


# ---------------------------------------------------------------------------
# the objective g(t, s)
# ---------------------------------------------------------------------------


def _g(m1: float, m2: float, rho: float, t: float, s: float) -> float:
    # scalar fast path of inner_qp(sigma_ts(t, s), b(t, s)).value for b > 0
    b1 = 1.0 + m1 * t
    b2 = 1.0 + m2 * s
    c = rho * (t if t < s else s)
    if c * b2 > b1 * s:
        return b2 * b2 / s
    if c * b1 > b2 * t:
        return b1 * b1 / t
    return (s * b1 * b1 - 2.0 * c * b1 * b2 + t * b2 * b2) / (t * s - c * c)


def g_values(params: ModelParams, t, s) -> np.ndarray:
    """Vectorised g over broadcastable arrays of positive times."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    m1, m2, rho = params.mu1, params.mu2, params.rho
    b1 = 1.0 + m1 * t
    b2 = 1.0 + m2 * s
    c = rho * np.minimum(t, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        full = (s * b1 * b1 - 2.0 * c * b1 * b2 + t * b2 * b2) / (t * s - c * c)
    only2 = c * b2 > b1 * s
    only1 = c * b1 > b2 * t
    return np.where(only2, b2 * b2 / s, np.where(only1, b1 * b1 / t, full))


def _check_times(t: float, s: float) -> None:
    if not (t > 0 and s > 0):
        raise NonPositiveTime(f"times must be positive, got ({t}, {s})")


def _require_interior(params: ModelParams) -> None:
    if abs(params.rho) >= 1.0:
        raise UnsupportedRegime("the variational problem needs |rho| < 1")


def g1(params: ModelParams, t: float) -> float:
    return (1.0 + params.mu1 * t) ** 2 / t


def g2(params: ModelParams, s: float) -> float:
    return (1.0 + params.mu2 * s) ** 2 / s


def g_L(params: ModelParams, s: float) -> float:
    m1, m2, rho = params.mu1, params.mu2, params.rho
    x, y = 1.0 + m1 * s, 1.0 + m2 * s
    return (x * x + y * y - 2.0 * rho * x * y) / ((1.0 - rho * rho) * s)


@dataclass(frozen=True)
class GPieces:
    g1: float
    g2: float
    form: str  # "A" for s <= t, "B" for s >= t
    g3: float  # quotient representation
    g3_alt: float  # conditional-variance representation
    gL: float | None = None


def g_pieces(params: ModelParams, t: float, s: float) -> GPieces:
    """Evaluate g1, g2 and both algebraic forms of the full-set value g3."""
    _check_times(t, s)
    _require_interior(params)
    m1, m2, rho = params.mu1, params.mu2, params.rho
    x, y = 1.0 + m1 * t, 1.0 + m2 * s
    if s <= t:
        form = REGION_A
        quot = (x * x * s - 2.0 * rho * s * x * y + y * y * t) / (t * s - rho * rho * s * s)
        alt = y * y / s + (x - rho * y) ** 2 / (t - rho * rho * s)
    else:
        form = REGION_B
        quot = (x * x * s - 2.0 * rho * t * x * y + y * y * t) / (t * s - rho * rho * t * t)
        alt = x * x / t + (y - rho * x) ** 2 / (s - rho * rho * t)
    return GPieces(
        g1=g1(params, t),
        g2=g2(params, s),
        form=form,
        g3=quot,
        g3_alt=alt,
        gL=g_L(params, s) if t == s else None,
    )


def g_eval(params: ModelParams, t: float, s: float) -> float:
    """Inner infimum at fixed (t, s)."""
    _require_interior(params)
    b = (1.0 + params.mu1 * t, 1.0 + params.mu2 * s)
    return inner_qp(sigma_ts(params, t, s), b).value


def qp_at(params: ModelParams, t: float, s: float) -> QpSolution:
    _require_interior(params)
    b = (1.0 + params.mu1 * t, 1.0 + params.mu2 * s)
    return inner_qp(sigma_ts(params, t, s), b)


# ---------------------------------------------------------------------------
# outer layer
# ---------------------------------------------------------------------------


@dataclass
class OuterSolution:
    minimizers: list[tuple[float, float]]
    value: float
    region: str
    regime: RegimeTag
    method: str
    # regime (vi): the minimum is attained on {s = 1/mu2, t in segment}
    segment: tuple[float, float] | None = None
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "method": self.method,
            "regime": str(self.regime),
            "region": self.region,
            "value": self.value,
            "minimizers": [list(p) for p in self.minimizers],
        }
        if self.segment is not None:
            out["segment_t"] = list(self.segment)
        if self.details:
            out["details"] = self.details
        return out


def minimizer_A(params: ModelParams) -> tuple[float, float]:
    m1, m2, rho = params.mu1, params.mu2, params.rho
    return (1.0 - 2.0 * rho) / m1, 1.0 / (m2 - 2.0 * m1 * rho)


def minimize_closed_form(params: ModelParams) -> OuterSolution:
    """Outer minimiser and minimum value from the regime-wise closed forms."""
    _require_interior(params)
    regime = classify(params)
    tag = regime.tag
    m1, m2, rho = params.mu1, params.mu2, params.rho

    def sol(points, value, region, **kw):
        return OuterSolution(points, float(value), region, tag, "closed", **kw)

    if tag in (RegimeTag.BELOW_RHO_HAT1, RegimeTag.RHO_ZERO):
        return sol([minimizer_A(params)], 4.0 * (m2 + (1.0 - 2.0 * rho) * m1), REGION_A)
    if tag == RegimeTag.EQUAL_DRIFT_NEG:
        mu = m2
        ta, sa = (1.0 - 2.0 * rho) / mu, 1.0 / ((1.0 - 2.0 * rho) * mu)
        return sol([(ta, sa), (sa, ta)], 8.0 * (1.0 - rho) * mu, REGION_A)
    if tag == RegimeTag.EQUAL_DRIFT_ZERO:
        return sol([(1.0 / m2, 1.0 / m2)], 8.0 * m2, REGION_L)
    if tag == RegimeTag.AT_RHO_HAT1:
        ts = star_t(params)
        return sol([(ts, ts)], 4.0 * (m2 + (1.0 - 2.0 * rho) * m1), REGION_L)
    if tag in (RegimeTag.BETWEEN, RegimeTag.EQUAL_DRIFT_POS):
        ts = star_t(params)
        return sol([(ts, ts)], 2.0 * (m1 + m2 + 2.0 / ts) / (1.0 + rho), REGION_L)
    if tag == RegimeTag.AT_RHO_HAT2:
        return sol([(1.0 / m2, 1.0 / m2)], 4.0 * m2, REGION_L)
    if tag == RegimeTag.ABOVE_RHO_HAT2:
        seg = (1.0 / (2.0 * rho * m2 - m1), (2.0 * rho - 1.0) / m1)
        return sol([(1.0 / m2, 1.0 / m2)], 4.0 * m2, REGION_CURVE_G2, segment=seg)
    raise UnsupportedRegime(f"no closed form for regime {tag}")


@dataclass(frozen=True)
class NumericOptions:
    grid_size: int = 400
    t_max: float | None = None
    t_min_ratio: float = 1e-4
    top_k: int = 25
    seed_separation: int = 2  # grid cells between restart seeds
    xatol: float = 1e-10
    fatol: float = 1e-13
    maxiter: int = 20000
    value_rtol: float = 1e-8
    merge_rtol: float = 1e-3


def default_t_max(params: ModelParams) -> float:
    cands = [(1.0 - 2.0 * params.rho) / params.mu1]
    if params.rho < 1.0:
        cands.append(star_t(params))
    return 20.0 * max(cands)


def _region_of(t: float, s: float, tol: float) -> str:
    if abs(t - s) <= tol * max(t, s):
        return REGION_L
    return REGION_A if s < t else REGION_B


def minimize_numeric(params: ModelParams, opts: NumericOptions = NumericOptions()) -> OuterSolution:
    """Grid-bracketed simplex search for the outer minimum.

    Uses nothing from the closed forms beyond the grid extent.  A log grid
    is scanned, Nelder-Mead (in log coordinates) is restarted from the best
    cells, and the diagonal is searched separately because g has a ridge
    there (min(t, s) is not differentiable on t = s).
    """
    _require_interior(params)
    m1, m2, rho = params.mu1, params.mu2, params.rho
    t_max = opts.t_max or default_t_max(params)
    axis = np.geomspace(t_max * opts.t_min_ratio, t_max, opts.grid_size)
    G = g_values(params, axis[:, None], axis[None, :])

    # best cells with a small exclusion zone so restarts are not redundant
    order = np.argsort(G, axis=None, kind="stable")
    seeds: list[tuple[int, int]] = []
    sep = opts.seed_separation
    for flat in order:
        i, j = divmod(int(flat), opts.grid_size)
        if all(abs(i - a) > sep or abs(j - b) > sep for a, b in seeds):
            seeds.append((i, j))
            if len(seeds) >= opts.top_k:
                break

    def f(x):
        return _g(m1, m2, rho, math.exp(x[0]), math.exp(x[1]))

    candidates: list[tuple[float, float, float]] = []
    nm_opts = {"xatol": opts.xatol, "fatol": opts.fatol, "maxiter": opts.maxiter, "maxfev": opts.maxiter}
    for i, j in seeds:
        x0 = np.log([axis[i], axis[j]])
        res = minimize(f, x0, method="Nelder-Mead", options=nm_opts)
        # restart once from the result: a collapsed simplex can stall on the ridge
        res = minimize(f, res.x, method="Nelder-Mead", options=nm_opts)
        if not res.success:
            raise NoConvergence(f"simplex refinement from cell {(i, j)} failed: {res.message}")
        t, s = np.exp(res.x)
        candidates.append((float(res.fun), float(t), float(s)))

    diag = np.diag(G)
    k = int(np.argmin(diag))
    lo, hi = math.log(axis[max(k - 2, 0)]), math.log(axis[min(k + 2, opts.grid_size - 1)])
    res = minimize_scalar(
        lambda x: _g(m1, m2, rho, math.exp(x), math.exp(x)),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": opts.xatol, "maxiter": opts.maxiter},
    )
    if not res.success:
        raise NoConvergence(f"diagonal search failed: {res.message}")
    td = math.exp(res.x)
    candidates.append((float(res.fun), td, td))

    candidates.sort()
    best = candidates[0][0]
    kept: list[tuple[float, float, float]] = []
    for val, t, s in candidates:
        if val - best > opts.value_rtol * abs(best):
            break
        if any(math.hypot(t - kt, s - ks) <= opts.merge_rtol * math.hypot(kt, ks) for _, kt, ks in kept):
            continue
        kept.append((val, t, s))

    _, t0, s0 = kept[0]
    qp = qp_at(params, t0, s0)
    if qp.active_set == frozenset({2}):
        region = REGION_CURVE_G2
    else:
        region = _region_of(t0, s0, opts.merge_rtol)
    return OuterSolution(
        minimizers=[(t, s) for _, t, s in kept],
        value=best,
        region=region,
        regime=classify(params).tag,
        method="numeric",
        details={"t_max": t_max, "restarts": len(seeds), "active_set": sorted(qp.active_set)},
    )


# ---------------------------------------------------------------------------
# local expansions at the minimiser
# ---------------------------------------------------------------------------

CASE_INTERIOR = "interior-A"
CASE_WEDGE = "wedge"
CASE_AT_RHO_HAT1 = "at-rho-hat1"

_CASE_BY_TAG = {
    RegimeTag.BELOW_RHO_HAT1: CASE_INTERIOR,
    RegimeTag.RHO_ZERO: CASE_INTERIOR,
    RegimeTag.EQUAL_DRIFT_NEG: CASE_INTERIOR,
    RegimeTag.EQUAL_DRIFT_ZERO: CASE_INTERIOR,
    RegimeTag.AT_RHO_HAT1: CASE_AT_RHO_HAT1,
    RegimeTag.BETWEEN: CASE_WEDGE,
    RegimeTag.EQUAL_DRIFT_POS: CASE_WEDGE,
}


@dataclass(frozen=True)
class TaylorCoeffs:
    case: str
    point: tuple[float, float]
    coeffs: dict

    def positivity_violations(self) -> list[str]:
        """Coefficients claimed positive that are not."""
        claimed = ("h_rho", "a1", "a3", "b1", "b2", "c1", "c2", "b0")
        return [k for k in claimed if k in self.coeffs and not self.coeffs[k] > 0]


def _a_coeffs(m1: float, m2: float, rho: float) -> dict:
    h = m2 - 2.0 * (m1 + m2) * rho + 3.0 * m1 * rho * rho
    k = m2 - 2.0 * m1 * rho
    return {
        "h_rho": h,
        "a1": 2.0 * m1**3 * k / h,
        "a2": -2.0 * rho * m1 * m1 * k * k / h,
        "a3": 2.0 * k**4 * (1.0 - 2.0 * rho) / h,
    }


def _wedge_coeffs(m1: float, m2: float, rho: float, ts: float) -> dict:
    num = rho - 1.0 - 2.0 * rho * rho
    den = (1.0 - rho) * (1.0 + rho) ** 2 * ts * ts
    cube = (1.0 - rho * rho) ** 3
    return {
        "b1": (num + 2.0 * rho * (m2 - m1 * rho) * ts + (1.0 + rho) * m1 * m1 * ts * ts) / den,
        "b2": (num + 2.0 * rho * (m1 - m2 * rho) * ts + (1.0 + rho) * m2 * m2 * ts * ts) / den,
        "c1": 2.0 / ts**3 * (1.0 + rho * rho * (rho * (1.0 - rho) - (m2 - m1 * rho) * ts) ** 2 / cube),
        "c2": 2.0 / ts**3 * (1.0 + rho * rho * (rho * (1.0 - rho) - (m1 - m2 * rho) * ts) ** 2 / cube),
        "b0": 4.0 / ((1.0 + rho) * ts**3),
    }


def taylor_coefficients(params: ModelParams) -> TaylorCoeffs:
    """Local expansion coefficients of g at its minimiser.

    interior-A: g = g0 + a1/2 t^2 - a2 t s + a3/2 s^2 around (t_A, s_A).
    wedge: g = g0 + b1 (t - s) + c1/2 s^2 for s < t, g0 + b2 (s - t) + c2/2 t^2
    for s > t and g0 + b0/2 t^2 on the diagonal, around (t*, t*).
    at-rho-hat1: the interior-A form on the s < t side and the wedge forms
    on the diagonal and the s > t side.
    """
    _require_interior(params)
    tag = classify(params).tag
    case = _CASE_BY_TAG.get(tag)
    if case is None:
        raise UnsupportedRegime(f"no local expansion for regime {tag}")
    m1, m2, rho = params.mu1, params.mu2, params.rho
    if case == CASE_INTERIOR:
        return TaylorCoeffs(case, minimizer_A(params), _a_coeffs(m1, m2, rho))
    ts = star_t(params)
    wedge = _wedge_coeffs(m1, m2, rho, ts)
    if case == CASE_WEDGE:
        return TaylorCoeffs(case, (ts, ts), wedge)
    coeffs = _a_coeffs(m1, m2, rho)
    coeffs.update({k: wedge[k] for k in ("b2", "c2", "b0")})
    return TaylorCoeffs(case, (ts, ts), coeffs)


def taylor_fd(params: ModelParams, h: float = 1e-4, richardson: bool = False) -> dict:
    """Finite-difference counterparts of :func:`taylor_coefficients`.

    ``h`` is relative: the step along each axis is h times that coordinate
    of the minimiser, which matters when t and s differ by orders of
    magnitude.  Interior points use central stencils.  On the diagonal g only
    has one-sided derivatives, so every stencil stays inside the closed wedge
    whose coefficient it estimates (second order in h throughout).
    """
    if richardson:
        coarse = taylor_fd(params, h, False)
        fine = taylor_fd(params, h / 2.0, False)
        return {k: (4.0 * fine[k] - coarse[k]) / 3.0 for k in coarse}

    tc = taylor_coefficients(params)
    m1, m2, rho = params.mu1, params.mu2, params.rho
    t0, s0 = tc.point

    if tc.case == CASE_INTERIOR:
        ht, hs = h * t0, h * s0

        def gi(i, j):
            return _g(m1, m2, rho, t0 + i * ht, s0 + j * hs)

        f0 = gi(0, 0)
        return {
            "a1": (gi(1, 0) - 2 * f0 + gi(-1, 0)) / ht**2,
            "a3": (gi(0, 1) - 2 * f0 + gi(0, -1)) / hs**2,
            "a2": -(gi(1, 1) - gi(1, -1) - gi(-1, 1) + gi(-1, -1)) / (4 * ht * hs),
        }

    # on the diagonal t0 = s0, so one absolute step serves both axes
    h = h * t0

    def g(dt, ds):
        return _g(m1, m2, rho, t0 + dt, s0 + ds)

    f0 = g(0.0, 0.0)
    out: dict = {}

    # forward first derivative, one-sided second derivative (both O(h^2))
    def d1(fk):
        return (-3 * fk[0] + 4 * fk[1] - fk[2]) / (2 * h)

    def d2(fk):
        return (2 * fk[0] - 5 * fk[1] + 4 * fk[2] - fk[3]) / h**2

    out["b2"] = d1([g(0, k * h) for k in range(3)])
    out["c2"] = d2([g(-k * h, 0) for k in range(4)])
    out["b0"] = (g(h, h) - 2 * f0 + g(-h, -h)) / h**2
    if tc.case == CASE_WEDGE:
        out["b1"] = d1([g(k * h, 0) for k in range(3)])
        out["c1"] = d2([g(0, -k * h) for k in range(4)])
        return out

    # at rho_hat1 the a-coefficients are one-sided second derivatives of g_A
    out["a1"] = d2([g(k * h, 0) for k in range(4)])
    out["a3"] = d2([g(0, -k * h) for k in range(4)])

    def ds_backward(dt):
        return (3 * g(dt, 0) - 4 * g(dt, -h) + g(dt, -2 * h)) / (2 * h)

    out["a2"] = -d1([ds_backward(k * h) for k in range(3)])
    return out


def taylor_residuals(tc: TaylorCoeffs, fd: dict) -> dict:
    """Relative gaps between finite differences and closed-form coefficients.

    a2 vanishes at rho = 0, so it is measured against the size of the
    Hessian (max of |a1|, |a2|, |a3|) rather than against itself.
    """
    out = {}
    for k, v in fd.items():
        ref = tc.coeffs[k]
        denom = abs(ref)
        if k == "a2":
            denom = max(abs(tc.coeffs["a1"]), abs(ref), abs(tc.coeffs["a3"]))
        out[k] = abs(v - ref) / max(denom, 1e-300)
    return out
