"""Monte Carlo for P(u) = P(Q1 > u, Q2 > u).

Crude estimates average the conditional joint crossing probability given the
simulated grid (the exact Brownian-bridge crossing probability per step),
completed past the horizon with the exact one-dimensional ruin probability.
Tilted estimates follow the large-deviation path: phase 0 uses the Girsanov
kernel given by the inner-QP multipliers at the outer minimiser, and once a
component has crossed the remaining one is tilted to drift +mu (the
one-dimensional optimal change of measure).  Paths stop when both have
crossed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri, owens_t

from .asymptotics import asymptotic_formula
from .errors import InsufficientSignal, InvalidConfig, UnsupportedRegime
from .model import ModelParams, RegimeTag, classify
from .parallel import McEstimate, default_seed, run_chunks
from .variational import minimize_closed_form, minimizer_A, qp_at

_P_EPS = 1e-14


@dataclass(frozen=True)
class PathConfig:
    # None: dt = dt_rel * u * (smallest optimal crossing time), i.e. fixed resolution in scaled time
    dt: float | None = 1e-3
    horizon_mult: float = 8.0
    bridge_correction: bool = True
    seed: int = field(default_factory=default_seed)
    workers: int = 1
    chunk: int = 1024
    tilted_chunk: int = 16384
    # horizon doublings allowed to push the truncation bound below 0.1 stderr
    max_doublings: int = 3
    dt_rel: float = 0.005

    def __post_init__(self):
        if self.dt is None:
            if not 0 < self.dt_rel < 0.01:
                raise InvalidConfig(f"dt_rel must lie in (0, 0.01), got {self.dt_rel}")
        elif not self.dt > 0:
            raise InvalidConfig(f"dt must be positive, got {self.dt}")
        if not self.horizon_mult > 0:
            raise InvalidConfig(f"horizon_mult must be positive, got {self.horizon_mult}")
        if self.workers < 1 or self.chunk < 1 or self.tilted_chunk < 1:
            raise InvalidConfig("workers and chunk must be at least 1")


def optimal_times(params: ModelParams) -> tuple[float, float]:
    """Scaled crossing times (t0, s0) of the dominant path; the largest point
    of the attainment segment is used in the AboveRhoHat2 regime."""
    if params.rho >= 1.0:
        return 1.0 / params.mu2, 1.0 / params.mu2
    if params.rho <= -1.0:
        return minimizer_A(params)
    sol = minimize_closed_form(params)
    t0, s0 = sol.minimizers[0]
    if sol.segment is not None:
        t0 = max(t0, sol.segment[1])
    return t0, s0


def step_size(params: ModelParams, config: PathConfig, u: float) -> float:
    if config.dt is not None:
        return float(config.dt)
    return config.dt_rel * u * min(optimal_times(params))


def _resolution(params: ModelParams, u: float, dt: float) -> dict:
    t0, s0 = optimal_times(params)
    limit = 0.01 * u * min(t0, s0)
    return {"dt": dt, "dt_limit": limit, "resolution_ok": bool(dt < limit)}


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass
class PathBatch:
    times: np.ndarray
    x1: np.ndarray
    x2: np.ndarray

    def y(self, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
        return self.x1 - params.mu1 * self.times, self.x2 - params.mu2 * self.times


def _increments(rng: np.random.Generator, shape, dt: float, rho: float):
    sd = math.sqrt(dt)
    z1 = rng.standard_normal(shape)
    if rho == 1.0:
        return sd * z1, sd * z1
    if rho == -1.0:
        return sd * z1, -sd * z1
    z2 = rng.standard_normal(shape)
    return sd * z1, sd * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)


def _cumulate(d: np.ndarray) -> np.ndarray:
    out = np.zeros((d.shape[0], d.shape[1] + 1))
    np.cumsum(d, axis=1, out=out[:, 1:])
    return out


def sample_paths(params: ModelParams, config: PathConfig, n: int, horizon: float | None = None) -> PathBatch:
    """Driftless correlated Brownian pairs on a uniform grid."""
    if horizon is None:
        horizon = config.horizon_mult * max(optimal_times(params))
    dt = step_size(params, config, 1.0)
    steps = max(int(math.ceil(horizon / dt)), 1)

    def work(rng, k):
        d1, d2 = _increments(rng, (k, steps), dt, params.rho)
        return np.stack([_cumulate(d1), _cumulate(d2)], axis=1)

    xs = run_chunks(work, n, config.seed, config.workers, config.chunk)
    return PathBatch(dt * np.arange(steps + 1), xs[:, 0], xs[:, 1])


# ---------------------------------------------------------------------------
# crossing probabilities on a grid
# ---------------------------------------------------------------------------


def bvn_cdf(h, k, rho: float):
    """P(Z1 <= h, Z2 <= k) for standard normals with correlation rho, |rho| < 1."""
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    h = np.where(h == 0.0, 1e-300, h)
    k = np.where(k == 0.0, 1e-300, k)
    sq = math.sqrt(1.0 - rho * rho)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ah = (k - rho * h) / (h * sq)
        ak = (h - rho * k) / (k * sq)
    # sign test rather than h * k > 0, which underflows for the substituted zeros
    beta = np.where(np.sign(h) == np.sign(k), 0.0, 0.5)
    return 0.5 * ndtr(h) + 0.5 * ndtr(k) - owens_t(h, ah) - owens_t(k, ak) - beta


def joint_step_prob(p1, p2, rho: float):
    """P(U1 < p1, U2 < p2) with the uniforms coupled by a Gaussian copula."""
    shape = np.broadcast(np.asarray(p1), np.asarray(p2)).shape
    p1, p2 = (np.broadcast_to(np.asarray(p, dtype=float), shape).reshape(-1) for p in (p1, p2))
    return _joint_step_prob(p1, p2, rho).reshape(shape)


def _joint_step_prob(p1: np.ndarray, p2: np.ndarray, rho: float) -> np.ndarray:
    if rho == 0.0:
        return p1 * p2
    if rho == 1.0:
        return np.minimum(p1, p2)
    if rho == -1.0:
        return np.maximum(p1 + p2 - 1.0, 0.0)
    q = p1 * p2
    mid = (p1 > _P_EPS) & (p2 > _P_EPS) & (p1 < 1.0) & (p2 < 1.0)
    if mid.any():
        q[mid] = bvn_cdf(ndtri(p1[mid]), ndtri(p2[mid]), rho)
    q = np.where(p1 >= 1.0, p2, q)
    q = np.where(p2 >= 1.0, p1, q)
    return np.clip(q, np.maximum(p1 + p2 - 1.0, 0.0), np.minimum(p1, p2))


def step_cross_prob(a: np.ndarray, b: np.ndarray, u: float, dt: float, bridge: bool) -> np.ndarray:
    """Probability that a Brownian path through a and b, dt apart, exceeds u in between."""
    da = u - a
    db = u - b
    hit = (da <= 0) | (db <= 0)
    if not bridge:
        return hit.astype(float)
    with np.errstate(over="ignore"):
        p = np.exp(-2.0 * np.maximum(da * db, 0.0) / dt)
    return np.where(hit, 1.0, p)


def _log_survival(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log1p(-np.minimum(p, 1.0)).sum(axis=1)


def _crude_chunk(params: ModelParams, u_list, dt: float, steps: int, bridge: bool):
    rho = params.rho
    mus = (params.mu1, params.mu2)
    tgrid = dt * np.arange(steps + 1)
    exact_tail = rho in (0.0, 1.0)

    def work(rng, k):
        d1, d2 = _increments(rng, (k, steps), dt, rho)
        ys = (_cumulate(d1) - mus[0] * tgrid, _cumulate(d2) - mus[1] * tgrid)
        # columns per u: joint, marginal 1, marginal 2, truncation bound
        out = np.empty((k, len(u_list), 4))
        for i, u in enumerate(u_list):
            ps = [step_cross_prob(y[:, :-1], y[:, 1:], u, dt, bridge) for y in ys]
            s1, s2 = (np.exp(_log_survival(p)) for p in ps)
            q = joint_step_prob(ps[0], ps[1], rho)
            with np.errstate(divide="ignore"):
                nn = np.exp(np.log(np.clip(1.0 - ps[0] - ps[1] + q, 0.0, 1.0)).sum(axis=1))
            # exact ruin probability after the horizon, per component
            tau1, tau2 = (np.exp(-2.0 * m * np.maximum(u - y[:, -1], 0.0)) for m, y in zip(mus, ys))
            if rho == 0.0:
                tau12 = tau1 * tau2
            elif rho == 1.0:
                tau12 = np.minimum(tau1, tau2)
            else:
                tau12 = np.zeros(k)
            out[:, i, 0] = (1.0 - s1 - s2 + nn) + (s2 - nn) * tau2 + (s1 - nn) * tau1 + nn * tau12
            out[:, i, 1] = 1.0 - s1 + s1 * tau1
            out[:, i, 2] = 1.0 - s2 + s2 * tau2
            out[:, i, 3] = 0.0 if exact_tail else nn * np.minimum(tau1, tau2)
        return out

    return work


def crude_samples(params: ModelParams, u_list, config: PathConfig, n: int, horizon: float) -> np.ndarray:
    """Per-path conditional probabilities, shape (n, len(u_list), 4)."""
    dt = step_size(params, config, min(u_list))
    steps = max(int(math.ceil(horizon / dt)), 1)
    work = _crude_chunk(params, [float(u) for u in u_list], dt, steps, config.bridge_correction)
    return run_chunks(work, n, config.seed, config.workers, config.chunk)


def _trivial(n: int, method: str, seed: int, **extra) -> McEstimate:
    return McEstimate(1.0, 0.0, n, method, seed, dict(extra))


def _crude_estimates(params: ModelParams, u_list, config: PathConfig, n: int) -> list[dict]:
    """Crude estimates for several u on common paths, with adaptive horizon."""
    u_list = [float(u) for u in u_list]
    t0, s0 = optimal_times(params)
    horizon = config.horizon_mult * max(u_list) * max(t0, s0)
    for doubling in range(config.max_doublings + 1):
        x = crude_samples(params, u_list, config, n, horizon)
        mean = x.mean(axis=0)
        se = x.std(axis=0, ddof=1) / math.sqrt(n)
        bound = mean[:, 3]
        if np.all(bound <= 0.1 * se[:, 0]) or doubling == config.max_doublings:
            break
        horizon *= 2.0
    out = []
    for i, u in enumerate(u_list):
        out.append(
            {
                "u": u,
                "joint": (float(mean[i, 0]), float(se[i, 0])),
                "marginal": [(float(mean[i, 1]), float(se[i, 1])), (float(mean[i, 2]), float(se[i, 2]))],
                "truncation_bound": float(bound[i]),
                "horizon": horizon,
                "doublings": doubling,
                "samples": x[:, i, :3],
            }
        )
    return out


def estimate_p_crude_many(params: ModelParams, u_list, config: PathConfig, n: int) -> list[McEstimate]:
    """Crude estimates of P(u) on one common set of paths (non-increasing in u path by path)."""
    res = _crude_estimates(params, u_list, config, n)
    return [
        McEstimate(
            r["joint"][0],
            r["joint"][1],
            n,
            "crude",
            config.seed,
            {
                "u": r["u"],
                "horizon": r["horizon"],
                "truncation_bound": r["truncation_bound"],
                "marginals": [{"mean": m, "stderr": se} for m, se in r["marginal"]],
                "bridge_correction": config.bridge_correction,
                **_resolution(params, r["u"], step_size(params, config, min(u_list))),
            },
        )
        for r in res
    ]


def estimate_p_crude(params: ModelParams, u: float, config: PathConfig, n: int) -> McEstimate:
    if u <= 0:
        return _trivial(n, "crude", config.seed, u=float(u))
    return estimate_p_crude_many(params, [u], config, n)[0]


def estimate_marginal(params: ModelParams, j: int, u: float, config: PathConfig, n: int) -> McEstimate:
    """Crude estimate of P(Q_j > u)."""
    if j not in (1, 2):
        raise InvalidConfig(f"component must be 1 or 2, got {j}")
    if u <= 0:
        return _trivial(n, "crude-marginal", config.seed, u=float(u), component=j)
    res = _crude_estimates(params, [u], config, n)[0]
    m, se = res["marginal"][j - 1]
    return McEstimate(
        m,
        se,
        n,
        "crude-marginal",
        config.seed,
        {"u": float(u), "component": j, "horizon": res["horizon"], "bridge_correction": config.bridge_correction},
    )


# ---------------------------------------------------------------------------
# importance sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TiltSpec:
    """Phase-0 change of measure.

    ``kernels[m]`` is the Girsanov kernel w (zero outside the active set);
    the added drift is ``deltas[m] = Sigma w`` with Sigma = [[1, rho], [rho, 1]].
    Several kernels mean an equal-weight mixture.
    """

    kernels: tuple
    deltas: tuple
    active_set: frozenset
    times: tuple  # original-time crossing targets (tau1, tau2) of the first kernel
    horizon: float
    rho: float

    @property
    def delta(self) -> np.ndarray:
        return np.asarray(self.deltas[0])

    def as_dict(self) -> dict:
        return {
            "kernels": [list(map(float, w)) for w in self.kernels],
            "deltas": [list(map(float, d)) for d in self.deltas],
            "active_set": sorted(self.active_set),
            "times": list(self.times),
            "horizon": self.horizon,
        }


def build_tilt(params: ModelParams, u: float, horizon_mult: float = 8.0) -> TiltSpec:
    if abs(params.rho) >= 1.0:
        raise UnsupportedRegime("tilting needs |rho| < 1")
    if not u > 0:
        raise InvalidConfig(f"u must be positive, got {u}")
    sol = minimize_closed_form(params)
    rho = params.rho
    sig = np.array([[1.0, rho], [rho, 1.0]])
    kernels, deltas = [], []
    active = None
    for t0, s0 in sol.minimizers:
        qp = qp_at(params, t0, s0)
        w = np.array(qp.multipliers)
        kernels.append(tuple(w))
        deltas.append(tuple(sig @ w))
        if active is None:
            active = qp.active_set
    t0, s0 = optimal_times(params)
    return TiltSpec(
        kernels=tuple(kernels),
        deltas=tuple(deltas),
        active_set=active,
        times=(u * sol.minimizers[0][0], u * sol.minimizers[0][1]),
        horizon=horizon_mult * u * max(t0, s0),
        rho=rho,
    )


def _tilted_chunk(params: ModelParams, u: float, tilt: TiltSpec, dt: float, bridge: bool, max_doublings: int):
    rho = params.rho
    mu1, mu2 = params.mu1, params.mu2
    sd = math.sqrt(dt)
    sq = math.sqrt(1.0 - rho * rho)
    W = np.array(tilt.kernels)  # (m, 2)
    n_kern = len(W)
    # Sigma w for each kernel and the per-step compensator 1/2 w' Sigma w dt
    D = np.stack([W[:, 0] + rho * W[:, 1], rho * W[:, 0] + W[:, 1]], axis=1)
    half_quad = 0.5 * (W * D).sum(axis=1) * dt
    # after the first crossing the remaining component k gets kernel 2 mu_k e_k
    sieg_half = (2.0 * mu1 * mu1 * dt, 2.0 * mu2 * mu2 * dt)  # remaining = 1, 2
    steps = max(int(math.ceil(tilt.horizon / dt)), 1)
    # stragglers keep running past the nominal horizon; all drifts are
    # eventually positive under the tilt, so the cap is rarely reached
    cap = steps << max_doublings
    check_step = max(int(0.25 * min(tilt.times) / dt), 1)
    # below this the bridge crossing probability is treated as zero
    far = 2.0 * 40.0 * dt

    def work(rng, k):
        policy = rng.integers(n_kern, size=k) if n_kern > 1 else np.zeros(k, dtype=int)
        ids = np.arange(k)
        d1, d2 = D[policy, 0], D[policy, 1]
        y1 = np.zeros(k)
        y2 = np.zeros(k)
        c1 = np.zeros(k, dtype=bool)
        c2 = np.zeros(k, dtype=bool)
        ell = np.zeros((k, n_kern))  # phase-0 log densities, one per mixture kernel
        common = np.zeros(k)  # post-switch log density
        value = np.zeros(k)
        lr_check = np.full(k, np.nan)
        bound = np.zeros(k)

        def lr_of(sel=slice(None)):
            e = ell[sel]
            mix = e[:, 0] if n_kern == 1 else _logmeanexp(e)
            return np.exp(-(common[sel] + mix))

        step = 0
        for step in range(1, cap + 1):
            m = ids.size
            if m == 0:
                break
            phase0 = ~(c1 | c2)
            z = rng.standard_normal((2, m))
            dx1 = sd * z[0]
            dx2 = sd * (rho * z[0] + sq * z[1])
            if phase0.all():
                dx1 += d1 * dt
                dx2 += d2 * dt
                ell += np.outer(dx1, W[:, 0]) + np.outer(dx2, W[:, 1]) - half_quad
            else:
                # crossed component 1 -> tilt component 2 by 2 mu2, and vice versa
                on1 = ~phase0 & ~c1
                on2 = ~phase0 & c1
                dx1 += np.where(phase0, d1, np.where(on1, 2.0 * mu1, 2.0 * rho * mu2)) * dt
                dx2 += np.where(phase0, d2, np.where(on2, 2.0 * mu2, 2.0 * rho * mu1)) * dt
                ell += (np.outer(dx1, W[:, 0]) + np.outer(dx2, W[:, 1]) - half_quad) * phase0[:, None]
                common += np.where(on1, 2.0 * mu1 * dx1 - sieg_half[0], 0.0)
                common += np.where(on2, 2.0 * mu2 * dx2 - sieg_half[1], 0.0)
            n1 = y1 + dx1 - mu1 * dt
            n2 = y2 + dx2 - mu2 * dt
            c1 |= n1 >= u
            c2 |= n2 >= u
            if bridge:
                a1 = (u - y1) * (u - n1)
                a2 = (u - y2) * (u - n2)
                near = (~c1 & (a1 < far)) | (~c2 & (a2 < far))
                if near.any():
                    idx = np.flatnonzero(near)
                    p1 = np.where(c1[idx], 0.0, np.exp(-2.0 * a1[idx] / dt))
                    p2 = np.where(c2[idx], 0.0, np.exp(-2.0 * a2[idx] / dt))
                    if rho == 0.0:
                        v = rng.random((2, idx.size))
                        c1[idx] |= v[0] < p1
                        c2[idx] |= v[1] < p2
                    else:
                        g = rng.standard_normal((2, idx.size))
                        g2 = rho * g[0] + sq * g[1]
                        with np.errstate(divide="ignore"):
                            c1[idx] |= g[0] < ndtri(p1)
                            c2[idx] |= g2 < ndtri(p2)
            y1, y2 = n1, n2
            if step == check_step:
                lr_check[ids] = lr_of()
            done = c1 & c2
            if done.any():
                lr = lr_of(done)
                value[ids[done]] = lr
                if step < check_step:
                    lr_check[ids[done]] = lr
                keep = ~done
                ids, y1, y2, c1, c2 = ids[keep], y1[keep], y2[keep], c1[keep], c2[keep]
                ell, common, d1, d2 = ell[keep], common[keep], d1[keep], d2[keep]
        if ids.size:
            lr = lr_of()
            if step < check_step:
                lr_check[ids] = lr
            tau1 = np.exp(-2.0 * mu1 * np.maximum(u - y1, 0.0))
            tau2 = np.exp(-2.0 * mu2 * np.maximum(u - y2, 0.0))
            one = c1 | c2
            rest = np.where(c1, tau2, tau1)
            value[ids] = np.where(one, lr * rest, 0.0)
            bound[ids] = np.where(one, 0.0, lr * np.minimum(tau1, tau2))
        return np.stack([value, lr_check, bound], axis=1)

    return work


def _logmeanexp(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1)
    return top + np.log(np.exp(a - top[:, None]).mean(axis=1))


def tilted_samples(params: ModelParams, u: float, config: PathConfig, n: int) -> tuple[np.ndarray, TiltSpec]:
    """Per-path (LR * indicator, LR at an early fixed time, truncation bound).

    The second column checks the change of measure: its expectation is 1.
    (The LR at the stopping time also has mean 1 but is too heavy-tailed
    for a useful check: paths typical under P are rare under the tilt.)
    """
    tilt = build_tilt(params, u, config.horizon_mult)
    dt = step_size(params, config, u)
    work = _tilted_chunk(params, float(u), tilt, dt, config.bridge_correction, config.max_doublings)
    return run_chunks(work, n, config.seed, config.workers, config.tilted_chunk), tilt


def estimate_p_tilted(params: ModelParams, u: float, config: PathConfig, n: int) -> McEstimate:
    if u <= 0:
        return _trivial(n, "tilted", config.seed, u=float(u))
    x, tilt = tilted_samples(params, u, config, n)
    val = x[:, 0]
    est = McEstimate.from_samples(val, "tilted", config.seed)
    lr = McEstimate.from_samples(x[:, 1], "lr", config.seed)
    ess = float(val.sum() ** 2 / (val * val).sum()) if val.any() else 0.0
    est.extra = {
        "u": float(u),
        "tilt": tilt.as_dict(),
        "lr_mean": lr.mean,
        "lr_stderr": lr.stderr,
        "ess": ess,
        "truncation_bound": float(x[:, 2].mean()),
        "bridge_correction": config.bridge_correction,
        **_resolution(params, u, step_size(params, config, u)),
    }
    return est


# ---------------------------------------------------------------------------
# log-rate regression
# ---------------------------------------------------------------------------


@dataclass
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    power: float
    target: float
    estimates: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.slope, self.stderr))

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "stderr": self.stderr,
            "intercept": self.intercept,
            "power": self.power,
            "target_slope": self.target,
            "rel_error": abs(self.slope - self.target) / abs(self.target),
            "estimates": [e.as_dict() for e in self.estimates],
        }


def slope_fit(
    params: ModelParams,
    u_grid,
    config: PathConfig,
    n_per_u: int,
    max_rel_stderr: float = 0.3,
    remove_power: bool = False,
) -> SlopeFit:
    """Weighted least-squares slope of ln P(u) against u from tilted estimates.

    With ``remove_power`` the asymptotic prefactor power p is first taken out
    (ln P - p ln u).  It is off by default: at moderate u the u^{-1/2}
    prefactor has not yet emerged, and removing it moves the slope away
    from the rate.
    """
    u_grid = [float(u) for u in u_grid]
    if len(u_grid) < 4 or any(b <= a for a, b in zip(u_grid, u_grid[1:])):
        raise InvalidConfig("u_grid must hold at least 4 increasing values")
    formula = asymptotic_formula(params)
    power = formula.power if remove_power else 0.0
    ests = [estimate_p_tilted(params, u, config, n_per_u) for u in u_grid]
    for e in ests:
        if not e.mean > 0 or e.rel_stderr > max_rel_stderr:
            raise InsufficientSignal(f"relative stderr {e.rel_stderr:.3g} at u={e.extra['u']} exceeds {max_rel_stderr}")
    u = np.array(u_grid)
    yv = np.log([e.mean for e in ests]) - power * np.log(u)
    wts = np.array([1.0 / e.rel_stderr**2 for e in ests])
    X = np.stack([np.ones_like(u), u], axis=1)
    cov = np.linalg.inv(X.T @ (wts[:, None] * X))
    beta = cov @ (X.T @ (wts * yv))
    return SlopeFit(
        slope=float(beta[1]),
        stderr=float(math.sqrt(cov[1, 1])),
        intercept=float(beta[0]),
        power=power,
        target=-formula.rate,
        estimates=ests,
    )
