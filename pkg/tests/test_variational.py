import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from cwextrema.errors import NonPositiveTime, SingularCovariance, UnsupportedRegime
from cwextrema.model import CovMatrix2, RegimeTag, canonicalize, classify, thresholds
from cwextrema.variational import (
    CASE_AT_RHO_HAT1,
    CASE_INTERIOR,
    CASE_WEDGE,
    REGION_A,
    REGION_CURVE_G2,
    REGION_L,
    g1,
    g2,
    g_L,
    g_eval,
    g_pieces,
    g_values,
    inner_qp,
    minimize_closed_form,
    minimize_numeric,
    qp_passing_sets,
    taylor_coefficients,
    taylor_fd,
    taylor_residuals,
)

drift = st.floats(0.1, 10.0)
open_corr = st.floats(-0.99, 0.99)
times = st.floats(0.01, 20.0)


# --- inner QP ---------------------------------------------------------------


def test_qp_identity():
    sol = inner_qp(CovMatrix2(1.0, 0.0, 1.0), (1.0, 2.0))
    assert sol.value == pytest.approx(5.0)
    assert sol.active_set == frozenset({1, 2})
    assert sol.optimizer_v == (1.0, 2.0)


def test_qp_correlated():
    sol = inner_qp(CovMatrix2(1.0, 0.5, 1.0), (1.0, 1.0))
    assert sol.value == pytest.approx(4.0 / 3.0)


def test_qp_one_binding():
    # strong correlation: meeting v1 >= 2 already gives v2 = 1.8 >= 1
    sol = inner_qp(CovMatrix2(1.0, 0.9, 1.0), (2.0, 1.0))
    assert sol.active_set == frozenset({1})
    assert sol.value == pytest.approx(4.0)
    assert sol.optimizer_v[1] == pytest.approx(1.8)


def test_qp_empty_set():
    sol = inner_qp(CovMatrix2(1.0, 0.2, 2.0), (-1.0, -0.5))
    assert sol.active_set == frozenset()
    assert sol.value == 0.0


def test_qp_singular():
    with pytest.raises(SingularCovariance):
        inner_qp(CovMatrix2(1.0, 1.0, 1.0), (1.0, 1.0))


def test_qp_degenerate_tie():
    # v2 = rho b1 exactly equals b2: both {1} and {1,2} satisfy KKT
    sol = inner_qp(CovMatrix2(1.0, 0.5, 1.0), (2.0, 1.0))
    assert sol.degenerate
    assert sol.active_set == frozenset({1, 2})
    assert sol.value == pytest.approx(4.0)


@st.composite
def qp_instance(draw):
    a = draw(st.floats(0.1, 10.0))
    d = draw(st.floats(0.1, 10.0))
    r = draw(st.floats(-0.95, 0.95))
    b = (draw(st.floats(-5.0, 5.0)), draw(st.floats(-5.0, 5.0)))
    return CovMatrix2(a, r * math.sqrt(a * d), d), b


@given(qp_instance())
def test_qp_kkt_and_feasible(inst):
    sigma, b = inst
    sol = inner_qp(sigma, b)
    v = np.array(sol.optimizer_v)
    scale = max(1.0, abs(b[0]), abs(b[1]))
    assert v[0] >= b[0] - 1e-9 * scale and v[1] >= b[1] - 1e-9 * scale
    lam = sigma.solve(v)
    assert np.all(lam >= -1e-9 * scale)
    # complementary slackness
    assert abs(lam[0] * (v[0] - b[0])) < 1e-8 * scale**2
    assert abs(lam[1] * (v[1] - b[1])) < 1e-8 * scale**2
    assert sol.value == pytest.approx(float(v @ lam), rel=1e-10, abs=1e-12)


@given(qp_instance(), st.floats(0, 2 * math.pi), st.floats(0.0, 3.0))
def test_qp_is_minimum(inst, angle, step):
    sigma, b = inst
    sol = inner_qp(sigma, b)
    w = np.array(sol.optimizer_v) + step * np.array([abs(math.cos(angle)), abs(math.sin(angle))])
    assert float(w @ sigma.solve(w)) >= sol.value - 1e-9 * max(1.0, sol.value)


@given(qp_instance())
def test_qp_unique_passing_set(inst):
    sigma, b = inst
    # ties are measure zero; skip draws that land near one
    assume(all(abs(x) > 1e-6 for x in b))
    assume(abs(sigma.b * b[0] / sigma.a - b[1]) > 1e-6 and abs(sigma.b * b[1] / sigma.c - b[0]) > 1e-6)
    assert len(qp_passing_sets(sigma, b)) == 1


# --- g ------------------------------------------------------------------------


@given(drift, drift, open_corr, times, times)
def test_g_dominates_marginals(a, b, rho, t, s):
    p = canonicalize(a, b, rho)
    g = g_eval(p, t, s)
    assert g >= max(g1(p, t), g2(p, s)) * (1 - 1e-10)


@given(drift, drift, open_corr, times, times)
def test_g_fast_path_matches_qp(a, b, rho, t, s):
    p = canonicalize(a, b, rho)
    assert float(g_values(p, t, s)) == pytest.approx(g_eval(p, t, s), rel=1e-9)


@given(drift, drift, open_corr, times, times)
def test_g_forms_agree(a, b, rho, t, s):
    pc = g_pieces(canonicalize(a, b, rho), t, s)
    assert pc.g3 == pytest.approx(pc.g3_alt, rel=1e-9)


@given(drift, drift, open_corr, times)
def test_g_on_diagonal(a, b, rho, t):
    p = canonicalize(a, b, rho)
    pc = g_pieces(p, t, t)
    assert pc.form == REGION_A
    assert pc.g3 == pytest.approx(pc.gL, rel=1e-12)
    assert g_L(p, t) == pytest.approx(g_pieces(p, t, t * (1 + 1e-13)).g3, rel=1e-9)


def test_g_examples():
    p = canonicalize(1, 2, 0.0)
    assert g_eval(p, 1.0, 1.0) == pytest.approx(4.0 + 9.0)
    assert g_eval(canonicalize(1, 2, 0.75), 0.5, 0.5) == pytest.approx(8.0)
    assert g_eval(canonicalize(1, 2, 0.5), 0.5, 0.5) == pytest.approx(26.0 / 3.0)
    with pytest.raises(NonPositiveTime):
        g_pieces(p, 0.0, 1.0)
    with pytest.raises(UnsupportedRegime):
        g_eval(canonicalize(1, 2, 1.0), 1.0, 1.0)


# --- outer minimum -------------------------------------------------------------


def test_closed_form_below():
    sol = minimize_closed_form(canonicalize(1, 2, -0.5))
    assert sol.minimizers[0] == pytest.approx((2.0, 1.0 / 3.0))
    assert sol.value == pytest.approx(16.0)
    assert sol.region == REGION_A


def test_closed_form_at_rho_hat2():
    sol = minimize_closed_form(canonicalize(1, 2, 0.75))
    assert sol.minimizers[0] == pytest.approx((0.5, 0.5))
    assert sol.value == pytest.approx(8.0)
    assert sol.region == REGION_L


def test_closed_form_equal_pos():
    sol = minimize_closed_form(canonicalize(1, 1, 0.5))
    assert sol.value == pytest.approx(16.0 / 3.0)
    assert sol.minimizers[0] == pytest.approx((1.0, 1.0))


def test_closed_form_equal_neg():
    sol = minimize_closed_form(canonicalize(1, 1, -0.5))
    assert sol.value == pytest.approx(12.0)
    assert sorted(sol.minimizers) == pytest.approx([(0.5, 2.0), (2.0, 0.5)])


def test_closed_form_above_segment():
    sol = minimize_closed_form(canonicalize(1, 2, 0.9))
    assert sol.region == REGION_CURVE_G2
    lo, hi = sol.segment
    assert (lo, hi) == pytest.approx((1 / 2.6, 0.8))
    p = canonicalize(1, 2, 0.9)
    for t in np.linspace(lo, hi, 7):
        assert g_eval(p, t, 0.5) == pytest.approx(8.0, rel=1e-12)


@pytest.mark.parametrize(
    "args",
    [(1, 2, -0.5), (1, 2, 0.0), (1, 2, 0.1), (1, 2, 0.5), (1, 2, 0.75), (1, 2, 0.9), (1, 1, -0.5), (1, 1, 0.5), (1, 1, 0.0)],
)
def test_numeric_matches_closed(args):
    p = canonicalize(*args)
    c, n = minimize_closed_form(p), minimize_numeric(p)
    assert n.value == pytest.approx(c.value, rel=1e-6)
    if c.segment is None:
        assert len(n.minimizers) == len(c.minimizers)
        for pt in c.minimizers:
            assert min(math.hypot(pt[0] - q[0], pt[1] - q[1]) for q in n.minimizers) < 1e-4 * math.hypot(*pt)
    if len(c.minimizers) == 1:
        assert n.region == c.region


@given(drift, drift, open_corr)
def test_closed_form_is_lower_than_grid(a, b, rho):
    p = canonicalize(a, b, rho)
    assume(classify(p).tag not in (RegimeTag.RHO_ONE, RegimeTag.RHO_MINUS_ONE))
    sol = minimize_closed_form(p)
    axis = np.geomspace(1e-3, 1e2, 120) / min(a, b)
    G = g_values(p, axis[:, None], axis[None, :])
    assert sol.value <= G.min() * (1 + 1e-9)
    t0, s0 = sol.minimizers[0]
    assert g_eval(p, t0, s0) == pytest.approx(sol.value, rel=1e-10)


@pytest.mark.parametrize("mus", [(1, 2), (1, 3), (0.5, 4)])
def test_value_continuous_at_thresholds(mus):
    p = canonicalize(*mus, 0.0)
    for r in thresholds(p):
        vals = [minimize_closed_form(p.with_rho(r + d)).value for d in (-1e-9, 0.0, 1e-9)]
        assert max(vals) - min(vals) < 1e-6


# --- Taylor coefficients -------------------------------------------------------

WEDGE_ORACLES = {
    (1, 2, 0.5): dict(b1=0.97606774342516972, b2=2.6666666666666667, c1=12.729340511723354, c2=10.777205024873014, b0=13.856406460551018),
    (1, 1, 0.5): dict(b1=8 / 9, b2=8 / 9, c1=2.0740740740740741, c2=2.0740740740740741, b0=2.6666666666666667),
    (2, 3, 0.3): dict(b1=2.5551544852062019, b2=6.3411804995970602, c1=36.927769186330651, c2=34.987264859300557, b0=53.532357043591934),
}


@pytest.mark.parametrize("args,expected", list(WEDGE_ORACLES.items()))
def test_wedge_oracles(args, expected):
    tc = taylor_coefficients(canonicalize(*args))
    assert tc.case == CASE_WEDGE
    for k, v in expected.items():
        assert tc.coeffs[k] == pytest.approx(v, rel=1e-12), k


def test_interior_oracle():
    tc = taylor_coefficients(canonicalize(1, 2, -0.3))
    assert tc.case == CASE_INTERIOR
    assert tc.point == pytest.approx((1.6, 1 / 2.6))
    assert tc.coeffs["a1"] == pytest.approx(1.2776412776412776, rel=1e-12)
    assert tc.coeffs["a2"] == pytest.approx(0.99656019656019656, rel=1e-12)
    assert tc.coeffs["a3"] == pytest.approx(35.929316953316953, rel=1e-12)


def test_at_rho_hat1_case():
    p = canonicalize(1, 2, 0.0)
    p = p.with_rho(thresholds(p)[0])
    tc = taylor_coefficients(p)
    assert tc.case == CASE_AT_RHO_HAT1
    assert tc.positivity_violations() == []
    res = taylor_residuals(tc, taylor_fd(p))
    assert max(res.values()) < 1e-3


def test_no_expansion_above():
    with pytest.raises(UnsupportedRegime):
        taylor_coefficients(canonicalize(1, 2, 0.9))


@st.composite
def wedge_params(draw):
    m1, m2 = sorted((draw(drift), draw(drift)))
    p = canonicalize(m1, m2, 0.0)
    r1, r2 = thresholds(p)
    frac = draw(st.floats(0.05, 0.95))
    return p.with_rho(r1 + frac * (r2 - r1))


@given(wedge_params())
def test_wedge_fd_and_signs(p):
    tc = taylor_coefficients(p)
    assert tc.positivity_violations() == []
    res = taylor_residuals(tc, taylor_fd(p))
    assert max(res.values()) < 1e-3


@given(drift, drift, st.floats(-0.95, 0.95))
def test_interior_fd_and_signs(a, b, x):
    p = canonicalize(a, b, 0.0)
    r1 = thresholds(p)[0]
    rho = x * r1 if x > 0 else x
    assume(abs(rho) > 1e-3 and r1 - rho > 1e-3)
    p = p.with_rho(rho)
    tc = taylor_coefficients(p)
    assert tc.positivity_violations() == []
    res = taylor_residuals(tc, taylor_fd(p))
    assert max(res.values()) < 1e-3
