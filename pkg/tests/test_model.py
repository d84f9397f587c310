import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cwextrema.errors import DegenerateCovariance, InvalidCorrelation, NonPositiveDrift, NonPositiveTime
from cwextrema.model import (
    CovMatrix2,
    ModelParams,
    RegimeTag,
    canonicalize,
    classify,
    sigma_ts,
    star_point,
    star_t,
    thresholds,
)

drift = st.floats(0.05, 20.0)
corr = st.floats(-1.0, 1.0)

# (3 - sqrt(5)) / 4 at 30 digits, from the unrationalised discriminant form
RHO_HAT1_12 = 0.190983005625052575897706582817


def test_canonicalize_swaps():
    p = canonicalize(2, 1, 0.3)
    assert (p.mu1, p.mu2, p.rho, p.swapped) == (1.0, 2.0, 0.3, True)


def test_canonicalize_identity():
    p = canonicalize(1, 2, 0.3)
    assert (p.mu1, p.mu2, p.rho, p.swapped) == (1.0, 2.0, 0.3, False)


@pytest.mark.parametrize("rho", [-1.5, 1.0000001, math.nan, math.inf])
def test_bad_correlation(rho):
    with pytest.raises(InvalidCorrelation):
        canonicalize(1, 1, rho)


@pytest.mark.parametrize("mu1,mu2", [(0, 1), (1, -2), (math.nan, 1)])
def test_bad_drift(mu1, mu2):
    with pytest.raises(NonPositiveDrift):
        canonicalize(mu1, mu2, 0.1)


def test_thresholds_equal_drift():
    assert thresholds(canonicalize(1.7, 1.7, 0.2)) == (0.0, 1.0)


def test_thresholds_1_2():
    r1, r2 = thresholds(canonicalize(1, 2, 0.0))
    assert r1 == pytest.approx(RHO_HAT1_12, rel=1e-15)
    assert r2 == 0.75


@given(drift, drift)
def test_threshold_ranges(a, b):
    p = canonicalize(a, b, 0.0)
    r1, r2 = thresholds(p)
    assert 0.0 <= r1 < 0.5
    assert 0.5 < r2 <= 1.0
    if not p.equal_drift:
        # stable form agrees with the textbook root of 2 m1 r^2 - (m1 + m2) r + (m2 - m1) / 2 = 0
        m1, m2 = p.mu1, p.mu2
        assert 2 * m1 * r1 * r1 - (m1 + m2) * r1 + (m2 - m1) / 2 == pytest.approx(0.0, abs=1e-10 * (m1 + m2))


@pytest.mark.parametrize(
    "args,tag",
    [
        ((1, 2, 0.5), RegimeTag.BETWEEN),
        ((1, 2, -0.5), RegimeTag.BELOW_RHO_HAT1),
        ((1, 2, 0.1), RegimeTag.BELOW_RHO_HAT1),
        ((1, 2, 0.0), RegimeTag.RHO_ZERO),
        ((1, 2, 0.75), RegimeTag.AT_RHO_HAT2),
        ((1, 2, 0.9), RegimeTag.ABOVE_RHO_HAT2),
        ((1, 2, 1.0), RegimeTag.RHO_ONE),
        ((1, 2, -1.0), RegimeTag.RHO_MINUS_ONE),
        ((1, 1, 0.0), RegimeTag.EQUAL_DRIFT_ZERO),
        ((1, 1, -0.2), RegimeTag.EQUAL_DRIFT_NEG),
        ((1, 1, 0.2), RegimeTag.EQUAL_DRIFT_POS),
        ((1, 1, 1.0), RegimeTag.RHO_ONE),
    ],
)
def test_classify_examples(args, tag):
    assert classify(canonicalize(*args)).tag == tag


def test_classify_at_rho_hat1():
    p = canonicalize(1, 2, 0.0)
    r1, _ = thresholds(p)
    assert classify(p.with_rho(r1)).tag == RegimeTag.AT_RHO_HAT1


def test_classify_tolerance_band():
    p = canonicalize(1, 2, 0.75 + 1e-9)
    assert classify(p).tag == RegimeTag.ABOVE_RHO_HAT2
    assert classify(p, tol=1e-8).tag == RegimeTag.AT_RHO_HAT2


@given(drift, drift, corr)
def test_classify_total_and_consistent(a, b, rho):
    p = canonicalize(a, b, rho)
    reg = classify(p)
    assert isinstance(reg.tag, RegimeTag)
    r1, r2 = reg.rho_hat1, reg.rho_hat2
    if reg.tag == RegimeTag.BELOW_RHO_HAT1:
        assert rho < r1 and rho != 0
    elif reg.tag == RegimeTag.BETWEEN:
        assert r1 < rho < r2
    elif reg.tag == RegimeTag.ABOVE_RHO_HAT2:
        assert r2 < rho < 1


@given(drift, drift, corr)
def test_swap_invariance(a, b, rho):
    p, q = canonicalize(a, b, rho), canonicalize(b, a, rho)
    assert (p.mu1, p.mu2) == (q.mu1, q.mu2)
    assert classify(p).tag == classify(q).tag


def test_sigma_ts():
    p = canonicalize(1, 2, 0.4)
    m = sigma_ts(p, 3.0, 2.0)
    assert (m.a, m.b, m.c) == (3.0, 0.8, 2.0)
    np.testing.assert_allclose(m.as_array() @ m.inverse(), np.eye(2), atol=1e-14)
    np.testing.assert_allclose(m.solve([1.0, 2.0]), np.linalg.solve(m.as_array(), [1.0, 2.0]))
    with pytest.raises(NonPositiveTime):
        sigma_ts(p, 0.0, 1.0)


def test_singular_flag():
    assert CovMatrix2(1.0, 1.0, 1.0).singular
    assert not CovMatrix2(1.0, 0.5, 1.0).singular


def test_star_point():
    p = canonicalize(1, 2, 0.5)
    ts, sig, b = star_point(p)
    assert ts == pytest.approx(1 / math.sqrt(3), rel=1e-15)
    assert sig.b == pytest.approx(0.5 * ts)
    np.testing.assert_allclose(b, [1 + ts, 1 + 2 * ts])
    assert star_t(canonicalize(3, 3, 0.2)) == pytest.approx(1 / 3)
    with pytest.raises(DegenerateCovariance):
        star_t(canonicalize(1, 2, 1.0))


def test_modelparams_validates_directly():
    with pytest.raises(NonPositiveDrift):
        ModelParams(-1.0, 1.0, 0.0)
