import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from occupancy_tp.errors import ValidationError
from occupancy_tp.tpoisson import (TranslatedPoisson, distances_to_tp, fit_tp, tp_pmf, tp_pmf_array,
                                   tp_pmf_window)
from occupancy_tp.metrics import Pmf


@pytest.mark.parametrize("mu, var, shift, rate", [
    (3.0, 3.0, 0, 3.0),
    (5.3, 2.0, 3, 2.3),
    (4.0, 1.0, 3, 1.0),
    (7.0, 0.0, 7, 0.0),
])
def test_fit_examples(mu, var, shift, rate):
    tp = fit_tp(mu, var)
    assert tp.shift == shift
    assert tp.rate == pytest.approx(rate, abs=1e-12)


def test_fit_degenerate_noninteger():
    tp = fit_tp(2.4, 0.0)
    assert tp.shift == 2 and 0 < tp.rate < 1


@pytest.mark.parametrize("mu, var", [(1.0, -0.1), (math.nan, 1.0), (1.0, math.inf)])
def test_fit_rejects(mu, var):
    with pytest.raises(ValidationError):
        fit_tp(mu, var)


@settings(max_examples=10_000, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(0, 1e4))
def test_fit_invariants(mu, var):
    tp = fit_tp(mu, var)
    assert tp.shift + tp.rate == pytest.approx(mu, abs=1e-9)
    assert var <= tp.rate < var + 1


@settings(max_examples=500, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(0, 1e3))
def test_fit_shift_equivariance(mu, var):
    a, b = fit_tp(mu, var), fit_tp(mu + 1, var)
    if b.rate == pytest.approx(a.rate, abs=1e-9):
        assert b.shift == a.shift + 1


def test_pmf_examples():
    assert tp_pmf(TranslatedPoisson(0, 3.0), 0) == pytest.approx(math.exp(-3), rel=1e-14)
    assert tp_pmf(TranslatedPoisson(3, 2.3), 2) == 0.0
    assert tp_pmf(TranslatedPoisson(3, 2.3), 3) == pytest.approx(0.1002588437228037, rel=1e-14)
    assert tp_pmf(TranslatedPoisson(4, 0.0), 4) == 1.0


@pytest.mark.parametrize("rate", [0.3, 5.0, 250.0, 3615.0, 1e5, 1e7])
def test_pmf_log_space_against_high_precision(rate):
    mpmath.mp.dps = 40
    ks = np.unique(np.linspace(max(0, rate - 6 * math.sqrt(rate)), rate + 6 * math.sqrt(rate), 25).astype(int))
    ours = tp_pmf_array(TranslatedPoisson(0, rate), ks)
    lam = mpmath.mpf(rate)
    ref = [float(mpmath.exp(k * mpmath.log(lam) - lam - mpmath.loggamma(k + 1))) for k in ks]
    assert np.allclose(ours, ref, rtol=1e-12, atol=0)


def test_window_examples():
    w = tp_pmf_window(TranslatedPoisson(0, 0.0))
    assert (w.offset, list(w.masses), w.tail_defect) == (0, [1.0], 0.0)
    w = tp_pmf_window(TranslatedPoisson(0, 3.0), 1e-12)
    # Poisson(3) puts less than 1e-12 beyond 22, so the smallest window is [0, 22]
    assert (w.offset, w.offset + len(w.masses) - 1) == (0, 22)
    assert stats.poisson.sf(22, 3.0) <= 1e-12 < stats.poisson.sf(21, 3.0)
    assert w.masses.sum() >= 1 - 1e-12
    assert tp_pmf_window(TranslatedPoisson(10, 4.0), 1e-12).offset == 10


@settings(max_examples=200, deadline=None)
@given(st.integers(-50, 50), st.floats(0.01, 5e4))
def test_window_mass(shift, rate):
    w = tp_pmf_window(TranslatedPoisson(shift, rate), 1e-12)
    assert w.tail_defect <= 1e-12
    assert abs(w.masses.sum() - 1) <= 1e-10
    assert w.offset >= shift


def test_window_is_smallest():
    tp = TranslatedPoisson(0, 20.0)
    w = tp_pmf_window(tp, 1e-6)
    lo, hi = w.offset, w.offset + len(w.masses) - 1
    # dropping either end pushes the outside mass past eps
    for a, b in ((lo + 1, hi), (lo, hi - 1)):
        outside = stats.poisson.cdf(a - 1, 20.0) + stats.poisson.sf(b, 20.0)
        assert outside > 1e-6


def test_distances_to_self():
    tp = fit_tp(12.5, 6.0)
    P = tp_pmf_window(tp, 1e-14)
    P = Pmf(P.offset, P.masses / P.masses.sum(), 0.0)
    tv, loc = distances_to_tp(P, tp)
    assert tv.value < 1e-12 and loc.value < 1e-12
