import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occupancy_tp.errors import ResourceError, ValidationError
from occupancy_tp.exactdist import (DpConfig, default_config, enumerate_pmf, exact_pmf,
                                    low_boxes_all_occupied, poisson_binomial_pmf, poissonized_pmf)
from occupancy_tp.moments import Statistic, moments
from occupancy_tp.weights import make_explicit, make_zeta, tail_profile

from conftest import power_model


def as_dict(P, tol=0.0):
    return {int(k): float(v) for k, v in zip(P.support, P.masses) if v > tol}


def test_dp_examples(three_box):
    P = exact_pmf(three_box, 3, Statistic.occupied(), default_config(three_box, 3))
    assert as_dict(P) == pytest.approx({1: 0.16, 2: 0.66, 3: 0.18}, abs=1e-15)
    P = exact_pmf(three_box, 2, Statistic.exactly(2), default_config(three_box, 2))
    assert as_dict(P) == pytest.approx({0: 0.62, 1: 0.38}, abs=1e-15)
    P = exact_pmf(three_box, 1, Statistic.occupied(), default_config(three_box, 1))
    assert as_dict(P) == pytest.approx({1: 1.0})
    P = exact_pmf(three_box, 2, Statistic.exactly(5), default_config(three_box, 2))
    assert as_dict(P) == {0: 1.0}


def test_dp_config_validation():
    with pytest.raises(ValidationError):
        DpConfig(0)
    with pytest.raises(ValidationError):
        DpConfig(5, 1e-6)


def test_dp_tail_guard():
    z = make_zeta(2.0)
    with pytest.raises(ResourceError, match="increase J"):
        exact_pmf(z, 100, Statistic.occupied(), DpConfig(10))


def test_enumeration_examples(three_box):
    assert as_dict(enumerate_pmf(make_explicit([0.5, 0.5]), 2, Statistic.occupied())) == {1: 0.5, 2: 0.5}
    assert as_dict(enumerate_pmf(make_explicit([1.0]), 5, Statistic.occupied())) == {1: 1.0}
    assert as_dict(enumerate_pmf(three_box, 2, Statistic.exactly(1))) == pytest.approx({0: 0.38, 2: 0.62})
    with pytest.raises(ResourceError):
        enumerate_pmf(power_model(40), 6, Statistic.occupied())


def _table(P, lo, hi):
    return np.array([P.prob(k) for k in range(lo, hi + 1)])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=5), st.integers(1, 6),
       st.sampled_from([None, 1, 2]), st.integers(1, 4))
def test_dp_matches_enumeration(raw, n, r, start):
    p = np.sort(np.array(raw))[::-1]
    model = make_explicit(p / math.fsum(p))
    stat = Statistic(r=r, restricted_from=start if start > 1 else None)
    A = exact_pmf(model, n, stat, default_config(model, n))
    B = enumerate_pmf(model, n, stat)
    assert np.max(np.abs(_table(A, 0, n) - _table(B, 0, n))) <= 1e-12
    assert A.tail_defect <= 1e-12


@pytest.mark.parametrize("stat", [Statistic.occupied(), Statistic.exactly(1), Statistic.exactly(2)], ids=str)
@pytest.mark.parametrize("n", [100, 1000])
def test_dp_moments_match(model200, stat, n):
    P = exact_pmf(model200, n, stat, default_config(model200, n))
    m = moments(model200, n, stat)
    assert P.mean() == pytest.approx(m.mu, abs=1e-10)
    assert P.var() == pytest.approx(m.var, abs=1e-10)


def test_dp_pruning_is_charged(model200):
    n = 300
    exact = exact_pmf(model200, n, Statistic.occupied(), DpConfig(200))
    pruned = exact_pmf(model200, n, Statistic.occupied(), DpConfig(200, 1e-12))
    lo = min(exact.offset, pruned.offset)
    hi = max(exact.offset + len(exact.masses), pruned.offset + len(pruned.masses))
    diff = np.abs(_table(exact, lo, hi) - _table(pruned, lo, hi)).sum()
    assert pruned.tail_defect > 0
    assert diff <= pruned.tail_defect + 1e-12
    assert abs(pruned.masses.sum() + pruned.tail_defect - 1) <= 1e-11


def test_dp_truncated_infinite_model():
    z = make_zeta(3.0)
    n = 20
    J = 400
    P = exact_pmf(z, n, Statistic.occupied(), DpConfig(J))
    assert P.tail_defect <= n * z.tail(J + 1) + 1e-12
    assert abs(P.masses.sum() + P.tail_defect - 1) <= 1e-11


def test_poisson_binomial():
    assert list(poisson_binomial_pmf([])) == [1.0]
    assert poisson_binomial_pmf([0.5, 0.5]) == pytest.approx([0.25, 0.5, 0.25])
    q = [0.1, 0.7, 0.33]
    brute = np.zeros(4)
    for bits in itertools.product([0, 1], repeat=3):
        brute[sum(bits)] += math.prod(qi if b else 1 - qi for qi, b in zip(q, bits))
    assert poisson_binomial_pmf(q) == pytest.approx(brute, abs=1e-15)


def test_poissonized_examples():
    P = poissonized_pmf(make_explicit([0.5, 0.5]), 2, Statistic.occupied(), 2)
    assert P.prob(2) == pytest.approx((1 - math.exp(-1)) ** 2, rel=1e-14)
    assert P.prob(2) == pytest.approx(0.399576, abs=1e-6)
    P = poissonized_pmf(make_explicit([1.0]), 3, Statistic.exactly(1), 1)
    assert P.prob(1) == pytest.approx(3 * math.exp(-3), rel=1e-14)
    P = poissonized_pmf(make_explicit([0.5, 0.5]), 3, Statistic.occupied().restricted(3), 2)
    assert as_dict(P) == {0: 1.0}


def test_low_boxes_examples(four_box):
    m = make_explicit([0.5, 0.5])
    assert low_boxes_all_occupied(m, 2, 1) == pytest.approx(0.75)
    m = make_explicit([0.5, 0.3, 0.2])
    assert low_boxes_all_occupied(m, 2, 2) == pytest.approx(0.30, abs=1e-15)
    n = 100
    k = tail_profile(four_box, n).jn - 1
    assert k == 2
    val = low_boxes_all_occupied(four_box, n, k)
    thr = 4 * math.log(n) / n
    assert val >= 1 - n / (4 * math.log(n)) * (1 - thr) ** n
    assert val >= 1 - n ** -3
    with pytest.raises(ResourceError):
        low_boxes_all_occupied(power_model(40), 10, 26)


def _all_occupied_oracle(probs, n, k):
    """Exact rational multinomial sum: every one of the first k boxes gets a ball."""
    p = [Fraction(float(x)) for x in probs]
    rest = 1 - sum(p[:k])
    f = [Fraction(1)] + [Fraction(0)] * n  # f[m] = sum of prod p^c / c! over m balls
    for b in range(k):
        g = [Fraction(0)] * (n + 1)
        for m in range(n + 1):
            if f[m]:
                for c in range(1, n - m + 1):
                    g[m + c] += f[m] * p[b] ** c / math.factorial(c)
        f = g
    return float(sum(f[m] * rest ** (n - m) / math.factorial(n - m) for m in range(n + 1))
                 * math.factorial(n))


def test_low_boxes_against_multinomial_oracle():
    m = power_model(12)
    for n, k in [(5, 3), (20, 6), (40, 12)]:
        expect = _all_occupied_oracle(m.probs_upto(12), n, k)
        assert low_boxes_all_occupied(m, n, k) == pytest.approx(expect, abs=1e-12)