import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from occupancy_tp.errors import DegenerateModelError, ValidationError
from occupancy_tp.moments import Statistic, moments
from occupancy_tp.occusim import (Decomposition, batch_counts, condition_ratios,
                                  conditional_mc_law, conditional_moments,
                                  conditional_pmf_given_M, conditional_tp_check,
                                  decomposition_estimate, empirical_mc_law,
                                  occupancy_marginal_law_exact, sample_counts, sample_statistic,
                                  stream, two_stage_law_exact, two_stage_sample, z_kernel)
from occupancy_tp.weights import make_explicit, split_j0, tail_profile

from conftest import power_model


def test_sample_counts_examples(zeta2):
    assert sample_counts(make_explicit([1.0]), 1, 0).counts == {1: 1}
    s = sample_counts(make_explicit([0.5, 0.5]), 10 ** 6, 7)
    assert sum(s.counts.values()) == 10 ** 6
    assert abs(s.counts[1] / 10 ** 6 - 0.5) <= 5e-3
    s = sample_counts(zeta2, 1000, 11)
    assert max(s.counts) < 2 ** 60
    p1 = 6 / math.pi ** 2
    assert abs(s.counts[1] / 1000 - p1) <= 10 * math.sqrt(p1 * (1 - p1) / 1000)


def test_seed_validation(four_box):
    for bad in (None, -1, 1 << 64):
        with pytest.raises(ValidationError):
            sample_counts(four_box, 3, bad)
    with pytest.raises(ValidationError):
        sample_counts(four_box, 0, 1)


def test_determinism(four_box, zeta2):
    assert sample_counts(zeta2, 500, 3) == sample_counts(zeta2, 500, 3)
    assert two_stage_sample(four_box, 9, 5) == two_stage_sample(four_box, 9, 5)
    assert sample_counts(zeta2, 500, 3) != sample_counts(zeta2, 500, 4)


def test_thread_invariance(zeta2):
    stat = Statistic.occupied().restricted(tail_profile(zeta2, 500).jn)
    a = conditional_mc_law(zeta2, 500, stat, 20000, 9, threads=1)
    b = conditional_mc_law(zeta2, 500, stat, 20000, 9, threads=4)
    assert np.array_equal(a.pmf.masses, b.pmf.masses) and np.array_equal(a.se, b.se)
    x = sample_statistic(zeta2, 500, Statistic.exactly(1), 20000, 9, threads=1)
    y = sample_statistic(zeta2, 500, Statistic.exactly(1), 20000, 9, threads=3)
    assert np.array_equal(x, y)


def test_two_stage_invariants(four_box):
    j0, P0 = split_j0(four_box)
    assert (j0, P0) == (3, pytest.approx(0.2))
    for seed in range(50):
        s = two_stage_sample(four_box, 12, seed)
        assert all(j >= j0 for j in s.stage_one)
        assert all(c <= s.stage_one[j] for j, c in s.counts.items())
        assert sum(s.stage_one.values()) == 12
    with pytest.raises(DegenerateModelError):
        two_stage_sample(make_explicit([0.5, 0.5]), 3, 1)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_two_stage_law_matches_occupancy(four_box, n):
    a = two_stage_law_exact(four_box, n)
    b = occupancy_marginal_law_exact(four_box, n, [3, 4])
    for key in set(a) | set(b):
        assert a.get(key, 0.0) == pytest.approx(b.get(key, 0.0), abs=1e-12)
    if n == 2:
        assert a[(1, 1)] == pytest.approx(0.015, abs=1e-15)


def _chi2_pvalue(values, n, p):
    obs = np.bincount(values, minlength=n + 1)
    exp = stats.binom.pmf(np.arange(n + 1), n, p) * values.size
    # pool cells with expectation below 5 into their neighbour
    keep = exp >= 5
    o = np.append(obs[keep], obs[~keep].sum())
    e = np.append(exp[keep], exp[~keep].sum())
    if e[-1] == 0:
        o, e = o[:-1], e[:-1]
    return stats.chisquare(o, e * o.sum() / e.sum()).pvalue


def test_two_stage_marginals_chi_square(four_box):
    n, reps = 6, 100_000
    N3 = np.empty(reps, dtype=np.int64)
    N4 = np.empty(reps, dtype=np.int64)
    for i in range(reps):
        c = two_stage_sample(four_box, n, i).counts
        N3[i], N4[i] = c.get(3, 0), c.get(4, 0)
    assert _chi2_pvalue(N3, n, 0.15) > 1e-4
    assert _chi2_pvalue(N4, n, 0.05) > 1e-4


def test_batched_stage_one_marginals(model200):
    j0, P0 = split_j0(model200)
    n, reps = 300, 100_000
    rep, box, cnt = batch_counts(model200, n, reps, stream(5, 99), j0)
    kept = stream(5, 100).binomial(cnt, P0)
    assert np.bincount(rep, weights=cnt, minlength=reps).tolist() == [n] * reps
    p = model200.probs_upto(200)
    for j in (j0, j0 + 5, 150):
        N = np.zeros(reps, dtype=np.int64)
        sel = box == j
        N[rep[sel]] = kept[sel]
        assert _chi2_pvalue(N, n, p[j - 1]) > 1e-4


def test_z_kernel():
    assert z_kernel(3, 0.2, 1) == pytest.approx(3 * 0.2 * 0.64)
    assert z_kernel(1, 0.2, None) == pytest.approx(0.2)
    assert z_kernel(0, 0.2, None) == 0.0
    # no thinning: a ball that is thrown is kept
    assert z_kernel(np.arange(5), 1.0, None).tolist() == [0.0, 1.0, 1.0, 1.0, 1.0]


def test_conditional_examples(four_box):
    stat = Statistic.occupied().restricted(3)
    assert conditional_moments({}, four_box, 10, stat) == (0.0, 0.0)
    assert conditional_moments({3: 0, 4: 0}, four_box, 10, stat) == (0.0, 0.0)
    mu, s2 = conditional_moments({3: 1}, four_box, 10, stat)
    assert (mu, s2) == (pytest.approx(0.2), pytest.approx(0.16))
    mu, s2 = conditional_moments({4: 3}, four_box, 10, Statistic.exactly(1).restricted(3))
    assert (mu, s2) == (pytest.approx(0.384), pytest.approx(0.236544))

    assert conditional_pmf_given_M({}, four_box, stat).masses.tolist() == [1.0]
    P = conditional_pmf_given_M({3: 1, 4: 3}, four_box, Statistic.exactly(1).restricted(3))
    # z = (0.2, 0.384); the middle mass is 0.2*0.616 + 0.8*0.384 = 0.4304
    assert P.masses == pytest.approx([0.4928, 0.4304, 0.0768], abs=1e-15)


def test_conditional_preconditions(four_box):
    with pytest.raises(ValidationError):
        conditional_moments({3: 1}, four_box, 10, Statistic.occupied())
    with pytest.raises(ValidationError):
        conditional_moments({3: 1}, four_box, 10, Statistic.occupied().restricted(2))
    with pytest.raises(ValidationError):
        conditional_moments({2: 1}, four_box, 10, Statistic.occupied().restricted(3))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=60), st.sampled_from([None, 1, 2]))
def test_conditional_tp_bound(counts, r):
    model = power_model(200)
    j0, _ = split_j0(model)
    M = {j0 + i: c for i, c in enumerate(counts)}
    stat = Statistic(r=r, restricted_from=j0)
    chk = conditional_tp_check(M, model, stat)
    assert chk.passed
    assert 0.0 <= chk.d_tv <= 1.0


def test_mixture_law_moments(model200):
    n = 1000
    for stat in (Statistic.occupied(), Statistic.exactly(1), Statistic.occupied().restricted(5)):
        law = conditional_mc_law(model200, n, stat, 40_000, 21)
        m = moments(model200, n, stat)
        P = law.pmf
        assert P.masses.sum() + P.tail_defect == pytest.approx(1.0, abs=1e-12)
        se_mu = math.sqrt(m.var / 40_000)
        assert abs(P.mean() - m.mu) <= 4 * se_mu + 1e-6


def test_empirical_law(four_box):
    law = empirical_mc_law(four_box, 10, Statistic.occupied(), 20_000, 3)
    assert law.pmf.masses.sum() == pytest.approx(1.0)
    assert law.estimator == "empirical"
    q = law.pmf.masses
    assert law.tv_uncertainty == pytest.approx(np.sum(np.minimum(np.sqrt(q / 20_000), q)))


@pytest.fixture(scope="module")
def decomposition(zeta2):
    with pytest.warns(UserWarning):
        return decomposition_estimate(zeta2, 1024, Statistic.occupied(), 20_000, 17)


def test_decomposition_identity(decomposition):
    d = decomposition
    assert isinstance(d, Decomposition) and d.reps == 20_000
    assert min(d.sigma2, d.tau2, d.rho2, d.nu2) >= 0
    assert abs(d.identity_gap) <= 4 * d.identity_se


def test_decomposition_u_samples(decomposition):
    u = decomposition.u_samples
    assert abs(u.mean()) <= 1e-12
    se = math.sqrt(max(np.mean(u ** 4) - 1.0, 0.0) / u.size)
    assert abs(u.var(ddof=1) - 1.0) <= 4 * se + 1e-12


def test_decomposition_mean_matches_moments(decomposition, zeta2):
    d = decomposition
    m = moments(zeta2, 1024, Statistic.occupied().restricted(d.restricted_from))
    assert abs(d.mean_w - m.mu) <= 4 * d.std_errors["mean_w"]


def test_decomposition_deterministic(zeta2):
    stat = Statistic.exactly(1).restricted(tail_profile(zeta2, 512).jn)
    with pytest.warns(UserWarning):
        a = decomposition_estimate(zeta2, 512, stat, 2000, 4, threads=1)
    with pytest.warns(UserWarning):
        b = decomposition_estimate(zeta2, 512, stat, 2000, 4, threads=2)
    assert a.to_dict() == b.to_dict()
    with pytest.raises(ValidationError):
        decomposition_estimate(zeta2, 512, stat, 999, 4)


def test_condition_ratios(decomposition):
    c = condition_ratios(decomposition)
    assert c["nu2_over_rho2"] > 0 and c["rho2_over_sigma2"] > 0
    assert c["rho2_over_sigma2"] <= 1 + 4 * c["rho2_over_sigma2_se"]
    d = decomposition
    zero = Decomposition(d.sigma2, d.tau2, 0.0, d.nu2, d.u_samples, d.reps, d.std_errors,
                         d.mean_w, d.restricted_from)
    with pytest.raises(DegenerateModelError):
        condition_ratios(zero)
