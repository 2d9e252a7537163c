import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from occupancy_tp.errors import DegenerateModelError, ValidationError
from occupancy_tp.weights import (hurwitz_zeta, jn_threshold, make_explicit, make_zeta, min_n0,
                                  model_from_dict, riemann_zeta, split_j0, tail_profile)

from conftest import power_model


def geometric40():
    p = np.array([2.0 ** -j for j in range(1, 41)])
    return make_explicit(p / p.sum())


MODELS = [
    make_explicit([0.5, 0.3, 0.15, 0.05]),
    make_explicit([0.5, 0.3, 0.2]),
    geometric40(),
    power_model(200),
    make_zeta(2.0),
    make_zeta(1.5),
    make_zeta(3.0),
]


def test_explicit_echo_and_cumulative(four_box):
    m = make_explicit([0.5, 0.3, 0.2])
    assert m.prob(2) == 0.3
    assert m.prob(4) == 0.0
    assert [four_box.cumulative(j) for j in range(1, 5)] == pytest.approx([0.5, 0.8, 0.95, 1.0], abs=1e-15)


@pytest.mark.parametrize("probs, index", [
    ([0.3, 0.5, 0.2], 2),
    ([0.5, 0.5, 0.0], 3),
    ([0.6, -0.1, 0.5], 2),
])
def test_explicit_rejects_naming_index(probs, index):
    with pytest.raises(ValidationError, match=rf"probs\[{index}\]"):
        make_explicit(probs)


def test_explicit_rejects_normalization():
    with pytest.raises(ValidationError, match="sum"):
        make_explicit([0.5, 0.3, 0.1])


def test_zeta_values():
    z = make_zeta(2.0)
    assert z.prob(1) == pytest.approx(6 / math.pi ** 2, rel=1e-14)
    assert z.prob(2) == pytest.approx(z.prob(1) / 4, rel=1e-14)
    with pytest.raises(ValidationError):
        make_zeta(1.0)
    with pytest.raises(ValidationError):
        make_zeta(0.5)


def test_zeta_partial_sum_a15():
    z = make_zeta(1.5)
    s = math.fsum(z.probs_upto(10 ** 6))
    assert 0.998 <= s < 1.0
    # against the independent series evaluation
    assert s == pytest.approx(1.0 - special.zeta(1.5, 10 ** 6 + 1) / special.zeta(1.5), rel=1e-12)


@pytest.mark.parametrize("s", [1.1, 1.5, 2.0, 3.0, 7.5])
@pytest.mark.parametrize("q", [1.0, 2.0, 17.0, 1000.0, 1e6])
def test_hurwitz_against_scipy(s, q):
    assert hurwitz_zeta(s, q) == pytest.approx(special.zeta(s, q), rel=1e-13)


def test_riemann_zeta():
    assert riemann_zeta(2.0) == pytest.approx(math.pi ** 2 / 6, rel=1e-15)


@pytest.mark.parametrize("model", MODELS, ids=repr)
def test_power_law_scaling_and_tails(model):
    js = np.array([1, 2, 5, 10, 100, 1000, 40000, 10 ** 6])
    if model.kind == "zeta":
        p = np.array([model.prob(int(j)) for j in js])
        c = p * js.astype(float) ** model.exponent
        assert np.allclose(c, c[0], rtol=1e-12, atol=0)
    for j in [1, 2, 3, 7, 50]:
        assert model.tail(j) + model.cumulative(j - 1) == pytest.approx(1.0, abs=1e-12)


def test_zeta_tail_bounds_bracket():
    z = make_zeta(2.0)
    for J in [10, 1000, 10 ** 5]:
        lo, hi = z.tail_bounds(J)
        assert lo <= z.tail(J + 1) <= hi


def test_split_j0_examples(four_box):
    assert split_j0(four_box) == (3, pytest.approx(0.2))
    j0, P0 = split_j0(geometric40())
    assert j0 == 3 and P0 == pytest.approx(0.25, rel=1e-9)
    j0, P0 = split_j0(make_explicit([1.0]))
    assert (j0, P0) == (2, 0.0)


@pytest.mark.parametrize("model", MODELS, ids=repr)
def test_split_j0_by_direct_summation(model):
    j0, P0 = split_j0(model)
    assert P0 < 0.5
    assert model.tail(j0 - 1) >= 0.5 - 1e-12
    if model.support_size is not None:
        p = model.probs_upto(model.support_size)
        assert P0 == pytest.approx(math.fsum(p[j0 - 1:]), abs=1e-15)


def test_tail_profile_examples(four_box, zeta2):
    prof = tail_profile(four_box, 100)
    assert jn_threshold(100) == pytest.approx(0.1842068, abs=1e-7)
    assert (prof.jn, prof.pbar) == (3, 0.15)
    assert prof.Pn == pytest.approx(0.2)
    prof = tail_profile(zeta2, 4000)
    assert prof.jn == 9
    assert jn_threshold(4000) == pytest.approx(0.008294, abs=1e-6)


def test_tail_profile_whole_tail():
    m = make_explicit([0.01] * 100)
    prof = tail_profile(m, 10)
    assert prof.jn == 1 and prof.Pn == 1.0


@pytest.mark.parametrize("model", MODELS, ids=repr)
def test_jn_definition_and_monotone(model):
    grid = sorted(set(np.unique(np.geomspace(3, 10 ** 5, 300).astype(int))))
    prev = 0
    for n in grid:
        prof = tail_profile(model, int(n))
        thr = 4 * math.log(n) / n
        assert model.prob(prof.jn) < thr
        if prof.jn > 1:
            assert model.prob(prof.jn - 1) >= thr
        assert prof.Pn + model.cumulative(prof.jn - 1) == pytest.approx(1.0, abs=1e-12)
        assert prof.jn >= prev
        prev = prof.jn


def test_monotonicity_facts_behind_n0():
    n = np.arange(3, 10 ** 5, dtype=float)
    thr = 4 * np.log(n) / n
    assert np.all(np.diff(thr) < 0)
    m = n[n >= math.e ** 2]
    g = m / np.log(m) ** 2
    assert np.all(np.diff(g) > 0)


def _n0_scan(model):
    j0, P0 = split_j0(model)
    n = 3
    while not (n / math.log(n) ** 2 >= 16 / P0 and tail_profile(model, n).jn >= j0):
        n += 1
    return n


def test_min_n0_examples(four_box):
    n0 = min_n0(four_box)
    assert n0 == _n0_scan(four_box) == 6071
    half = make_explicit([0.5, 0.25, 0.25])
    assert split_j0(half)[1] == 0.25
    m = make_explicit([0.25, 0.25, 0.25, 0.25])  # P_0 = 0.25 for j_0 = 4
    assert min_n0(m) == _n0_scan(m)
    assert min_n0(make_zeta(2.0)) == 2498
    with pytest.raises(DegenerateModelError):
        min_n0(make_explicit([1.0]))


def test_n_over_log2_threshold_32():
    # first n with n / log^2 n >= 32, by integer scan
    n = 3
    while n / math.log(n) ** 2 < 32:
        n += 1
    assert n == 1798


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=12))
def test_min_n0_matches_scan(raw):
    p = np.sort(np.array(raw))[::-1]
    p = p / p.sum()
    model = make_explicit(p)
    if split_j0(model)[1] <= 0:
        return
    n0 = min_n0(model)
    assert n0 >= 3
    assert n0 == _n0_scan(model)


@settings(max_examples=200, deadline=None)
@given(st.floats(2.0 ** -53, 1.0))
def test_locate_inverts_tail(v):
    z = make_zeta(2.0)
    j = int(z.locate(np.array([v]))[0])
    assert z.tail(j + 1) < v <= z.tail(j) * (1 + 1e-12)


def test_model_json_round_trip(four_box, zeta2):
    for m in (four_box, zeta2):
        again = model_from_dict(m.to_dict())
        assert again.to_dict() == m.to_dict()
    with pytest.raises(ValidationError, match="kind"):
        model_from_dict({"probs": [1.0]})
    with pytest.raises(ValidationError, match="exponent"):
        model_from_dict({"kind": "zeta"})
