"""Exact laws of occupancy statistics at desk scale.

exact_pmf runs a dynamic program over boxes in model order.  The state is
(m, k): balls already placed and the statistic so far.  Given m, the next
box receives Bin(n - m, p_j / t(j)) balls, where t(j) is the tail mass
from box j on.  All mass that is dropped (pruned states, clipped binomial
tails, balls beyond the last processed box) is accumulated in the Pmf's
tail_defect, so the table plus defect always accounts for total mass 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ResourceError, ValidationError
from .metrics import Pmf
from .moments import Statistic
from .weights import WeightModel

ENUM_LIMIT = 10**7
LOW_BOX_LIMIT = 25
# binomial tail mass left outside the transition window when prune_eps = 0
CLIP_FLOOR = 1e-30


@dataclass(frozen=True)
class DpConfig:
    J: int
    prune_eps: float = 0.0

    def __post_init__(self):
        if self.J < 1:
            raise ValidationError(f"J: must be >= 1, got {self.J}")
        if not 0.0 <= self.prune_eps <= 1e-9:
            raise ValidationError(f"prune_eps: must lie in [0, 1e-9], got {self.prune_eps}")


def default_config(model: WeightModel, n: int, prune_eps: float = 0.0) -> DpConfig:
    """All boxes of an explicit model; for infinite models the smallest J
    meeting the tail precondition (usually far too large to be useful)."""
    if model.support_size is not None:
        return DpConfig(model.support_size, prune_eps)
    J = 1
    while n * model.tail(J + 1) > 1e-10:
        J *= 2
    return DpConfig(J, prune_eps)


def _window(rem_lo: int, rem_hi: int, pi: float, target: float) -> tuple[int, int]:
    """Bernstein window holding all but `target` of Bin(rem, pi) for every
    rem in [rem_lo, rem_hi]."""
    L = math.log(1.0 / target)
    sd = math.sqrt(rem_hi * pi * (1.0 - pi))
    t = 2.0 * L / 3.0 + math.sqrt((2.0 * L / 3.0) ** 2 + 2.0 * L * sd * sd)
    lo = max(0, int(math.floor(rem_lo * pi - t)))
    hi = min(rem_hi, int(math.ceil(rem_hi * pi + t)))
    return lo, hi


def exact_pmf(model: WeightModel, n: int, stat: Statistic, cfg: DpConfig) -> Pmf:
    if n < 1:
        raise ValidationError(f"n: must be >= 1, got {n}")
    r = stat.r
    if r is not None and r > n:
        return Pmf.point(0)
    J = cfg.J
    if model.support_size is not None:
        J = min(J, model.support_size)
    beyond = n * model.tail(J + 1)
    if beyond > 0.1:
        raise ResourceError(
            f"n * tail mass past J={J} is {beyond:.3g} > 0.1; increase J")
    eps = cfg.prune_eps
    clip_target = min(CLIP_FLOOR, eps / (n * J)) if eps > 0 else CLIP_FLOOR
    first = stat.first_box

    tails = model.tail_array(J)  # tails[j-1] = t(j)
    probs = model.probs_upto(J)
    P = np.ones((1, 1))
    m_lo = 0
    k_lo = 0
    defect = 0.0

    for j in range(1, J + 1):
        tj = tails[j - 1]
        pi = 1.0 if tj <= 0 else min(1.0, probs[j - 1] / tj)
        if pi <= 0.0:
            continue
        if j == model.support_size:
            pi = 1.0
        rows = P.shape[0]
        m = m_lo + np.arange(rows)
        rem = n - m
        if pi >= 1.0:
            d_lo, d_hi = int(rem.min()), int(rem.max())
        else:
            d_lo, d_hi = _window(int(rem.min()), int(rem.max()), pi, clip_target)
        ds = np.arange(d_lo, d_hi + 1)
        Bm = stats.binom.pmf(ds[None, :], rem[:, None], pi)
        if pi < 1.0:
            leak = (stats.binom.cdf(d_lo - 1, rem, pi) + stats.binom.sf(d_hi, rem, pi))
            row_mass = P.sum(axis=1)
            defect += float(np.dot(row_mass, leak))
        counted = j >= first
        new = np.zeros((rows + d_hi - d_lo, P.shape[1] + 1))
        kw = P.shape[1]
        for i, d in enumerate(ds):
            col = Bm[:, i]
            if not col.any():
                continue
            inc = 1 if counted and (d >= 1 if r is None else d == r) else 0
            new[i : i + rows, inc : inc + kw] += P * col[:, None]
        m_lo += d_lo
        if eps > 0:
            small = (new < eps) & (new > 0)
            if small.any():
                defect += float(new[small].sum())
                new[small] = 0.0
        P, dm, dk = _trim(new)
        m_lo += dm
        k_lo += dk
        total = P.sum() + defect
        if abs(total - 1.0) > 1e-11 * (1.0 + j / 1000.0):
            raise AssertionError(f"mass not conserved at box {j}: {total!r}")

    # only states with every ball placed describe the full configuration
    row = n - m_lo
    if 0 <= row < P.shape[0]:
        masses = P[row].copy()
        defect += float(P.sum() - masses.sum())
    else:
        masses = np.zeros(1)
        defect += float(P.sum())
    masses = np.clip(masses, 0.0, None)
    defect = min(max(defect, 0.0), 1.0)
    # rounding in the table sum is below the validation tolerance; keep
    # masses + defect = 1 by clamping the defect into range
    return Pmf(k_lo, masses, defect).trimmed()


def _trim(A: np.ndarray):
    rows = np.flatnonzero(A.any(axis=1))
    cols = np.flatnonzero(A.any(axis=0))
    if rows.size == 0:
        return np.zeros((1, 1)), 0, 0
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    return A[r0:r1, c0:c1], int(r0), int(c0)


def enumerate_pmf(model: WeightModel, n: int, stat: Statistic) -> Pmf:
    """Law of the statistic by summing over all J^n labeled assignments."""
    J = model.support_size
    if J is None:
        raise ResourceError("enumeration needs a finite support")
    if J ** n > ENUM_LIMIT:
        raise ResourceError(f"J^n = {J}^{n} exceeds the enumeration limit {ENUM_LIMIT}")
    r = stat.r
    p = np.asarray(model.probs, dtype=float)
    counted = np.arange(1, J + 1) >= stat.first_box
    total = J ** n
    acc = np.zeros(n + 1)
    chunk = 1 << 16
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        counts = np.zeros((idx.size, J), dtype=np.int64)
        weight = np.ones(idx.size)
        rest = idx.copy()
        for _ in range(n):
            box = rest % J
            rest //= J
            counts[np.arange(idx.size), box] += 1
            weight *= p[box]
        hit = counts >= 1 if r is None else counts == r
        value = (hit & counted).sum(axis=1)
        acc += np.bincount(value, weights=weight, minlength=n + 1)
    return Pmf(0, acc, 0.0).trimmed()


def poisson_binomial_pmf(q) -> np.ndarray:
    """Masses of a sum of independent Bernoulli(q_i), by sequential convolution."""
    q = np.asarray(q, dtype=float)
    out = np.ones(1)
    for qi in q:
        if qi <= 0.0:
            continue
        nxt = np.empty(out.size + 1)
        nxt[:-1] = out * (1.0 - qi)
        nxt[-1] = 0.0
        nxt[1:] += out * qi
        out = nxt
    return out


def poissonized_success(p: np.ndarray, n: int, r: int | None) -> np.ndarray:
    x = n * np.asarray(p, dtype=float)
    if r is None:
        return -np.expm1(-x)
    return stats.poisson.pmf(r, x)


def poissonized_pmf(model: WeightModel, n: int, stat: Statistic, J: int) -> Pmf:
    """Law of sum_j B_j with independent B_j ~ Bernoulli(P[Po(n p_j) hits])."""
    if n < 1:
        raise ValidationError(f"n: must be >= 1, got {n}")
    if model.support_size is not None:
        J = min(J, model.support_size)
    first = stat.first_box
    p = model.probs_range(first, J) if J >= first else np.zeros(0)
    q = poissonized_success(p, n, stat.r)
    masses = poisson_binomial_pmf(q)
    if model.support_size is not None:
        rest = model.probs_range(max(J, first - 1) + 1, model.support_size)
        defect = float(np.sum(poissonized_success(rest, n, stat.r)))
    else:
        defect = n * model.tail(max(J + 1, first))
    defect = min(defect, 1.0)
    masses = masses * (1.0 - defect) if defect > 0 else masses
    # the table is the law conditional on no success past J, scaled by a
    # lower bound on that event's probability
    return Pmf(0, masses, max(0.0, 1.0 - masses.sum()))


def low_boxes_all_occupied(model: WeightModel, n: int, k: int) -> float:
    """P[N_j >= 1 for all j <= k] by inclusion-exclusion over subsets."""
    if k < 1:
        raise ValidationError(f"k: must be >= 1, got {k}")
    if k > LOW_BOX_LIMIT:
        raise ResourceError(f"k = {k} exceeds the inclusion-exclusion limit {LOW_BOX_LIMIT}")
    p = model.probs_upto(k)
    lo_bits = min(k, 20)
    sums = np.zeros(1)
    signs = np.ones(1)
    for x in p[:lo_bits]:
        sums = np.concatenate([sums, sums + x])
        signs = np.concatenate([signs, -signs])
    terms = []
    for mask in range(1 << (k - lo_bits)):
        extra = sum(p[lo_bits + b] for b in range(k - lo_bits) if mask >> b & 1)
        sgn = -1.0 if bin(mask).count("1") % 2 else 1.0
        s = np.minimum(sums + extra, 1.0)
        with np.errstate(divide="ignore"):
            vals = np.exp(n * np.log1p(-s))
        terms.append(sgn * float(np.dot(signs, vals)))
    return min(1.0, max(0.0, math.fsum(terms)))
