"""Monte Carlo samplers and the two-stage (thinning) construction.

Randomness
----------
Every random quantity is drawn from a Philox generator keyed by
SeedSequence(seed, spawn_key=(purpose, index)).  Batched samplers work in
fixed-size chunks of replicates, keyed by chunk index, so results do not
depend on how chunks are scheduled across threads.

Two-stage construction
----------------------
Stage one throws n balls into boxes j >= j_0 with probabilities p_j / P_0,
giving counts M_j.  Each ball is then kept with probability P_0, so
N_j | M_j ~ Bin(M_j, P_0) independently, and (N_j, j >= j_0) has exactly
the occupancy law.  Given M, the indicators I[N_j >= 1] (or I[N_j = r]) are
independent Bernoulli(z(M_j)).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import stats

from .errors import DegenerateModelError, ValidationError
from .exactdist import poisson_binomial_pmf
from .metrics import Pmf
from .moments import Statistic, indicator_probs
from .tpoisson import distances_to_tp, fit_tp
from .weights import WeightModel, min_n0, split_j0, tail_profile

CHUNK = 8192
SATURATION = 1e-17

_DIRECT, _TWO_STAGE, _SINGLE, _MIXTURE, _DECOMP = 1, 2, 3, 4, 5


def _check_seed(seed) -> int:
    if seed is None:
        raise ValidationError("seed: required")
    seed = int(seed)
    if not 0 <= seed < 1 << 64:
        raise ValidationError(f"seed: must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _map_chunks(fn, reps: int, threads: int = 1):
    """Run fn(chunk_index, size) over fixed-size chunks, results in order."""
    jobs = [(c, min(CHUNK, reps - c * CHUNK)) for c in range((reps + CHUNK - 1) // CHUNK)]
    if threads <= 1 or len(jobs) == 1:
        return [fn(c, size) for c, size in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


@dataclass(frozen=True)
class AllocationSample:
    n: int
    counts: dict
    seed: int
    stage_one: dict | None = None

    def statistic(self, stat: Statistic) -> int:
        first = stat.first_box
        if stat.r is None:
            return sum(1 for j, c in self.counts.items() if j >= first and c >= 1)
        return sum(1 for j, c in self.counts.items() if j >= first and c == stat.r)


def _sparse(boxes: np.ndarray) -> dict:
    u, c = np.unique(boxes, return_counts=True)
    return {int(j): int(k) for j, k in zip(u, c)}


def sample_counts(model: WeightModel, n: int, seed: int) -> AllocationSample:
    """n independent inverse-CDF draws."""
    if n < 1:
        raise ValidationError(f"n: must be >= 1, got {n}")
    rng = stream(seed, _SINGLE)
    v = 1.0 - rng.random(n)
    return AllocationSample(n, _sparse(model.locate(v)), int(seed))


def two_stage_sample(model: WeightModel, n: int, seed: int) -> AllocationSample:
    j0, P0 = split_j0(model)
    if P0 <= 0:
        raise DegenerateModelError("P_0 = 0: two-stage construction undefined")
    rng = stream(seed, _TWO_STAGE)
    v = P0 * (1.0 - rng.random(n))
    M = _sparse(model.locate(v))
    boxes = np.array(list(M), dtype=np.int64)
    kept = rng.binomial(np.array([M[j] for j in boxes]), P0)
    N = {int(j): int(c) for j, c in zip(boxes, kept) if c > 0}
    return AllocationSample(n, N, int(seed), stage_one=M)


# -- batched stage sampler -------------------------------------------------------

def _head_size(model: WeightModel, n: int, start: int) -> int:
    ts = model.tail(start)
    last = model.first_index_below(ts / n)  # boxes with n p_j / t(start) >= 1
    H = max(1, last - start)
    if model.support_size is not None:
        H = min(H, model.support_size - start + 1)
    return H


def batch_counts(model: WeightModel, n: int, reps: int, rng, start: int = 1, H: int | None = None):
    """Sparse counts of `reps` independent throws of n balls into boxes
    j >= start with probabilities p_j / t(start).

    Returns (rep, box, count) arrays listing every nonempty box.  The H
    largest boxes are filled by sequential conditional binomials; the
    remaining balls are placed one by one by inverse CDF.
    """
    if H is None:
        H = _head_size(model, n, start)
    tails = model.tails_of(np.arange(start, start + H + 1))
    probs = model.probs_range(start, start + H - 1)
    remaining = np.full(reps, n, dtype=np.int64)
    reps_idx, box_idx, cnt = [], [], []
    for i in range(H):
        pi = 1.0 if tails[i] <= 0 else min(1.0, probs[i] / tails[i])
        N = rng.binomial(remaining, pi)
        remaining -= N
        nz = np.flatnonzero(N)
        reps_idx.append(nz)
        box_idx.append(np.full(nz.size, start + i, dtype=np.int64))
        cnt.append(N[nz])
    T = int(remaining.sum())
    if T > 0:
        owner = np.repeat(np.arange(reps, dtype=np.int64), remaining)
        v = tails[H] * (1.0 - rng.random(T))
        boxes = model.locate(v)
        key = np.stack([owner, boxes])
        order = np.lexsort((boxes, owner))
        key = key[:, order]
        change = np.flatnonzero(np.r_[True, (np.diff(key[0]) != 0) | (np.diff(key[1]) != 0)])
        lens = np.diff(np.r_[change, T])
        reps_idx.append(key[0, change])
        box_idx.append(key[1, change])
        cnt.append(lens)
    return np.concatenate(reps_idx), np.concatenate(box_idx), np.concatenate(cnt)


def _indicator(counts: np.ndarray, r: int | None) -> np.ndarray:
    return counts >= 1 if r is None else counts == r


def sample_statistic(model: WeightModel, n: int, stat: Statistic, reps: int, seed: int,
                     threads: int = 1) -> np.ndarray:
    """Independent replicates of the statistic by direct simulation."""
    first = stat.first_box
    H = _head_size(model, n, 1)

    def run(c, size):
        rng = stream(seed, _DIRECT, c)
        rep, box, cnt = batch_counts(model, n, size, rng, 1, H)
        keep = (box >= first) & _indicator(cnt, stat.r)
        return np.bincount(rep[keep], minlength=size)

    return np.concatenate(_map_chunks(run, reps, threads))


# -- conditional quantities ------------------------------------------------------

def z_kernel(l, P0: float, r: int | None) -> np.ndarray:
    """P[I = 1 | M_j = l]: 1 - (1-P0)^l, or Bin(l, P0){r}."""
    l = np.asarray(l)
    if r is None:
        if P0 >= 1.0:
            return (l > 0).astype(float)
        return -np.expm1(l * np.log1p(-P0))
    return stats.binom.pmf(r, l, P0)


def _restricted_start(model: WeightModel, n: int, stat: Statistic) -> int:
    j0, _ = split_j0(model)
    if stat.restricted_from is None:
        raise ValidationError("stat.restricted_from: required (use j_n)")
    if stat.restricted_from < j0:
        raise ValidationError(
            f"restricted_from = {stat.restricted_from} < j_0 = {j0}: not realized by the construction")
    return stat.restricted_from


def _active_z(M: dict, model: WeightModel, stat: Statistic) -> np.ndarray:
    j0, P0 = split_j0(model)
    if any(j < j0 for j in M):
        raise ValidationError("M: stage-one counts must be supported on j >= j_0")
    first = stat.first_box
    l = np.array([c for j, c in sorted(M.items()) if j >= first and c > 0], dtype=np.int64)
    return z_kernel(l, P0, stat.r) if l.size else np.zeros(0)


def conditional_moments(M: dict, model: WeightModel, n: int, stat: Statistic) -> tuple[float, float]:
    """(mu_M, sigma2_M) = (sum z, sum z(1-z)) over j >= restricted_from."""
    _restricted_start(model, n, stat)
    z = _active_z(M, model, stat)
    return math.fsum(z), math.fsum(z * (1.0 - z))


def conditional_pmf_given_M(M: dict, model: WeightModel, stat: Statistic) -> Pmf:
    if stat.restricted_from is None:
        raise ValidationError("stat.restricted_from: required (use j_n)")
    z = _active_z(M, model, stat)
    return Pmf(0, poisson_binomial_pmf(z), 0.0)


@dataclass(frozen=True)
class ConditionalBoundCheck:
    mu: float
    sigma2: float
    d_tv: float
    d_loc: float
    bound_tv: float
    bound_loc: float
    uncertainty: float

    @property
    def passed(self) -> bool:
        return (self.d_tv <= self.bound_tv + self.uncertainty
                and self.d_loc <= self.bound_loc + self.uncertainty)


C1, C2 = 4.0, 280.0


def conditional_tp_check(M: dict, model: WeightModel, stat: Statistic) -> ConditionalBoundCheck:
    """Distances from the conditional law given M to TP(mu_M, sigma2_M),
    against min(C1 / sigma_M, 1) and min(C2 / sigma2_M, 1)."""
    z = _active_z(M, model, stat)
    mu, s2 = math.fsum(z), math.fsum(z * (1.0 - z))
    law = Pmf(0, poisson_binomial_pmf(z), 0.0)
    tv, loc = distances_to_tp(law, fit_tp(mu, s2))
    b_tv = min(C1 / math.sqrt(s2), 1.0) if s2 > 0 else 1.0
    b_loc = min(C2 / s2, 1.0) if s2 > 0 else 1.0
    return ConditionalBoundCheck(mu, s2, tv.value, loc.value, b_tv, b_loc,
                                 tv.uncertainty + loc.uncertainty + 1e-12)


# -- mixture estimator of the law ------------------------------------------------

@dataclass(frozen=True)
class McLaw:
    """Monte Carlo estimate of a law with per-point standard errors.

    tv_uncertainty and loc_uncertainty are the radii attached to distances
    computed from this estimate."""

    pmf: Pmf
    se: np.ndarray
    reps: int
    estimator: str
    tv_uncertainty: float
    loc_uncertainty: float


def _saturation_index(P0: float, r: int | None) -> int:
    """Smallest l* with |z(l) - z(inf)| <= SATURATION for all l >= l*."""
    if r is None:
        return max(1, int(math.ceil(math.log(SATURATION) / math.log1p(-P0))))
    l = max(r, int(math.ceil(r / P0)))
    while z_kernel(l, P0, r) > SATURATION:
        l += max(1, l // 16)
    return l


def conditional_mc_law(model: WeightModel, n: int, stat: Statistic, reps: int, seed: int,
                       threads: int = 1) -> McLaw:
    """Rao-Blackwellized estimate of the law of the statistic.

    For each stage-one draw M, the conditional law of the high-box part
    (boxes j >= j_0) is a Poisson-binomial law, evaluated exactly through
    its characteristic function; the estimate is the average of these
    laws.  Counted boxes below j_0 are treated as deterministic (all
    occupied for K_n, none with exactly r balls); the probability that
    this fails is added to the defect.
    """
    j0, P0 = split_j0(model)
    if P0 <= 0:
        raise DegenerateModelError("P_0 = 0: two-stage construction undefined")
    r = stat.r
    first = stat.first_box
    low = np.arange(first, j0)
    p_low = model.probs_range(first, j0 - 1) if low.size else np.zeros(0)
    q_low = indicator_probs(p_low, n, r)
    if r is None:
        const = int(low.size)
        low_defect = float(np.sum(1.0 - q_low))
    else:
        const = 0
        low_defect = float(np.sum(q_low))
    lstar = _saturation_index(P0, r)
    zl = z_kernel(np.arange(lstar + 1), P0, r)
    sat_defect = n / max(lstar, 1) * SATURATION
    start = max(first, j0)
    H = _head_size(model, n, j0)

    def run(c, size):
        rng = stream(seed, _MIXTURE, c)
        rep, box, cnt = batch_counts(model, n, size, rng, j0, H)
        keep = box >= start
        rep, cnt = rep[keep], np.minimum(cnt[keep], lstar)
        active = zl[cnt] > 0
        width = int(np.bincount(rep[active], minlength=size).max(initial=0)) + 1
        W = 1 << max(3, int(math.ceil(math.log2(width + 1))))
        C = np.bincount(rep * (lstar + 1) + cnt, minlength=size * (lstar + 1))
        C = C.reshape(size, lstar + 1).astype(float)
        C[:, 0] = 0.0
        omega = 2.0 * np.pi * np.arange(W // 2 + 1) / W
        w = 1.0 - zl[:, None] + zl[:, None] * np.exp(-1j * omega)[None, :]
        G = np.log(np.maximum(np.abs(w), 1e-300)) + 1j * np.angle(w)
        g = np.fft.irfft(np.exp(C @ G), n=W, axis=1)
        g = np.clip(g, 0.0, None)
        return g.sum(axis=0), (g * g).sum(axis=0)

    parts = _map_chunks(run, reps, threads)
    K = max(len(s1) for s1, _ in parts)
    s1 = np.zeros(K)
    s2 = np.zeros(K)
    for a, b in parts:
        s1[: len(a)] += a
        s2[: len(b)] += b
    mean = s1 / reps
    var = np.maximum(s2 / reps - mean * mean, 0.0) * reps / max(reps - 1, 1)
    se = np.sqrt(var / reps)
    nz = np.flatnonzero(mean > 0)
    hi = nz[-1] + 1 if nz.size else 1
    mean, se = mean[:hi], se[:hi]
    defect = min(low_defect + sat_defect, 1.0)
    masses = mean / mean.sum() * (1.0 - defect)
    pmf = Pmf(const, masses, defect)
    return McLaw(pmf, se, reps, "conditional", float(np.sum(se)), float(np.sqrt(np.sum(se * se))))


def empirical_mc_law(model: WeightModel, n: int, stat: Statistic, reps: int, seed: int,
                     threads: int = 1) -> McLaw:
    """Plug-in frequencies of direct replicates.

    The TV radius is the bias bound sum_k min(sqrt(q_k / N), q_k); the local
    radius is the largest binomial standard error."""
    values = sample_statistic(model, n, stat, reps, seed, threads)
    lo = int(values.min())
    q = np.bincount(values - lo) / reps
    se = np.sqrt(q * (1.0 - q) / reps)
    tv_unc = float(np.sum(np.minimum(np.sqrt(q / reps), q)))
    return McLaw(Pmf(lo, q, 0.0), se, reps, "empirical", tv_unc, float(se.max()))


# -- decomposition ---------------------------------------------------------------

def _var_se(x: np.ndarray) -> float:
    R = x.size
    d = x - x.mean()
    s2 = float(np.dot(d, d)) / (R - 1)
    m4 = float(np.mean(d ** 4))
    return math.sqrt(max(m4 - (R - 3) / (R - 1) * s2 * s2, 0.0) / R)


@dataclass
class Decomposition:
    sigma2: float
    tau2: float
    rho2: float
    nu2: float
    u_samples: np.ndarray
    reps: int
    std_errors: dict
    mean_w: float
    restricted_from: int
    clamped: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def identity_gap(self) -> float:
        return self.sigma2 - self.rho2 - self.tau2

    @property
    def identity_se(self) -> float:
        s = self.std_errors
        return math.sqrt(s["sigma2"] ** 2 + s["rho2"] ** 2 + s["tau2"] ** 2)

    def to_dict(self, include_u: bool = True) -> dict:
        out = {
            "sigma2": self.sigma2, "tau2": self.tau2, "rho2": self.rho2, "nu2": self.nu2,
            "reps": self.reps, "std_errors": dict(self.std_errors), "mean_w": self.mean_w,
            "restricted_from": self.restricted_from, "clamped": dict(self.clamped),
            "notes": list(self.notes),
        }
        if include_u:
            out["u_samples"] = [float(u) for u in self.u_samples]
        return out


def decomposition_estimate(model: WeightModel, n: int, stat: Statistic, reps: int, seed: int,
                           threads: int = 1) -> Decomposition:
    """Monte Carlo estimates of sigma^2, tau^2 = Var mu_M, rho^2 = E sigma2_M
    and nu^2 = Var sigma2_M for the restricted statistic W."""
    if reps < 1000:
        raise ValidationError(f"reps: must be >= 1000, got {reps}")
    j0, P0 = split_j0(model)
    if P0 <= 0:
        raise DegenerateModelError("P_0 = 0: two-stage construction undefined")
    notes = []
    if stat.restricted_from is None:
        jn = tail_profile(model, n).jn
        if jn < j0:
            warnings.warn(f"j_n = {jn} < j_0 = {j0}; restricting to j >= j_0 instead")
            notes.append(f"j_n = {jn} < j_0; restricted to j >= {j0}")
        stat = stat.restricted(max(jn, j0))
    start = _restricted_start(model, n, stat)
    if n < min_n0(model):
        warnings.warn(f"n = {n} is below n_0 = {min_n0(model)}")
        notes.append("n below n_0")
    r = stat.r
    H = _head_size(model, n, j0)

    def run(c, size):
        rng = stream(seed, _DECOMP, c)
        rep, box, cnt = batch_counts(model, n, size, rng, j0, H)
        keep = box >= start
        rep, cnt = rep[keep], cnt[keep]
        z = z_kernel(cnt, P0, r)
        mu = np.bincount(rep, weights=z, minlength=size)
        s2 = np.bincount(rep, weights=z * (1.0 - z), minlength=size)
        kept = rng.binomial(cnt, P0)
        w = np.bincount(rep[_indicator(kept, r)], minlength=size)
        return mu, s2, w

    parts = _map_chunks(run, reps, threads)
    mu = np.concatenate([p[0] for p in parts])
    s2 = np.concatenate([p[1] for p in parts])
    w = np.concatenate([p[2] for p in parts]).astype(float)
    tau2 = float(np.var(mu, ddof=1))
    if tau2 <= 0:
        raise DegenerateModelError("estimated tau^2 = 0: U is undefined")
    rho2 = float(np.mean(s2))
    nu2 = float(np.var(s2, ddof=1))
    sigma2 = float(np.var(w, ddof=1))
    se = {
        "sigma2": _var_se(w),
        "tau2": _var_se(mu),
        "rho2": float(np.std(s2, ddof=1)) / math.sqrt(reps),
        "nu2": _var_se(s2),
        "mean_w": float(np.std(w, ddof=1)) / math.sqrt(reps),
    }
    u = (mu - mu.mean()) / math.sqrt(tau2)
    clamped = {k: False for k in ("sigma2", "tau2", "rho2", "nu2")}
    return Decomposition(sigma2, tau2, rho2, nu2, u, reps, se, float(w.mean()),
                         start, clamped, notes)


def condition_ratios(dec: Decomposition) -> dict:
    """nu^2 / rho^2 and rho^2 / sigma^2 with delta-method standard errors."""
    if dec.rho2 <= 0:
        raise DegenerateModelError("rho^2 estimate is 0")
    if dec.sigma2 <= 0:
        raise DegenerateModelError("sigma^2 estimate is 0")
    s = dec.std_errors
    a = dec.nu2 / dec.rho2
    b = dec.rho2 / dec.sigma2
    sa = a * math.hypot(s["nu2"] / dec.nu2 if dec.nu2 > 0 else 0.0, s["rho2"] / dec.rho2)
    sb = b * math.hypot(s["rho2"] / dec.rho2, s["sigma2"] / dec.sigma2)
    return {"nu2_over_rho2": a, "nu2_over_rho2_se": sa,
            "rho2_over_sigma2": b, "rho2_over_sigma2_se": sb}


# -- exact laws of the two constructions (tiny scale) ----------------------------

def _compositions(n: int, k: int):
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, k - 1):
            yield (first,) + rest


def two_stage_law_exact(model: WeightModel, n: int) -> dict:
    """Law of (N_j, j_0 <= j <= J) under the two-stage construction."""
    J = model.support_size
    if J is None:
        raise ValidationError("exact two-stage law needs a finite model")
    j0, P0 = split_j0(model)
    q = model.probs_range(j0, J) / P0
    k = J - j0 + 1
    law: dict = {}
    for M in _compositions(n, k):
        pm = math.factorial(n) * math.prod(q[i] ** M[i] / math.factorial(M[i]) for i in range(k))
        ranges = [range(m + 1) for m in M]
        for N in product(*ranges):
            pt = math.prod(stats.binom.pmf(N[i], M[i], P0) for i in range(k))
            law[N] = law.get(N, 0.0) + pm * pt
    return law


def occupancy_marginal_law_exact(model: WeightModel, n: int, boxes) -> dict:
    """Law of (N_j, j in boxes) by enumerating labeled assignments."""
    J = model.support_size
    if J is None:
        raise ValidationError("exact marginal law needs a finite model")
    p = model.probs_upto(J)
    boxes = list(boxes)
    law: dict = {}
    for assign in product(range(J), repeat=n):
        w = math.prod(p[a] for a in assign)
        key = tuple(sum(1 for a in assign if a == j - 1) for j in boxes)
        law[key] = law.get(key, 0.0) + w
    return law
