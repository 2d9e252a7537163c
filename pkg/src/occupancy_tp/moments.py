"""Means and variances of K_n, K_{n,r} and their restricted versions.

Two evaluation modes:

exact
    Full pairwise double sum over every box with non-negligible mass.
    Only admitted for at most EXACT_MAX_BOXES boxes.
hybrid
    Exact double sum over the HYBRID_HEAD largest boxes.  Pairs involving
    a smaller box use a separable first-order covariance, accumulated via
    single sums, and boxes past a cut index are folded into an analytic
    first-order tail.  Every approximation carries a certified bound that
    is reported as ``truncation_error``.

Powers (1 - p)^n are always formed as exp(n * log1p(-p)).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np

from .errors import ResourceError, ValidationError
from .weights import WeightModel, tail_profile

EXACT_MAX_BOXES = 5000
EXACT_TAIL_TOL = 1e-12
HYBRID_HEAD = 2000
HYBRID_CUT_MAX = 1 << 24
ROW_BLOCK = 256
MID_CHUNK = 1 << 20


@dataclass(frozen=True)
class Statistic:
    """Occupied-box count (r is None) or count of boxes holding exactly r balls.

    restricted_from, when set, sums indicators over j >= restricted_from only.
    """

    r: int | None = None
    restricted_from: int | None = None

    def __post_init__(self):
        if self.r is not None and self.r < 1:
            raise ValidationError(f"r: must be >= 1, got {self.r}")
        if self.restricted_from is not None and self.restricted_from < 1:
            raise ValidationError("restricted_from: must be >= 1")

    @classmethod
    def occupied(cls) -> "Statistic":
        return cls()

    @classmethod
    def exactly(cls, r: int) -> "Statistic":
        return cls(r=int(r))

    @property
    def is_occupied(self) -> bool:
        return self.r is None

    @property
    def first_box(self) -> int:
        return self.restricted_from or 1

    def restricted(self, j: int) -> "Statistic":
        return replace(self, restricted_from=int(j))

    def label(self) -> str:
        return "kn" if self.r is None else f"knr:{self.r}"

    @classmethod
    def parse(cls, text: str) -> "Statistic":
        text = text.strip().lower()
        if text == "kn":
            return cls()
        m = re.fullmatch(r"knr:(\d+)", text)
        if not m:
            raise ValidationError(f"stat: expected 'kn' or 'knr:<r>', got {text!r}")
        return cls.exactly(int(m.group(1)))


@dataclass(frozen=True)
class MomentSummary:
    mu: float
    var: float
    truncation_error: float
    mode: str

    def to_dict(self) -> dict:
        return {"mu": self.mu, "var": self.var,
                "truncation_error": self.truncation_error, "mode": self.mode}


def _log_choose_ratio(n: int, r: int) -> float:
    """log[(n-r)!^2 / (n! (n-2r)!)], requires n >= 2r.

    Summed as log1p terms so the small result keeps full relative precision."""
    return math.fsum(math.log1p(-r / (n - i)) for i in range(r))


def indicator_probs(p: np.ndarray, n: int, r: int | None) -> np.ndarray:
    """P[N_j >= 1] or P[N_j = r] for N_j ~ Bin(n, p_j)."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        lq = np.log1p(-np.minimum(p, 1.0))
    if r is None:
        return -np.expm1(n * lq)
    if r > n:
        return np.zeros_like(p)
    out = np.zeros_like(p)
    pos = p > 0
    full = p >= 1.0
    lp = np.log(p[pos & ~full])
    lc = math.log(math.comb(n, r))
    out[pos & ~full] = np.exp(lc + r * lp + (n - r) * lq[pos & ~full])
    out[full] = 1.0 if r == n else 0.0
    return out


def _pair_cov_block(pa, pb, za, zb, n, r):
    """Exact covariances Cov(I_j, I_s) for j in block a, s in block b."""
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.outer(pa, pb) / np.outer(1.0 - pa, 1.0 - pb)
    x = np.where(np.isfinite(x), x, 1.0)
    if r is None:
        # (1-pj-ps)^n - Aj As = -Aj As (1 - (1 - x)^n)
        Aa, Ab = 1.0 - za, 1.0 - zb
        with np.errstate(divide="ignore"):
            return np.outer(Aa, Ab) * np.expm1(n * np.log1p(-np.minimum(x, 1.0)))
    zz = np.outer(za, zb)
    if n < 2 * r:
        return -zz
    with np.errstate(divide="ignore", invalid="ignore"):
        la = np.log1p(-pa)
        lb = np.log1p(-pb)
        L = (_log_choose_ratio(n, r) - r * (la[:, None] + lb[None, :])
             + (n - 2 * r) * np.log1p(-np.minimum(x, 1.0)))
    return zz * np.expm1(L)


def _exact_sums(p: np.ndarray, n: int, r, counted: np.ndarray):
    """(mu, var) by the full double sum over the given boxes."""
    z = indicator_probs(p, n, r)
    z = np.where(counted, z, 0.0)
    mu = math.fsum(z)
    diag = math.fsum(z * (1.0 - z))
    idx = np.flatnonzero(counted & (z > 0))
    pc, zc = p[idx], z[idx]
    block_sums = []
    for a in range(0, len(idx), ROW_BLOCK):
        sl = slice(a, a + ROW_BLOCK)
        C = _pair_cov_block(pc[sl], pc, zc[sl], zc, n, r)
        rows = np.arange(a, min(a + ROW_BLOCK, len(idx)))
        C[rows - a, rows] = 0.0
        block_sums.append(math.fsum(C.sum(axis=1)))
    off = math.fsum(block_sums)
    return mu, diag + off


def pairwise_covariances(model: WeightModel, n: int, stat: Statistic, J: int) -> np.ndarray:
    """Matrix of Cov(I_j, I_s) over the first J boxes (zero diagonal)."""
    p = model.probs_upto(J)
    z = indicator_probs(p, n, stat.r)
    C = _pair_cov_block(p, p, z, z, n, stat.r)
    np.fill_diagonal(C, 0.0)
    return C


def _exact_box_count(model: WeightModel, n: int) -> int:
    if model.support_size is not None:
        return model.support_size
    # smallest J with n * t(J+1) <= EXACT_TAIL_TOL, found by doubling
    J = 1
    while n * model.tail(J + 1) > EXACT_TAIL_TOL:
        J *= 2
        if J > 64 * EXACT_MAX_BOXES:
            return J
    return J


def moments(model: WeightModel, n: int, stat: Statistic, mode: str = "auto") -> MomentSummary:
    """Mean and variance of the statistic with a certified error bound."""
    if n < 1:
        raise ValidationError(f"n: must be >= 1, got {n}")
    if stat.r is not None and n < stat.r:
        raise ValidationError(f"n: must be >= r = {stat.r}")
    if mode not in ("auto", "exact", "hybrid"):
        raise ValidationError(f"mode: unknown {mode!r}")
    J = _exact_box_count(model, n)
    if mode == "auto":
        mode = "exact" if J <= EXACT_MAX_BOXES else "hybrid"
    if mode == "exact":
        if J > EXACT_MAX_BOXES:
            raise ResourceError(
                f"exact mode needs {J} boxes (> {EXACT_MAX_BOXES}); use mode 'hybrid'")
        return _moments_exact(model, n, stat, J)
    return _moments_hybrid(model, n, stat)


def _moments_exact(model, n, stat, J) -> MomentSummary:
    p = model.probs_upto(J)
    counted = np.arange(1, J + 1) >= stat.first_box
    mu, var = _exact_sums(p, n, stat.r, counted)
    nt = n * model.tail(J + 1)
    err = 0.0
    if nt > 0:
        # boxes past J hold at most Bin(n, t) balls; B <= that count
        eb2 = nt + nt * nt
        err = max(nt, eb2 + 2.0 * math.sqrt(max(var, 0.0) * eb2))
    return MomentSummary(mu, max(var, 0.0), err, "exact")


def _hybrid_cut(model: WeightModel, n: int) -> int:
    """Cut index past which boxes are handled by the analytic tail."""
    if model.support_size is not None:
        return model.support_size
    J = max(HYBRID_HEAD, 1 << 16)
    while J < HYBRID_CUT_MAX:
        pj = model.prob(J + 1)
        if n * n * pj * model.tail(J + 1) <= 1e-13:
            break
        J *= 2
    return J


def _moments_hybrid(model, n, stat) -> MomentSummary:
    r = stat.r
    Jc = _hybrid_cut(model, n)
    B = min(HYBRID_HEAD, Jc)
    first = stat.first_box

    ph = model.probs_upto(B)
    counted_h = np.arange(1, B + 1) >= first
    mu_h, var_h = _exact_sums(ph, n, r, counted_h)
    zh = np.where(counted_h, indicator_probs(ph, n, r), 0.0)

    # single sums over the non-head boxes B < j <= Jc, in chunks
    parts = {k: [] for k in _SUM_KEYS}
    lo = B + 1
    while lo <= Jc:
        hi = min(Jc, lo + MID_CHUNK - 1)
        p = model.probs_range(lo, hi)
        if first > lo:
            p = np.where(np.arange(lo, hi + 1) >= first, p, 0.0)
        _accumulate(parts, p, indicator_probs(p, n, r), n)
        lo = hi + 1
    head = {k: [] for k in _SUM_KEYS}
    _accumulate(head, np.where(counted_h, ph, 0.0), zh, n)
    S = {k: math.fsum(v) for k, v in parts.items()}
    H = {k: math.fsum(v) for k, v in head.items()}
    A = {k: S[k] + H[k] for k in _SUM_KEYS}

    mu = mu_h + S["z"]
    var = var_h + (S["z"] - S["zz"])
    err = 0.0

    # pairs with at least one non-head box
    if r is None:
        # Cov = -A_j A_s (1 - (1 - x)^n), replaced by -n a_j a_s; the
        # difference lies in [0, n^2 b_j b_s / 2]
        pairs = (A["a"] ** 2 - A["aa"]) - (H["a"] ** 2 - H["aa"])
        var -= n * pairs
        err += 0.5 * n * n * (A["b"] ** 2 - H["b"] ** 2)
    else:
        value, bound = _exactly_r_pairs(n, r, S, H, A, float(ph[0]), model.prob(B + 1))
        var += value
        err += bound

    # analytic first-order tail past Jc (absent for explicit models)
    t_start = max(Jc + 1, first)
    T = model.tail(t_start) if model.support_size is None else 0.0
    if T > 0:
        pn = model.prob(t_start)
        if r is None or r == 1:
            mu += n * T
            var += n * T
            err += n * n * pn * T + 2.0 * n * n * pn * T
        else:
            rest = n ** r * pn ** (r - 1) * T / math.factorial(r)
            err += 2.0 * rest
        # covariances between tail boxes and all others
        if r is None:
            err += 2.0 * n * T * (A["a"] + T)
        else:
            err += 2.0 * n * T * (n * pn / (1.0 - pn) + r)
    return MomentSummary(mu, max(var, 0.0), err, "hybrid")


_SUM_KEYS = ("z", "zz", "a", "aa", "b", "zl", "zzl", "zl2", "zpx", "zzpx2", "zpx2")


def _accumulate(acc, p, z, n):
    with np.errstate(divide="ignore", invalid="ignore"):
        lq = np.log1p(-p)
        a = p * np.exp((n - 1) * lq)  # p (1-p)^{n-1}
        b = p * p * np.exp((n - 2) * lq)
        px = np.where(p > 0, p / (1.0 - p), 0.0)
    lp = -lq
    terms = {
        "z": z, "zz": z * z, "a": a, "aa": a * a, "b": b,
        "zl": z * lp, "zzl": z * z * lp, "zl2": z * lp * lp,
        "zpx": z * px, "zzpx2": (z * px) ** 2, "zpx2": z * px * px,
    }
    for k, v in terms.items():
        acc[k].append(float(np.sum(v)))


def _exactly_r_pairs(n, r, S, H, A, p_first, p_small):
    """Linearized covariance sum over pairs not both in the head, with bound.

    Cov(I_j, I_s) = z_j z_s expm1(c0 + L'), where
    c0 = log[(n-r)!^2 / (n! (n-2r)!)] and
    L' = r (l_j + l_s) + (n - 2r) log(1 - x_js), l = -log1p(-p).
    Using expm1(c0 + L') = expm1(c0) + e^{c0} expm1(L') and expm1(L') ~ L'
    with log(1 - x) ~ -x, every term factors into single sums.
    """
    def off(key_sq, key_diag):
        return (A[key_sq] ** 2 - A[key_diag]) - (H[key_sq] ** 2 - H[key_diag])

    zz = off("z", "zz")
    if n < 2 * r:
        return -zz, 0.0
    c0 = _log_choose_ratio(n, r)
    e0, m0 = math.exp(c0), math.expm1(c0)
    zl = 2.0 * ((A["zl"] * A["z"] - A["zzl"]) - (H["zl"] * H["z"] - H["zzl"]))
    zx = off("zpx", "zzpx2")
    value = m0 * zz + e0 * (r * zl - (n - 2 * r) * zx)

    if p_small <= 0:
        return value, 0.0
    x_max = p_first * p_small / ((1.0 - p_first) * (1.0 - p_small))
    if x_max >= 0.5:
        return value, math.inf
    l_max = -math.log1p(-p_first)
    lam = 2.0 * r * l_max + (n - 2 * r) * x_max / (1.0 - x_max)
    # upper sums over pairs not both in the head (diagonal included)
    zl2 = 2.0 * (A["zl2"] * A["z"] - H["zl2"] * H["z"])
    zx2 = A["zpx2"] ** 2 - H["zpx2"] ** 2
    lsq = 4.0 * r * r * zl2 + 2.0 * (n - 2 * r) ** 2 * zx2 / (1.0 - x_max) ** 2
    bound = e0 * (0.5 * math.exp(lam) * lsq + (n - 2 * r) * zx2 / (2.0 * (1.0 - x_max)))
    return value, bound


def mu_hat_r_with_error(model: WeightModel, n: int, r: int) -> tuple[float, float]:
    """mu_hat_r and a certified bound on the omitted remainder."""
    if r < 1 or n < 3:
        raise ValidationError("mu_hat_r requires r >= 1 and n >= 3")
    prof = tail_profile(model, n)
    j = prof.jn
    lg = math.lgamma(r + 1.0)
    total = 0.0
    terms = []
    chunk = 4096
    while True:
        hi = j + chunk - 1
        if model.support_size is not None:
            hi = min(hi, model.support_size)
        if hi < j:
            return math.fsum(terms), 0.0
        p = model.probs_range(j, hi)
        x = n * p
        with np.errstate(divide="ignore"):
            t = np.where(x > 0, np.exp(r * np.log(np.where(x > 0, x, 1.0)) - x - lg), 0.0)
        terms.append(math.fsum(t))
        total = math.fsum(terms)
        j = hi + 1
        if model.support_size is not None and j > model.support_size:
            return total, 0.0
        xn = n * model.prob(j)
        T = model.tail(j)
        # remainder: sum_{i >= j} x_i^r e^{-x_i} / r! <= x_j^{r-1} n T / r!
        upper = xn ** (r - 1) * n * T / math.exp(lg)
        if r == 1:
            lower = n * T * math.exp(-xn)
        else:
            lower = 0.0
        if upper - lower <= 1e-15 * max(total, 1e-300) or upper <= 1e-18 * total:
            return total + lower, upper - lower
        if j > (1 << 26):
            return total + lower, upper - lower
        chunk = min(chunk * 2, 1 << 20)


def mu_hat_r(model: WeightModel, n: int, r: int) -> float:
    return mu_hat_r_with_error(model, n, r)[0]


@dataclass(frozen=True)
class MuBoundReport:
    n: int
    r: int
    mu: float
    mu_hat: float
    ratio: float
    lower: float
    upper: float
    passed: bool
    note: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mu_bound_check(model: WeightModel, n: int, r: int) -> MuBoundReport:
    """Check exp(-n pbar^2 - r^2/n) <= mu / mu_hat_r <= exp(r pbar) on W_{n,r}."""
    if n < max(2 * r, 3):
        raise ValidationError(f"n: must be >= max(2r, 3), got {n}")
    prof = tail_profile(model, n)
    lower = math.exp(-n * prof.pbar ** 2 - r * r / n)
    upper = math.exp(r * prof.pbar)
    if prof.Pn == 0:
        return MuBoundReport(n, r, 0.0, 0.0, float("nan"), lower, upper, True, "empty tail")
    stat = Statistic.exactly(r).restricted(prof.jn)
    mom = moments(model, n, stat, mode="hybrid" if model.support_size is None else "auto")
    mh, mh_err = mu_hat_r_with_error(model, n, r)
    ratio = mom.mu / mh
    slack = (mom.truncation_error + mh_err * ratio) / mh + 1e-12
    passed = (lower - slack) <= ratio <= (upper + slack)
    return MuBoundReport(n, r, mom.mu, mh, ratio, lower, upper, passed)
