"""Weight sequences (p_j) and the cutoffs derived from them.

Two kinds of model are supported: an explicit finite decreasing vector
(p_j = 0 beyond its end, so the scheme is a finite occupancy problem) and
the pure power law p_j = j^{-a} / zeta(a).

Tail masses t(j) = sum_{i >= j} p_i are the primary quantity here.  They
are computed directly (suffix sums, or a Hurwitz zeta evaluation) rather
than as 1 - cumulative, so that tiny tails keep full relative precision.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateModelError, ValidationError

NORMALIZATION_TOL = 1e-12
# Explicit models are normalized only to NORMALIZATION_TOL, so the comparison
# against 1/2 in the j_0 definition is resolved at that resolution.
HALF_TOL = 1e-12

ZETA_BLOCK = 1 << 16
ZETA_MAX_CACHE = 1 << 22

# Bernoulli numbers B_2, B_4, ..., B_18.
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
)
_EM_SHIFT = 16


def _em_tail(s: float, w):
    """Euler-Maclaurin value of sum_{k>=0} (w+k)^{-s} for w >= 16 (array ok)."""
    w = np.asarray(w, dtype=float)
    total = w ** (1.0 - s) / (s - 1.0) + 0.5 * w ** (-s)
    rising = s  # s (s+1) ... (s+2k-2)
    fact = 2.0  # (2k)!
    wpow = w ** (-s - 1.0)
    for k, b in enumerate(_BERNOULLI, start=1):
        total = total + b / fact * rising * wpow
        rising *= (s + 2 * k - 1) * (s + 2 * k)
        fact *= (2 * k + 1) * (2 * k + 2)
        wpow = wpow / (w * w)
    return total


def hurwitz_zeta(s: float, q: float) -> float:
    """Hurwitz zeta sum_{k>=0} (q+k)^{-s} for s > 1, q >= 1.

    Direct summation up to q + k >= 16, then an Euler-Maclaurin tail.
    Relative accuracy is about 1e-15 for s in (1, 20].
    """
    if not s > 1.0:
        raise ValidationError(f"hurwitz_zeta requires s > 1, got {s}")
    head = 0.0
    w = float(q)
    terms = []
    while w < _EM_SHIFT:
        terms.append(w ** (-s))
        w += 1.0
    tail = float(_em_tail(s, w))
    head = math.fsum(terms)
    return head + tail


def riemann_zeta(s: float) -> float:
    return hurwitz_zeta(s, 1.0)


class WeightModel:
    """Decreasing probability sequence p_1 >= p_2 >= ... (1-based indices).

    Use :func:`make_explicit` or :func:`make_zeta` to construct one.
    """

    def __init__(self, kind: str, probs=None, exponent: float | None = None):
        self.kind = kind
        self._lock = threading.Lock()
        if kind == "explicit":
            p = np.array(probs, dtype=float)
            p.setflags(write=False)
            self.probs = p
            self.exponent = None
            suffix = np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
            suffix.setflags(write=False)
            self._tails = suffix  # _tails[i] = t(i+1), length J+1
            self._zeta = None
        elif kind == "zeta":
            self.probs = None
            self.exponent = float(exponent)
            self._zeta = riemann_zeta(self.exponent)
            self._tails = np.array([1.0])
        else:
            raise ValidationError(f"unknown model kind {kind!r}")

    # -- basic interrogation -------------------------------------------------

    @property
    def support_size(self) -> int | None:
        return len(self.probs) if self.kind == "explicit" else None

    @property
    def zeta_value(self) -> float | None:
        return self._zeta

    def prob(self, j: int) -> float:
        if j < 1:
            raise ValidationError(f"box index must be >= 1, got {j}")
        if self.kind == "explicit":
            return float(self.probs[j - 1]) if j <= len(self.probs) else 0.0
        return float(j) ** (-self.exponent) / self._zeta

    def probs_range(self, lo: int, hi: int) -> np.ndarray:
        """p_j for lo <= j <= hi (zeros past an explicit support)."""
        if hi < lo:
            return np.zeros(0)
        if self.kind == "explicit":
            out = np.zeros(hi - lo + 1)
            end = min(hi, len(self.probs))
            if end >= lo:
                out[: end - lo + 1] = self.probs[lo - 1 : end]
            return out
        j = np.arange(lo, hi + 1, dtype=float)
        return j ** (-self.exponent) / self._zeta

    def probs_upto(self, J: int) -> np.ndarray:
        return self.probs_range(1, J)

    def tail(self, j: int) -> float:
        """t(j) = sum_{i >= j} p_i."""
        j = max(int(j), 1)
        if self.kind == "explicit":
            return float(self._tails[j - 1]) if j <= len(self.probs) else 0.0
        if j == 1:
            return 1.0
        return hurwitz_zeta(self.exponent, float(j)) / self._zeta

    def tails_of(self, js) -> np.ndarray:
        """Vectorized t(j) for an integer array."""
        js = np.maximum(np.asarray(js, dtype=np.int64), 1)
        if self.kind == "explicit":
            padded = self._tails
            return padded[np.minimum(js, len(padded)) - 1]
        out = np.empty(js.shape, dtype=float)
        small = js < _EM_SHIFT
        for idx in np.flatnonzero(small.ravel()):
            out.flat[idx] = self.tail(int(js.flat[idx]))
        big = ~small
        if big.any():
            out[big] = _em_tail(self.exponent, js[big].astype(float)) / self._zeta
        return out

    def cumulative(self, j: int) -> float:
        """c_j = sum_{i <= j} p_i."""
        if j <= 0:
            return 0.0
        if self.kind == "explicit":
            j = min(j, len(self.probs))
            return float(np.sum(self.probs[:j]))
        return 1.0 - self.tail(j + 1)

    def tail_bounds(self, J: int) -> tuple[float, float]:
        """Certified two-sided bounds on sum_{j > J} p_j from integral comparison."""
        if self.kind == "explicit":
            t = self.tail(J + 1)
            return t, t
        a = self.exponent
        upper = J ** (1.0 - a) / ((a - 1.0) * self._zeta)
        return max(0.0, upper * (1.0 - a / J)), upper

    def first_index_below(self, threshold: float) -> int:
        """Smallest j with p_j < threshold."""
        if self.kind == "explicit":
            hits = np.flatnonzero(self.probs < threshold)
            return int(hits[0]) + 1 if hits.size else len(self.probs) + 1
        if threshold <= 0:
            raise ValidationError("threshold must be positive for an infinite model")
        a = self.exponent
        guess = max(1, int(math.floor((self._zeta * threshold) ** (-1.0 / a))) + 1)
        while guess > 1 and self.prob(guess - 1) < threshold:
            guess -= 1
        while self.prob(guess) >= threshold:
            guess += 1
        return guess

    # -- tail cache and inversion -----------------------------------------------

    def _extend_cache(self, upto: int) -> np.ndarray:
        """Ensure the zeta tail cache covers t(1..upto+1); returns the cache."""
        tails = self._tails
        if len(tails) - 1 >= upto:
            return tails
        with self._lock:
            tails = self._tails
            parts = [tails]
            have = len(tails) - 1  # cache holds t(1..have+1)
            while have < upto and have < ZETA_MAX_CACHE:
                lo, hi = have + 1, have + ZETA_BLOCK  # new entries t(lo+1..hi+1)
                base = self.tail(hi + 1)
                p = self.probs_range(lo + 1, hi)
                block = base + np.concatenate([np.cumsum(p[::-1])[::-1], [0.0]])
                parts.append(block)
                have = hi
            if len(parts) > 1:
                tails = np.concatenate(parts)
                tails.setflags(write=False)
                self._tails = tails
            return tails

    def tail_array(self, J: int) -> np.ndarray:
        """Array whose entry i is t(i+1), for i = 0..J."""
        if self.kind == "explicit":
            out = np.zeros(J + 1)
            m = min(J + 1, len(self._tails))
            out[:m] = self._tails[:m]
            return out
        if J <= ZETA_MAX_CACHE:
            return np.array(self._extend_cache(J)[: J + 1])
        return self.tails_of(np.arange(1, J + 2))

    def locate(self, v) -> np.ndarray:
        """Box index j with t(j+1) < v <= t(j), for v in (0, 1].

        Inverse-CDF search in tail space: feeding v = t(s) * (1 - U) with U
        uniform on [0, 1) draws a box from p_j / t(s), j >= s.  Indices are
        capped at 2^60, which only matters for v far below the 2^-53
        resolution of uniform draws.
        """
        v = np.asarray(v, dtype=float)
        if self.kind == "explicit":
            idx = np.searchsorted(-self._tails, -v, side="right")
            return np.clip(idx, 1, len(self.probs)).astype(np.int64)
        vmin = float(v.min()) if v.size else 1.0
        tails = self._tails
        if vmin <= tails[-1] and len(tails) - 1 < ZETA_MAX_CACHE:
            # extend block by block until the cache covers the smallest v
            while vmin <= self._tails[-1] and len(self._tails) - 1 < ZETA_MAX_CACHE:
                self._extend_cache(len(self._tails) - 1 + ZETA_BLOCK)
            tails = self._tails
        out = np.searchsorted(-tails, -v, side="right").astype(np.int64)
        beyond = v <= tails[-1]
        if beyond.any():
            out[beyond] = self._bisect_tail(v[beyond], len(tails))
        return np.maximum(out, 1)

    def _bisect_tail(self, v: np.ndarray, lo_box: int) -> np.ndarray:
        """Smallest j >= lo_box with t(j+1) < v, by vectorized bisection."""
        lo = np.full(v.shape, lo_box, dtype=np.int64)  # t(lo) >= v holds
        hi = lo.copy()
        cap = np.int64(1) << 60
        while True:
            bad = self.tails_of(hi + 1) >= v
            if not bad.any():
                break
            hi[bad] = np.minimum(hi[bad] * 2, cap)
            if (hi[bad] >= cap).all():
                break
        # invariant: t(lo) >= v, t(hi+1) < v
        while True:
            active = hi > lo
            if not active.any():
                break
            mid = lo + (hi - lo) // 2
            below = self.tails_of(mid + 1) < v
            hi = np.where(active & below, mid, hi)
            lo = np.where(active & ~below, mid + 1, lo)
        return hi

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        if self.kind == "explicit":
            return {"kind": "explicit", "probs": [float(x) for x in self.probs]}
        return {"kind": "zeta", "exponent": self.exponent}

    def __repr__(self) -> str:
        if self.kind == "explicit":
            return f"WeightModel(explicit, J={len(self.probs)})"
        return f"WeightModel(zeta, a={self.exponent})"


def make_explicit(probabilities) -> WeightModel:
    """Finite decreasing model; p_j = 0 past the last entry."""
    try:
        p = [float(x) for x in probabilities]
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"probs: not a sequence of numbers ({exc})") from None
    if not p:
        raise ValidationError("probs: empty sequence")
    for i, x in enumerate(p, start=1):
        if not math.isfinite(x) or x <= 0:
            raise ValidationError(f"probs[{i}]: must be positive and finite, got {x}")
        if i > 1 and x > p[i - 2]:
            raise ValidationError(f"probs[{i}]: sequence not decreasing ({x} > {p[i - 2]})")
    total = math.fsum(p)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ValidationError(f"probs: sum is {total!r}, not 1 within {NORMALIZATION_TOL}")
    return WeightModel("explicit", probs=p)


def make_zeta(exponent: float) -> WeightModel:
    """Power law p_j = j^{-a} / zeta(a)."""
    a = float(exponent)
    if not math.isfinite(a) or a <= 1.0:
        raise ValidationError(f"exponent: must exceed 1, got {exponent}")
    return WeightModel("zeta", exponent=a)


def model_from_dict(d: dict) -> WeightModel:
    if not isinstance(d, dict) or "kind" not in d:
        raise ValidationError("model: missing field 'kind'")
    kind = d["kind"]
    if kind == "explicit":
        if "probs" not in d:
            raise ValidationError("model: missing field 'probs'")
        return make_explicit(d["probs"])
    if kind == "zeta":
        if "exponent" not in d:
            raise ValidationError("model: missing field 'exponent'")
        return make_zeta(d["exponent"])
    raise ValidationError(f"model: unknown kind {kind!r}")


def split_j0(model: WeightModel) -> tuple[int, float]:
    """(j_0, P_0): smallest j_0 with t(j_0 - 1) >= 1/2 > t(j_0), P_0 = t(j_0)."""
    target = 0.5 - HALF_TOL
    if model.kind == "explicit":
        hits = np.flatnonzero(model._tails < target)
        j0 = int(hits[0]) + 1
        return max(j0, 2), model.tail(max(j0, 2))
    lo, hi = 1, 2  # t(lo) >= target
    while model.tail(hi) >= target:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if model.tail(mid) >= target:
            lo = mid
        else:
            hi = mid
    return hi, model.tail(hi)


@dataclass(frozen=True)
class TailProfile:
    jn: int
    pbar: float
    Pn: float
    threshold: float


def jn_threshold(n: int) -> float:
    return 4.0 * math.log(n) / n


def tail_profile(model: WeightModel, n: int) -> TailProfile:
    """Cutoff j_n (smallest j with p_j < 4 log n / n) and the tail it starts."""
    if n < 3:
        raise ValidationError(f"n: must be >= 3, got {n}")
    thr = jn_threshold(n)
    jn = model.first_index_below(thr)
    Pn = 1.0 if jn == 1 else min(model.tail(jn), 1.0)
    return TailProfile(jn=jn, pbar=model.prob(jn), Pn=Pn, threshold=thr)


def _smallest_n(pred, lo: int) -> int:
    """Smallest integer n >= lo with pred(n), for pred monotone false->true."""
    if pred(lo):
        return lo
    hi = lo * 2
    while not pred(hi):
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def min_n0(model: WeightModel) -> int:
    """Smallest n >= 3 with n / log^2 n >= 16 / P_0 and j_n >= j_0."""
    j0, P0 = split_j0(model)
    if P0 <= 0:
        raise DegenerateModelError("P_0 = 0: the model has no tail beyond j_0")
    bound = 16.0 / P0
    # n / log^2 n is below 2.5 on [3, 8) while bound > 32, so search from 8,
    # where the map is increasing.
    n_a = _smallest_n(lambda n: n / math.log(n) ** 2 >= bound, 8)
    p_prev = model.prob(j0 - 1)
    # j_n >= j_0 iff p_{j_0 - 1} >= 4 log n / n, and the threshold decreases
    n_b = _smallest_n(lambda n: jn_threshold(n) <= p_prev, 3)
    n0 = max(n_a, n_b, 3)
    assert n0 / math.log(n0) ** 2 >= bound and tail_profile(model, n0).jn >= j0
    return n0
