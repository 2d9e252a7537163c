"""Translated Poisson laws a + Poisson(lambda), fitted from (mu, sigma^2)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ValidationError
from .metrics import Distance, Pmf, local_distance, total_variation

WINDOW_EPS = 1e-12


@dataclass(frozen=True)
class TranslatedPoisson:
    shift: int
    rate: float

    @property
    def mean(self) -> float:
        return self.shift + self.rate

    @property
    def var(self) -> float:
        return self.rate

    def to_dict(self) -> dict:
        return {"shift": self.shift, "rate": self.rate}


def fit_tp(mu: float, var: float) -> TranslatedPoisson:
    """shift = floor(mu - var), rate = mu - shift, so var <= rate < var + 1."""
    mu, var = float(mu), float(var)
    if not (math.isfinite(mu) and math.isfinite(var)):
        raise ValidationError(f"fit_tp: non-finite input mu={mu}, var={var}")
    if var < 0:
        raise ValidationError(f"var: must be nonnegative, got {var}")
    shift = math.floor(mu - var)
    rate = mu - shift
    # mu - shift can round just below var when mu - var is an exact integer
    # up to rounding; nudge the shift down rather than break the inequality.
    if rate < var:
        shift -= 1
        rate = mu - shift
    if rate >= var + 1.0:
        # mu - shift rounded up to var + 1 (mu just below an integer)
        rate = math.nextafter(var + 1.0, -math.inf)
    return TranslatedPoisson(int(shift), rate)


_LOG_2PI = math.log(2.0 * math.pi)
_STIRLING = (1.0 / 12, 1.0 / 360, 1.0 / 1260, 1.0 / 1680, 1.0 / 1188)


def _stirlerr(j: np.ndarray) -> np.ndarray:
    """log j! - log(sqrt(2 pi j) (j/e)^j) for j >= 1."""
    out = np.empty_like(j)
    small = j <= 15
    js = j[small]
    out[small] = special.gammaln(js + 1.0) - (js + 0.5) * np.log(js) + js - 0.5 * _LOG_2PI
    jb = j[~small]
    j2 = jb * jb
    s0, s1, s2, s3, s4 = _STIRLING
    out[~small] = (s0 - (s1 - (s2 - (s3 - s4 / j2) / j2) / j2) / j2) / jb
    return out


def _bd0(x: np.ndarray, lam: float) -> np.ndarray:
    """x log(x / lam) + lam - x without cancellation near x = lam."""
    out = x * np.log(x / lam) + lam - x
    near = np.abs(x - lam) < 0.1 * (x + lam)
    if near.any():
        xn = x[near]
        v = (xn - lam) / (xn + lam)
        s = (xn - lam) * v
        ej = 2.0 * xn * v
        v2 = v * v
        for k in range(1, 40):
            ej = ej * v2
            s = s + ej / (2 * k + 1)
        out[near] = s
    return out


def _log_pmf(rate: float, j):
    """Poisson log mass in saddle-point form: every term stays O(1) or
    O(log j), so the result keeps full relative accuracy for large rates."""
    j = np.atleast_1d(np.asarray(j, dtype=float))
    out = np.full(j.shape, -rate)
    pos = j > 0
    jp = j[pos]
    out[pos] = -0.5 * (_LOG_2PI + np.log(jp)) - _stirlerr(jp) - _bd0(jp, rate)
    return out


def tp_pmf(tp: TranslatedPoisson, k: int) -> float:
    j = k - tp.shift
    if j < 0:
        return 0.0
    if tp.rate == 0:
        return 1.0 if j == 0 else 0.0
    return float(np.exp(_log_pmf(tp.rate, j))[0])


def tp_pmf_array(tp: TranslatedPoisson, ks) -> np.ndarray:
    ks = np.asarray(ks, dtype=np.int64)
    j = ks - tp.shift
    out = np.zeros(ks.shape, dtype=float)
    ok = j >= 0
    if tp.rate == 0:
        out[j == 0] = 1.0
        return out
    out[ok] = np.exp(_log_pmf(tp.rate, j[ok]))
    return out


def tp_pmf_window(tp: TranslatedPoisson, eps: float = WINDOW_EPS) -> Pmf:
    """Smallest contiguous window whose complement has mass <= eps.

    The Poisson law is unimodal, so growing the window from the mode
    towards the heavier neighbour gives a smallest window.  The outside
    mass is evaluated with regularized incomplete gamma tails, not 1 - sum.
    """
    if not 0 < eps < 1:
        raise ValidationError(f"eps: must lie in (0, 1), got {eps}")
    lam = tp.rate
    if lam == 0:
        return Pmf(tp.shift, np.array([1.0]), 0.0)
    spread = int(math.ceil(12.0 * math.sqrt(lam) + 40.0 + 2.0 * math.log(1.0 / eps)))
    mode = int(math.floor(lam))
    lo_all = max(0, mode - spread)
    grid = np.arange(lo_all, mode + spread + 1)
    pm = np.exp(_log_pmf(lam, grid))
    i_lo = i_hi = mode - lo_all

    def outside(a, b):
        left = special.pdtr(a - 1, lam) if a > 0 else 0.0
        return float(left + special.pdtrc(b, lam))

    while outside(grid[i_lo], grid[i_hi]) > eps:
        left = pm[i_lo - 1] if i_lo > 0 else -1.0
        right = pm[i_hi + 1] if i_hi + 1 < len(grid) else -1.0
        if left < 0 and right < 0:
            break
        if left >= right:
            i_lo -= 1
        else:
            i_hi += 1
    defect = outside(grid[i_lo], grid[i_hi])
    masses = pm[i_lo : i_hi + 1]
    # keep the table consistent with its certified complement
    total = masses.sum()
    if abs(total + defect - 1.0) > 1e-12:
        defect = max(defect, abs(1.0 - total))
    return Pmf(tp.shift + int(grid[i_lo]), masses, defect)


def distances_to_tp(P: Pmf, tp: TranslatedPoisson, eps: float = WINDOW_EPS) -> tuple[Distance, Distance]:
    """(d_TV, d_loc) between P and the windowed translated Poisson law."""
    Q = tp_pmf_window(tp, eps)
    return total_variation(P, Q), local_distance(P, Q)
