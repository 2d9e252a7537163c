"""Executable checks of the binomial, trinomial, covariance and weighted-sum
bounds used by the conditional approximation argument.

Every expectation is evaluated exactly by summing over the full binomial or
trinomial support.  Constants that are only asserted to exist are computed
by numeric maximization of the pointwise bound the argument relies on, and
stored in the report next to the instance.

Pass rule: identities need |lhs - rhs| <= 1e-12 max(1, |rhs|); inequalities
need lhs <= rhs + 1e-12 max(1, |rhs|).  Instances outside a bound's
hypotheses are reported with status "vacuous", never as failures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import ValidationError

TOL = 1e-12
BINOMIAL_MAX = 60
TRINOMIAL_MAX = 40


@dataclass(frozen=True)
class LemmaReport:
    lemma_id: str
    params: dict
    lhs: float
    rhs: float
    status: str  # "pass", "fail" or "vacuous"
    method: str
    kind: str = "inequality"
    constants: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def to_dict(self) -> dict:
        return {"lemma_id": self.lemma_id, "params": self.params, "lhs": self.lhs,
                "rhs": self.rhs, "status": self.status, "method": self.method,
                "kind": self.kind, "constants": self.constants}


def _slack(rhs: float) -> float:
    return TOL * max(1.0, abs(rhs))


def _identity(lemma_id, params, lhs, rhs, method="brute_force") -> LemmaReport:
    ok = abs(lhs - rhs) <= _slack(rhs)
    return LemmaReport(lemma_id, params, lhs, rhs, "pass" if ok else "fail", method, "identity")


def _inequality(lemma_id, params, lhs, rhs, constants=None, method="brute_force") -> LemmaReport:
    ok = lhs <= rhs + _slack(rhs)
    return LemmaReport(lemma_id, params, float(lhs), float(rhs), "pass" if ok else "fail",
                       method, "inequality", constants or {})


def _vacuous(lemma_id, params, why: str) -> LemmaReport:
    return LemmaReport(lemma_id, dict(params, vacuous_reason=why), math.nan, math.nan,
                       "vacuous", "none")


# -- exact binomial and trinomial laws -------------------------------------------

def _falling(l: np.ndarray, s: int) -> np.ndarray:
    out = np.ones(l.shape)
    for i in range(s):
        out *= l - i
    return out


def binomial_pmf_exact(m: int, p: float) -> np.ndarray:
    l = np.arange(m + 1)
    coef = np.array([float(math.comb(m, k)) for k in range(m + 1)])
    return coef * np.power(p, l) * np.power(1.0 - p, m - l)


def trinomial_pmf_exact(m: int, p: float, q: float) -> np.ndarray:
    """Table T[l, k] = P[L = l, M = k], zero where l + k > m."""
    T = np.zeros((m + 1, m + 1))
    rest = 1.0 - p - q
    for l in range(m + 1):
        k = np.arange(m - l + 1)
        coef = np.array([float(math.comb(m, l) * math.comb(m - l, int(j))) for j in k])
        T[l, : m - l + 1] = coef * p ** l * np.power(q, k) * np.power(rest, m - l - k)
    return T


def _esum(terms) -> float:
    return math.fsum(np.asarray(terms, dtype=float).ravel())


def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"{name}: must lie in [0, 1], got {p}")


# -- binomial moments ------------------------------------------------------------

def binomial_factorial_moment(m: int, p: float, s: int, x: float, method: str = "closed_form") -> float:
    """E[M_(s) x^M] for M ~ Bin(m, p)."""
    if not 0 <= s <= m:
        raise ValidationError(f"s: must satisfy 0 <= s <= m, got s={s}, m={m}")
    _check_prob("p", p)
    if x < 0:
        raise ValidationError(f"x: must be >= 0, got {x}")
    if method == "closed_form":
        return float(math.perm(m, s)) * (x * p) ** s * (1.0 + p * (x - 1.0)) ** (m - s)
    if method == "brute_force":
        if m > BINOMIAL_MAX:
            raise ValidationError(f"m: brute force limited to {BINOMIAL_MAX}, got {m}")
        l = np.arange(m + 1)
        return _esum(_falling(l, s) * np.power(float(x), l) * binomial_pmf_exact(m, p))
    raise ValidationError(f"method: expected closed_form or brute_force, got {method!r}")


def c_of_x(x: float) -> float:
    y = (1.0 - x) ** 2
    return min(-math.expm1(-y), y * math.exp(-y))


def idmom_bounds_check(m: int, p: float, s: int, x: float, P: float, delta: float,
                       delta0: float) -> list[LemmaReport]:
    """Parts (ii) and (iii) at x = e^delta, and the variance sandwich (iv) at x."""
    params = dict(m=m, p=p, s=s, x=x, P=P, delta=delta, delta0=delta0)
    out = []
    ok23 = (0.0 <= delta <= delta0 <= 1.0 and 0.0 <= P <= 1.0
            and (1.0 - P) * math.exp(delta0) <= 1.0 and 0 <= s <= m)
    if not ok23:
        why = "needs 0 <= delta <= delta0 <= 1, (1-P)e^delta0 <= 1, 0 <= s <= m"
        out.append(_vacuous("idmom.ii", params, why))
        out.append(_vacuous("idmom.iii", params, why))
    else:
        e = math.exp(delta)
        lhs = binomial_factorial_moment(m, p, s, e, "brute_force")
        rhs = (m * p) ** s * math.exp(delta0 * (s + m * p * math.e))
        out.append(_inequality("idmom.ii", params, lhs, rhs))
        y = (1.0 - P) * e
        lhs = binomial_factorial_moment(m, p, s, y, "brute_force")
        rhs = ((m * p * (1.0 - P)) ** s * math.exp(-(m - s) * p * P)
               * math.exp(delta0 * (s + m * p * math.e * (1.0 - P))))
        out.append(_inequality("idmom.iii", params, lhs, rhs))
    if not (0.0 <= x <= 1.0 and p <= 0.5):
        why = "needs 0 <= x <= 1 and p <= 1/2"
        out.append(_vacuous("idmom.iv.lower", params, why))
        out.append(_vacuous("idmom.iv.lower_adjusted", params, why))
        out.append(_vacuous("idmom.iv.upper", params, why))
        return out
    pm = binomial_pmf_exact(m, p)
    l = np.arange(m + 1)
    e1 = _esum(np.power(x, l) * pm)
    e2 = _esum(np.power(x * x, l) * pm)
    middle = math.exp(m * p * (1.0 - x * x)) * (e2 - e1 * e1)
    lower = c_of_x(x) * math.exp(-2.0 * m * p * p) * min(1.0, m * p)
    upper = min(1.0, m * p * (1.0 - x * x))
    out.append(_inequality("idmom.iv.lower", params, lower, middle, {"c(x)": c_of_x(x)}))
    # the stated lower bound can exceed the middle term when m p^2 is small
    # and x is near 1; the thinning rate is p(1-p)(1-x)^2, not p(1-x)^2, and
    # carrying the factor (1-p) gives a bound that does hold
    out.append(_inequality("idmom.iv.lower_adjusted", params, (1.0 - p) * lower, middle,
                           {"c(x)": c_of_x(x)}))
    out.append(_inequality("idmom.iv.upper", params, middle, upper))
    return out


# -- trinomial moments -----------------------------------------------------------

def trinomial_joint_moment(m: int, p: float, q: float, u: int, v: int, w: float, x: float,
                           method: str = "closed_form") -> float:
    """E[L_(u) M_(v) w^L x^M] for (L, M, m-L-M) trinomial."""
    if p < 0 or q < 0 or p + q > 1.0 + 1e-15:
        raise ValidationError(f"p, q: need p, q >= 0 and p + q <= 1, got {p}, {q}")
    if u < 0 or v < 0 or u + v > m:
        raise ValidationError(f"u, v: need u, v >= 0 and u + v <= m, got {u}, {v}, m={m}")
    if w < 0 or x < 0:
        raise ValidationError(f"w, x: must be >= 0, got {w}, {x}")
    if method == "closed_form":
        return (float(math.perm(m, u + v)) * (w * p) ** u * (x * q) ** v
                * (1.0 + p * (w - 1.0) + q * (x - 1.0)) ** (m - u - v))
    if method == "brute_force":
        if m > TRINOMIAL_MAX * 3 // 2:
            raise ValidationError(f"m: brute force limited to {TRINOMIAL_MAX * 3 // 2}, got {m}")
        T = trinomial_pmf_exact(m, p, q)
        l = np.arange(m + 1)
        a = _falling(l, u) * np.power(float(w), l)
        b = _falling(l, v) * np.power(float(x), l)
        return _esum(a[:, None] * b[None, :] * T)
    raise ValidationError(f"method: expected closed_form or brute_force, got {method!r}")


def mdmom_bounds_check(m, p, q, u, v, w, x, P, delta, delta0) -> list[LemmaReport]:
    """The two exponential bounds on trinomial joint factorial moments."""
    params = dict(m=m, p=p, q=q, u=u, v=v, w=w, x=x, P=P, delta=delta, delta0=delta0)
    if not (0.0 <= delta <= delta0 <= 1.0 and (1.0 - P) * math.exp(delta0) <= 1.0
            and 0 <= w <= math.exp(delta) and 0 <= x <= math.exp(delta) and u + v <= m):
        why = "needs 0 <= w, x <= e^delta, 0 <= delta <= delta0 <= 1, (1-P)e^delta0 <= 1"
        return [_vacuous("mdmom.i", params, why), _vacuous("mdmom.ii", params, why)]
    lhs = trinomial_joint_moment(m, p, q, u, v, w, x, "brute_force")
    rhs = (m * p) ** u * (m * q) ** v * math.exp(delta0 * ((u + v) + m * (p + q) * math.e))
    first = _inequality("mdmom.i", params, lhs, rhs)
    y = (1.0 - P) * math.exp(delta)
    lhs = trinomial_joint_moment(m, p, q, u, v, y, y, "brute_force")
    rhs = ((m * p * (1.0 - P)) ** u * (m * q * (1.0 - P)) ** v
           * math.exp(-(m - u - v) * (p + q) * P)
           * math.exp(delta0 * ((u + v) + m * (p + q) * math.e * (1.0 - P))))
    return [first, _inequality("mdmom.ii", params, lhs, rhs)]


# -- covariance bound ------------------------------------------------------------

def covariance_bound_check(m: int, p: float, q: float, f, g, h, k) -> list[LemmaReport]:
    """Cov(f(L), g(M)) against C_1 (nonnegative f, g) and against the signed
    bound C_1 + 2 E(L h) E(M k) / m + (4m/3) p q E h E k."""
    if m > TRINOMIAL_MAX:
        raise ValidationError(f"m: limited to {TRINOMIAL_MAX}, got {m}")
    f, g, h, k = (np.asarray(t, dtype=float) for t in (f, g, h, k))
    for name, t in (("f", f), ("g", g), ("h", h), ("k", k)):
        if t.shape != (m + 1,):
            raise ValidationError(f"{name}: table must have m + 1 = {m + 1} entries")
    if np.any(np.abs(f) > h) or np.any(np.abs(g) > k):
        raise ValidationError("f, g: need |f| <= h and |g| <= k")
    params = dict(m=m, p=p, q=q)
    delta = p + q
    if not (p >= 0 and q >= 0 and delta <= 0.25):
        why = "needs p, q >= 0 and p + q <= 1/4"
        return [_vacuous("covbd.nonneg", params, why), _vacuous("covbd.signed", params, why)]
    T = trinomial_pmf_exact(m, p, q)
    pl = T.sum(axis=1)
    pm = T.sum(axis=0)
    l = np.arange(m + 1, dtype=float)
    cov = _esum(f[:, None] * g[None, :] * (T - pl[:, None] * pm[None, :]))
    grow = np.exp(2.0 * l * delta)
    E = lambda t, law: _esum(t * law)
    C1 = math.e * delta * (E(l * h * grow, pl) * E(k * grow, pm) + E(h * grow, pl) * E(l * k * grow, pm))
    out = []
    if np.all(f >= 0) and np.all(g >= 0):
        out.append(_inequality("covbd.nonneg", params, cov, C1))
    else:
        out.append(_vacuous("covbd.nonneg", params, "f or g takes negative values"))
    extra = 2.0 / m * E(l * h, pl) * E(l * k, pm) + 4.0 * m / 3.0 * p * q * E(h, pl) * E(k, pm)
    out.append(_inequality("covbd.signed", params, cov, C1 + extra))
    return out


# -- weighted sums ---------------------------------------------------------------

def numeric_sup(fn, lo: float, hi: float, points: int = 2001) -> float:
    """sup of fn over [lo, hi] by a grid scan refined with bounded Brent search."""
    if lo > 0:
        grid = np.geomspace(lo, hi, points)
    else:
        grid = np.concatenate([[0.0], np.geomspace(1e-9, hi, points - 1)])
    vals = np.array([fn(t) for t in grid])
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best = float(vals[i])
    if b > a:
        res = optimize.minimize_scalar(lambda t: -fn(t), bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-13 * max(1.0, b)})
        best = max(best, -float(res.fun))
    return best


def _span(power: float, rate: float) -> float:
    return 60.0 * (power + 1.0) / rate + 60.0


def constant_i(u: int, alpha: float) -> dict:
    """sup over x of x^(u+1) e^(-(1+alpha)x) / (min(x, 1) e^(-x)), split at x = 1."""
    low = numeric_sup(lambda t: t ** u * math.exp(-alpha * t), 0.0, 1.0)
    high = numeric_sup(lambda t: t ** (u + 1) * math.exp(-alpha * t), 1.0, _span(u + 1, alpha))
    return {"K_low": low, "K_high": high, "K": max(low, high)}


def constant_ii(u: int, alpha: float) -> float:
    """sup of x^u e^(-alpha x)."""
    return numeric_sup(lambda t: t ** u * math.exp(-alpha * t), 0.0, _span(u, alpha))


def constant_iii(u: int) -> float:
    """sup of x^u e^(-x)."""
    return numeric_sup(lambda t: t ** u * math.exp(-t), 0.0, _span(u, 1.0))


def constant_iv() -> float:
    """sup of x e^(-2x) / (min(x, 1) e^(-x)), after Cauchy-Schwarz with P <= 1."""
    return numeric_sup(lambda t: math.exp(-t) * max(t, 1.0), 0.0, _span(1, 1.0))


def constant_v(r: int, u: int, v: int) -> float:
    """2 sup of x^(r+u+v-1) e^(-x).

    Each term x_s^(r+u) x_t^(r+v) e^(-x_s-x_t) is at most this supremum
    times x_t^r e^(-x_t) x_s (when x_s >= x_t) or x_s^r e^(-x_s) x_t (when
    x_s <= x_t); summing both cases gives the factor 2."""
    k = r + u + v - 1
    return 2.0 * numeric_sup(lambda t: t ** k * math.exp(-t), 0.0, _span(k, 1.0))


def sigma2_n(x: np.ndarray, r: int) -> float:
    """sum (n p_s)^r e^(-n p_s), or sum min(n p_s, 1) e^(-n p_s) for r = 0."""
    if r == 0:
        return _esum(np.minimum(x, 1.0) * np.exp(-x))
    return _esum(x ** r * np.exp(-x))


def sum_bounds_check(weights, n: float, r: int, u: int, v: int, alpha: float) -> list[LemmaReport]:
    """Parts (i)-(v) of the weighted-sum bounds for weights p_s, s >= j."""
    p = np.asarray(weights, dtype=float)
    if np.any(p < 0):
        raise ValidationError("weights: must be nonnegative")
    P = _esum(p)
    if P > 1.0 + 1e-12:
        raise ValidationError(f"weights: total {P} exceeds 1")
    if not (u >= v >= 0 and r >= 1 and alpha > 0 and n > 0):
        raise ValidationError("need integers u >= v >= 0, r >= 1, alpha > 0, n > 0")
    params = dict(n=n, r=r, u=u, v=v, alpha=alpha, P=P, boxes=int(p.size))
    x = n * p
    ex = np.exp(-x)
    s0 = sigma2_n(x, 0)
    sr = sigma2_n(x, r)
    out = []
    Ki = constant_i(u, alpha)
    out.append(_inequality("sumbds.i", params, _esum(x ** (u + 1) * np.exp(-(1 + alpha) * x)),
                           Ki["K"] * s0, Ki))
    Kii = constant_ii(u, alpha)
    out.append(_inequality("sumbds.ii", params, _esum(x ** (u + r) * np.exp(-(1 + alpha) * x)),
                           Kii * sr, {"K": Kii}))
    Kiii = constant_iii(u)
    out.append(_inequality("sumbds.iii", params, _esum(x ** (u + 1) * ex), Kiii * n * P,
                           {"K": Kiii}))
    Kiv = constant_iv()
    out.append(_inequality("sumbds.iv", params, _esum(x * ex) ** 2, Kiv * n * s0, {"K": Kiv}))
    Kv = constant_v(r, u, v)
    lhs = _esum(x ** (r + u) * ex) * _esum(x ** (r + v) * ex)
    out.append(_inequality("sumbds.v", params, lhs, Kv * n * P * sr, {"K": Kv}))
    return out


# -- randomized suite ------------------------------------------------------------

def _rng(seed: int, part: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(part, i))))


def _random_prob(rng) -> float:
    return float(rng.random()) if rng.random() < 0.5 else float(10.0 ** rng.uniform(-4, 0))


def _table(rng, m: int) -> np.ndarray:
    l = np.arange(m + 1, dtype=float)
    kind = rng.integers(4)
    if kind == 0:
        return rng.random(m + 1) * rng.uniform(0.1, 5)
    if kind == 1:
        return l ** rng.integers(0, 3)
    if kind == 2:
        return np.cumsum(rng.random(m + 1))
    return np.full(m + 1, rng.uniform(0.1, 3))


def suite_identities(seed: int, count: int) -> list[LemmaReport]:
    out = []
    for i in range(count):
        rng = _rng(seed, 1, i)
        m = int(rng.integers(1, BINOMIAL_MAX + 1))
        p = _random_prob(rng)
        s = int(rng.integers(0, m + 1))
        x = float(rng.uniform(0, 3))
        params = dict(m=m, p=p, s=s, x=x)
        out.append(_identity("idmom.i", params,
                             binomial_factorial_moment(m, p, s, x, "brute_force"),
                             binomial_factorial_moment(m, p, s, x, "closed_form")))
        m = int(rng.integers(1, BINOMIAL_MAX + 1))
        p = _random_prob(rng)
        q = float(rng.uniform(0, 1 - p))
        u = int(rng.integers(0, m + 1))
        v = int(rng.integers(0, m - u + 1))
        w, y = float(rng.uniform(0, 3)), float(rng.uniform(0, 3))
        params = dict(m=m, p=p, q=q, u=u, v=v, w=w, x=y)
        out.append(_identity("mdmom.identity", params,
                             trinomial_joint_moment(m, p, q, u, v, w, y, "brute_force"),
                             trinomial_joint_moment(m, p, q, u, v, w, y, "closed_form")))
    return out


def _delta_triple(rng):
    delta0 = float(rng.random())
    delta = float(rng.uniform(0, delta0))
    lo = -math.expm1(-delta0)
    P = float(rng.uniform(lo, 1.0)) if rng.random() < 0.9 else float(rng.uniform(0, lo))
    return P, delta, delta0


def suite_inequalities(seed: int, count: int) -> list[LemmaReport]:
    out = []
    for i in range(count):
        rng = _rng(seed, 2, i)
        m = int(rng.integers(1, BINOMIAL_MAX + 1))
        p = _random_prob(rng) * (0.5 if rng.random() < 0.8 else 1.0)
        s = int(rng.integers(0, min(m, 6) + 1))
        x = float(rng.random()) if rng.random() < 0.9 else float(rng.uniform(1, 2))
        P, delta, delta0 = _delta_triple(rng)
        out.extend(idmom_bounds_check(m, p, s, x, P, delta, delta0))

        m = int(rng.integers(1, TRINOMIAL_MAX + 1))
        p = _random_prob(rng) * 0.5
        q = float(rng.uniform(0, 1 - p)) * 0.5
        u = int(rng.integers(0, min(m, 4) + 1))
        v = int(rng.integers(0, min(m - u, 4) + 1))
        P, delta, delta0 = _delta_triple(rng)
        w, y = (float(rng.uniform(0, math.exp(delta))) for _ in range(2))
        out.extend(mdmom_bounds_check(m, p, q, u, v, w, y, P, delta, delta0))

        m = int(rng.integers(1, TRINOMIAL_MAX + 1))
        tot = float(rng.uniform(0, 0.25)) if rng.random() < 0.9 else float(rng.uniform(0.25, 0.6))
        split = float(rng.random())
        h, k = _table(rng, m), _table(rng, m)
        if rng.random() < 0.5:
            f, g = h * rng.random(m + 1), k * rng.random(m + 1)
        else:
            f, g = h * rng.uniform(-1, 1, m + 1), k * rng.uniform(-1, 1, m + 1)
        out.extend(covariance_bound_check(m, tot * split, tot * (1 - split), f, g, h, k))

        size = int(rng.integers(1, 60))
        w8 = rng.dirichlet(np.full(size, float(rng.uniform(0.2, 3)))) * float(rng.uniform(0.01, 1))
        n = float(10.0 ** rng.uniform(1, 4))
        u = int(rng.integers(0, 5))
        v = int(rng.integers(0, u + 1))
        r = int(rng.integers(1, 5))
        alpha = float(10.0 ** rng.uniform(-1.3, 0.7))
        out.extend(sum_bounds_check(w8, n, r, u, v, alpha))
    return out


def run_suite(seed: int, count: int = 10_000) -> list[LemmaReport]:
    return suite_identities(seed, count) + suite_inequalities(seed, count)


def summarize(reports: list[LemmaReport]) -> list[dict]:
    """Per-check counts of pass / fail / vacuous and the failing instances."""
    rows: dict = {}
    for rep in reports:
        row = rows.setdefault(rep.lemma_id, {"lemma_id": rep.lemma_id, "kind": rep.kind,
                                             "pass": 0, "fail": 0, "vacuous": 0,
                                             "worst_ratio": 0.0, "failures": []})
        row[rep.status] += 1
        if rep.status == "fail":
            row["failures"].append(rep.to_dict())
        if rep.status != "vacuous" and rep.kind == "inequality" and rep.rhs > 0:
            row["worst_ratio"] = max(row["worst_ratio"], rep.lhs / rep.rhs)
    return list(rows.values())
