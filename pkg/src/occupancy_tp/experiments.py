"""Rate studies: distance to the fitted translated Poisson law across an
n-grid, log-log slope fits, and the tail Poissonization check."""

from __future__ import annotations

import csv
import io
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ResourceError, ValidationError
from .exactdist import (LOW_BOX_LIMIT, DpConfig, default_config, exact_pmf,
                        low_boxes_all_occupied, poissonized_pmf)
from .metrics import total_variation
from .moments import Statistic, moments
from .occusim import conditional_mc_law, empirical_mc_law
from .tpoisson import distances_to_tp, fit_tp
from .weights import WeightModel, min_n0, tail_profile

CSV_HEADER = ["n", "mu", "sigma2", "d_tv", "d_tv_unc", "d_loc", "d_loc_unc",
              "method", "samples", "wall_time_ms"]
INCONCLUSIVE = 0.30
MIN_SAMPLES = 100_000
EXACT_BOX_LIMIT = 5000


@dataclass(frozen=True)
class RateRow:
    n: int
    mu: float
    sigma2: float
    d_tv: float
    d_tv_uncertainty: float
    d_loc: float
    d_loc_uncertainty: float
    method: str
    samples: int
    wall_time_ms: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def inconclusive(self) -> bool:
        return (self.d_tv_uncertainty > INCONCLUSIVE * self.d_tv
                or self.d_loc_uncertainty > INCONCLUSIVE * self.d_loc)

    def csv_fields(self) -> list:
        return [self.n, repr(self.mu), repr(self.sigma2), repr(self.d_tv),
                repr(self.d_tv_uncertainty), repr(self.d_loc), repr(self.d_loc_uncertainty),
                self.method, self.samples, repr(self.wall_time_ms)]

    def to_dict(self) -> dict:
        return {"n": self.n, "mu": self.mu, "sigma2": self.sigma2, "d_tv": self.d_tv,
                "d_tv_uncertainty": self.d_tv_uncertainty, "d_loc": self.d_loc,
                "d_loc_uncertainty": self.d_loc_uncertainty, "method": self.method,
                "samples": self.samples, "wall_time_ms": self.wall_time_ms,
                "inconclusive": self.inconclusive}


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def fit_loglog_slope(points) -> SlopeFit | None:
    """Least squares of log y on log x; None with fewer than two points."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 2:
        return None
    if any(x <= 0 or y <= 0 for x, y in pts):
        raise ValidationError("points: coordinates must be positive")
    lx = np.log([x for x, _ in pts])
    ly = np.log([y for _, y in pts])
    if np.ptp(lx) == 0:
        return None
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2)


@dataclass
class RateStudy:
    rows: list
    slope_tv: SlopeFit | None
    slope_loc: SlopeFit | None
    spread_tv: float | None
    spread_loc: float | None
    warnings: list = field(default_factory=list)

    @property
    def included(self) -> list:
        return [row for row in self.rows if not row.inconclusive]

    def to_dict(self) -> dict:
        fit = lambda f: None if f is None else f._asdict()
        return {"rows": [r.to_dict() for r in self.rows], "slope_tv": fit(self.slope_tv),
                "slope_loc": fit(self.slope_loc), "spread_tv": self.spread_tv,
                "spread_loc": self.spread_loc, "warnings": list(self.warnings)}


def point_seed(seed: int, n: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(n),))
    return int(ss.generate_state(1, np.uint64)[0])


def premise_violations(model: WeightModel, n: int, stat: Statistic) -> list[str]:
    """Messages for each violated lower limit on n (n_0, and for K_{n,r}
    also e^{r/4} and 2r)."""
    out = []
    n0 = min_n0(model)
    if n < n0:
        out.append(f"n = {n} is below n_0 = {n0}")
    if stat.r is not None:
        if n < math.exp(stat.r / 4.0):
            out.append(f"n = {n} is below e^(r/4) = {math.exp(stat.r / 4.0):.6g}")
        if n < 2 * stat.r:
            out.append(f"n = {n} is below 2r = {2 * stat.r}")
    return out


def _exact_admissible(model: WeightModel) -> bool:
    return model.support_size is not None and model.support_size <= EXACT_BOX_LIMIT


def rate_point(model: WeightModel, n: int, stat: Statistic, method: str, samples: int,
               seed: int, estimator: str = "conditional", threads: int = 1) -> RateRow:
    t0 = time.perf_counter()
    mom = moments(model, n, stat)
    tp = fit_tp(mom.mu, mom.var)
    if method == "exact":
        if not _exact_admissible(model):
            raise ResourceError("exact method needs an explicit model with at most "
                                f"{EXACT_BOX_LIMIT} boxes")
        law = exact_pmf(model, n, stat, default_config(model, n))
        tv, loc = distances_to_tp(law, tp)
        tv_unc, loc_unc, used = tv.uncertainty, loc.uncertainty, 0
    elif method == "monte_carlo":
        if samples < MIN_SAMPLES:
            raise ValidationError(f"samples: must be >= {MIN_SAMPLES} for monte_carlo, got {samples}")
        sampler = {"conditional": conditional_mc_law, "empirical": empirical_mc_law}.get(estimator)
        if sampler is None:
            raise ValidationError(f"estimator: expected conditional or empirical, got {estimator!r}")
        est = sampler(model, n, stat, samples, point_seed(seed, n), threads)
        tv, loc = distances_to_tp(est.pmf, tp)
        tv_unc = tv.uncertainty + est.tv_uncertainty
        loc_unc = loc.uncertainty + est.loc_uncertainty
        used = samples
    else:
        raise ValidationError(f"method: expected exact or monte_carlo, got {method!r}")
    ms = 1000.0 * (time.perf_counter() - t0)
    return RateRow(n, mom.mu, mom.var, tv.value, tv_unc, loc.value, loc_unc, method, used, ms)


def _spread(values) -> float | None:
    values = list(values)
    if not values:
        return None
    return max(values) / min(values) if min(values) > 0 else math.inf


def rate_study(model: WeightModel, stat: Statistic, n_grid, method: str = "monte_carlo",
               samples: int = 1_000_000, seed: int | None = None,
               estimator: str = "conditional", threads: int = 1,
               parallel_points: int = 1) -> RateStudy:
    """Distances to TP(mu_n, sigma_n^2) over n_grid with slope fits of
    log d_TV and log d_loc against log sigma_n.

    Rows whose distance uncertainty exceeds 30% of the distance are flagged
    inconclusive and left out of the fits and spreads."""
    grid = [int(n) for n in n_grid]
    if not grid:
        raise ValidationError("n_grid: empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError("n_grid: must be strictly increasing")
    if grid[0] < 3:
        raise ValidationError(f"n_grid: every n must be >= 3, got {grid[0]}")
    if method == "monte_carlo" and seed is None:
        raise ValidationError("seed: required for monte_carlo")
    notes = []
    for n in grid:
        for msg in premise_violations(model, n, stat):
            warnings.warn(msg)
            notes.append(msg)
    job = lambda n: rate_point(model, n, stat, method, samples, seed, estimator, threads)
    if parallel_points > 1:
        with ThreadPoolExecutor(max_workers=parallel_points) as pool:
            rows = list(pool.map(job, grid))
    else:
        rows = [job(n) for n in grid]
    kept = [r for r in rows if not r.inconclusive]
    for r in rows:
        if r.inconclusive:
            notes.append(f"n = {r.n}: inconclusive, excluded from fits")
    tv_pts = [(r.sigma, r.d_tv) for r in kept if r.d_tv > 0]
    loc_pts = [(r.sigma, r.d_loc) for r in kept if r.d_loc > 0]
    return RateStudy(rows, fit_loglog_slope(tv_pts), fit_loglog_slope(loc_pts),
                     _spread(r.sigma * r.d_tv for r in kept),
                     _spread(r.sigma2 * r.d_loc for r in kept), notes)


def write_rates_csv(rows, out=None) -> str:
    """CSV with the fixed header; returns the text and writes it to `out`
    (a path) when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row.csv_fields())
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_rates_csv(path) -> list[RateRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValidationError(f"csv header: expected {','.join(CSV_HEADER)}")
        return [RateRow(int(d["n"]), float(d["mu"]), float(d["sigma2"]), float(d["d_tv"]),
                        float(d["d_tv_unc"]), float(d["d_loc"]), float(d["d_loc_unc"]),
                        d["method"], int(d["samples"]), float(d["wall_time_ms"]))
                for d in reader]


# -- tail Poissonization ---------------------------------------------------------

@dataclass(frozen=True)
class LeCamReport:
    n: int
    jn: int
    Pn: float
    n_pow_minus3: float
    d_tv: dict
    d_tv_uncertainty: dict
    low_boxes_prob: float | None

    @property
    def passed(self) -> bool:
        ok = all(self.d_tv[k] <= self.Pn + self.d_tv_uncertainty[k] for k in self.d_tv)
        if self.low_boxes_prob is not None:
            ok = ok and self.low_boxes_prob >= 1.0 - self.n_pow_minus3
        return ok

    def to_dict(self) -> dict:
        return {"n": self.n, "jn": self.jn, "Pn": self.Pn, "n^-3": self.n_pow_minus3,
                "d_tv": dict(self.d_tv), "d_tv_uncertainty": dict(self.d_tv_uncertainty),
                "low_boxes_prob": self.low_boxes_prob, "passed": self.passed}


LECAM_BUDGET = 300_000
ROUNDING = 1e-12  # allowance for floating error in the two evaluated laws


def _lecam_boxes(model: WeightModel, n: int) -> int | None:
    """Boxes for the exact and Poissonized laws, or None when the DP would
    exceed the work budget (J n box-ball steps)."""
    if model.support_size is not None:
        J = model.support_size
    else:
        J = 64
        while n * model.tail(J + 1) > 0.05:
            J *= 2
    return J if J * n <= LECAM_BUDGET else None


def lecam_report(model: WeightModel, n: int, stats=(Statistic.occupied(), Statistic.exactly(1)),
                 J: int | None = None) -> LeCamReport:
    """Compare the exact and Poissonized laws of each restricted statistic
    (boxes j >= j_n) against P_n, and the probability that all boxes below
    j_n are occupied against 1 - n^{-3}.  Distances are omitted where the
    exact law is out of budget."""
    if n < 3:
        raise ValidationError(f"n: must be >= 3, got {n}")
    prof = tail_profile(model, n)
    J = J or _lecam_boxes(model, n)
    dist, unc = {}, {}
    empty = model.support_size is not None and prof.jn > model.support_size
    for stat in stats:
        s = stat.restricted(prof.jn)
        if empty:
            # no boxes j >= j_n: both restricted statistics are identically 0
            dist[s.label()], unc[s.label()] = 0.0, 0.0
        elif J is not None:
            d = total_variation(exact_pmf(model, n, s, DpConfig(J)), poissonized_pmf(model, n, s, J))
            dist[s.label()] = d.value
            unc[s.label()] = d.uncertainty + ROUNDING
    low = None
    if 2 <= prof.jn <= LOW_BOX_LIMIT + 1:
        low = low_boxes_all_occupied(model, n, prof.jn - 1)
    return LeCamReport(n, prof.jn, prof.Pn, float(n) ** -3, dist, unc, low)
