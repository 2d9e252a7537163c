"""Integer-supported mass functions and the distances between them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .errors import ValidationError

MASS_TOL = 1e-9


@dataclass(frozen=True)
class Pmf:
    """Dense mass table on offset, offset+1, ...; `tail_defect` is mass
    certified to lie outside the table."""

    offset: int
    masses: np.ndarray
    tail_defect: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float).copy()
        if m.ndim != 1:
            raise ValidationError("masses: must be one-dimensional")
        if not np.all(np.isfinite(m)) or (m.size and m.min() < 0):
            raise ValidationError("masses: must be finite and nonnegative")
        if not (self.tail_defect >= 0 and np.isfinite(self.tail_defect)):
            raise ValidationError(f"tail_defect: must be nonnegative, got {self.tail_defect}")
        total = float(np.sum(m)) + self.tail_defect
        if abs(total - 1.0) > MASS_TOL:
            raise ValidationError(f"masses: total {total!r} + defect differs from 1")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "tail_defect", float(self.tail_defect))

    @classmethod
    def point(cls, k: int) -> "Pmf":
        return cls(k, np.array([1.0]), 0.0)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + len(self.masses))

    def prob(self, k: int) -> float:
        i = k - self.offset
        return float(self.masses[i]) if 0 <= i < len(self.masses) else 0.0

    def mean(self) -> float:
        w = self.masses / self.masses.sum()
        return float(np.dot(self.support, w))

    def var(self) -> float:
        w = self.masses / self.masses.sum()
        k = self.support - self.offset
        m = float(np.dot(k, w))
        return float(np.dot((k - m) ** 2, w))

    def trimmed(self) -> "Pmf":
        nz = np.flatnonzero(self.masses)
        if nz.size == 0:
            return self
        lo, hi = nz[0], nz[-1]
        return Pmf(self.offset + lo, self.masses[lo : hi + 1], self.tail_defect)

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "masses": [float(x) for x in self.masses],
            "tail_defect": self.tail_defect,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Pmf":
        for key in ("offset", "masses"):
            if key not in d:
                raise ValidationError(f"pmf: missing field {key!r}")
        return cls(int(d["offset"]), np.asarray(d["masses"], dtype=float),
                   float(d.get("tail_defect", 0.0)))


class Distance(NamedTuple):
    value: float
    uncertainty: float


def _aligned(P: Pmf, Q: Pmf):
    lo = min(P.offset, Q.offset)
    hi = max(P.offset + len(P.masses), Q.offset + len(Q.masses))
    a = np.zeros(hi - lo)
    b = np.zeros(hi - lo)
    a[P.offset - lo : P.offset - lo + len(P.masses)] = P.masses
    b[Q.offset - lo : Q.offset - lo + len(Q.masses)] = Q.masses
    return a, b


def total_variation(P: Pmf, Q: Pmf) -> Distance:
    """Half the L1 distance; defects enter the uncertainty radius."""
    a, b = _aligned(P, Q)
    return Distance(0.5 * float(np.sum(np.abs(a - b))), 0.5 * (P.tail_defect + Q.tail_defect))


def local_distance(P: Pmf, Q: Pmf) -> Distance:
    """Largest pointwise mass difference."""
    a, b = _aligned(P, Q)
    value = float(np.max(np.abs(a - b))) if a.size else 0.0
    return Distance(value, max(P.tail_defect, Q.tail_defect))


def empirical_pmf(counts: Mapping[int, int]) -> Pmf:
    """Normalized frequencies on a dense table covering min..max."""
    items = [(int(k), int(c)) for k, c in counts.items() if c]
    if any(c < 0 for _, c in items):
        raise ValidationError("counts: must be nonnegative")
    total = sum(c for _, c in items)
    if total == 0:
        raise ValidationError("counts: no observations")
    lo = min(k for k, _ in items)
    hi = max(k for k, _ in items)
    table = np.zeros(hi - lo + 1)
    for k, c in items:
        table[k - lo] += c
    return Pmf(lo, table / total, 0.0)


def pmf_from_samples(values) -> Pmf:
    """Empirical Pmf of an integer sample array."""
    values = np.asarray(values, dtype=np.int64)
    if values.size == 0:
        raise ValidationError("values: no observations")
    lo = int(values.min())
    table = np.bincount(values - lo).astype(float)
    return Pmf(lo, table / values.size, 0.0)
