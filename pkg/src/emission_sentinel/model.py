"""Geometry, sufficient statistic and log densities shared by every other module.

All densities are kept on the log scale. The unnormalised log posterior drops
the ``(4*pi)**-n`` likelihood factor and the ``1/(h*pi)`` prior normaliser, and
nothing else, so every tempered chain sees the same function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from emission_sentinel import _kernel

TWO_PI = 2.0 * math.pi
LOG_4PI = math.log(4.0 * math.pi)


def wrap_angle(a: float) -> float:
    """Reduce an angle into ``[0, 2*pi)``."""
    w = math.fmod(a, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    if w >= TWO_PI:
        w = 0.0
    return w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    w = np.mod(a, TWO_PI)
    w[w >= TWO_PI] = 0.0
    return w


@dataclass(frozen=True)
class Observation:
    """One detected trajectory in normal coordinates."""

    theta: float
    s: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and math.isfinite(self.s)):
            raise ValueError("observation coordinates must be finite")
        if not -1.0 <= self.s <= 1.0:
            raise ValueError(f"|s| must not exceed 1, got s={self.s}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


class ObservationSet:
    """Immutable collection of trajectories with cached trigonometry.

    Angles are reduced into ``[0, 2*pi)`` on construction.
    """

    def __init__(self, theta, s):
        theta = np.array(theta, dtype=np.float64).reshape(-1)
        s = np.array(s, dtype=np.float64).reshape(-1)
        if theta.shape != s.shape:
            raise ValueError("theta and s must have the same length")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(s))):
            raise ValueError("observation coordinates must be finite")
        if s.size and np.max(np.abs(s)) > 1.0:
            bad = int(np.argmax(np.abs(s) > 1.0))
            raise ValueError(f"record {bad}: |s| must not exceed 1")
        theta = wrap_angles(theta)
        for a in (theta, s):
            a.flags.writeable = False
        self.theta = theta
        self.s = s
        self._cos = np.cos(theta)
        self._sin = np.sin(theta)
        self._index = None

    @classmethod
    def empty(cls) -> "ObservationSet":
        return cls(np.empty(0), np.empty(0))

    @classmethod
    def from_records(cls, records) -> "ObservationSet":
        records = list(records)
        return cls([o.theta for o in records], [o.s for o in records])

    @property
    def n(self) -> int:
        return int(self.theta.shape[0])

    def __len__(self):
        return self.n

    def __iter__(self):
        for t, s in zip(self.theta, self.s):
            yield Observation(float(t), float(s))

    def __eq__(self, other):
        if not isinstance(other, ObservationSet):
            return NotImplemented
        return np.array_equal(self.theta, other.theta) and np.array_equal(self.s, other.s)

    def __repr__(self):
        return f"ObservationSet(n={self.n})"

    def _kernel_args(self, d):
        if self._index is None:
            self._index = _kernel.kernel_args(_kernel.build_index(self.theta, self.s, d))
        return self._index

    def hits_at(self, l1: float, l2: float, d: float) -> int:
        """Number of trajectories passing within ``d`` of the point ``(l1, l2)``."""
        if self.n == 0:
            return 0
        return int(_kernel.count_hits(*self._kernel_args(d), float(l1), float(l2), float(d)))

    def hits_at_many(self, l1, l2, d: float) -> np.ndarray:
        l1 = np.ascontiguousarray(l1, dtype=np.float64)
        l2 = np.ascontiguousarray(l2, dtype=np.float64)
        if self.n == 0:
            return np.zeros(l1.shape, dtype=np.int64)
        return _kernel.count_hits_many(*self._kernel_args(d), l1.reshape(-1), l2.reshape(-1),
                                       float(d)).reshape(l1.shape)

    def hit_mask(self, l1: float, l2: float, d: float) -> np.ndarray:
        """Per-record hit flags by a full scan; the reference for :meth:`hits_at`."""
        return np.abs(l1 * self._cos + l2 * self._sin - self.s) <= d


@dataclass(frozen=True)
class ParameterState:
    """Source-model parameters: emission fraction and polar location."""

    p: float
    r: float
    u: float

    @property
    def location(self) -> tuple[float, float]:
        return polar_to_cartesian(self.r, self.u)


@dataclass(frozen=True)
class PriorSpec:
    """Equally spaced emission-rate grid from ``a_p`` to ``b_p`` with ``h`` points."""

    a_p: float
    b_p: float
    h: int
    grid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("prior grid needs at least one point")
        if not 0.0 < self.a_p < 1.0 or not 0.0 < self.b_p < 1.0:
            raise ValueError("grid bounds must lie in (0, 1)")
        if self.h == 1 and self.a_p != self.b_p:
            raise ValueError("a single-point grid needs a_p == b_p")
        if self.h > 1 and not self.a_p < self.b_p:
            raise ValueError("a_p must be below b_p")
        grid = np.linspace(self.a_p, self.b_p, self.h) if self.h > 1 else np.array([self.a_p])
        grid.flags.writeable = False
        object.__setattr__(self, "grid", grid)

    @classmethod
    def single(cls, p: float) -> "PriorSpec":
        return cls(p, p, 1)


def check_radius(d: float) -> float:
    if not 0.0 < d < 1.0:
        raise ValueError(f"source radius must lie in (0, 1), got {d}")
    return float(d)


def ballistic_indicator(theta: float, s: float, l1: float, l2: float, d: float) -> bool:
    """True when the line (theta, s) passes within ``d`` of ``(l1, l2)``; ties count as hits."""
    return abs(l1 * math.cos(theta) + l2 * math.sin(theta) - s) <= d


def polar_to_cartesian(r: float, u: float) -> tuple[float, float]:
    return r * math.cos(u), r * math.sin(u)


def cartesian_to_polar(l1: float, l2: float) -> tuple[float, float]:
    """Inverse of :func:`polar_to_cartesian`; the origin maps to ``u = 0``."""
    r = math.hypot(l1, l2)
    if r == 0.0:
        return 0.0, 0.0
    return r, wrap_angle(math.atan2(l2, l1))


def hit_count(obs: ObservationSet, r: float, u: float, d: float) -> int:
    """Sufficient statistic J for a source centred at polar ``(r, u)``."""
    l1, l2 = polar_to_cartesian(r, u)
    return obs.hits_at(l1, l2, d)


def _check_j(n, j):
    if not 0 <= j <= n:
        raise ValueError(f"hit count {j} outside [0, {n}]")


def log_likelihood_ratio(n: int, j: int, p: float, d: float) -> float:
    """``(n - J) log(1 - p) + J log(p/d + 1 - p)``: the source-model log likelihood
    with the background factor ``(4*pi)**-n`` removed."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"emission fraction must lie in (0, 1), got {p}")
    _check_j(n, j)
    return (n - j) * math.log1p(-p) + j * math.log1p(p / d - p)


def log_likelihood_m2(n: int, j: int, p: float, d: float) -> float:
    return -n * LOG_4PI + log_likelihood_ratio(n, j, p, d)


def log_likelihood_m1(n: int) -> float:
    if n < 0:
        raise ValueError("n must be non-negative")
    return -n * LOG_4PI


def log_posterior_from_j(n: int, j: int, p: float, r: float, d: float) -> float:
    if r <= 0.0:
        return -math.inf
    return math.log(r) + log_likelihood_ratio(n, j, p, d)


def log_posterior_unnorm(state: ParameterState, obs: ObservationSet, d: float) -> float:
    """Log posterior of the source model up to the fixed additive constant
    ``-n log(4 pi) - log(h pi)``. Returns ``-inf`` at ``r = 0``."""
    j = hit_count(obs, state.r, state.u, d)
    return log_posterior_from_j(obs.n, j, state.p, state.r, d)
