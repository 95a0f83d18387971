"""Decision artifacts from cold-chain samples: Bayes factor, no-source
probability, point estimates, evidence category and the HPD location region."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from emission_sentinel.model import ObservationSet, check_radius, wrap_angle
from emission_sentinel.sampler import PosteriorSamples

log = logging.getLogger(__name__)

LN10 = math.log(10.0)
DETECTION_THRESHOLD = 3.0
EVIDENCE_LEVELS = (("positive", 3.0), ("strong", 20.0), ("overwhelming", 150.0))
# BF values past the largest double are displayed as "Inf"; the log value itself stays finite.
_DISPLAY_LIMIT = math.log(1e308)


def sample_log_ratios(samples: PosteriorSamples) -> np.ndarray:
    """Per-sample log likelihood ratio against the background-only model."""
    p = np.asarray(samples.p, dtype=np.float64)
    j = np.asarray(samples.j, dtype=np.float64)
    return (samples.n - j) * np.log1p(-p) + j * np.log1p(p / samples.d - p)


def estimate_log_bayes_factor(samples: PosteriorSamples) -> float:
    """Harmonic-mean estimate of log BF, computed entirely on the log scale."""
    if len(samples) == 0:
        raise ValueError("need at least one posterior sample")
    lam = sample_log_ratios(samples)
    return float(math.log(lam.size) - logsumexp(-lam))


def posterior_prob_no_source(log_bf: float) -> float:
    """``1 / (1 + BF)`` with equal prior model odds."""
    return float(expit(-log_bf))


def classify_evidence(log_bf: float) -> str:
    label = "none"
    for name, threshold in EVIDENCE_LEVELS:
        if log_bf > math.log(threshold):
            label = name
    return label


def is_detection(log_bf: float) -> bool:
    return log_bf > math.log(DETECTION_THRESHOLD)


def format_bayes_factor(log_bf: float, digits: int = 3) -> str:
    """Decimal rendering that never overflows; ``Inf`` beyond 1e308."""
    if log_bf > _DISPLAY_LIMIT:
        return "Inf"
    log10 = log_bf / LN10
    if -4.0 <= log10 < 6.0:
        return f"{math.exp(log_bf):.{digits}g}"
    exponent = math.floor(log10)
    mantissa = 10.0 ** (log10 - exponent)
    if round(mantissa, digits - 1) >= 10.0:
        mantissa /= 10.0
        exponent += 1
    return f"{mantissa:.{digits - 1}f}e{exponent:+d}"


def circular_mean(u: np.ndarray) -> float:
    return wrap_angle(math.atan2(float(np.mean(np.sin(u))), float(np.mean(np.cos(u)))))


def point_estimates(samples: PosteriorSamples, strict_paper_mode: bool = False):
    """Posterior means ``(p_hat, r_hat, u_hat, (l1_hat, l2_hat))``.

    ``u_hat`` is the circular mean; ``strict_paper_mode`` switches to the plain
    arithmetic mean, which is biased when the draws straddle ``u = 0``.
    """
    if len(samples) == 0:
        raise ValueError("need at least one posterior sample")
    p_hat = float(np.mean(samples.p))
    r_hat = float(np.mean(samples.r))
    u = np.asarray(samples.u, dtype=np.float64)
    u_hat = float(np.mean(u)) if strict_paper_mode else circular_mean(u)
    return p_hat, r_hat, u_hat, (r_hat * math.cos(u_hat), r_hat * math.sin(u_hat))


@dataclass(frozen=True)
class HPDRegion:
    """Cells of a ``resolution x resolution`` lattice over [-1, 1]^2.

    Cell ``(ix, iy)`` covers ``l1`` in ``[-1 + ix*w, -1 + (ix+1)*w)`` and likewise
    for ``l2``; its flat index is ``iy * resolution + ix``.
    """

    resolution: int
    level: float
    cells: tuple[int, ...]
    counts: tuple[int, ...]
    total: int
    reliable: bool

    @property
    def width(self) -> float:
        return 2.0 / self.resolution

    @property
    def mass(self) -> float:
        return sum(self.counts) / self.total

    @property
    def area(self) -> float:
        return len(self.cells) * self.width ** 2

    def cell_of(self, l1: float, l2: float) -> int:
        ix, iy = _cell_xy(np.array([l1]), np.array([l2]), self.resolution)
        return int(iy[0] * self.resolution + ix[0])

    def contains(self, l1: float, l2: float) -> bool:
        return self.cell_of(l1, l2) in set(self.cells)

    def cell_bounds(self, cell: int) -> tuple[float, float, float, float]:
        iy, ix = divmod(cell, self.resolution)
        w = self.width
        return -1.0 + ix * w, -1.0 + (ix + 1) * w, -1.0 + iy * w, -1.0 + (iy + 1) * w


def _cell_xy(l1, l2, resolution):
    w = 2.0 / resolution
    ix = np.clip(np.floor((np.asarray(l1) + 1.0) / w).astype(np.int64), 0, resolution - 1)
    iy = np.clip(np.floor((np.asarray(l2) + 1.0) / w).astype(np.int64), 0, resolution - 1)
    return ix, iy


def hpd_cells_from_points(l1, l2, level: float = 0.95, resolution: int = 64) -> HPDRegion:
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    l1 = np.asarray(l1, dtype=np.float64)
    l2 = np.asarray(l2, dtype=np.float64)
    if l1.size == 0:
        raise ValueError("need at least one sample")
    ix, iy = _cell_xy(l1, l2, resolution)
    counts = np.bincount(iy * resolution + ix, minlength=resolution * resolution)
    occupied = np.flatnonzero(counts)
    # most populated first, lower cell index first among ties
    order = occupied[np.lexsort((occupied, -counts[occupied]))]
    cum = np.cumsum(counts[order])
    k = int(np.argmax(cum >= level * l1.size)) + 1
    reliable = l1.size >= resolution * resolution
    if not reliable:
        log.warning("HPD region from %d samples on %d cells is unreliable",
                    l1.size, resolution * resolution)
    chosen = order[:k]
    return HPDRegion(resolution, level, tuple(int(c) for c in chosen),
                     tuple(int(c) for c in counts[chosen]), int(l1.size), reliable)


def hpd_region_2d(samples: PosteriorSamples, level: float = 0.95, grid_resolution: int = 64) -> HPDRegion:
    """Smallest set of lattice cells holding at least ``level`` of the location draws."""
    l1, l2 = samples.locations()
    return hpd_cells_from_points(l1, l2, level, grid_resolution)


def lattice_points(resolution: int):
    """Centres of the ``resolution x resolution`` cells that lie inside the unit disk."""
    w = 2.0 / resolution
    c = -1.0 + (np.arange(resolution) + 0.5) * w
    l1, l2 = np.meshgrid(c, c)
    ix, iy = np.meshgrid(np.arange(resolution), np.arange(resolution))
    inside = l1 ** 2 + l2 ** 2 <= 1.0
    return l1[inside], l2[inside], ix[inside], iy[inside]


@dataclass(frozen=True)
class LocationMap:
    resolution: int
    l1: np.ndarray
    l2: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    log_density: np.ndarray

    def argmax(self) -> tuple[float, float]:
        k = int(np.argmax(self.log_density))
        return float(self.l1[k]), float(self.l2[k])

    def as_grid(self) -> np.ndarray:
        g = np.full((self.resolution, self.resolution), -np.inf)
        g[self.iy, self.ix] = self.log_density
        return g

    def count_local_maxima(self) -> int:
        """Lattice points at least as high as every in-disk 8-neighbour and above one of them."""
        g = self.as_grid()
        padded = np.pad(g, 1, constant_values=-np.inf)
        res = self.resolution
        neigh = [padded[1 + dy:1 + dy + res, 1 + dx:1 + dx + res]
                 for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
        stack = np.stack(neigh)
        finite = np.isfinite(g)
        is_max = finite & np.all(g >= stack, axis=0) & np.any(g > stack, axis=0)
        return int(is_max.sum())


def conditional_location_map(obs: ObservationSet, p: float, d: float,
                             grid_resolution: int = 64) -> LocationMap:
    """Unnormalised log posterior of the location at fixed ``p`` on the in-disk lattice."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if grid_resolution < 16:
        raise ValueError("resolution must be at least 16")
    d = check_radius(d)
    l1, l2, ix, iy = lattice_points(grid_resolution)
    j = obs.hits_at_many(l1, l2, d).astype(np.float64)
    r = np.hypot(l1, l2)
    logd = np.log(r) + (obs.n - j) * math.log1p(-p) + j * math.log1p(p / d - p)
    return LocationMap(grid_resolution, l1, l2, ix, iy, logd)


@dataclass
class DetectionReport:
    log_bf: float
    bf_display: str
    log10_bf: float
    pr_no_source: float
    detected: bool
    evidence: str
    p_hat: float
    r_hat: float
    u_hat: float
    location_hat: tuple[float, float]
    n_samples: int
    log_ratio_variance: float
    hpd_level: float
    hpd_resolution: int
    hpd_cells: list[int]
    hpd_reliable: bool
    diagnostics: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["location_hat"] = list(self.location_hat)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DetectionReport":
        data = dict(data)
        data["location_hat"] = tuple(data["location_hat"])
        return cls(**data)


def build_report(samples: PosteriorSamples, hpd_level: float = 0.95, grid_resolution: int = 64,
                 strict_paper_mode: bool = False) -> DetectionReport:
    log_bf = estimate_log_bayes_factor(samples)
    p_hat, r_hat, u_hat, loc = point_estimates(samples, strict_paper_mode)
    hpd = hpd_region_2d(samples, hpd_level, grid_resolution)
    lam = sample_log_ratios(samples)
    warnings = list(samples.diagnostics.get("warnings", []))
    if not hpd.reliable:
        warnings.append(f"HPD region built from {hpd.total} samples on "
                        f"{grid_resolution ** 2} cells; treat as unreliable")
    return DetectionReport(
        log_bf=log_bf,
        bf_display=format_bayes_factor(log_bf),
        log10_bf=log_bf / LN10,
        pr_no_source=posterior_prob_no_source(log_bf),
        detected=is_detection(log_bf),
        evidence=classify_evidence(log_bf),
        p_hat=p_hat,
        r_hat=r_hat,
        u_hat=u_hat,
        location_hat=loc,
        n_samples=len(samples),
        log_ratio_variance=float(np.var(lam)),
        hpd_level=hpd_level,
        hpd_resolution=grid_resolution,
        hpd_cells=list(hpd.cells),
        hpd_reliable=hpd.reliable,
        diagnostics={k: v for k, v in samples.diagnostics.items() if k != "warnings"},
        warnings=warnings,
    )

