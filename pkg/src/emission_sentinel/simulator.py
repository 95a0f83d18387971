"""Synthetic detector data: uniform background mixed with a small isotropic source.

Every scenario draws from one PCG64 stream seeded through ``numpy.random.SeedSequence``.
Draw order is fixed (source flags, angles, background distances, source offsets,
then offset redraws), so a ``(config, seed)`` pair pins the dataset bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from emission_sentinel.model import (
    TWO_PI,
    Observation,
    ObservationSet,
    ballistic_indicator,
    cartesian_to_polar,
    check_radius,
)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator for a 64-bit seed (or a spawned SeedSequence)."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class ScenarioConfig:
    p_true: float
    location: tuple[float, float]
    d: float
    n: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.p_true <= 1.0:
            raise ValueError(f"p_true must lie in [0, 1], got {self.p_true}")
        l1, l2 = self.location
        if l1 * l1 + l2 * l2 > 1.0 + 1e-12:
            raise ValueError("source location must lie inside the unit disk")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        check_radius(self.d)
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class GeneratedEvent:
    delta: int
    obs: Observation


@dataclass(frozen=True)
class SimulatedDataset:
    """Observations plus the ground truth that must not reach inference."""

    config: ScenarioConfig
    observations: ObservationSet
    deltas: np.ndarray
    rejections: int

    @property
    def n_source(self) -> int:
        return int(self.deltas.sum())

    def events(self) -> list[GeneratedEvent]:
        return [GeneratedEvent(int(dl), ob) for dl, ob in zip(self.deltas, self.observations)]

    def truth(self) -> dict:
        cfg = self.config
        r, u = cartesian_to_polar(*cfg.location)
        return {
            "p_true": cfg.p_true,
            "location_l1": cfg.location[0],
            "location_l2": cfg.location[1],
            "r": r,
            "u": u,
            "d_radius": cfg.d,
            "n_particles": cfg.n,
            "seed": cfg.seed,
            "n_source_events": self.n_source,
            "offset_redraws": self.rejections,
            "source_event_indices": np.flatnonzero(self.deltas).tolist(),
        }


def sample_background(rng: np.random.Generator) -> Observation:
    theta = rng.random() * TWO_PI
    s = rng.uniform(-1.0, 1.0)
    return Observation(theta, s)


def sample_source_event(rng: np.random.Generator, location, d: float) -> Observation:
    """One ballistic particle from a source of radius ``d``.

    The offset is redrawn until the trajectory meets the detector ring (``|s| <= 1``).
    """
    l1, l2 = location
    theta = rng.random() * TWO_PI
    centre = l1 * math.cos(theta) + l2 * math.sin(theta)
    while True:
        s = centre + rng.uniform(-d, d)
        if abs(s) <= 1.0:
            break
    obs = Observation(theta, s)
    assert ballistic_indicator(obs.theta, obs.s, l1, l2, d)
    return obs


def generate_dataset(config: ScenarioConfig) -> SimulatedDataset:
    n, d = config.n, config.d
    l1, l2 = config.location
    rng = make_rng(config.seed)

    deltas = rng.random(n) < config.p_true
    theta = rng.random(n) * TWO_PI
    s = rng.uniform(-1.0, 1.0, n)
    offsets = rng.uniform(-d, d, n)

    centre = l1 * np.cos(theta) + l2 * np.sin(theta)
    src = np.flatnonzero(deltas)
    s_src = centre[src] + offsets[src]
    rejections = 0
    bad = np.flatnonzero(np.abs(s_src) > 1.0)
    while bad.size:
        rejections += int(bad.size)
        s_src[bad] = centre[src[bad]] + rng.uniform(-d, d, bad.size)
        bad = bad[np.abs(s_src[bad]) > 1.0]
    s[src] = s_src

    return SimulatedDataset(config, ObservationSet(theta, s), deltas, rejections)
