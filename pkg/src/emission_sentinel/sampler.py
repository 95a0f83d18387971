"""Parallel-tempered Gibbs sampler for the source-model posterior.

Each iteration mutates every chain (p by exact draw from its discrete full
conditional, then r and u by Metropolis-Hastings) and then runs one exchange
sweep. Chain ``i`` targets ``f ** (1 / T_i)`` where ``f`` is
:func:`emission_sentinel.model.log_posterior_unnorm` with its fixed constant.

Randomness: ``SeedSequence(seed).spawn(N + 1)`` gives one PCG64 stream per
temperature slot (initial state and mutations) and a final stream for the
exchange sweep, so results depend on ``(seed, config)`` only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from emission_sentinel.model import (
    TWO_PI,
    ObservationSet,
    ParameterState,
    PriorSpec,
    check_radius,
    log_posterior_from_j,
    polar_to_cartesian,
    wrap_angle,
)

log = logging.getLogger(__name__)

ACCEPTANCE_BAND = (0.05, 0.95)
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class TemperatureLadder:
    temps: tuple[float, ...]

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temps)
        if not temps:
            raise ValueError("ladder needs at least one temperature")
        if temps[-1] != 1.0:
            raise ValueError("the last temperature must be exactly 1")
        if any(a <= b for a, b in zip(temps, temps[1:])):
            raise ValueError("temperatures must be strictly decreasing")
        object.__setattr__(self, "temps", temps)

    @property
    def n_chains(self) -> int:
        return len(self.temps)


def build_default_ladder(n_chains: int, t_max: float = 5.0) -> TemperatureLadder:
    """Geometric ladder from ``t_max`` down to 1."""
    if n_chains < 2:
        raise ValueError("a tempering ladder needs at least two chains")
    temps = [t_max ** ((n_chains - 1 - i) / (n_chains - 1)) for i in range(n_chains)]
    temps[-1] = 1.0
    return TemperatureLadder(tuple(temps))


@dataclass(frozen=True)
class ProposalConfig:
    sigma_r: float = 0.02
    sigma_u: float = 0.1

    def __post_init__(self):
        if not (self.sigma_r > 0.0 and self.sigma_u > 0.0):
            raise ValueError("proposal scales must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 50_000
    burn_in_fraction: float = 0.2
    thinning: int = 10
    ladder: TemperatureLadder = field(default_factory=lambda: build_default_ladder(6))
    proposals: ProposalConfig = field(default_factory=ProposalConfig)
    seed: int = 0
    log_every: int = 1000

    def __post_init__(self):
        if self.iterations < 10:
            raise ValueError("need at least 10 iterations")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValueError("burn_in_fraction must lie in [0, 1)")
        if self.thinning < 1:
            raise ValueError("thinning must be at least 1")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def burn_in(self) -> int:
        return int(math.floor(self.burn_in_fraction * self.iterations))

    def retained_iterations(self) -> range:
        """1-based iteration indices kept: burn_in + thinning, burn_in + 2*thinning, ..."""
        return range(self.burn_in + self.thinning, self.iterations + 1, self.thinning)


class PosteriorTarget:
    """Data, prior and radius bundled with per-grid-point log factors."""

    def __init__(self, obs: ObservationSet, prior: PriorSpec, d: float):
        self.obs = obs
        self.prior = prior
        self.d = check_radius(d)
        self.n = obs.n
        grid = prior.grid
        self.log_miss = np.log1p(-grid)
        self.log_hit = np.log1p(grid / self.d - grid)

    def hits(self, r: float, u: float) -> int:
        l1, l2 = polar_to_cartesian(r, u)
        return self.obs.hits_at(l1, l2, self.d)

    @staticmethod
    def hit_gain(p: float, d: float) -> float:
        """Log-likelihood change per extra hit at emission fraction ``p``."""
        return math.log1p(p / d - p) - math.log1p(-p)

    def log_f(self, p: float, r: float, j: int) -> float:
        return log_posterior_from_j(self.n, j, p, r, self.d)


class ChainState:
    """One temperature slot: the current state, its hit count and its counters."""

    __slots__ = ("temperature", "rng", "p_index", "p", "r", "u", "j",
                 "r_tries", "r_accepts", "u_tries", "u_accepts")

    def __init__(self, temperature: float, rng: np.random.Generator):
        self.temperature = float(temperature)
        self.rng = rng
        self.p_index = 0
        self.p = self.r = self.u = 0.0
        self.j = 0
        self.r_tries = self.r_accepts = self.u_tries = self.u_accepts = 0

    def initialise(self, target: PosteriorTarget):
        """Draw (p, r, u) from the prior."""
        self.p_index = int(self.rng.integers(target.prior.h))
        self.p = float(target.prior.grid[self.p_index])
        self.r = math.sqrt(self.rng.random())
        self.u = self.rng.random() * TWO_PI
        self.j = target.hits(self.r, self.u)

    @property
    def state(self) -> ParameterState:
        return ParameterState(self.p, self.r, self.u)

    def swap_state(self, other: "ChainState"):
        self.p_index, other.p_index = other.p_index, self.p_index
        self.p, other.p = other.p, self.p
        self.r, other.r = other.r, self.r
        self.u, other.u = other.u, self.u
        self.j, other.j = other.j, self.j


def p_conditional_weights(target: PosteriorTarget, j: int, temperature: float) -> np.ndarray:
    """Normalised tempered full-conditional probabilities over the p grid."""
    logw = ((target.n - j) * target.log_miss + j * target.log_hit) / temperature
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def gibbs_update_p(chain: ChainState, target: PosteriorTarget) -> float:
    if target.prior.h > 1:
        w = p_conditional_weights(target, chain.j, chain.temperature)
        k = int(np.searchsorted(np.cumsum(w), chain.rng.random(), side="right"))
        chain.p_index = min(k, target.prior.h - 1)
        chain.p = float(target.prior.grid[chain.p_index])
    return chain.p


def _log_trunc_mass(r: float, sigma: float) -> float:
    """log P(0 <= N(r, sigma^2) <= 1)."""
    tails = 0.5 * math.erfc(r / (sigma * _SQRT2)) + 0.5 * math.erfc((1.0 - r) / (sigma * _SQRT2))
    return math.log1p(-tails)


def sample_truncated_normal(rng: np.random.Generator, mean: float, sigma: float) -> float:
    """Draw from N(mean, sigma^2) restricted to [0, 1] by rejection."""
    while True:
        x = mean + sigma * rng.standard_normal()
        if 0.0 <= x <= 1.0:
            return x


def r_log_acceptance(r_cur: float, r_prop: float, j_cur: int, j_prop: int,
                     p: float, d: float, temperature: float, sigma_r: float) -> float:
    """Log MH ratio for a radial move, including the truncation-normaliser correction."""
    if r_prop <= 0.0:
        return -math.inf
    if r_cur <= 0.0:
        return math.inf
    log_target = (j_prop - j_cur) * PosteriorTarget.hit_gain(p, d) + math.log(r_prop / r_cur)
    return (log_target / temperature
            + _log_trunc_mass(r_cur, sigma_r) - _log_trunc_mass(r_prop, sigma_r))


def u_log_acceptance(j_cur: int, j_prop: int, p: float, d: float, temperature: float) -> float:
    return (j_prop - j_cur) * PosteriorTarget.hit_gain(p, d) / temperature


def propose_u(u_cur: float, step: float) -> float:
    return wrap_angle(u_cur + step)


def _accept(rng: np.random.Generator, log_alpha: float) -> bool:
    return log_alpha >= 0.0 or rng.random() < math.exp(log_alpha)


def mh_update_r(chain: ChainState, target: PosteriorTarget, sigma_r: float) -> float:
    r_prop = sample_truncated_normal(chain.rng, chain.r, sigma_r)
    j_prop = target.hits(r_prop, chain.u)
    log_alpha = r_log_acceptance(chain.r, r_prop, chain.j, j_prop, chain.p, target.d,
                                 chain.temperature, sigma_r)
    chain.r_tries += 1
    if _accept(chain.rng, log_alpha):
        chain.r, chain.j = r_prop, j_prop
        chain.r_accepts += 1
    return chain.r


def mh_update_u(chain: ChainState, target: PosteriorTarget, sigma_u: float) -> float:
    u_prop = propose_u(chain.u, sigma_u * chain.rng.standard_normal())
    j_prop = target.hits(chain.r, u_prop)
    log_alpha = u_log_acceptance(chain.j, j_prop, chain.p, target.d, chain.temperature)
    chain.u_tries += 1
    if _accept(chain.rng, log_alpha):
        chain.u, chain.j = u_prop, j_prop
        chain.u_accepts += 1
    return chain.u


def exchange_log_acceptance(log_f_i: float, log_f_j: float, t_i: float, t_j: float) -> float:
    if t_i == t_j or log_f_i == log_f_j:
        return 0.0
    return (log_f_j - log_f_i) * (1.0 / t_i - 1.0 / t_j)


def exchange_step(chains: list[ChainState], target: PosteriorTarget, rng: np.random.Generator,
                  pair_tries: np.ndarray, pair_accepts: np.ndarray):
    """One sweep: chain 1 to N each propose a swap with a neighbour.

    End chains use their single neighbour; inner chains pick left or right with
    equal probability. Accepted swaps only permute states between slots.
    """
    n_chains = len(chains)
    if n_chains < 2:
        return
    for i in range(n_chains):
        if i == 0:
            k = 1
        elif i == n_chains - 1:
            k = n_chains - 2
        else:
            k = i - 1 if rng.random() < 0.5 else i + 1
        a, b = chains[i], chains[k]
        log_alpha = exchange_log_acceptance(target.log_f(a.p, a.r, a.j), target.log_f(b.p, b.r, b.j),
                                            a.temperature, b.temperature)
        pair = min(i, k)
        pair_tries[pair] += 1
        if _accept(rng, log_alpha):
            a.swap_state(b)
            pair_accepts[pair] += 1


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in trajectory of the T = 1 chain."""

    p: np.ndarray
    r: np.ndarray
    u: np.ndarray
    j: np.ndarray
    n: int
    d: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.p) == len(self.r) == len(self.u) == len(self.j)):
            raise ValueError("sample arrays must have equal length")

    def __len__(self):
        return len(self.p)

    @property
    def states(self) -> list[ParameterState]:
        return [ParameterState(float(p), float(r), float(u)) for p, r, u in zip(self.p, self.r, self.u)]

    def locations(self) -> tuple[np.ndarray, np.ndarray]:
        return self.r * np.cos(self.u), self.r * np.sin(self.u)


def _rates(accepts, tries):
    return [a / t if t else None for a, t in zip(accepts, tries)]


def run_sampler(obs: ObservationSet, prior: PriorSpec, d: float, config: SamplerConfig,
                on_window=None) -> PosteriorSamples:
    """Run the tempered sampler and return the retained cold-chain draws.

    ``on_window`` receives one dict per ``config.log_every`` iterations with
    window acceptance rates, exchange rates and the current cold state.
    """
    target = PosteriorTarget(obs, prior, d)
    temps = config.ladder.temps
    n_chains = len(temps)
    streams = np.random.SeedSequence(config.seed).spawn(n_chains + 1)
    chains = [ChainState(t, np.random.Generator(np.random.PCG64(ss)))
              for t, ss in zip(temps, streams[:n_chains])]
    x_rng = np.random.Generator(np.random.PCG64(streams[-1]))
    for c in chains:
        c.initialise(target)

    pair_tries = np.zeros(max(n_chains - 1, 0), dtype=np.int64)
    pair_accepts = np.zeros_like(pair_tries)
    keep = config.retained_iterations()
    out_p = np.empty(len(keep))
    out_r = np.empty(len(keep))
    out_u = np.empty(len(keep))
    out_j = np.empty(len(keep), dtype=np.int64)
    sigma_r, sigma_u = config.proposals.sigma_r, config.proposals.sigma_u
    burn, thin = config.burn_in, config.thinning
    cold = chains[-1]

    def counters():
        return (np.array([[c.r_tries, c.r_accepts, c.u_tries, c.u_accepts] for c in chains]),
                pair_tries.copy(), pair_accepts.copy())

    window_start = counters()
    burn_snapshot = window_start if burn == 0 else None
    n_kept = 0
    for t in range(1, config.iterations + 1):
        for c in chains:
            gibbs_update_p(c, target)
            mh_update_r(c, target, sigma_r)
            mh_update_u(c, target, sigma_u)
        exchange_step(chains, target, x_rng, pair_tries, pair_accepts)

        if t > burn and (t - burn) % thin == 0:
            out_p[n_kept], out_r[n_kept], out_u[n_kept], out_j[n_kept] = cold.p, cold.r, cold.u, cold.j
            n_kept += 1
        if t == burn:
            burn_snapshot = counters()
        if on_window is not None and (t % config.log_every == 0 or t == config.iterations):
            now = counters()
            on_window(_window_record(t, now, window_start, cold))
            window_start = now

    diagnostics = _summarise(counters(), burn_snapshot, temps)
    for msg in diagnostics["warnings"]:
        log.warning(msg)
    return PosteriorSamples(out_p[:n_kept], out_r[:n_kept], out_u[:n_kept], out_j[:n_kept],
                            obs.n, target.d, diagnostics)


def _window_record(t, now, start, cold):
    mh = now[0] - start[0]
    return {
        "iteration": t,
        "accept_r": _rates(mh[:, 1], mh[:, 0]),
        "accept_u": _rates(mh[:, 3], mh[:, 2]),
        "exchange": _rates(now[2] - start[2], now[1] - start[1]),
        "cold_state": {"p": cold.p, "r": cold.r, "u": cold.u, "j": cold.j},
    }


def _summarise(end, burn_snapshot, temps):
    mh = end[0] - burn_snapshot[0]
    accept_r = _rates(mh[:, 1], mh[:, 0])
    accept_u = _rates(mh[:, 3], mh[:, 2])
    exchange = _rates(end[2] - burn_snapshot[2], end[1] - burn_snapshot[1])
    lo, hi = ACCEPTANCE_BAND
    warnings = []
    for name, rates in (("r", accept_r), ("u", accept_u)):
        for t, rate in zip(temps, rates):
            if rate is not None and not lo <= rate <= hi:
                warnings.append(f"{name}-update acceptance {rate:.3f} at T={t:.4g} "
                                f"outside [{lo}, {hi}] after burn-in")
    return {
        "temperatures": list(temps),
        "accept_r": accept_r,
        "accept_u": accept_u,
        "exchange": exchange,
        "warnings": warnings,
    }
