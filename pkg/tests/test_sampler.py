import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from emission_sentinel.model import TWO_PI, ObservationSet, PriorSpec
from emission_sentinel.sampler import (
    ChainState,
    PosteriorTarget,
    ProposalConfig,
    SamplerConfig,
    TemperatureLadder,
    build_default_ladder,
    exchange_log_acceptance,
    exchange_step,
    gibbs_update_p,
    mh_update_r,
    p_conditional_weights,
    propose_u,
    r_log_acceptance,
    run_sampler,
)

mpmath.mp.dps = 40


def random_obs(seed, n):
    rng = np.random.default_rng(seed)
    return ObservationSet(rng.uniform(0, TWO_PI, n), rng.uniform(-1, 1, n))


def batch_mean_se(x, batches=50):
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    x = np.asarray(x)
    m = x.size // batches
    means = x[: m * batches].reshape(batches, m).mean(axis=1)
    return means.std(ddof=1) / math.sqrt(batches)


# ---- ladder and config ------------------------------------------------------

def test_default_ladder_six_chains():
    temps = build_default_ladder(6).temps
    expected = [5 ** (k / 5) for k in range(5, -1, -1)]
    np.testing.assert_allclose(temps, expected, rtol=1e-14)
    np.testing.assert_allclose(temps, [5, 3.624, 2.627, 1.904, 1.380, 1], atol=6e-4)
    assert temps[0] == 5.0 and temps[-1] == 1.0


def test_default_ladder_two_chains():
    assert build_default_ladder(2).temps == (5.0, 1.0)


@pytest.mark.parametrize("n", range(2, 12))
def test_default_ladder_strictly_decreasing(n):
    temps = build_default_ladder(n).temps
    assert all(a > b for a, b in zip(temps, temps[1:])) and temps[-1] == 1.0


def test_ladder_validation():
    with pytest.raises(ValueError):
        build_default_ladder(1)
    for bad in [(2.0, 2.0, 1.0), (1.0, 2.0), (3.0, 1.5)]:
        with pytest.raises(ValueError):
            TemperatureLadder(bad)
    assert TemperatureLadder((1.0,)).n_chains == 1


def test_config_validation():
    for bad in [dict(iterations=9), dict(burn_in_fraction=1.0), dict(thinning=0), dict(seed=-1)]:
        with pytest.raises(ValueError):
            SamplerConfig(**bad)
    with pytest.raises(ValueError):
        ProposalConfig(0.0, 0.1)


def test_thinning_convention_keeps_eight_of_hundred():
    cfg = SamplerConfig(iterations=100, burn_in_fraction=0.2, thinning=10)
    assert cfg.burn_in == 20
    assert list(cfg.retained_iterations()) == [30, 40, 50, 60, 70, 80, 90, 100]
    samples = run_sampler(random_obs(0, 200), PriorSpec(0.001, 0.01, 10), 0.01,
                          SamplerConfig(iterations=100, seed=3))
    assert len(samples) == 8


# ---- p update ---------------------------------------------------------------

def test_singleton_grid_always_returns_value():
    target = PosteriorTarget(random_obs(1, 50), PriorSpec.single(0.005), 0.01)
    chain = ChainState(1.0, np.random.default_rng(0))
    chain.initialise(target)
    for _ in range(100):
        assert gibbs_update_p(chain, target) == 0.005


def test_p_weights_decrease_without_hits():
    target = PosteriorTarget(random_obs(2, 500), PriorSpec(0.001, 0.01, 10), 0.01)
    w = p_conditional_weights(target, 0, 1.0)
    assert np.all(np.diff(w) < 0) and np.argmax(w) == 0


def exact_p_weights(n, j, grid, d, temperature):
    logs = [((n - j) * mpmath.log(1 - mpmath.mpf(p)) + j * mpmath.log(mpmath.mpf(p) / d + 1 - mpmath.mpf(p)))
            / temperature for p in grid]
    top = max(logs)
    w = [mpmath.e ** (v - top) for v in logs]
    total = sum(w)
    return np.array([float(v / total) for v in w])


def test_p_weights_match_high_precision():
    prior = PriorSpec(0.001, 0.01, 10)
    target = PosteriorTarget(random_obs(3, 100), prior, 0.01)
    for j, t in [(10, 1.0), (0, 1.0), (3, 2.627), (100, 5.0)]:
        got = p_conditional_weights(target, j, t)
        want = exact_p_weights(100, j, prior.grid.tolist(), mpmath.mpf("0.01"), t)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-300)


def test_p_draw_frequencies_match_exact_weights():
    prior = PriorSpec(0.001, 0.01, 10)
    target = PosteriorTarget(random_obs(4, 100), prior, 0.01)
    want = exact_p_weights(100, 10, prior.grid.tolist(), mpmath.mpf("0.01"), 1)
    chain = ChainState(1.0, np.random.default_rng(42))
    chain.initialise(target)
    chain.j = 10
    draws = 100_000
    counts = np.zeros(prior.h)
    for _ in range(draws):
        gibbs_update_p(chain, target)
        counts[chain.p_index] += 1
    se = np.sqrt(want * (1 - want) / draws)
    assert np.all(np.abs(counts / draws - want) <= 3 * se)


def test_tempering_scales_log_weights():
    target = PosteriorTarget(random_obs(5, 300), PriorSpec(0.001, 0.01, 10), 0.01)
    cold = p_conditional_weights(target, 4, 1.0)
    hot = p_conditional_weights(target, 4, 2.0)
    np.testing.assert_allclose(hot, np.sqrt(cold) / np.sqrt(cold).sum(), rtol=1e-12)


# ---- r update ---------------------------------------------------------------

def test_zero_displacement_always_accepted():
    for r in [0.01, 0.3, 0.999]:
        assert r_log_acceptance(r, r, 7, 7, 0.005, 0.01, 1.0, 0.02) == 0.0


def test_empty_data_radius_mean():
    cfg = SamplerConfig(iterations=125_000, thinning=1, ladder=TemperatureLadder((1.0,)),
                        proposals=ProposalConfig(0.3, 0.1), seed=11)
    samples = run_sampler(ObservationSet.empty(), PriorSpec(0.001, 0.01, 10), 0.01, cfg)
    assert len(samples) == 100_000
    assert abs(samples.r.mean() - 2 / 3) <= 3 * batch_mean_se(samples.r)


def exact_flow_matrix(log_target, sigma, bins, fine):
    """Stationary flow between r-bins for one MH step, by integration on a fine grid."""
    h = 1.0 / fine
    r = (np.arange(fine) + 0.5) * h
    lt = log_target(r)
    pi = np.exp(lt - lt.max())
    pi /= pi.sum()
    z = stats.norm.cdf((1 - r) / sigma) - stats.norm.cdf(-r / sigma)
    q = stats.norm.pdf((r[None, :] - r[:, None]) / sigma) / sigma / z[:, None] * h
    log_alpha = (lt[None, :] - lt[:, None]) + np.log(z)[:, None] - np.log(z)[None, :]
    move = q * np.exp(np.minimum(log_alpha, 0.0))
    stay = 1.0 - move.sum(axis=1)
    k = np.arange(fine) * bins // fine
    flow = np.zeros((bins, bins))
    np.add.at(flow, (k[:, None].repeat(fine, 1), k[None, :].repeat(fine, 0)), pi[:, None] * move)
    np.add.at(flow, (k, k), pi * stay)
    return flow, pi, r


def test_radius_update_flow_balance():
    obs = random_obs(6, 40)
    prior = PriorSpec.single(0.2)
    d, u, temperature, sigma = 0.05, 1.0, 1.5, 0.1
    target = PosteriorTarget(obs, prior, d)
    gain = PosteriorTarget.hit_gain(0.2, d)
    bins, fine = 20, 4000

    def log_target(r):
        j = obs.hits_at_many(r * math.cos(u), r * math.sin(u), d)
        return (np.log(r) + j * gain) / temperature

    flow, pi, grid = exact_flow_matrix(log_target, sigma, bins, fine)
    # the oracle itself must balance: the r-kernel is reversible
    assert np.max(np.abs(flow - flow.T)) < 1e-4 * flow.max()

    rng = np.random.default_rng(7)
    chain = ChainState(temperature, rng)
    chain.p, chain.p_index, chain.u = 0.2, 0, u
    steps = 200_000
    cdf = np.cumsum(pi)
    counts = np.zeros((bins, bins))
    for _ in range(steps):
        i = min(int(np.searchsorted(cdf, rng.random())), fine - 1)
        chain.r = grid[i] + (rng.random() - 0.5) / fine
        chain.j = target.hits(chain.r, u)
        a = min(int(chain.r * bins), bins - 1)
        mh_update_r(chain, target, sigma)
        counts[a, min(int(chain.r * bins), bins - 1)] += 1
    freq = counts / steps
    se = np.sqrt(flow * (1 - flow) / steps) + 1.0 / steps
    # 400 cells; 4.5 standard errors keeps the family-wise false alarm rate small
    assert np.all(np.abs(freq - flow) <= 4.5 * se)
    sym_se = np.sqrt((flow + flow.T) / steps) + 1.0 / steps
    assert np.all(np.abs(freq - freq.T) <= 4.5 * sym_se)


# ---- u update ---------------------------------------------------------------

def test_wrap_forward():
    assert propose_u(6.2, 0.2) == pytest.approx(6.4 - TWO_PI, abs=1e-12)
    assert propose_u(6.2, 0.2) == pytest.approx(0.11681, abs=1e-5)


def test_wrap_backward():
    assert propose_u(0.05, -0.1) == pytest.approx(6.23319, abs=1e-5)


@given(u=st.floats(0, TWO_PI, exclude_max=True), step=st.floats(-50, 50))
def test_wrapped_proposal_in_range(u, step):
    assert 0.0 <= propose_u(u, step) < TWO_PI


def test_empty_data_angle_uniform_and_always_accepted():
    cfg = SamplerConfig(iterations=125_000, thinning=1, ladder=TemperatureLadder((1.0,)),
                        proposals=ProposalConfig(0.3, 3.0), seed=12)
    samples = run_sampler(ObservationSet.empty(), PriorSpec(0.001, 0.01, 10), 0.01, cfg)
    assert samples.diagnostics["accept_u"] == [1.0]
    stat = stats.kstest(samples.u, stats.uniform(0, TWO_PI).cdf).statistic
    assert stat < stats.kstwo.ppf(0.999, samples.u.size)


# ---- exchange ---------------------------------------------------------------

def test_exchange_acceptance_examples():
    assert exchange_log_acceptance(-5.0, -3.0, 2.0, 2.0) == 0.0
    assert exchange_log_acceptance(-4.0, -4.0, 1.0, 3.0) == 0.0
    assert math.exp(exchange_log_acceptance(0.0, -2.0, 1.0, 2.0)) == pytest.approx(math.exp(-1), rel=1e-15)
    assert math.exp(exchange_log_acceptance(0.0, -2.0, 1.0, 2.0)) == pytest.approx(0.3679, abs=1e-4)


def make_chains(target, temps, seed):
    ss = np.random.SeedSequence(seed).spawn(len(temps))
    chains = [ChainState(t, np.random.default_rng(s)) for t, s in zip(temps, ss)]
    for c in chains:
        c.initialise(target)
    return chains


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_chains=st.integers(2, 8))
def test_exchange_only_permutes_states(seed, n_chains):
    target = PosteriorTarget(random_obs(seed % 100, 300), PriorSpec(0.001, 0.05, 5), 0.05)
    chains = make_chains(target, build_default_ladder(n_chains).temps, seed)
    before = sorted((c.p_index, c.p, c.r, c.u, c.j) for c in chains)
    temps = [c.temperature for c in chains]
    tries = np.zeros(n_chains - 1, dtype=np.int64)
    accepts = np.zeros_like(tries)
    exchange_step(chains, target, np.random.default_rng(seed), tries, accepts)
    assert sorted((c.p_index, c.p, c.r, c.u, c.j) for c in chains) == before
    assert [c.temperature for c in chains] == temps
    assert tries.sum() == n_chains
    assert tries[0] >= 1 and tries[-1] >= 1
    for c in chains:
        assert c.j == target.hits(c.r, c.u)


def test_single_chain_exchange_is_noop():
    target = PosteriorTarget(random_obs(0, 10), PriorSpec(0.001, 0.01, 10), 0.01)
    chains = make_chains(target, (1.0,), 0)
    state = chains[0].state
    exchange_step(chains, target, np.random.default_rng(0), np.zeros(0, np.int64), np.zeros(0, np.int64))
    assert chains[0].state == state


# ---- whole sampler ----------------------------------------------------------

def test_fixed_seed_is_bit_identical():
    obs = random_obs(8, 2000)
    prior = PriorSpec(0.001, 0.01, 10)
    cfg = SamplerConfig(iterations=600, seed=77)
    a = run_sampler(obs, prior, 0.01, cfg)
    b = run_sampler(obs, prior, 0.01, cfg)
    for field in ("p", "r", "u", "j"):
        assert getattr(a, field).tobytes() == getattr(b, field).tobytes()
    c = run_sampler(obs, prior, 0.01, SamplerConfig(iterations=600, seed=78))
    assert c.r.tobytes() != a.r.tobytes()


def test_retained_values_stay_on_grid():
    prior = PriorSpec(0.001, 0.01, 10)
    samples = run_sampler(random_obs(9, 3000), prior, 0.01, SamplerConfig(iterations=2000, thinning=1, seed=1))
    assert np.all(np.isin(samples.p, prior.grid))
    assert np.all((samples.r >= 0) & (samples.r <= 1))
    assert np.all((samples.u >= 0) & (samples.u < TWO_PI))


def test_retained_hit_counts_are_consistent():
    obs = random_obs(10, 5000)
    samples = run_sampler(obs, PriorSpec(0.01, 0.1, 5), 0.05, SamplerConfig(iterations=500, seed=2))
    target = PosteriorTarget(obs, PriorSpec(0.01, 0.1, 5), 0.05)
    for r, u, j in zip(samples.r, samples.u, samples.j):
        assert target.hits(r, u) == j


def test_window_records_and_diagnostics():
    windows = []
    cfg = SamplerConfig(iterations=250, log_every=100, seed=5)
    samples = run_sampler(random_obs(11, 500), PriorSpec(0.001, 0.01, 10), 0.01, cfg, on_window=windows.append)
    assert [w["iteration"] for w in windows] == [100, 200, 250]
    assert len(windows[0]["accept_r"]) == 6 and len(windows[0]["exchange"]) == 5
    diag = samples.diagnostics
    assert diag["temperatures"] == list(cfg.ladder.temps)
    assert all(0.0 <= v <= 1.0 for v in diag["accept_r"] + diag["accept_u"] + diag["exchange"])


def test_pathological_acceptance_is_flagged():
    # empty data accepts every angle move, which lies outside the healthy band
    cfg = SamplerConfig(iterations=200, ladder=TemperatureLadder((1.0,)), seed=0)
    samples = run_sampler(ObservationSet.empty(), PriorSpec(0.001, 0.01, 10), 0.01, cfg)
    assert any(w.startswith("u-update acceptance") for w in samples.diagnostics["warnings"])
