"""On-disk formats: flat key/value configs, observation and sample CSVs, JSON documents.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Units are part of the key name (``d_radius``, ``sigma_u_radians``).
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from emission_sentinel.model import ObservationSet, PriorSpec
from emission_sentinel.sampler import (
    PosteriorSamples,
    ProposalConfig,
    SamplerConfig,
    TemperatureLadder,
    build_default_ladder,
)
from emission_sentinel.simulator import ScenarioConfig

OBSERVATION_HEADER = "theta,s"
SAMPLE_HEADER = "p,r,u,j,l1,l2"
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


class InputError(ValueError):
    """Malformed user input; maps to exit code 1."""


class ConfigError(InputError):
    pass


@dataclass(frozen=True)
class Entry:
    value: str
    line: int


class FlatConfig:
    """Parsed key/value document that remembers where each key came from."""

    def __init__(self, entries: dict[str, Entry], source: str = "<config>"):
        self.entries = entries
        self.source = source
        self._used: set[str] = set()

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "FlatConfig":
        entries: dict[str, Entry] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not _KEY.match(key):
                raise ConfigError(f"{source}:{lineno}: invalid key {key!r}")
            if key in entries:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} "
                                  f"(first set on line {entries[key].line})")
            if not value:
                raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
            entries[key] = Entry(value, lineno)
        return cls(entries, source)

    @classmethod
    def load(cls, path) -> "FlatConfig":
        path = Path(path)
        return cls.parse(path.read_text(), str(path))

    def __contains__(self, key):
        return key in self.entries

    def keys(self):
        return self.entries.keys()

    def _where(self, key):
        e = self.entries.get(key)
        return f"{self.source}:{e.line}" if e else self.source

    def _get(self, key, convert, default, kind):
        if key not in self.entries:
            if default is REQUIRED:
                raise ConfigError(f"{self.source}: missing required key {key!r}")
            return default
        self._used.add(key)
        raw = self.entries[key].value
        try:
            return convert(raw)
        except (ValueError, OverflowError):
            raise ConfigError(f"{self._where(key)}: {key} must be {kind}, got {raw!r}") from None

    def float(self, key, default=None):
        def conv(raw):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        return self._get(key, conv, default, "a finite number")

    def int(self, key, default=None):
        return self._get(key, lambda raw: int(raw.replace("_", "")), default, "an integer")

    def floats(self, key, default=None):
        return self._get(key, lambda raw: tuple(float(x) for x in raw.split(",")), default,
                         "a comma-separated list of numbers")

    def bool(self, key, default=None):
        def conv(raw):
            table = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}
            if raw.lower() not in table:
                raise ValueError(raw)
            return table[raw.lower()]
        return self._get(key, conv, default, "true or false")

    def check(self, key, ok, message):
        """Raise a line-anchored error for a value that parsed but is out of range."""
        if not ok:
            raise ConfigError(f"{self._where(key)}: {message}")

    def reject_unknown(self, allowed_prefixes=()):
        for key, e in self.entries.items():
            if key not in self._used and not key.startswith(tuple(allowed_prefixes)):
                raise ConfigError(f"{self.source}:{e.line}: unknown key {key!r}")


REQUIRED = object()


def validated(cfg: FlatConfig, key: str, build):
    """Run a constructor and re-raise its validation error against ``key``'s line."""
    try:
        return build()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{cfg._where(key)}: {exc}") from None


def default_prior_for(p_true: float, h: int = 10) -> PriorSpec:
    """Reference grid around the scenario rate: [p/5, 2p], or the p = 0.001 grid for no source."""
    if p_true <= 0.0:
        p_true = 0.001
    return PriorSpec(p_true / 5.0, min(2.0 * p_true, 0.99), h)


def scenario_from_config(cfg: FlatConfig, prefix: str = "", seed=None) -> ScenarioConfig:
    k = lambda name: prefix + name  # noqa: E731
    p_true = cfg.float(k("p_true"), REQUIRED)
    l1 = cfg.float(k("location_l1"), 0.0)
    l2 = cfg.float(k("location_l2"), 0.0)
    d = cfg.float(k("d_radius"), None)
    if d is None:
        d = cfg.float("d_radius", 0.01)
    n = cfg.int(k("n_particles"), REQUIRED)
    if seed is None:
        seed = cfg.int(k("seed"), 0)
    return validated(cfg, k("p_true"), lambda: ScenarioConfig(p_true, (l1, l2), d, n, seed))


def prior_from_config(cfg: FlatConfig, prefix: str = "", fallback: PriorSpec | None = None) -> PriorSpec:
    a = cfg.float(prefix + "prior_a_p")
    b = cfg.float(prefix + "prior_b_p")
    h = cfg.int(prefix + "prior_h")
    if a is None and b is None and h is None:
        if fallback is None:
            raise ConfigError(f"{cfg.source}: missing prior_a_p / prior_b_p / prior_h")
        return fallback
    if a is None or b is None:
        raise ConfigError(f"{cfg.source}: prior_a_p and prior_b_p must be given together")
    return validated(cfg, prefix + "prior_a_p", lambda: PriorSpec(a, b, h if h is not None else 10))


def sampler_from_config(cfg: FlatConfig, seed=None) -> SamplerConfig:
    temps = cfg.floats("temperatures")
    if temps is not None:
        ladder = validated(cfg, "temperatures", lambda: TemperatureLadder(temps))
    else:
        chains = cfg.int("chains", 6)
        t_max = cfg.float("max_temperature", 5.0)
        cfg.check("chains", chains >= 1, "chains must be at least 1")
        ladder = (TemperatureLadder((1.0,)) if chains == 1
                  else validated(cfg, "chains", lambda: build_default_ladder(chains, t_max)))
    proposals = validated(cfg, "sigma_r_radii", lambda: ProposalConfig(
        cfg.float("sigma_r_radii", 0.02), cfg.float("sigma_u_radians", 0.1)))
    if seed is None:
        seed = cfg.int("seed", 0)
    return validated(cfg, "iterations", lambda: SamplerConfig(
        iterations=cfg.int("iterations", 50_000),
        burn_in_fraction=cfg.float("burn_in_fraction", 0.2),
        thinning=cfg.int("thinning", 10),
        ladder=ladder,
        proposals=proposals,
        seed=seed,
        log_every=cfg.int("log_every", 1000),
    ))


def sampler_to_dict(cfg: SamplerConfig) -> dict:
    return {
        "iterations": cfg.iterations,
        "burn_in_fraction": cfg.burn_in_fraction,
        "thinning": cfg.thinning,
        "temperatures": list(cfg.ladder.temps),
        "sigma_r_radii": cfg.proposals.sigma_r,
        "sigma_u_radians": cfg.proposals.sigma_u,
        "seed": cfg.seed,
        "log_every": cfg.log_every,
    }


def prior_to_dict(prior: PriorSpec) -> dict:
    return {"prior_a_p": prior.a_p, "prior_b_p": prior.b_p, "prior_h": prior.h}


def write_observations(path, obs: ObservationSet):
    rows = "".join(f"{t!r},{s!r}\n" for t, s in zip(obs.theta.tolist(), obs.s.tolist()))
    Path(path).write_text(OBSERVATION_HEADER + "\n" + rows)


def read_observations(path) -> ObservationSet:
    """Parse an observation CSV; errors name the offending line."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != OBSERVATION_HEADER:
        raise InputError(f"{path}:1: expected header {OBSERVATION_HEADER!r}")
    theta, s = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        try:
            t, v = float(parts[0]), float(parts[1])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
        if not (math.isfinite(t) and math.isfinite(v)):
            raise InputError(f"{path}:{lineno}: non-finite value in {line!r}")
        if abs(v) > 1.0:
            raise InputError(f"{path}:{lineno}: |s| = {abs(v)} exceeds 1")
        theta.append(t)
        s.append(v)
    if not theta:
        raise InputError(f"{path}: no observations")
    return ObservationSet(theta, s)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_samples(path, samples: PosteriorSamples):
    l1, l2 = samples.locations()
    with open(path, "w") as fh:
        fh.write(SAMPLE_HEADER + "\n")
        for row in zip(samples.p.tolist(), samples.r.tolist(), samples.u.tolist(),
                       samples.j.tolist(), l1.tolist(), l2.tolist()):
            fh.write("{!r},{!r},{!r},{},{!r},{!r}\n".format(*row))


def read_samples(path, n: int = 0, d: float = 0.01) -> PosteriorSamples:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != SAMPLE_HEADER:
        raise InputError(f"{path}:1: expected header {SAMPLE_HEADER!r}")
    if len(lines) < 2:
        raise InputError(f"{path}: no samples")
    try:
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:] if ln.strip()])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != 6:
        raise InputError(f"{path}: expected 6 columns")
    return PosteriorSamples(data[:, 0], data[:, 1], data[:, 2], data[:, 3].astype(np.int64), n, d)


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: {exc.msg}") from None


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def to_json_line(record) -> str:
    return json.dumps(record, sort_keys=True, default=_json_default)
