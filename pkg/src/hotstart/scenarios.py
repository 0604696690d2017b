"""Stochastic PQ-bus load scenarios.

Real power at each PQ bus is Gaussian around the case demand with a
magnitude-dependent spread; reactive power follows from one lagging power
factor per sample, drawn from a truncated normal by rejection.

Every PQ bus owns an independent PRNG stream derived from ``(seed, bus)``
and the power factors use a separate ``(seed, tag)`` stream, so columns can
be produced incrementally or in parallel without changing any value.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import binio
from .matpower import NetworkCase
from .powerflow import LoadScenario

_P_STREAM = 0
_PF_STREAM = 1


def sigma_of(p_mw):
    """Standard deviation (MW) of the demand fluctuation for a mean demand ``p_mw``."""
    a = np.abs(p_mw)
    return 5.44130 + 0.17459 * np.sqrt(a) + 0.001673 * a


@dataclass(frozen=True)
class SamplerConfig:
    n: int
    seed: int = 0
    pf_mu: float = 1.0
    pf_sigma: float = 0.05
    pf_lo: float = 0.7
    pf_hi: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not self.pf_lo < self.pf_hi:
            raise ValueError("pf_lo must be below pf_hi")
        if not (0 < self.pf_lo and self.pf_hi <= 1):
            raise ValueError("power factor bounds must lie in (0, 1]")


def _bus_rng(seed: int, bus: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(_P_STREAM, bus))))


def _pf_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(_PF_STREAM,))))


class ScenarioStream:
    """Incremental sampler: ``take(m)`` returns the next ``m`` columns of P, Q and pf."""

    def __init__(self, net: NetworkCase, cfg: SamplerConfig):
        self.net = net
        self.cfg = cfg
        self.pq = net.pq
        self._mean = net.pd[self.pq]
        self._sigma = sigma_of(self._mean)
        self._bus_rngs = [_bus_rng(cfg.seed, int(i)) for i in self.pq]
        self._pf = TruncNormStream(_pf_rng(cfg.seed), cfg)
        self.drawn = 0

    def take_p(self, m: int) -> np.ndarray:
        p = np.repeat(self.net.pd[:, None], m, axis=1)
        for row, (rng, mu, sd) in enumerate(zip(self._bus_rngs, self._mean, self._sigma)):
            p[self.pq[row]] = mu + sd * rng.standard_normal(m)
        return p

    def take_pf(self, m: int) -> np.ndarray:
        return self._pf.take(m)

    def take(self, m: int):
        p = self.take_p(m)
        pf = self.take_pf(m)
        q = compute_q(p, pf, self.net)
        self.drawn += m
        return p, q, pf


class TruncNormStream:
    """Rejection sampler for the power-factor distribution.

    Accepted draws that are not yet requested stay buffered, so the output
    sequence does not depend on how requests are split up.
    """

    def __init__(self, rng: np.random.Generator, cfg: SamplerConfig):
        self.rng = rng
        self.cfg = cfg
        self._buf = np.empty(0)

    def take(self, m: int) -> np.ndarray:
        cfg = self.cfg
        parts = [self._buf]
        have = len(self._buf)
        while have < m:
            cand = cfg.pf_mu + cfg.pf_sigma * self.rng.standard_normal(max(2 * (m - have), 16))
            ok = cand[(cand >= cfg.pf_lo) & (cand <= cfg.pf_hi)]
            parts.append(ok)
            have += len(ok)
        pool = np.concatenate(parts)
        self._buf = pool[m:]
        return pool[:m].copy()


def sample_p(net: NetworkCase, cfg: SamplerConfig) -> np.ndarray:
    """L x N real-power demands in MW; non-PQ rows keep the case value."""
    return ScenarioStream(net, cfg).take_p(cfg.n)


def sample_pf(cfg: SamplerConfig) -> np.ndarray:
    return TruncNormStream(_pf_rng(cfg.seed), cfg).take(cfg.n)


def compute_q(p: np.ndarray, pf: np.ndarray, net: NetworkCase) -> np.ndarray:
    """Reactive demand ``P * tan(arccos(pf_k))`` at PQ buses, case value elsewhere."""
    pf = np.asarray(pf, dtype=float)
    if np.any(pf <= 0) or np.any(pf > 1):
        raise ValueError("power factors must lie in (0, 1]")
    q = np.repeat(net.qd[:, None], p.shape[1], axis=1)
    q[net.pq] = p[net.pq] * np.tan(np.arccos(pf))[None, :]
    return q


def truncnorm_mean(mu, sigma, lo, hi) -> float:
    """Closed-form mean of a normal truncated to ``[lo, hi]``."""
    from scipy.stats import norm

    a, b = (lo - mu) / sigma, (hi - mu) / sigma
    return float(mu + sigma * (norm.pdf(a) - norm.pdf(b)) / (norm.cdf(b) - norm.cdf(a)))


@dataclass
class ScenarioSet:
    p: np.ndarray  # L x N, MW
    q: np.ndarray  # L x N, MVAr
    seed: int
    n: int
    case_name: str = ""
    config: SamplerConfig | None = None

    def column(self, k: int) -> LoadScenario:
        return LoadScenario(self.p[:, k].copy(), self.q[:, k].copy(), k)

    def save(self, path) -> None:
        header = {
            "kind": "scenario_set",
            "case": self.case_name,
            "L": int(self.p.shape[0]),
            "N": int(self.n),
            "seed": int(self.seed),
            "config": asdict(self.config) if self.config else None,
        }
        binio.write(path, header, {"p": self.p, "q": self.q})

    @classmethod
    def load(cls, path) -> "ScenarioSet":
        header, arrays = binio.read(path)
        p, q = arrays["p"], arrays["q"]
        cfg = SamplerConfig(**header["config"]) if header["config"] else None
        return cls(p=p, q=q, seed=header["seed"], n=header["N"],
                   case_name=header["case"], config=cfg)


def generate_scenarios(net: NetworkCase, cfg: SamplerConfig) -> ScenarioSet:
    p, q, _ = ScenarioStream(net, cfg).take(cfg.n)
    return ScenarioSet(p=p, q=q, seed=cfg.seed, n=cfg.n, case_name=net.name, config=cfg)
