"""Noisy conductance observations from uniformly sampled edges.

An observation is ``z = gamma * phi_sampled`` where ``phi_sampled`` is the
conductance of a subgraph holding ``round(gamma * N)`` uniformly chosen edges.
The noise ``z - phi`` is modelled per hidden state as a Gaussian whose
parameters are calibrated by Monte Carlo.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache, partial
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .bridge import BridgeProcess, StateSpace, sample_trajectory
from .errors import CalibrationFailed, EmptySample, InvalidArgument
from .graph import CommunityLayout, WeightedGraph, build_company_customer_graph, graph_conductance

SIGMA_MIN = 1e-4
MIN_STATE_SAMPLES = 30
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class EdgeSampleConfig:
    gamma: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidArgument(f"gamma must lie in (0, 1], got {self.gamma!r}")


def sample_size(n_edges: int, gamma: float) -> int:
    """``round(gamma * n_edges)`` with halves rounded up."""
    return int(math.floor(gamma * n_edges + 0.5))


def sample_edges(g: WeightedGraph, cfg: EdgeSampleConfig, rng=None) -> WeightedGraph:
    """Keep ``round(gamma*N)`` edges chosen uniformly without replacement.

    ``rng`` overrides ``cfg.seed`` so replications can thread one generator.
    """
    if g.n_edges < 1:
        raise EmptySample("graph has no edges to sample")
    k = sample_size(g.n_edges, cfg.gamma)
    if k == 0:
        raise EmptySample(f"gamma={cfg.gamma} keeps no edges out of {g.n_edges}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if k == g.n_edges:
        return g
    return g.subgraph(rng.choice(g.n_edges, size=k, replace=False))


def observed_conductance(sub: WeightedGraph, method: str = "sweep") -> float:
    """Conductance of a sampled subgraph (the un-scaled observation)."""
    return graph_conductance(sub, method)


@lru_cache(maxsize=256)
def _family_graph(m: int, n: int, w: float) -> WeightedGraph:
    return build_company_customer_graph(CommunityLayout(m, n), w)


def state_graph(layout: CommunityLayout, w: float) -> WeightedGraph:
    return _family_graph(layout.m_utilitarian, layout.n_fans, float(w))


@lru_cache(maxsize=256)
def _state_conductances(m: int, n: int, values: tuple, method: str) -> np.ndarray:
    out = np.array([graph_conductance(_family_graph(m, n, w), method) for w in values])
    out.flags.writeable = False
    return out


def state_conductances(layout: CommunityLayout, space: StateSpace, method: str = "sweep") -> np.ndarray:
    """True graph conductance at each state's edge weight."""
    return _state_conductances(
        layout.m_utilitarian, layout.n_fans, tuple(float(v) for v in space.values), method
    )


def simulate_observations(layout, bridge: BridgeProcess, gamma: float, rng, method="sweep"):
    """One replication: a bridge trajectory and its observation stream.

    Returns ``(states, z)`` with ``z[k] = gamma * phi(sampled graph at time k)``.
    """
    traj = sample_trajectory(bridge, rng)
    cfg = EdgeSampleConfig(gamma)
    z = np.empty(traj.states.size)
    for k, s in enumerate(traj.states):
        g = state_graph(layout, bridge.space.values[s])
        z[k] = gamma * observed_conductance(sample_edges(g, cfg, rng), method)
    return traj.states, z


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Per-state Gaussian emission parameters.

    The residual of observation ``z`` under state ``i`` is ``z - reference[i]``
    where ``reference`` holds the true per-state conductance for calibrated
    models and defaults to the state values.
    """

    mu: np.ndarray
    sigma: np.ndarray
    pooled_mu: float
    pooled_sigma: float
    mode: str = "per-state"
    n_samples: np.ndarray | None = None
    reference: np.ndarray | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.mode not in ("per-state", "pooled"):
            raise InvalidArgument(f"noise mode must be 'per-state' or 'pooled', got {self.mode!r}")
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if mu.shape != sigma.shape:
            raise InvalidArgument("mu and sigma must have one entry per state")
        if np.any(sigma <= 0) or self.pooled_sigma <= 0:
            raise InvalidArgument("noise standard deviations must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        if self.n_samples is not None:
            object.__setattr__(self, "n_samples", np.asarray(self.n_samples, dtype=int))
        if self.reference is not None:
            object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float))

    @classmethod
    def gaussian(cls, n_states: int, sigma: float, mu: float = 0.0) -> "NoiseModel":
        """Homoscedastic ``N(mu, sigma^2)`` residual around the state values."""
        return cls(np.full(n_states, mu), np.full(n_states, sigma), mu, sigma, mode="pooled")

    @property
    def n_states(self) -> int:
        return self.mu.size

    def state_params(self) -> tuple[np.ndarray, np.ndarray]:
        if self.mode == "pooled":
            return np.full(self.n_states, self.pooled_mu), np.full(self.n_states, self.pooled_sigma)
        return self.mu, self.sigma

    def references(self, space: StateSpace) -> np.ndarray:
        return space.values if self.reference is None else self.reference

    def to_dict(self) -> dict:
        n = self.n_samples if self.n_samples is not None else np.zeros(self.n_states, int)
        states = []
        for i in range(self.n_states):
            entry = {"mu": float(self.mu[i]), "sigma": float(self.sigma[i]), "n_samples": int(n[i])}
            if self.reference is not None:
                entry["reference"] = float(self.reference[i])
            states.append(entry)
        return {
            "mode": self.mode,
            "states": states,
            "pooled": {"mu": float(self.pooled_mu), "sigma": float(self.pooled_sigma)},
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        states = d["states"]
        ref = [s["reference"] for s in states] if states and "reference" in states[0] else None
        return cls(
            mu=[s["mu"] for s in states],
            sigma=[s["sigma"] for s in states],
            pooled_mu=d["pooled"]["mu"],
            pooled_sigma=d["pooled"]["sigma"],
            mode=d["mode"],
            n_samples=[s.get("n_samples", 0) for s in states],
            reference=ref,
            gamma=d.get("gamma"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NoiseModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def emission_loglik(z: float, space: StateSpace, noise: NoiseModel) -> np.ndarray:
    """Log Gaussian density of ``z`` under every state; zeros for a missing ``z``."""
    if z is None or not np.isfinite(z):
        return np.zeros(space.n_states)
    mu, sigma = noise.state_params()
    r = (z - noise.references(space) - mu) / sigma
    return -0.5 * r * r - np.log(sigma * _SQRT_2PI)


def emission_likelihoods(z: float, space: StateSpace, noise: NoiseModel) -> np.ndarray:
    """Gaussian density of ``z`` under every state; all ones for a missing ``z``."""
    return np.exp(emission_loglik(z, space, noise))


def scaled_emissions(observations, space: StateSpace, noise: NoiseModel) -> np.ndarray:
    """Emission densities per time, each row divided by its maximum.

    Row scaling leaves filter posteriors unchanged and keeps tiny-sigma
    states from underflowing every entry to zero.
    """
    rows = np.array([emission_loglik(z, space, noise) for z in observations]).reshape(-1, space.n_states)
    return np.exp(rows - rows.max(axis=1, keepdims=True))


def emission_likelihood(z: float, state_index: int, space: StateSpace, noise: NoiseModel) -> float:
    if not 0 <= state_index < space.n_states:
        raise InvalidArgument(f"state index {state_index} outside [0, {space.n_states - 1}]")
    return float(emission_likelihoods(z, space, noise)[state_index])


def kolmogorov_q(lam: float) -> float:
    """Asymptotic Kolmogorov tail ``2 * sum (-1)^(k-1) exp(-2 k^2 lam^2)``."""
    if lam < 0.2:
        return 1.0
    total, sign = 0.0, 1.0
    for k in range(1, 101):
        term = sign * math.exp(-2.0 * k * k * lam * lam)
        total += term
        if abs(term) < 1e-16:
            break
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def ks_test_gaussian(samples, mu: float, sigma: float) -> tuple[float, float]:
    """One-sample KS test of ``samples`` against ``N(mu, sigma^2)``.

    The p-value uses the asymptotic series with the effective-size
    correction ``(sqrt(n) + 0.12 + 0.11/sqrt(n)) * D``.
    """
    if sigma <= 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma!r}")
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 8:
        raise InvalidArgument(f"KS test needs at least 8 samples, got {n}")
    cdf = ndtr((x - mu) / sigma)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    root = math.sqrt(n)
    return d, kolmogorov_q((root + 0.12 + 0.11 / root) * d)


@dataclass
class CalibrationReport:
    samples: list[np.ndarray]
    ks_statistic: np.ndarray
    p_value: np.ndarray
    fallback: np.ndarray
    references: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def samples_per_state(self) -> np.ndarray:
        return np.array([s.size for s in self.samples])

    def cdf_rows(self, noise: NoiseModel):
        """Rows ``(state, noise, empirical_cdf, fitted_cdf)`` for plotting."""
        mu, sigma = noise.state_params()
        for i, s in enumerate(self.samples):
            x = np.sort(s)
            emp = np.arange(1, x.size + 1) / max(x.size, 1)
            fit = ndtr((x - mu[i]) / sigma[i])
            for xv, e, f in zip(x, emp, fit):
                yield i, float(xv), float(e), float(f)


def fit_noise(samples, sigma_min=SIGMA_MIN, min_samples=MIN_STATE_SAMPLES, mode="per-state",
              reference=None, gamma=None):
    """Fit per-state ``(mu, sigma)`` from bucketed residuals.

    States with fewer than ``min_samples`` residuals take the pooled fit.
    Returns ``(NoiseModel, fallback_mask)``.
    """
    samples = [np.asarray(s, dtype=float) for s in samples]
    counts = np.array([s.size for s in samples])
    if np.all(counts < min_samples):
        raise CalibrationFailed(
            f"every state has fewer than {min_samples} noise samples (counts: {counts.tolist()})"
        )
    allv = np.concatenate(samples)
    pooled_mu = float(allv.mean())
    pooled_sigma = max(float(allv.std(ddof=1)) if allv.size > 1 else 0.0, sigma_min)
    fallback = counts < min_samples
    mu = np.where(fallback, pooled_mu, [s.mean() if s.size else 0.0 for s in samples])
    sd = np.array([s.std(ddof=1) if s.size > 1 else 0.0 for s in samples])
    sigma = np.where(fallback, pooled_sigma, np.maximum(sd, sigma_min))
    model = NoiseModel(mu, sigma, pooled_mu, pooled_sigma, mode=mode, n_samples=counts,
                       reference=reference, gamma=gamma)
    return model, fallback


def calibrate_noise(layout: CommunityLayout, bridge: BridgeProcess, cfg: EdgeSampleConfig,
                    n_runs: int, method: str = "sweep", *, sigma_min: float = SIGMA_MIN,
                    min_samples: int = MIN_STATE_SAMPLES, mode: str = "per-state", jobs: int = 1):
    """Monte Carlo calibration of the per-state noise ``gamma*phi_sampled - phi``.

    Replication ``i`` draws everything from ``default_rng(cfg.seed + i)``, so
    the result does not depend on ``jobs``.
    """
    if n_runs < 100:
        raise InvalidArgument(f"calibration needs n_runs >= 100, got {n_runs}")
    space = bridge.space
    phi = state_conductances(layout, space, method)
    buckets = [[] for _ in range(space.n_states)]
    run = partial(_calibration_run, layout, bridge, cfg.gamma, method)
    seeds = [cfg.seed + i for i in range(n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, seeds, chunksize=max(1, n_runs // (4 * jobs))))
    else:
        results = [run(s) for s in seeds]
    for states, z in results:
        for s, zk in zip(states, z):
            buckets[s].append(zk - phi[s])
    model, fallback = fit_noise(buckets, sigma_min, min_samples, mode, reference=phi, gamma=cfg.gamma)
    return model, _report(buckets, model, fallback, phi)


def _calibration_run(layout, bridge, gamma, method, seed):
    return simulate_observations(layout, bridge, gamma, np.random.default_rng(seed), method)


def _report(buckets, model, fallback, phi):
    mu, sigma = model.state_params()
    samples = [np.asarray(b, dtype=float) for b in buckets]
    ks = np.full(len(samples), np.nan)
    pv = np.full(len(samples), np.nan)
    for i, s in enumerate(samples):
        if s.size >= 8:
            ks[i], pv[i] = ks_test_gaussian(s, mu[i], sigma[i])
    return CalibrationReport(samples, ks, pv, fallback, np.asarray(phi))
