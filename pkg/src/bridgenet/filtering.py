"""Hidden Markov bridge filter and the time-homogeneous HMM baseline."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .bridge import BridgeProcess, StateSpace, bridge_transition, check_transition_matrix
from .errors import DegenerateLikelihood, InvalidArgument
from .observation import NoiseModel, scaled_emissions


@dataclass(frozen=True, eq=False)
class HmbModel:
    """Bridge dynamics: transition ``t -> t+1`` uses ``B(t)`` of the active segment."""

    bridge: BridgeProcess
    noise: NoiseModel

    @property
    def space(self) -> StateSpace:
        return self.bridge.space

    @property
    def start(self) -> int:
        return self.bridge.start

    @property
    def horizon(self) -> int | None:
        return self.bridge.horizon

    def initial(self) -> np.ndarray:
        return self.bridge.initial_distribution()

    def transitions(self, length: int) -> np.ndarray:
        return np.asarray(self.bridge.transitions[: max(length - 1, 0)])


@dataclass(frozen=True, eq=False)
class HmmModel:
    """Time-homogeneous chain ``P``; unaware of any pins."""

    P: np.ndarray
    space: StateSpace
    noise: NoiseModel
    initial_index: int | None = None
    start: int = 1
    horizon: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "P", check_transition_matrix(self.P))

    def initial(self) -> np.ndarray:
        n = self.space.n_states
        if self.initial_index is None:
            return np.full(n, 1.0 / n)
        p = np.zeros(n)
        p[self.initial_index] = 1.0
        return p

    def transitions(self, length: int) -> np.ndarray:
        return np.broadcast_to(self.P, (max(length - 1, 0),) + self.P.shape)


def _measure(predicted: np.ndarray, z, space, noise) -> np.ndarray:
    post = predicted * scaled_emissions([z], space, noise)[0]
    total = post.sum()
    if not total > 0:
        raise DegenerateLikelihood(f"observation {z!r} has zero likelihood under the predicted states")
    return post / total


def hmb_filter_step(prior, z, t: int, bridge: BridgeProcess, space: StateSpace, noise: NoiseModel):
    """Posterior at ``t+1`` from the posterior at ``t`` and observation ``z`` at ``t+1``."""
    B = bridge_transition(bridge, t)
    return _measure(np.asarray(prior, dtype=float) @ B, z, space, noise)


def hmm_filter_step(prior, z, P, space: StateSpace, noise: NoiseModel):
    return _measure(np.asarray(prior, dtype=float) @ np.asarray(P), z, space, noise)


@dataclass(frozen=True, eq=False)
class FilterRun:
    """Posteriors ``q(t)`` for ``t = start .. start+len-1``.

    ``truth`` holds true state indices when known.
    """

    posteriors: np.ndarray
    observations: np.ndarray
    space: StateSpace
    truth: np.ndarray | None = None
    start: int = 1

    def __len__(self):
        return self.posteriors.shape[0]

    def estimates(self, mode: str = "mean") -> np.ndarray:
        return np.array([point_estimate(p, self.space, mode) for p in self.posteriors])

    def to_csv(self, path, value_map=None) -> None:
        """Write ``t, observation, truth, estimate_mean, estimate_map, q_0..``.

        ``value_map`` converts state values to output units (e.g. a
        polarization score range).
        """
        conv = value_map or (lambda v: v)
        n = self.space.n_states
        mean, map_ = self.estimates("mean"), self.estimates("map")
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "observation", "truth", "estimate_mean", "estimate_map"] + [f"q_{i}" for i in range(n)])
            for k, q in enumerate(self.posteriors):
                obs = self.observations[k] if k < len(self.observations) else np.nan
                truth = "" if self.truth is None else _fmt(conv(self.space.values[self.truth[k]]))
                w.writerow(
                    [self.start + k, "" if not np.isfinite(obs) else _fmt(obs), truth,
                     _fmt(conv(mean[k])), _fmt(conv(map_[k]))] + [_fmt(x) for x in q]
                )


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def run_filter(observations, model, initial=None, truth=None, backend=None) -> FilterRun:
    """Filter an observation sequence whose first entry belongs to ``model.start``.

    The first posterior is the initial belief updated with the first
    observation (a no-op for a known initial state).  ``NaN`` observations
    are gaps and give a prediction-only step.
    """
    obs = np.asarray(observations, dtype=float).reshape(-1)
    if model.horizon is not None and obs.size > model.horizon - model.start + 1:
        raise InvalidArgument(f"{obs.size} observations exceed the model horizon {model.horizon}")
    init = model.initial() if initial is None else np.asarray(initial, dtype=float)
    if obs.size == 0:
        return FilterRun(init[None, :].copy(), obs, model.space, truth, model.start)
    emis = scaled_emissions(obs, model.space, model.noise)
    alpha, scales = kernels.forward_scaled(model.transitions(obs.size), emis, init, backend=backend)
    bad = np.flatnonzero(~(scales > 0))
    if bad.size:
        t = model.start + int(bad[0])
        raise DegenerateLikelihood(f"observation at time {t} has zero likelihood under the predicted states")
    return FilterRun(alpha, obs, model.space, None if truth is None else np.asarray(truth), model.start)


def point_estimate(p, space: StateSpace, mode: str = "mean") -> float:
    """Posterior mean, or MAP value with ties going to the lower index."""
    p = np.asarray(p, dtype=float)
    if mode == "mean":
        return float(p @ space.values)
    if mode == "map":
        return float(space.values[int(np.argmax(p))])
    raise InvalidArgument(f"unknown estimate mode {mode!r}; use 'mean' or 'map'")


def mse(run: FilterRun, mode: str = "mean") -> float:
    if run.truth is None:
        raise InvalidArgument("MSE needs the true trajectory")
    err = run.estimates(mode) - run.space.values[np.asarray(run.truth)]
    return float(np.mean(err * err))
