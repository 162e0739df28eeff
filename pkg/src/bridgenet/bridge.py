"""Finite-state Markov chains conditioned into pinned Markov bridges.

Times are 1-based and run ``1..horizon``.  ``bridge_transition(bridge, t)``
is the matrix governing the step ``t -> t+1``.  The default two-segment bridge
starts at value 1, is pinned to value 0 at time ``T`` and back to value 1 at
time ``2T-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import InvalidArgument, OutOfRange, UnreachablePin

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class StateSpace:
    """Ascending grid ``0, 1/(n-1), ..., 1`` of segregation levels."""

    n_states: int

    def __post_init__(self):
        if int(self.n_states) != self.n_states or self.n_states < 2:
            raise InvalidArgument(f"n_states must be an integer >= 2, got {self.n_states!r}")

    @cached_property
    def values(self) -> np.ndarray:
        v = np.arange(self.n_states, dtype=float) / (self.n_states - 1)
        v.flags.writeable = False
        return v

    def index_of(self, value: float) -> int:
        """Index of the grid point equal to ``value`` (within 1e-12)."""
        hits = np.flatnonzero(np.abs(self.values - value) <= 1e-12)
        if hits.size == 0:
            raise InvalidArgument(f"{value} is not a grid value of a {self.n_states}-state space")
        return int(hits[0])


def make_state_space(n_states: int) -> StateSpace:
    return StateSpace(n_states)


def check_transition_matrix(P, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """Validate ``P`` as a square row-stochastic matrix and return a read-only copy."""
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise InvalidArgument(f"transition matrix must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise InvalidArgument("transition matrix entries must be finite and nonnegative")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > tol:
        raise InvalidArgument("transition matrix rows must sum to 1")
    P.flags.writeable = False
    return P


def make_toeplitz_transition(n_states: int, base: float = 0.25) -> np.ndarray:
    """Row-normalised symmetric Toeplitz matrix with entries ``base**|i-j|``."""
    if int(n_states) != n_states or n_states < 2:
        raise InvalidArgument(f"n_states must be an integer >= 2, got {n_states!r}")
    if not 0.0 < base < 1.0:
        raise InvalidArgument(f"base must lie in (0, 1), got {base!r}")
    idx = np.arange(n_states)
    raw = float(base) ** np.abs(idx[:, None] - idx[None, :])
    P = raw / raw.sum(axis=1, keepdims=True)
    P.flags.writeable = False
    return P


@lru_cache(maxsize=8192)
def _power_from_bytes(buf: bytes, n: int, k: int) -> np.ndarray:
    if k == 0:
        out = np.eye(n)
    elif k == 1:
        out = np.frombuffer(buf, dtype=float).reshape(n, n).copy()
    else:
        half = _power_from_bytes(buf, n, k // 2)
        out = half @ half
        if k % 2:
            out = out @ _power_from_bytes(buf, n, 1)
    out.flags.writeable = False
    return out


def matrix_power(P, k: int) -> np.ndarray:
    """``P**k`` memoised per (P, k); ``P**0`` is the identity.

    Results are read-only and shared, so callers must copy before mutating.
    ``functools.lru_cache`` makes the memo safe under concurrent readers.
    """
    if k < 0:
        raise InvalidArgument(f"matrix power must be >= 0, got {k}")
    P = np.ascontiguousarray(P, dtype=float)
    return _power_from_bytes(P.tobytes(), P.shape[0], int(k))


@dataclass(frozen=True)
class BridgeSegment:
    start_time: int
    end_time: int
    pin_index: int

    def __post_init__(self):
        if self.start_time >= self.end_time:
            raise InvalidArgument(
                f"segment start_time {self.start_time} must precede end_time {self.end_time}"
            )


@dataclass(frozen=True, eq=False)
class BridgeProcess:
    """A base chain pinned at the end of each segment.

    ``initial_index=None`` means the state at ``start`` is unknown and
    uniformly distributed (used for single-pin polarization series).
    """

    base: np.ndarray
    space: StateSpace
    segments: tuple[BridgeSegment, ...]
    initial_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "base", check_transition_matrix(self.base))
        object.__setattr__(self, "segments", tuple(self.segments))
        n = self.space.n_states
        if self.base.shape[0] != n:
            raise InvalidArgument(f"base chain has {self.base.shape[0]} states, space has {n}")
        if not self.segments:
            raise InvalidArgument("a bridge needs at least one segment")
        for prev, seg in zip(self.segments, self.segments[1:]):
            if seg.start_time != prev.end_time:
                raise InvalidArgument("bridge segments must be contiguous")
        for seg in self.segments:
            if not 0 <= seg.pin_index < n:
                raise InvalidArgument(f"pin index {seg.pin_index} outside [0, {n - 1}]")
        if self.initial_index is not None and not 0 <= self.initial_index < n:
            raise InvalidArgument(f"initial index {self.initial_index} outside [0, {n - 1}]")

    @property
    def start(self) -> int:
        return self.segments[0].start_time

    @property
    def horizon(self) -> int:
        return self.segments[-1].end_time

    @property
    def length(self) -> int:
        """Number of time points ``start..horizon``."""
        return self.horizon - self.start + 1

    @property
    def pins(self) -> dict[int, int]:
        """Map of pinned time -> state index, including a known initial state."""
        out = {}
        if self.initial_index is not None:
            out[self.start] = self.initial_index
        for seg in self.segments:
            out[seg.end_time] = seg.pin_index
        return out

    def initial_distribution(self) -> np.ndarray:
        n = self.space.n_states
        if self.initial_index is None:
            return np.full(n, 1.0 / n)
        p = np.zeros(n)
        p[self.initial_index] = 1.0
        return p

    def segment_at(self, t: int) -> BridgeSegment:
        for seg in self.segments:
            if seg.start_time <= t < seg.end_time:
                return seg
        raise OutOfRange(f"transition time {t} outside [{self.start}, {self.horizon - 1}]")

    @cached_property
    def transitions(self) -> np.ndarray:
        """Stacked ``B(t)`` for ``t = start..horizon-1``, shape (length-1, n, n)."""
        out = bridge_transitions(self.base, self.segments)
        out.flags.writeable = False
        return out


def default_bridge(P, T: int, space: StateSpace | None = None) -> BridgeProcess:
    """Two sequential bridges over times ``1..2T-1``: 1 -> 0 at T -> 1 at 2T-1."""
    P = check_transition_matrix(P)
    if space is None:
        space = StateSpace(P.shape[0])
    if T < 2:
        raise InvalidArgument(f"T must be >= 2, got {T}")
    top, bottom = space.n_states - 1, 0
    segments = (BridgeSegment(1, T, bottom), BridgeSegment(T, 2 * T - 1, top))
    return BridgeProcess(P, space, segments, initial_index=top)


def _segment_transition(P, t: int, end: int, pin: int) -> np.ndarray:
    ahead = matrix_power(P, end - t - 1)[:, pin]
    denom = matrix_power(P, end - t)[:, pin]
    B = np.zeros_like(P)
    ok = denom > 0
    # rows that cannot reach the pin stay all-zero (marked invalid)
    B[ok] = P[ok] * ahead[None, :] / denom[ok, None]
    return B


def bridge_transitions(P, segments) -> np.ndarray:
    """``B(t)`` for every transition covered by ``segments``."""
    P = np.ascontiguousarray(P, dtype=float)
    mats = [
        _segment_transition(P, t, seg.end_time, seg.pin_index)
        for seg in segments
        for t in range(seg.start_time, seg.end_time)
    ]
    n = P.shape[0]
    return np.stack(mats) if mats else np.zeros((0, n, n))


def bridge_transition(bridge: BridgeProcess, t: int) -> np.ndarray:
    """Transition matrix for the step ``t -> t+1``.

    ``B[a, b] = P[a, b] * (P^(h-t-1))[b, c] / (P^(h-t))[a, c]`` with ``h`` and
    ``c`` the end time and pin of the segment containing ``t``.  Rows whose
    state cannot reach the pin are all zero.
    """
    if not bridge.start <= t <= bridge.horizon - 1:
        raise OutOfRange(f"transition time {t} outside [{bridge.start}, {bridge.horizon - 1}]")
    return bridge.transitions[t - bridge.start]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """State indices at times ``start..horizon`` (``states[0]`` is time ``start``)."""

    states: np.ndarray
    start: int = 1

    def at(self, t: int) -> int:
        return int(self.states[t - self.start])

    def values(self, space: StateSpace) -> np.ndarray:
        return space.values[self.states]


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_paths(bridge: BridgeProcess, n_paths: int, seed=None) -> np.ndarray:
    """Sample ``n_paths`` trajectories at once; returns an int array (n_paths, length)."""
    rng = _as_rng(seed)
    n = bridge.space.n_states
    out = np.empty((n_paths, bridge.length), dtype=np.int64)
    if bridge.initial_index is None:
        out[:, 0] = rng.integers(0, n, size=n_paths)
    else:
        out[:, 0] = bridge.initial_index
    for k, B in enumerate(bridge.transitions):
        rows = B[out[:, k]]
        totals = rows.sum(axis=1)
        if np.any(totals == 0):
            t = bridge.start + k
            raise UnreachablePin(f"state cannot reach the pin from time {t}")
        cum = np.cumsum(rows, axis=1)
        u = rng.random(n_paths) * totals
        out[:, k + 1] = np.minimum((u[:, None] >= cum).sum(axis=1), n - 1)
    return out


def sample_trajectory(bridge: BridgeProcess, seed=None) -> Trajectory:
    """Draw one pinned trajectory. ``seed`` may be an int or a ``numpy`` Generator."""
    states = sample_paths(bridge, 1, seed)[0]
    return Trajectory(states, bridge.start)


def exact_marginals(bridge: BridgeProcess) -> np.ndarray:
    """Per-time state distribution obtained by propagating ``B(t)`` forward."""
    out = np.empty((bridge.length, bridge.space.n_states))
    out[0] = bridge.initial_distribution()
    for k, B in enumerate(bridge.transitions):
        out[k + 1] = out[k] @ B
    return out


def stationary_distribution(P) -> np.ndarray:
    """Left Perron eigenvector of ``P`` normalised to sum 1."""
    P = np.asarray(P, dtype=float)
    w, v = np.linalg.eig(P.T)
    vec = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return vec / vec.sum()
