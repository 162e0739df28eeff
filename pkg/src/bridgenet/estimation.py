"""Maximum-likelihood fitting of hidden Markov bridge parameters.

Observations follow ``y_t = value(x_t) + v_t`` with ``v_t ~ N(0, sigma^2)``.
Smoothing is a scaled forward-backward pass over the bridge transitions, and
``em_fit`` is a generalized EM: sigma has a closed-form M-step, while the base
chain ``P`` is improved by projected gradient ascent on the Q-function and
kept only if the data log-likelihood does not decrease.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import xlogy

from . import kernels
from .bridge import (
    BridgeProcess,
    BridgeSegment,
    StateSpace,
    bridge_transitions,
    check_transition_matrix,
    make_toeplitz_transition,
)
from .errors import ImpossibleObservation, InfeasibleStart, InvalidArgument
from .observation import SIGMA_MIN

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_P_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class HmbParameters:
    P: np.ndarray
    sigma: float
    space: StateSpace
    segments: tuple[BridgeSegment, ...]
    initial_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "P", check_transition_matrix(self.P, tol=1e-9))
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.sigma >= SIGMA_MIN:
            raise InvalidArgument(f"sigma must be >= {SIGMA_MIN}, got {self.sigma!r}")

    @classmethod
    def from_bridge(cls, bridge: BridgeProcess, sigma: float) -> "HmbParameters":
        return cls(bridge.base, sigma, bridge.space, bridge.segments, bridge.initial_index)

    @property
    def bridge(self) -> BridgeProcess:
        return BridgeProcess(self.P, self.space, self.segments, self.initial_index)

    def replace(self, P=None, sigma=None) -> "HmbParameters":
        return HmbParameters(
            self.P if P is None else P,
            self.sigma if sigma is None else sigma,
            self.space,
            self.segments,
            self.initial_index,
        )

    def to_dict(self) -> dict:
        return {
            "n_states": self.space.n_states,
            "values": [float(v) for v in self.space.values],
            "P": [[float(x) for x in row] for row in self.P],
            "sigma": float(self.sigma),
            "initial_index": self.initial_index,
            "start": self.segments[0].start_time,
            "pins": [{"time": s.end_time, "state_index": s.pin_index} for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmbParameters":
        start = d.get("start", 1)
        segments, prev = [], start
        for pin in d["pins"]:
            segments.append(BridgeSegment(prev, pin["time"], pin["state_index"]))
            prev = pin["time"]
        return cls(np.array(d["P"], dtype=float), d["sigma"], StateSpace(d["n_states"]), segments,
                   d.get("initial_index"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "HmbParameters":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SmoothedStats:
    gamma: np.ndarray  # (T, N) state marginals
    xi: np.ndarray  # (T-1, N, N) pairwise marginals for t -> t+1
    log_likelihood: float


def _check_length(theta: HmbParameters, y: np.ndarray) -> None:
    length = theta.segments[-1].end_time - theta.segments[0].start_time + 1
    if y.size != length:
        raise InvalidArgument(f"sequence has {y.size} observations, the bridge spans {length}")


def _emissions(theta: HmbParameters, y: np.ndarray):
    """Row-scaled Gaussian emissions and the log of each row's scale."""
    r = y[:, None] - theta.space.values[None, :]
    logd = -0.5 * (r / theta.sigma) ** 2 - math.log(theta.sigma) - 0.5 * _LOG_2PI
    logd[~np.isfinite(y)] = 0.0
    offset = logd.max(axis=1)
    return np.exp(logd - offset[:, None]), offset


def _forward(theta, y, trans=None):
    y = np.asarray(y, dtype=float).reshape(-1)
    _check_length(theta, y)
    if trans is None:
        trans = bridge_transitions(theta.P, theta.segments)
    emis, offset = _emissions(theta, y)
    init = theta.bridge.initial_distribution()
    alpha, scales = kernels.forward_scaled(trans, emis, init)
    if not np.all(scales > 0):
        t = int(np.flatnonzero(~(scales > 0))[0]) + theta.segments[0].start_time
        raise ImpossibleObservation(f"observation sequence has zero probability at time {t}")
    loglik = float(np.log(scales).sum() + offset.sum())
    return alpha, scales, emis, trans, loglik


def forward(theta: HmbParameters, Y):
    """Scaled forward pass; returns ``(alpha_hat, log_likelihood)``.

    ``alpha_hat[t]`` is the filtering distribution ``P(x_t | y_1..y_t)``; the
    log-likelihood is the sum of the log scaling constants.
    """
    alpha, _, _, _, loglik = _forward(theta, Y)
    return alpha, loglik


def backward(theta: HmbParameters, Y) -> np.ndarray:
    """Scaled backward variables, ``beta_hat[-1] = 1``, sharing the forward scales."""
    _, scales, emis, trans, _ = _forward(theta, Y)
    return kernels.backward_scaled(trans, emis, scales)


def _smooth(theta, y, trans=None) -> SmoothedStats:
    alpha, scales, emis, trans, loglik = _forward(theta, y, trans)
    beta = kernels.backward_scaled(trans, emis, scales)
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = alpha[:-1, :, None] * trans * (emis[1:] * beta[1:])[:, None, :] / scales[1:, None, None]
    return SmoothedStats(gamma, xi, loglik)


def smooth(theta: HmbParameters, Y) -> SmoothedStats:
    """Posterior state and pair marginals given the whole sequence."""
    return _smooth(theta, Y)


def _as_sequences(Y):
    arr = np.asarray(Y, dtype=float) if not isinstance(Y, list) else None
    if arr is not None and arr.ndim == 1:
        return [arr]
    return [np.asarray(y, dtype=float).reshape(-1) for y in Y]


def _residual_sum(space, seqs, stats_list):
    """``sum_t sum_a (y_t - value_a)^2 gamma_t(a)`` and the observed count."""
    total, count = 0.0, 0
    for y, st in zip(seqs, stats_list):
        ok = np.isfinite(y)
        r = y[ok, None] - space.values[None, :]
        total += float((r * r * st.gamma[ok]).sum())
        count += int(ok.sum())
    return total, count


def _xlogy(weights, probs):
    return float(xlogy(weights, probs).sum())


def q_function(theta: HmbParameters, stats, Y) -> float:
    """Expected complete-data log-likelihood under the smoothed ``stats``.

    ``stats``/``Y`` may be single items or parallel lists.  Constant terms
    are dropped.  Returns ``-inf`` when ``theta`` gives zero probability to
    a transition with positive smoothed weight.
    """
    seqs = _as_sequences(Y)
    stats_list = [stats] if isinstance(stats, SmoothedStats) else list(stats)
    resid, count = _residual_sum(theta.space, seqs, stats_list)
    var = theta.sigma ** 2
    trans = bridge_transitions(theta.P, theta.segments)
    xi = sum(st.xi for st in stats_list)
    return -0.5 * count * math.log(var) - resid / (2.0 * var) + _xlogy(xi, trans)


class _TransitionObjective:
    """Transition part of Q as a function of the base chain ``P``.

    Uses ``log B = log P_ab + log (P^(h-t-1))_bc - log (P^(h-t))_ac`` so only
    the pin columns of the matrix powers are needed.
    """

    def __init__(self, xi_sum, segments):
        self.pair_counts = xi_sum.sum(axis=0)
        self.terms = []
        k = 0
        for seg in segments:
            for t in range(seg.start_time, seg.end_time):
                xi_t = xi_sum[k]
                steps = seg.end_time - t
                self.terms.append((seg.pin_index, steps, xi_t.sum(axis=0), xi_t.sum(axis=1)))
                k += 1
        self.max_steps = max(s.end_time - s.start_time for s in segments)

    def __call__(self, P) -> float:
        val = _xlogy(self.pair_counts, P)
        cols = {}
        for pin, steps, into, outof in self.terms:
            if pin not in cols:
                v = np.zeros((self.max_steps + 1, P.shape[0]))
                v[0, pin] = 1.0
                for j in range(1, self.max_steps + 1):
                    v[j] = P @ v[j - 1]
                cols[pin] = v
            v = cols[pin]
            val += _xlogy(into, v[steps - 1]) - _xlogy(outof, v[steps])
            if not np.isfinite(val):
                return -np.inf
        return val


def project_rows_to_simplex(X, floor: float = 0.0) -> np.ndarray:
    """Euclidean projection of each row onto ``{p >= floor, sum p = 1}``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    radius = 1.0 - n * floor
    U = X - floor
    srt = -np.sort(-U, axis=1)
    css = np.cumsum(srt, axis=1) - radius
    ks = np.arange(1, n + 1)
    rho = (srt - css / ks > 0).sum(axis=1)
    theta = css[np.arange(X.shape[0]), rho - 1] / rho
    return np.maximum(U - theta[:, None], 0.0) + floor


def _numerical_gradient(f, P, h=1e-6):
    grad = np.zeros_like(P)
    for idx in np.ndindex(P.shape):
        up = P.copy()
        up[idx] += h
        if P[idx] > 2 * h:
            dn = P.copy()
            dn[idx] -= h
            grad[idx] = (f(up) - f(dn)) / (2 * h)
        else:
            grad[idx] = (f(up) - f(P)) / h
    return grad


def _ascend_free(f, P, max_steps=50, tol=1e-10):
    """Projected gradient ascent with backtracking; never returns a worse P."""
    cur = f(P)
    step = None
    for _ in range(max_steps):
        g = _numerical_gradient(f, P)
        gnorm = np.abs(g).max()
        if not np.isfinite(gnorm) or gnorm == 0:
            break
        if step is None:
            step = 0.1 / gnorm
        improved = False
        for _ in range(40):
            cand = project_rows_to_simplex(P + step * g, _P_FLOOR)
            val = f(cand)
            if val > cur:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        gain = val - cur
        P, cur = cand, val
        step *= 2.0
        if gain < tol:
            break
    return P, cur


def _ascend_toeplitz(f, P, n_states):
    current = f(P)
    res = minimize_scalar(
        lambda b: -f(make_toeplitz_transition(n_states, b)),
        bounds=(1e-6, 1 - 1e-6),
        method="bounded",
        options={"xatol": 1e-8},
    )
    if -res.fun > current:
        return make_toeplitz_transition(n_states, float(res.x)), -res.fun
    return P, current


def toeplitz_decay(P) -> float:
    """Recover ``base`` from a row-normalised Toeplitz matrix (ratio of row 0)."""
    return float(P[0, 1] / P[0, 0])


def initial_sigma(sequences) -> float:
    """Std of one-step differences over all sequences, divided by sqrt(2)."""
    diffs = np.concatenate([np.diff(np.asarray(y, dtype=float)) for y in sequences])
    diffs = diffs[np.isfinite(diffs)]
    if diffs.size < 2:
        return 0.1
    return max(float(diffs.std(ddof=1)) / math.sqrt(2.0), SIGMA_MIN)


def initial_parameters(sequences, space: StateSpace, segments, initial_index=None) -> HmbParameters:
    return HmbParameters(make_toeplitz_transition(space.n_states, 0.25), initial_sigma(sequences),
                         space, segments, initial_index)


@dataclass
class EmResult:
    params: HmbParameters
    trace: list[float] = field(default_factory=list)
    converged: bool = False

    def __iter__(self):
        return iter((self.params, self.trace))


def _e_step(theta, seqs):
    trans = bridge_transitions(theta.P, theta.segments)
    stats = [_smooth(theta, y, trans) for y in seqs]
    return stats, sum(s.log_likelihood for s in stats)


def log_likelihood(theta: HmbParameters, Y) -> float:
    return sum(_forward(theta, y)[-1] for y in _as_sequences(Y))


def em_fit(sequences, init: HmbParameters, max_iters: int = 100, tol: float = 1e-7,
           mode: str = "free", fit_sigma: bool = True, fit_P: bool = True) -> EmResult:
    """Generalized EM over one or more sequences sharing the bridge schedule.

    ``mode="free"`` ascends over all row-stochastic matrices;
    ``mode="toeplitz"`` searches the one-parameter Toeplitz family.  The
    returned trace starts with the initial log-likelihood and is
    nondecreasing.  Unpacks as ``(params, trace)``.
    """
    if mode not in ("free", "toeplitz"):
        raise InvalidArgument(f"unknown EM mode {mode!r}")
    seqs = _as_sequences(sequences)
    if not seqs:
        raise InvalidArgument("em_fit needs at least one sequence")
    try:
        stats, ll = _e_step(init, seqs)
    except ImpossibleObservation as exc:
        raise InfeasibleStart(f"initial parameters give the data zero probability: {exc}") from exc
    if not np.isfinite(ll):
        raise InfeasibleStart("initial parameters give the data zero probability")
    theta = init
    result = EmResult(theta, [ll])
    for it in range(max_iters):
        sigma = theta.sigma
        if fit_sigma:
            resid, count = _residual_sum(theta.space, seqs, stats)
            sigma = max(math.sqrt(resid / max(count, 1)), SIGMA_MIN)
        P = theta.P
        if fit_P:
            objective = _TransitionObjective(sum(s.xi for s in stats), theta.segments)
            if mode == "free":
                P, _ = _ascend_free(objective, np.array(theta.P))
            else:
                P, _ = _ascend_toeplitz(objective, np.array(theta.P), theta.space.n_states)
        candidate = theta.replace(P=P, sigma=sigma)
        try:
            new_stats, new_ll = _e_step(candidate, seqs)
        except ImpossibleObservation:
            new_ll = -np.inf
        if not new_ll >= ll and fit_P:
            # P step failed the likelihood gate; fall back to the sigma update only
            candidate = theta.replace(sigma=sigma)
            new_stats, new_ll = _e_step(candidate, seqs)
        if not new_ll >= ll:
            logger.debug("EM iteration %d rejected (%.6g < %.6g)", it, new_ll, ll)
            result.converged = True
            break
        gain = new_ll - ll
        theta, stats, ll = candidate, new_stats, new_ll
        result.trace.append(ll)
        result.params = theta
        logger.debug("EM iteration %d: loglik %.9g", it, ll)
        if gain < tol:
            result.converged = True
            break
    return result
