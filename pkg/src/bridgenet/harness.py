"""Experiment orchestration behind the ``bridgenet`` command.

Every runner takes an :class:`ExperimentConfig`, writes plain CSV/JSON into
``config.out`` and returns the in-memory results.  Replication ``i`` of an
experiment draws all randomness from ``default_rng(seed + i)``; calibration
uses the disjoint stream starting at ``seed + CALIBRATION_SEED_OFFSET``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .bridge import (
    BridgeProcess,
    BridgeSegment,
    StateSpace,
    default_bridge,
    make_toeplitz_transition,
    sample_paths,
    sample_trajectory,
)
from .errors import DegenerateRange, FormatError, InvalidArgument
from .estimation import HmbParameters, em_fit, initial_parameters
from .filtering import HmbModel, HmmModel, mse, run_filter
from .graph import CommunityLayout, algebraic_connectivity, graph_conductance
from .observation import (
    EdgeSampleConfig,
    NoiseModel,
    calibrate_noise,
    simulate_observations,
    state_graph,
)
from .retweets import (
    classify_users,
    discretize_series,
    load_seeds,
    parse_retweets,
    polarization_series,
    systematic_subsample,
)

logger = logging.getLogger(__name__)

CALIBRATION_SEED_OFFSET = 10_000_000


@dataclass
class ExperimentConfig:
    m_utilitarian: int = 10
    n_fans: int = 20
    T: int = 20
    n_states: list = field(default_factory=lambda: [4, 6, 8, 10])
    model_states: int = 6
    gamma: float = 0.5
    base: float = 0.25
    n_monte_carlo: int = 500
    n_calibration: int = 200
    n_trajectories: int = 1
    seed: int = 0
    method: str = "sweep"
    noise_mode: str = "per-state"
    estimate: str = "mean"
    out: str = "."
    jobs: int = 1
    em_max_iters: int = 100
    em_mode: str = "free"
    fit_schedule: str = "two-pin"
    rescale: bool = False
    horizon: int = 30
    first_day: int = 1
    subsample: int = 1
    params: str | None = None
    noise_model: str | None = None
    synthetic_replications: int = 0
    sequences: str | None = None
    retweets: str | None = None
    seed_accounts: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("m_utilitarian", "n_fans", "model_states", "n_monte_carlo", "n_calibration",
                     "n_trajectories", "jobs", "em_max_iters", "horizon", "subsample"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise InvalidArgument(f"config field {name!r} must be a positive integer, got {v!r}")
        if not isinstance(self.T, int) or self.T < 2:
            raise InvalidArgument(f"config field 'T' must be an integer >= 2, got {self.T!r}")
        if not self.n_states or any(not isinstance(n, int) or n < 2 for n in self.n_states):
            raise InvalidArgument(f"config field 'n_states' must list integers >= 2, got {self.n_states!r}")
        if self.model_states < 2:
            raise InvalidArgument("config field 'model_states' must be >= 2")
        if not 0 < self.gamma <= 1:
            raise InvalidArgument(f"config field 'gamma' must lie in (0, 1], got {self.gamma!r}")
        if not 0 < self.base < 1:
            raise InvalidArgument(f"config field 'base' must lie in (0, 1), got {self.base!r}")
        choices = {
            "method": ("exact", "sweep"),
            "noise_mode": ("per-state", "pooled"),
            "estimate": ("mean", "map"),
            "em_mode": ("free", "toeplitz"),
            "fit_schedule": ("two-pin", "final-max"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise InvalidArgument(f"config field {name!r} must be one of {allowed}, got {getattr(self, name)!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidArgument(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise InvalidArgument(f"config {path} must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def layout(self) -> CommunityLayout:
        return CommunityLayout(self.m_utilitarian, self.n_fans)

    def bridge(self, n_states: int) -> BridgeProcess:
        space = StateSpace(n_states)
        return default_bridge(make_toeplitz_transition(n_states, self.base), self.T, space)

    def out_dir(self) -> Path:
        out = Path(self.out)
        if not out.is_dir():
            raise InvalidArgument(f"output directory {out} does not exist")
        return out


def write_config(config: ExperimentConfig, out: Path) -> None:
    (out / "resolved_config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _fmt(x) -> str:
    x = float(x)
    return "" if not math.isfinite(x) else f"{x:.12g}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def pmap(fn, items, jobs: int = 1):
    """Ordered map, fanned out over ``jobs`` processes when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


# --- simulate / metrics-compare ---------------------------------------------------------


def trajectory_metrics(layout: CommunityLayout, bridge: BridgeProcess, states, method: str = "sweep"):
    """Noiseless per-time ``(W, conductance, algebraic connectivity)``."""
    rows = []
    for s in states:
        w = float(bridge.space.values[s])
        g = state_graph(layout, w)
        rows.append((w, graph_conductance(g, method), algebraic_connectivity(g)))
    return np.array(rows)


def cmd_simulate(config: ExperimentConfig):
    out = config.out_dir()
    bridge = config.bridge(config.model_states)
    rows = []
    for i in range(config.n_trajectories):
        traj = sample_trajectory(bridge, np.random.default_rng(config.seed + i))
        metrics = trajectory_metrics(config.layout, bridge, traj.states, config.method)
        for k, (s, (w, phi, lam)) in enumerate(zip(traj.states, metrics)):
            rows.append((i, bridge.start + k, int(s), w, phi, lam))
    _write_csv(out / "metrics.csv",
               ["trajectory", "t", "state_index", "W", "conductance", "algebraic_connectivity"], rows)
    write_config(config, out)
    return rows


def spearman(a, b) -> float:
    return float(stats.spearmanr(a, b).statistic)


def cmd_metrics_compare(config: ExperimentConfig):
    """Rank correlation between conductance and algebraic connectivity per trajectory."""
    out = config.out_dir()
    bridge = config.bridge(config.model_states)
    rows, series_rows = [], []
    for i in range(config.n_trajectories):
        traj = sample_trajectory(bridge, np.random.default_rng(config.seed + i))
        m = trajectory_metrics(config.layout, bridge, traj.states, config.method)
        rho = spearman(m[:, 1], m[:, 2])
        T = config.T
        rows.append((i, rho, m[T - 1, 1], m[T - 1, 2], m[0, 1], m[0, 2], m[-1, 1], m[-1, 2]))
        for k, (w, phi, lam) in enumerate(m):
            series_rows.append((i, bridge.start + k, w, phi, lam))
    _write_csv(out / "metrics_compare.csv",
               ["trajectory", "spearman", "phi_at_T", "lambda2_at_T", "phi_at_1", "lambda2_at_1",
                "phi_at_end", "lambda2_at_end"], rows)
    _write_csv(out / "metrics_series.csv", ["trajectory", "t", "W", "conductance", "algebraic_connectivity"],
               series_rows)
    summary = {"mean_spearman": float(np.mean([r[1] for r in rows])), "n_trajectories": len(rows)}
    (out / "metrics_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    write_config(config, out)
    return rows, summary


# --- calibrate ----------------------------------------------------------------------------


def run_calibration(config: ExperimentConfig, n_states: int):
    cfg = EdgeSampleConfig(config.gamma, config.seed + CALIBRATION_SEED_OFFSET)
    return calibrate_noise(config.layout, config.bridge(n_states), cfg, config.n_calibration,
                           config.method, mode=config.noise_mode, jobs=config.jobs)


def cmd_calibrate(config: ExperimentConfig):
    out = config.out_dir()
    noise, report = run_calibration(config, config.model_states)
    noise.save(out / "noise_model.json")
    mu, sigma = noise.state_params()
    _write_csv(out / "ks_report.csv",
               ["state", "n_samples", "mu", "sigma", "reference", "ks_statistic", "p_value", "fallback"],
               [(i, int(report.samples_per_state[i]), float(mu[i]), float(sigma[i]),
                 float(report.references[i]), float(report.ks_statistic[i]), float(report.p_value[i]),
                 int(report.fallback[i])) for i in range(noise.n_states)])
    _write_csv(out / "noise_cdf.csv", ["state", "noise", "empirical_cdf", "fitted_cdf"], report.cdf_rows(noise))
    write_config(config, out)
    return noise, report


# --- evaluate -----------------------------------------------------------------------------


def observation_hash(z) -> str:
    return hashlib.sha256(np.ascontiguousarray(z, dtype=np.float64).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class _ReplicationTask:
    layout: CommunityLayout
    bridge: BridgeProcess
    noise: NoiseModel
    gamma: float
    method: str
    estimate: str
    seed: int
    replication: int


def paired_replication(task: _ReplicationTask):
    """One trajectory and observation stream scored by both filters."""
    rng = np.random.default_rng(task.seed + task.replication)
    states, z = simulate_observations(task.layout, task.bridge, task.gamma, rng, task.method)
    bridge = task.bridge
    hmb_run = run_filter(z, HmbModel(bridge, task.noise), truth=states)
    hmb_hash = observation_hash(hmb_run.observations)
    hmm = HmmModel(bridge.base, bridge.space, task.noise, initial_index=bridge.initial_index)
    hmm_run = run_filter(z, hmm, truth=states)
    hmm_hash = observation_hash(hmm_run.observations)
    if hmb_hash != hmm_hash:
        raise RuntimeError("paired filters saw different observation streams")
    return task.replication, mse(hmb_run, task.estimate), mse(hmm_run, task.estimate), hmb_hash


def paired_summary(hmb, hmm, level=0.95) -> dict:
    """Mean MSEs, relative improvement and a paired t confidence interval on HMM - HMB."""
    hmb, hmm = np.asarray(hmb), np.asarray(hmm)
    d = hmm - hmb
    n = d.size
    half = float(stats.t.ppf(0.5 + level / 2, n - 1) * d.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return {
        "hmb_mse": float(hmb.mean()),
        "hmm_mse": float(hmm.mean()),
        "relative_improvement": float(1.0 - hmb.mean() / hmm.mean()) if hmm.mean() > 0 else 0.0,
        "n_runs": int(n),
        "mean_difference": float(d.mean()),
        "ci_halfwidth": half,
        "ci_low": float(d.mean() - half),
        "ci_high": float(d.mean() + half),
    }


def cmd_evaluate(config: ExperimentConfig, n_states_grid=None):
    out = config.out_dir()
    grid = list(n_states_grid or config.n_states)
    report, rep_rows = [], []
    for ns in grid:
        bridge = config.bridge(ns)
        if config.noise_model and len(grid) == 1:
            noise = NoiseModel.load(config.noise_model)
        else:
            noise, _ = run_calibration(config, ns)
        tasks = [
            _ReplicationTask(config.layout, bridge, noise, config.gamma, config.method, config.estimate,
                             config.seed, i)
            for i in range(config.n_monte_carlo)
        ]
        results = sorted(pmap(paired_replication, tasks, config.jobs))
        hmb = [r[1] for r in results]
        hmm = [r[2] for r in results]
        rep_rows += [(ns, r[0], r[1], r[2], r[3]) for r in results]
        row = {"n_states": ns, **paired_summary(hmb, hmm)}
        report.append(row)
        logger.info("N_S=%d: HMB %.5g HMM %.5g (%.1f%%)", ns, row["hmb_mse"], row["hmm_mse"],
                    100 * row["relative_improvement"])
    cols = ["n_states", "hmb_mse", "hmm_mse", "relative_improvement", "n_runs", "ci_halfwidth",
            "ci_low", "ci_high"]
    _write_csv(out / "evaluation.csv", cols, [[r[c] for c in cols] for r in report])
    _write_csv(out / "replications.csv", ["n_states", "replication", "hmb_mse", "hmm_mse", "observation_sha"],
               rep_rows)
    write_config(config, out)
    return report


# --- fit ----------------------------------------------------------------------------------


def read_sequences(path):
    """CSV ``sequence_id,t,y`` -> list of equal-length arrays (empty y = gap)."""
    seqs: dict[str, dict[int, float]] = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"sequence_id", "t", "y"} - set(reader.fieldnames):
            raise FormatError(f"{path}: sequences CSV needs 'sequence_id,t,y' header")
        for lineno, row in enumerate(reader, start=2):
            try:
                t = int(row["t"])
                y = float(row["y"]) if row["y"].strip() else math.nan
            except (ValueError, AttributeError):
                raise FormatError(f"{path}:{lineno}: malformed row {row}", [lineno]) from None
            seqs.setdefault(row["sequence_id"], {})[t] = y
    if not seqs:
        raise FormatError(f"{path}: no sequences")
    out = []
    times = None
    for sid in seqs:
        ts = sorted(seqs[sid])
        if times is None:
            times = ts
        elif ts != times:
            raise FormatError(f"{path}: sequence {sid!r} does not share the time grid of the others")
        out.append(np.array([seqs[sid][t] for t in ts]))
    return out, times[0]


def write_sequences(path, sequences, first_t: int = 1) -> None:
    rows = [(i, first_t + k, float(y)) for i, seq in enumerate(sequences) for k, y in enumerate(seq)]
    _write_csv(Path(path), ["sequence_id", "t", "y"], rows)


def fit_schedule(kind: str, length: int, n_states: int, start: int = 1):
    """Pin schedule for a sequence of ``length`` points.

    ``two-pin``: top -> bottom at the midpoint -> top (needs odd length).
    ``final-max``: unknown start, pinned to the top state at the end.
    """
    top = n_states - 1
    end = start + length - 1
    if kind == "two-pin":
        if length < 3 or length % 2 == 0:
            raise InvalidArgument(f"two-pin schedule needs an odd length >= 3, got {length}")
        mid = start + (length - 1) // 2
        return (BridgeSegment(start, mid, 0), BridgeSegment(mid, end, top)), top
    if kind == "final-max":
        if length < 2:
            raise InvalidArgument("final-max schedule needs at least 2 points")
        return (BridgeSegment(start, end, top),), None
    raise InvalidArgument(f"unknown schedule {kind!r}")


def fit_sequences(sequences, n_states: int, schedule: str, em_mode: str = "free", max_iters: int = 100,
                  start: int = 1, init: HmbParameters | None = None):
    space = StateSpace(n_states)
    segments, initial = fit_schedule(schedule, len(sequences[0]), n_states, start)
    if init is None:
        init = initial_parameters(sequences, space, segments, initial)
    return em_fit(sequences, init, max_iters=max_iters, mode=em_mode)


def _input(path, name):
    if path is None:
        raise InvalidArgument(f"config field {name!r} (input file) is required for this command")
    if not Path(path).is_file():
        raise InvalidArgument(f"input file {path} does not exist")
    return path


def cmd_fit(config: ExperimentConfig, sequences_path=None):
    out = config.out_dir()
    sequences_path = _input(sequences_path or config.sequences, "sequences")
    seqs, first_t = read_sequences(sequences_path)
    meta = {"n_sequences": len(seqs), "length": len(seqs[0])}
    if config.rescale:
        allv = np.concatenate(seqs)
        allv = allv[np.isfinite(allv)]
        lo, hi = float(allv.min()), float(allv.max())
        if hi <= lo:
            raise DegenerateRange("sequences are constant; nothing to rescale")
        seqs = [(s - lo) / (hi - lo) for s in seqs]
        meta["rescale"] = {"low": lo, "high": hi}
    if len(seqs) == 1:
        meta["warning"] = "fitted from a single sequence; parameter estimates have wide error bars"
    result = fit_sequences(seqs, config.model_states, config.fit_schedule, config.em_mode,
                           config.em_max_iters, first_t)
    params, trace = result
    params.save(out / "params.json")
    _write_csv(out / "likelihood_trace.csv", ["iteration", "log_likelihood"], list(enumerate(trace)))
    meta.update({"iterations": len(trace) - 1, "converged": result.converged,
                 "final_log_likelihood": trace[-1]})
    (out / "fit_metadata.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    write_config(config, out)
    return result, meta


# --- polarize -----------------------------------------------------------------------------


def polarization_filters(params: HmbParameters):
    """HMB and HMM filter models sharing ``params`` (zero-mean Gaussian noise)."""
    noise = NoiseModel.gaussian(params.space.n_states, params.sigma)
    hmb = HmbModel(params.bridge, noise)
    hmm = HmmModel(params.P, params.space, noise, initial_index=params.initial_index,
                   start=params.segments[0].start_time)
    return hmb, hmm


def synthetic_comparison(params: HmbParameters, n_reps: int, seed: int, estimate: str = "mean"):
    """Paired HMB/HMM MSEs on sequences simulated from the fitted bridge."""
    bridge = params.bridge
    hmb_model, hmm_model = polarization_filters(params)
    rows = []
    for i in range(n_reps):
        rng = np.random.default_rng(seed + i)
        states = sample_paths(bridge, 1, rng)[0]
        y = params.space.values[states] + params.sigma * rng.standard_normal(states.size)
        a = mse(run_filter(y, hmb_model, truth=states), estimate)
        b = mse(run_filter(y, hmm_model, truth=states), estimate)
        rows.append((i, a, b))
    return rows


def cmd_polarize(config: ExperimentConfig, retweets_path=None, seeds_path=None):
    out = config.out_dir()
    retweets_path = _input(retweets_path or config.retweets, "retweets")
    seeds_path = _input(seeds_path or config.seed_accounts, "seed_accounts")
    window = (config.first_day, config.first_day + config.horizon - 1)
    records, malformed = parse_retweets(retweets_path, window)
    records = systematic_subsample(records, config.subsample)
    seeds = load_seeds(seeds_path)
    labels = classify_users(records, seeds)
    series = polarization_series(records, labels, seeds, config.horizon, config.first_day)
    series.to_csv(out / "polarization.csv")
    _write_csv(out / "classification.csv", ["user", "label"], sorted(labels.items()))
    summary = {"n_records": len(records), "n_malformed": len(malformed),
               "malformed_lines": [m.line_number for m in malformed],
               "label_counts": {k: sum(1 for v in labels.values() if v == k) for k in sorted(set(labels.values()))}}
    n_states = config.model_states
    header = ["day", "y", "gap", "hmb_mean", "hmb_map", "hmm_mean", "hmm_map"]
    try:
        disc = discretize_series(series, n_states)
    except DegenerateRange:
        # constant series: every grid level coincides with the observed value
        level = float(series.y[np.isfinite(series.y)][0])
        rows = [(int(d), _fmt(y), int(g), level, level, level, level)
                for d, y, g in zip(series.days, series.y, series.gap)]
        _write_csv(out / "estimates.csv", header, rows)
        summary["degenerate"] = True
        (out / "polarize_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        write_config(config, out)
        return series, None, summary
    obs = disc.observations
    if config.params:
        params = HmbParameters.load(config.params)
    else:
        params, trace = fit_sequences([obs], n_states, "final-max", config.em_mode, config.em_max_iters,
                                      config.first_day)
        summary["em_trace"] = trace
    params.save(out / "params.json")
    hmb_model, hmm_model = polarization_filters(params)
    runs = {"hmb": run_filter(obs, hmb_model), "hmm": run_filter(obs, hmm_model)}
    est = {k: (disc.from_unit(r.estimates("mean")), disc.from_unit(r.estimates("map"))) for k, r in runs.items()}
    rows = [(int(d), _fmt(y), int(g), est["hmb"][0][k], est["hmb"][1][k], est["hmm"][0][k], est["hmm"][1][k])
            for k, (d, y, g) in enumerate(zip(series.days, series.y, series.gap))]
    _write_csv(out / "estimates.csv", header, rows)
    summary["grid"] = [float(v) for v in disc.grid]
    if config.synthetic_replications:
        syn = synthetic_comparison(params, config.synthetic_replications, config.seed, config.estimate)
        _write_csv(out / "synthetic_comparison.csv", ["replication", "hmb_mse", "hmm_mse"], syn)
        wins = sum(1 for _, a, b in syn if a <= b)
        summary["synthetic"] = {"replications": len(syn), "hmb_not_worse": wins,
                                "fraction_hmb_not_worse": wins / len(syn),
                                **paired_summary([r[1] for r in syn], [r[2] for r in syn])}
    (out / "polarize_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    write_config(config, out)
    return series, runs, summary
