"""Retweet ingestion, seed-based ideology classification and daily polarization.

A record ``(day, retweeter, author)`` is a retweet by ``retweeter`` of a post
by ``author``.  Users are classified by which party's seed accounts they
retweet more; the daily polarization score is the share of classified
users' seed retweets that stay within their own party.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateRange, EmptySeries, FormatError, InvalidArgument

PARTIES = ("D", "R")
TIE = "dropped-tie"
LOW_ACTIVITY = "dropped-low-activity"
MALFORMED_LIMIT = 0.01


@dataclass(frozen=True)
class RetweetRecord:
    day: int
    retweeter: str
    author: str


@dataclass(frozen=True)
class MalformedLine:
    line_number: int
    text: str
    reason: str


def parse_retweets(path, window=None):
    """Read ``day<TAB>retweeter<TAB>author`` lines.

    Returns ``(records, malformed)``.  Records outside the inclusive
    ``window=(day_min, day_max)`` are dropped; ``#`` lines and blank lines are
    skipped.  More than 1% malformed lines raises :class:`FormatError`.
    """
    records, malformed = [], []
    n_data = 0
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            n_data += 1
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                malformed.append(MalformedLine(lineno, line, "expected 3 tab-separated fields"))
                continue
            try:
                day = int(parts[0])
            except ValueError:
                malformed.append(MalformedLine(lineno, line, "day is not an integer"))
                continue
            retweeter, author = parts[1].strip(), parts[2].strip()
            if retweeter == author:
                malformed.append(MalformedLine(lineno, line, "user retweets themself"))
                continue
            if window is not None and not window[0] <= day <= window[1]:
                continue
            records.append(RetweetRecord(day, retweeter, author))
    if n_data and len(malformed) > MALFORMED_LIMIT * n_data:
        lines = [m.line_number for m in malformed]
        raise FormatError(
            f"{path}: {len(malformed)} of {n_data} lines malformed (lines {lines[:20]})", lines
        )
    return records, malformed


def systematic_subsample(records, n: int):
    """Every ``n``-th record starting with the first."""
    if n < 1:
        raise InvalidArgument(f"subsampling step must be >= 1, got {n}")
    return list(records[::n])


def load_seeds(path) -> dict[str, str]:
    """Seed table CSV with header ``account,party`` (party D or R)."""
    seeds = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"account", "party"} - set(reader.fieldnames):
            raise FormatError(f"{path}: seed table needs 'account,party' header")
        for lineno, row in enumerate(reader, start=2):
            party = (row["party"] or "").strip()
            if party not in PARTIES:
                raise FormatError(f"{path}:{lineno}: party must be D or R, got {party!r}", [lineno])
            seeds[row["account"].strip()] = party
    return check_seeds(seeds)


def check_seeds(seeds) -> dict[str, str]:
    seeds = dict(seeds)
    if not seeds:
        raise InvalidArgument("seed table is empty")
    if set(seeds.values()) != set(PARTIES):
        raise InvalidArgument("seed table must contain both D and R accounts")
    return seeds


def classify_users(records, seeds) -> dict[str, str]:
    """Label each retweeter D, R, ``dropped-tie`` or ``dropped-low-activity``.

    Users with fewer than two retweets in total are low-activity; otherwise
    the party whose seeds they retweet strictly more often wins and equal
    counts (including none) are ties.
    """
    seeds = check_seeds(seeds)
    total = Counter()
    by_party = {p: Counter() for p in PARTIES}
    for r in records:
        total[r.retweeter] += 1
        party = seeds.get(r.author)
        if party is not None:
            by_party[party][r.retweeter] += 1
    labels = {}
    for user in sorted(total):
        d, rep = by_party["D"][user], by_party["R"][user]
        if total[user] < 2:
            labels[user] = LOW_ACTIVITY
        elif d == rep:
            labels[user] = TIE
        else:
            labels[user] = "D" if d > rep else "R"
    return labels


@dataclass(frozen=True, eq=False)
class PolarizationSeries:
    days: np.ndarray
    y: np.ndarray  # NaN on gap days
    intra: np.ndarray
    cross: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return (self.intra + self.cross) == 0

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["day", "y", "intra", "cross", "gap"])
            for d, y, i, c, g in zip(self.days, self.y, self.intra, self.cross, self.gap):
                w.writerow([int(d), "" if g else f"{y:.12g}", int(i), int(c), int(g)])


def polarization_series(records, classification, seeds, horizon: int, first_day: int = 1):
    """Daily share of intra-party seed retweets among classified users."""
    days = np.arange(first_day, first_day + horizon)
    intra = np.zeros(horizon, dtype=int)
    cross = np.zeros(horizon, dtype=int)
    for r in records:
        k = r.day - first_day
        side = classification.get(r.retweeter)
        party = seeds.get(r.author)
        if not 0 <= k < horizon or side not in PARTIES or party is None:
            continue
        if party == side:
            intra[k] += 1
        else:
            cross[k] += 1
    total = intra + cross
    if not total.any():
        raise EmptySeries("no classified user retweeted a seed account on any day")
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.where(total > 0, intra / np.maximum(total, 1), np.nan)
    return PolarizationSeries(days, y, intra, cross)


@dataclass(frozen=True, eq=False)
class DiscretizedSeries:
    """Series rescaled to the unit interval so the canonical grid applies.

    ``grid`` holds the state levels in original units, spanning the observed
    minimum and maximum.
    """

    observations: np.ndarray  # unit-scaled, NaN on gaps
    low: float
    high: float
    grid: np.ndarray

    def to_unit(self, y):
        return (np.asarray(y, dtype=float) - self.low) / (self.high - self.low)

    def from_unit(self, u):
        return self.low + np.asarray(u, dtype=float) * (self.high - self.low)


def discretize_series(series, n_states: int) -> DiscretizedSeries:
    y = np.asarray(series.y if isinstance(series, PolarizationSeries) else series, dtype=float)
    ok = y[np.isfinite(y)]
    if ok.size < 2:
        raise EmptySeries("need at least two non-gap days to discretize")
    lo, hi = float(ok.min()), float(ok.max())
    if hi <= lo:
        raise DegenerateRange(f"constant series ({lo}) has no range to discretize")
    grid = lo + (hi - lo) * np.arange(n_states) / (n_states - 1)
    return DiscretizedSeries((y - lo) / (hi - lo), lo, hi, grid)
