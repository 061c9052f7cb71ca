"""Fitting execution-time observations: rates, delays, hyper-Erlang models.

A component's rate is the reciprocal sample mean of its observed execution
times, its delay is the sample minimum, and its holding times are the
observations minus the delay.  Holding times are fitted with hyper-Erlang
phase-type distributions: a one-dimensional k-means pass clusters the
sample, each cluster becomes an Erlang branch by moment matching, and an
optional expectation-maximization pass refines branch weights and rates.
Candidate cluster counts are scored by the mean absolute difference
between the empirical and the fitted CDF, with cumulative-improvement
early stopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln, logsumexp

from .ctmc import InvalidModelError
from .solver import erlang_cdf

_KMEANS_MAX_ITER = 200
_LOG_DENSITY_FLOOR = -745.0  # ~log of the smallest positive double


class DegenerateHoldingSample(ValueError):
    """All holding times are zero; the component is a pure delay."""


@dataclass(frozen=True)
class ObservationSet:
    """Raw execution-time observations for one component."""

    component: str
    durations: tuple[float, ...]
    unit: str = "seconds"

    def __post_init__(self) -> None:
        if len(self.durations) == 0:
            raise InvalidModelError(f"component {self.component!r} has no observations")
        arr = np.asarray(self.durations, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise InvalidModelError(
                f"component {self.component!r} has non-positive or non-finite durations"
            )
        object.__setattr__(self, "durations", tuple(float(x) for x in arr))

    def array(self) -> np.ndarray:
        return np.asarray(self.durations, dtype=float)


@dataclass(frozen=True)
class ComponentStats:
    """Derived per-component quantities: rate, delay, holding-time sample."""

    component: str
    rate: float
    delay: float
    holdings: tuple[float, ...]
    unit: str = "seconds"

    def holdings_array(self) -> np.ndarray:
        return np.asarray(self.holdings, dtype=float)

    @property
    def mean(self) -> float:
        return 1.0 / self.rate


def estimate_component_stats(obs: ObservationSet) -> ComponentStats:
    """Rate = reciprocal sample mean, delay = sample minimum, holdings =
    durations shifted down by the delay."""
    arr = obs.array()
    rate = float(len(arr) / arr.sum())
    delay = float(arr.min())
    holdings = tuple(float(x) for x in (arr - delay))
    return ComponentStats(obs.component, rate, delay, holdings, obs.unit)


# ---------------------------------------------------------------------------
# Hyper-Erlang phase-type distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErlangBranch:
    weight: float
    phases: int
    rate: float

    def __post_init__(self) -> None:
        if not (0.0 < self.weight <= 1.0):
            raise InvalidModelError(f"branch weight {self.weight!r} outside (0, 1]")
        if not isinstance(self.phases, (int, np.integer)) or self.phases < 1:
            raise InvalidModelError(f"branch phase count {self.phases!r} must be >= 1")
        if not (self.rate > 0.0) or not math.isfinite(self.rate):
            raise InvalidModelError(f"branch rate {self.rate!r} must be positive and finite")
        object.__setattr__(self, "phases", int(self.phases))

    @property
    def mean(self) -> float:
        return self.phases / self.rate


@dataclass(frozen=True)
class HyperErlangPhd:
    """Mixture of independent Erlang chains selected by initial probability.

    The matrix views (initial vector, generator block, exit vector) lay the
    phases out branch by branch; the generator block is upper-bidiagonal
    within each branch, so the distribution is acyclic.
    """

    branches: tuple[ErlangBranch, ...]

    def __post_init__(self) -> None:
        if len(self.branches) == 0:
            raise InvalidModelError("phase-type distribution needs at least one branch")
        total = sum(b.weight for b in self.branches)
        if abs(total - 1.0) > 1e-12:
            raise InvalidModelError(f"branch weights sum to {total!r}, not 1")

    @property
    def n_phases(self) -> int:
        return sum(b.phases for b in self.branches)

    def mean(self) -> float:
        return float(sum(b.weight * b.mean for b in self.branches))

    def cdf(self, x) -> np.ndarray | float:
        parts = [b.weight * np.asarray(erlang_cdf(b.phases, b.rate, x)) for b in self.branches]
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        if np.ndim(x) == 0:
            return float(out)
        return out

    @cached_property
    def _offsets(self) -> tuple[int, ...]:
        offs = [0]
        for b in self.branches:
            offs.append(offs[-1] + b.phases)
        return tuple(offs)

    def initial_vector(self) -> np.ndarray:
        pi0 = np.zeros(self.n_phases)
        for b, off in zip(self.branches, self._offsets):
            pi0[off] = b.weight
        return pi0

    def generator_block(self) -> np.ndarray:
        n = self.n_phases
        D0 = np.zeros((n, n))
        for b, off in zip(self.branches, self._offsets):
            for j in range(b.phases):
                D0[off + j, off + j] = -b.rate
                if j + 1 < b.phases:
                    D0[off + j, off + j + 1] = b.rate
        return D0

    def exit_vector(self) -> np.ndarray:
        return -self.generator_block() @ np.ones(self.n_phases)


@dataclass(frozen=True)
class FitConfig:
    """Knobs of the holding-time fitting loop."""

    alpha: float = 0.1
    min_clusters: int = 1
    max_clusters: int = 10
    max_phases: int = 100
    max_steps: int = 3
    em_iterations: int = 25
    em_tolerance: float = 1e-6
    seed: int = 1

    def __post_init__(self) -> None:
        if self.alpha < 0.0:
            raise InvalidModelError("alpha must be >= 0")
        if self.min_clusters < 1 or self.max_clusters < self.min_clusters:
            raise InvalidModelError("need 1 <= min_clusters <= max_clusters")
        if self.max_phases < 1:
            raise InvalidModelError("max_phases must be >= 1")
        if self.max_steps < 0 or self.em_iterations < 0:
            raise InvalidModelError("max_steps and em_iterations must be >= 0")

    def key(self) -> str:
        return (
            f"a{self.alpha!r}c{self.min_clusters}-{self.max_clusters}p{self.max_phases}"
            f"s{self.max_steps}e{self.em_iterations}t{self.em_tolerance!r}r{self.seed}"
        )


# ---------------------------------------------------------------------------
# Cluster-based fitting
# ---------------------------------------------------------------------------


def _kmeans_segments(xs: np.ndarray, clusters: int) -> list[tuple[int, float, float]]:
    """One-dimensional k-means on a sorted sample with quantile
    initialization.  Returns (count, mean, variance) per nonempty cluster,
    in ascending order of the data."""
    n = len(xs)
    clusters = min(clusters, n)
    centers = np.quantile(xs, (np.arange(clusters) + 0.5) / clusters)
    prefix = np.concatenate(([0.0], np.cumsum(xs)))
    prefix_sq = np.concatenate(([0.0], np.cumsum(xs * xs)))
    cuts = None
    for _ in range(_KMEANS_MAX_ITER):
        order = np.sort(centers)
        bounds = (order[:-1] + order[1:]) / 2.0
        new_cuts = np.searchsorted(xs, bounds, side="left")
        if cuts is not None and np.array_equal(new_cuts, cuts):
            break
        cuts = new_cuts
        edges = np.concatenate(([0], cuts, [n]))
        for c in range(clusters):
            lo, hi = edges[c], edges[c + 1]
            if hi > lo:
                centers[c] = (prefix[hi] - prefix[lo]) / (hi - lo)
        centers = np.sort(centers)
    edges = np.concatenate(([0], cuts, [n])) if cuts is not None else np.array([0, n])
    segments = []
    for c in range(len(edges) - 1):
        lo, hi = int(edges[c]), int(edges[c + 1])
        if hi <= lo:
            continue
        count = hi - lo
        mean = (prefix[hi] - prefix[lo]) / count
        var = max(0.0, (prefix_sq[hi] - prefix_sq[lo]) / count - mean * mean)
        segments.append((count, float(mean), float(var)))
    return segments


def _moment_branches(
    segments: list[tuple[int, float, float]], n: int, max_phases: int
) -> list[ErlangBranch]:
    """Erlang branch per cluster by moment matching.  A zero-variance
    cluster gets the maximum phase count (the closest feasible
    approximation of a point mass); zero-mean clusters are folded into the
    smallest positive cluster."""
    live = [(c, m, v) for c, m, v in segments if m > 0.0]
    dead_count = sum(c for c, m, _ in segments if m <= 0.0)
    if not live:
        raise DegenerateHoldingSample("all holding times are zero")
    if dead_count:
        c0, m0, v0 = live[0]
        live[0] = (c0 + dead_count, m0 * c0 / (c0 + dead_count), v0)
    branches = []
    for count, mean, var in live:
        if var > 0.0:
            phases = int(np.clip(math.floor(mean * mean / var + 0.5), 1, max_phases))
        else:
            phases = max_phases
        branches.append(ErlangBranch(count / n, phases, phases / mean))
    return branches


def _em_refine(xs: np.ndarray, branches: list[ErlangBranch], cfg: FitConfig) -> list[ErlangBranch]:
    """Expectation-maximization on branch weights and rates with fixed
    phase counts.  Zero-valued samples get a floored log density so they
    do not sink the likelihood."""
    n = len(xs)
    ks = np.array([b.phases for b in branches], dtype=float)
    mus = np.array([b.rate for b in branches])
    ws = np.array([b.weight for b in branches])
    pos = xs > 0.0
    log_x = np.where(pos, np.log(np.where(pos, xs, 1.0)), 0.0)
    prev_ll = None
    for _ in range(cfg.em_iterations):
        log_f = (
            ks[None, :] * np.log(mus)[None, :]
            + (ks[None, :] - 1.0) * log_x[:, None]
            - mus[None, :] * xs[:, None]
            - gammaln(ks)[None, :]
        )
        log_f[~pos, :] = np.where(ks == 1.0, np.log(mus), _LOG_DENSITY_FLOOR)[None, :]
        log_f = np.maximum(log_f, _LOG_DENSITY_FLOOR)
        weighted = log_f + np.log(np.maximum(ws, 1e-300))[None, :]
        norm = logsumexp(weighted, axis=1)
        ll = float(norm.sum())
        resp = np.exp(weighted - norm[:, None])
        mass = resp.sum(axis=0)
        ws = mass / n
        weighted_x = resp.T @ xs
        nonzero = weighted_x > 0.0
        mus = np.where(nonzero, ks * mass / np.where(nonzero, weighted_x, 1.0), mus)
        if prev_ll is not None and abs(ll - prev_ll) <= cfg.em_tolerance * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll
    keep = ws > 1e-12
    ws = ws[keep] / ws[keep].sum()
    return [
        ErlangBranch(float(w), int(k), float(mu))
        for w, k, mu in zip(ws, ks[keep], mus[keep])
    ]


def _cluster_fit(xs: np.ndarray, clusters: int, cfg: FitConfig) -> HyperErlangPhd:
    segments = _kmeans_segments(xs, clusters)
    branches = _moment_branches(segments, len(xs), cfg.max_phases)
    if cfg.em_iterations > 0:
        branches = _em_refine(xs, branches, cfg)
    return HyperErlangPhd(tuple(branches))


def fit_holding_phd(holdings, cfg: FitConfig) -> HyperErlangPhd:
    """Fit a hyper-Erlang distribution to a holding-time sample.

    Tries cluster counts from ``min_clusters`` to ``max_clusters``; each
    candidate is scored with ``cdf_distance``.  Score improvements
    accumulate, and the search stops early after ``max_steps`` candidates
    in a row without the cumulative improvement reaching ``alpha``.  The
    first candidate is always accepted and contributes nothing to the
    cumulative improvement.  The best-scoring candidate wins.

    Raises DegenerateHoldingSample when every holding time is zero.
    """
    sample = np.asarray(holdings, dtype=float)
    if sample.size == 0:
        raise InvalidModelError("empty holding-time sample")
    if np.any(sample < 0.0) or not np.all(np.isfinite(sample)):
        raise InvalidModelError("holding times must be finite and >= 0")
    if sample.max() <= 0.0:
        raise DegenerateHoldingSample("all holding times are zero")
    xs = np.sort(sample)
    if xs[0] == xs[-1]:
        # single distinct positive value: best feasible point-mass stand-in
        phases = cfg.max_phases
        return HyperErlangPhd((ErlangBranch(1.0, phases, phases / float(xs[0])),))

    best: HyperErlangPhd | None = None
    min_err = math.inf
    improvement = 0.0
    steps = 0
    clusters = cfg.min_clusters
    while clusters <= cfg.max_clusters and steps <= cfg.max_steps:
        candidate = _cluster_fit(xs, clusters, cfg)
        err = cdf_distance(xs, candidate)
        if err < min_err:
            best = candidate
            if math.isfinite(min_err):
                improvement += min_err - err
            min_err = err
        if improvement >= cfg.alpha:
            improvement = 0.0
            steps = 0
        else:
            steps += 1
        clusters += 1
    assert best is not None
    return best


def cdf_distance(sample, phd: HyperErlangPhd) -> float:
    """Mean absolute difference between the midpoint empirical CDF of the
    sample and the fitted CDF, over the sorted sample points."""
    xs = np.sort(np.asarray(sample, dtype=float))
    n = len(xs)
    if n == 0:
        raise InvalidModelError("empty sample")
    mids = (np.arange(1, n + 1) - 0.5) / n
    return float(np.mean(np.abs(mids - np.asarray(phd.cdf(xs)))))


def correlation_matrix(observations) -> np.ndarray:
    """Pearson correlation coefficients between paired component samples.

    ``observations`` is a mapping from component label to an equal-length
    sample, or a 2-D array with one row per component.  A zero-variance
    series has no defined correlation and raises ValueError.
    """
    if isinstance(observations, np.ndarray):
        data = np.asarray(observations, dtype=float)
        names = [str(i) for i in range(data.shape[0])]
    else:
        names = list(observations)
        data = np.asarray([np.asarray(observations[k], dtype=float) for k in names])
    if data.ndim != 2 or data.shape[1] < 2:
        raise InvalidModelError("need at least two paired observations per series")
    variances = data.var(axis=1)
    for name, var in zip(names, variances):
        if var <= 0.0:
            raise ValueError(f"undefined correlation: series {name!r} has zero variance")
    out = np.corrcoef(data)
    np.fill_diagonal(out, 1.0)
    return out
