"""Property sweeps, empirical property values from logs, and error areas.

Sweeps evaluate a property expression over a time grid.  On a refined
model the analysis interval is translated down by the model's
deterministic time shift (clamped at zero); when the shifted upper bound
is negative the value is exactly zero, with no solver call.  Empirical
values apply the same until semantics at trace level: a trace satisfies
the property when some prefix reaches a goal state at a cumulative time
inside the interval with every earlier state satisfying the left operand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ctmc import Ctmc, InvalidModelError, StateFormula, TimedTrace, TimeInterval, UntilProperty
from .fitting import ObservationSet
from .model_io import ModelSkeleton
from .properties import SWEEP_SYMBOL, IntervalSpec, PropertyTemplate, TermTemplate
from .refine import RefinedModel
from .solver import bounded_until_curve, transient_distribution, transient_until, unbounded_until

GRID_TOL = 1e-12


@dataclass(frozen=True)
class SweepResult:
    """Predicted property values over an ascending time grid."""

    property_id: str
    grid: np.ndarray
    values: np.ndarray
    model_kind: str  # "high-level" or "refined"

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or len(grid) == 0:
            raise InvalidModelError("sweep grid must be a nonempty 1-D array")
        if np.any(np.diff(grid) <= 0.0):
            raise InvalidModelError("sweep grid must be strictly increasing")
        if values.shape != grid.shape:
            raise InvalidModelError("one value per grid point required")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def curve(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid, self.values


@dataclass(frozen=True)
class ErrorReport:
    """Area between an actual and a predicted curve up to t_max."""

    error: float
    grid: np.ndarray
    abs_diff: np.ndarray
    t_max: float


def _as_template(prop) -> PropertyTemplate:
    if isinstance(prop, PropertyTemplate):
        return prop
    if isinstance(prop, UntilProperty):
        spec = IntervalSpec(
            prop.interval.lower,
            prop.interval.upper,
            prop.interval.lower_open,
            prop.interval.upper_open,
        )
        term = TermTemplate(1.0, prop.phi1, prop.phi2, spec)
        return PropertyTemplate((term,), str(prop))
    raise InvalidModelError(f"cannot sweep object of type {type(prop).__name__}")


def _split_model(model) -> tuple[Ctmc, float, str]:
    if isinstance(model, RefinedModel):
        return model.ctmc, model.time_shift, "refined"
    if isinstance(model, Ctmc):
        return model, 0.0, "high-level"
    raise InvalidModelError(f"cannot verify object of type {type(model).__name__}")


def _term_sweep(ctmc: Ctmc, shift: float, term: TermTemplate, grid: np.ndarray) -> np.ndarray:
    """Values of one until term across the grid, shift already applied."""
    spec = term.interval
    lower_swept = spec.lower == SWEEP_SYMBOL
    upper_swept = spec.upper == SWEEP_SYMBOL

    if not lower_swept and not upper_swept:
        value = _single_value(ctmc, shift, term.phi1, term.phi2, spec)
        return np.full(grid.shape, value)

    if not lower_swept and upper_swept:
        lo = float(spec.lower)
        lo_shifted = max(lo - shift, 0.0)
        uppers = grid - shift
        valid = uppers >= lo_shifted
        values = np.zeros(grid.shape)
        if valid.any():
            phi1_mask = ctmc.sat_mask(term.phi1)
            phi2_mask = ctmc.sat_mask(term.phi2)
            if lo_shifted == 0.0:
                dist = np.asarray(ctmc.initial, dtype=float)
            else:
                dist = transient_distribution(ctmc, ctmc.initial, lo_shifted, frozen=~phi1_mask)
                dist = np.where(phi1_mask, dist, 0.0)
            horizons = uppers[valid] - lo_shifted
            values[valid] = bounded_until_curve(ctmc, dist, phi1_mask, phi2_mask, horizons)
        return values

    # swept lower bound: point-by-point (uncommon form)
    values = np.empty(grid.shape)
    for i, t in enumerate(grid):
        bound = IntervalSpec(
            t if lower_swept else spec.lower,
            t if upper_swept else spec.upper,
            spec.lower_open,
            spec.upper_open,
        )
        values[i] = _single_value(ctmc, shift, term.phi1, term.phi2, bound)
    return values


def _single_value(
    ctmc: Ctmc, shift: float, phi1: StateFormula, phi2: StateFormula, spec: IntervalSpec
) -> float:
    lo = float(spec.lower)
    up = float(spec.upper)
    if up < lo:
        return 0.0
    up_shifted = up - shift
    if up_shifted < 0.0:
        return 0.0  # the deterministic shift alone exceeds the bound
    lo_shifted = max(lo - shift, 0.0)
    interval = TimeInterval(lo_shifted, up_shifted, spec.lower_open, spec.upper_open)
    return transient_until(ctmc, UntilProperty(phi1, phi2, interval))


def evaluate_property_sweep(model, prop, grid) -> SweepResult:
    """Evaluate a property expression at every grid point.

    ``model`` is a chain or a refined model (whose time shift translates
    every analysis interval); ``prop`` is a property template (the sweep
    symbol T is replaced by each grid point) or a fixed until property.
    """
    template = _as_template(prop)
    ctmc, shift, kind = _split_model(model)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise InvalidModelError("grid must be a nonempty 1-D array")
    total = np.zeros(grid.shape)
    for term in template.terms:
        total = total + term.coefficient * _term_sweep(ctmc, shift, term, grid)
    return SweepResult(str(template), grid, total, kind)


# ---------------------------------------------------------------------------
# Empirical property values from timed traces
# ---------------------------------------------------------------------------


def _trace_props(state: str, labels: Mapping[str, Iterable[str]] | None) -> set[str]:
    props = {state}
    if labels is not None:
        props.update(labels.get(state, ()))
    return props


def _valid_arrivals(
    trace: TimedTrace,
    phi1: StateFormula,
    phi2: StateFormula,
    labels: Mapping[str, Iterable[str]] | None,
) -> list[float]:
    """Cumulative times at which the trace enters a goal state with every
    strictly earlier state satisfying phi1.  Once a state violates phi1,
    no later arrival can count."""
    arrivals: list[float] = []
    t = 0.0
    for state, duration in list(trace.steps) + [(trace.terminal, None)]:
        props = _trace_props(state, labels)
        if phi2.holds_for(props):
            arrivals.append(t)
        if not phi1.holds_for(props):
            break
        if duration is None:
            break
        t += duration
    return arrivals


def _in_interval(x: float, interval: TimeInterval) -> bool:
    lo_ok = x > interval.lower if interval.lower_open else x >= interval.lower
    hi_ok = x < interval.upper if interval.upper_open else x <= interval.upper
    return lo_ok and hi_ok


def empirical_property_value(
    traces: Sequence[TimedTrace],
    prop: UntilProperty,
    t: float | None = None,
    labels: Mapping[str, Iterable[str]] | None = None,
) -> float:
    """Fraction of traces satisfying the until property; ``t`` overrides
    the interval's upper bound."""
    if len(traces) == 0:
        raise InvalidModelError("no traces")
    interval = prop.interval
    if t is not None:
        interval = TimeInterval(interval.lower, t, interval.lower_open, interval.upper_open)
    hits = 0
    for trace in traces:
        arrivals = _valid_arrivals(trace, prop.phi1, prop.phi2, labels)
        if any(_in_interval(a, interval) for a in arrivals):
            hits += 1
    return hits / len(traces)


def empirical_curve(
    traces: Sequence[TimedTrace],
    prop,
    grid,
    labels: Mapping[str, Iterable[str]] | None = None,
) -> np.ndarray:
    """Empirical property values over a grid, mirroring the sweep."""
    template = _as_template(prop)
    grid = np.asarray(grid, dtype=float)
    n = len(traces)
    if n == 0:
        raise InvalidModelError("no traces")
    total = np.zeros(grid.shape)
    arrival_cache: dict[tuple[str, str], list[list[float]]] = {}
    for term in template.terms:
        key = (str(term.phi1), str(term.phi2))
        if key not in arrival_cache:
            arrival_cache[key] = [
                _valid_arrivals(tr, term.phi1, term.phi2, labels) for tr in traces
            ]
        arrivals = arrival_cache[key]
        spec = term.interval
        if not spec.swept:
            interval = spec.bind()
            frac = sum(
                1 for arr in arrivals if any(_in_interval(a, interval) for a in arr)
            ) / n
            total = total + term.coefficient * np.full(grid.shape, frac)
        elif spec.lower != SWEEP_SYMBOL:
            lo = float(spec.lower)
            first = np.array(
                [
                    min(
                        (a for a in arr if (a > lo if spec.lower_open else a >= lo)),
                        default=math.inf,
                    )
                    for arr in arrivals
                ]
            )
            first.sort()
            side = "left" if spec.upper_open else "right"
            counts = np.searchsorted(first, grid, side=side)
            total = total + term.coefficient * counts / n
        else:
            vals = np.array(
                [
                    sum(
                        1
                        for arr in arrivals
                        if any(_in_interval(a, spec.bind(t)) for a in arr)
                    )
                    / n
                    for t in grid
                ]
            )
            total = total + term.coefficient * vals
    return total


# ---------------------------------------------------------------------------
# Error area
# ---------------------------------------------------------------------------


def _as_curve(curve) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(curve, SweepResult):
        return curve.curve()
    grid, values = curve
    return np.asarray(grid, dtype=float), np.asarray(values, dtype=float)


def error_area(actual, predicted, t_max: float) -> ErrorReport:
    """Trapezoidal integral of |actual - predicted| from the grid start to
    t_max.  Both curves must live on the same grid, which must cover
    t_max; the curves are linearly interpolated when t_max falls between
    grid points."""
    a_grid, a_vals = _as_curve(actual)
    p_grid, p_vals = _as_curve(predicted)
    if a_grid.shape != p_grid.shape or not np.allclose(a_grid, p_grid, atol=GRID_TOL, rtol=0.0):
        raise InvalidModelError("curves are on different grids")
    if len(a_grid) < 1:
        raise InvalidModelError("empty curve")
    if t_max < a_grid[0] - GRID_TOL or t_max > a_grid[-1] + GRID_TOL:
        raise InvalidModelError(
            f"t_max {t_max!r} outside the curve grid [{a_grid[0]!r}, {a_grid[-1]!r}]"
        )
    t_max = float(min(t_max, a_grid[-1]))
    keep = a_grid <= t_max + GRID_TOL
    grid = a_grid[keep]
    diff = np.abs(a_vals - p_vals)[keep]
    if grid[-1] < t_max - GRID_TOL:
        a_end = np.interp(t_max, a_grid, a_vals)
        p_end = np.interp(t_max, p_grid, p_vals)
        grid = np.append(grid, t_max)
        diff = np.append(diff, abs(a_end - p_end))
    area = float(np.trapezoid(diff, grid)) if len(grid) > 1 else 0.0
    return ErrorReport(area, grid, diff, t_max)


# ---------------------------------------------------------------------------
# Transition-probability estimation and bootstrap simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionEstimates:
    """Per-edge transition probabilities estimated from trace frequencies.

    States that never departed in any trace have no defined outgoing
    probabilities and are flagged in ``undefined``."""

    probabilities: dict[tuple[str, str], float]
    counts: dict[tuple[str, str], int]
    departures: dict[str, int]
    undefined: frozenset[str]


def estimate_transition_probabilities(traces: Sequence[TimedTrace]) -> TransitionEstimates:
    if len(traces) == 0:
        raise InvalidModelError("no traces")
    counts: dict[tuple[str, str], int] = {}
    departures: dict[str, int] = {}
    observed: set[str] = set()
    for trace in traces:
        path = [s for s, _ in trace.steps] + [trace.terminal]
        observed.update(path)
        for src, dst in zip(path[:-1], path[1:]):
            counts[(src, dst)] = counts.get((src, dst), 0) + 1
            departures[src] = departures.get(src, 0) + 1
    probabilities = {
        (src, dst): c / departures[src] for (src, dst), c in counts.items()
    }
    undefined = frozenset(observed - set(departures))
    return TransitionEstimates(probabilities, counts, departures, undefined)


def _jump_structure(model) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    if isinstance(model, Ctmc):
        return model.states, np.asarray(model.initial, dtype=float), model.jump_matrix
    if isinstance(model, ModelSkeleton):
        return model.states, np.asarray(model.initial, dtype=float), model.jump_probs
    raise InvalidModelError(f"cannot simulate object of type {type(model).__name__}")


def bootstrap_traces(
    model,
    observations: Mapping[str, ObservationSet],
    n: int,
    seed: int | np.random.Generator,
) -> list[TimedTrace]:
    """Synthesize timed runs by walking the embedded jump chain and drawing
    each sojourn uniformly (with replacement) from the component's observed
    durations.  ``model`` may be a chain or a parsed skeleton; rates are
    not needed.  Deterministic for a fixed seed."""
    states, initial, jump = _jump_structure(model)
    if n < 1:
        raise InvalidModelError("need at least one trace")
    n_states = len(states)
    transient = jump.sum(axis=1) > 0.0

    reachable = initial > 0.0
    frontier = reachable.copy()
    while frontier.any():
        nxt = (jump[frontier] > 0.0).any(axis=0) & ~reachable
        reachable |= nxt
        frontier = nxt
    missing = [
        states[i]
        for i in range(n_states)
        if reachable[i] and transient[i] and states[i] not in observations
    ]
    if missing:
        raise InvalidModelError(
            "missing observations for component(s) "
            + ", ".join(repr(s) for s in missing)
        )

    durations = {
        i: observations[states[i]].array()
        for i in range(n_states)
        if reachable[i] and transient[i]
    }
    successors = {}
    for i in range(n_states):
        if transient[i] and reachable[i]:
            idx = np.flatnonzero(jump[i] > 0.0)
            cum = np.cumsum(jump[i][idx])
            cum[-1] = 1.0
            successors[i] = (idx, cum)
    cum_init = np.cumsum(initial)
    cum_init[-1] = 1.0

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    traces = []
    for _ in range(n):
        state = int(np.searchsorted(cum_init, rng.random(), side="right"))
        steps: list[tuple[str, float]] = []
        guard = 0
        while transient[state]:
            pool = durations[state]
            steps.append((states[state], float(pool[rng.integers(len(pool))])))
            idx, cum = successors[state]
            state = int(idx[np.searchsorted(cum, rng.random(), side="right")])
            guard += 1
            if guard > 1_000_000:
                raise InvalidModelError("trace did not absorb after 10^6 jumps")
        traces.append(TimedTrace(tuple(steps), states[state]))
    return traces
