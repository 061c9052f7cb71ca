"""Monte-Carlo simulation of timed runs, used as an independent oracle."""

from __future__ import annotations

import math
from bisect import bisect_right
from typing import Callable

import numpy as np

from .ctmc import Ctmc, InvalidModelError, TimedTrace


def _jump_tables(model: Ctmc) -> list[tuple[float, list[int], list[float]] | None]:
    """Per-state (exit rate, successor indices, cumulative jump probabilities);
    None for absorbing states."""
    tables: list[tuple[float, list[int], list[float]] | None] = []
    for i in range(len(model.states)):
        exit_rate = float(model.exit_rates[i])
        if exit_rate <= 0.0:
            tables.append(None)
            continue
        succ = [j for j in np.flatnonzero(model.rates[i] > 0.0) if j != i]
        probs = [float(model.rates[i, j]) / exit_rate for j in succ]
        cum = list(np.cumsum(probs))
        cum[-1] = 1.0
        tables.append((exit_rate, succ, cum))
    return tables


def simulate_trace(
    model: Ctmc,
    seed: int | np.random.Generator,
    stop: float | Callable[[str], bool] | None = None,
) -> TimedTrace:
    """Simulate one timed run of the chain.

    Sojourns are exponential with the state's exit rate and successors are
    drawn by jump probability.  ``stop`` is either a time horizon, a
    predicate on state names, or None to run until absorption.  Runs cut
    off by the horizon before absorbing are flagged censored.  Fixing the
    seed fixes the trace.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    horizon = stop if isinstance(stop, (int, float)) else math.inf
    predicate = stop if callable(stop) else None

    tables = _jump_tables(model)
    cum_init = np.cumsum(model.initial)
    cum_init[-1] = 1.0
    state = int(np.searchsorted(cum_init, rng.random(), side="right"))

    steps: list[tuple[str, float]] = []
    elapsed = 0.0
    while True:
        name = model.states[state]
        if predicate is not None and predicate(name):
            return TimedTrace(tuple(steps), name)
        table = tables[state]
        if table is None:
            return TimedTrace(tuple(steps), name)
        exit_rate, succ, cum = table
        sojourn = rng.exponential(1.0 / exit_rate)
        if elapsed + sojourn > horizon:
            return TimedTrace(tuple(steps), name, censored=True)
        steps.append((name, sojourn))
        elapsed += sojourn
        state = succ[bisect_right(cum, rng.random())]


def mean_absorption_time(model: Ctmc) -> float:
    """Expected time to absorption from the initial distribution, computed
    from expected visit counts on the embedded jump chain."""
    transient = ~model.absorbing_mask
    if not transient.any():
        return 0.0
    idx = np.flatnonzero(transient)
    P = model.jump_matrix[np.ix_(idx, idx)]
    # expected visits v solve v = pi_T + v P
    try:
        visits = np.linalg.solve(np.eye(len(idx)) - P.T, model.initial[idx])
    except np.linalg.LinAlgError as exc:
        raise InvalidModelError(f"absorption is not almost sure: {exc}") from exc
    means = 1.0 / model.exit_rates[idx]
    return float(visits @ means)
