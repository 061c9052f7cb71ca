"""Shared fixtures: the seven-state web-application chain and data helpers."""

from __future__ import annotations

import numpy as np
import pytest

from ctmcref import Ctmc, ObservationSet, UntilProperty
from ctmcref.ctmc import Atom, StateFormula, TimeInterval

P1_BRANCH = 0.3  # request-type split
P2_RETRY = 0.1  # weather retry probability

WEB_RATES = {
    "location": 9.62,
    "arrivals": 19.88,
    "departures": 19.46,
    "search": 1.85,
    "weather": 1.11,
    "traffic": 2.51,
}

WEB_STATES = (
    "location",
    "arrivals",
    "departures",
    "search",
    "weather",
    "traffic",
    "complete",
)


def make_web_model(rates: dict[str, float] | None = None) -> Ctmc:
    """Request-handling chain: location splits into an arrivals/search branch
    (probability P1_BRANCH) and a departures/weather branch with a retry
    loop, both joining at traffic before completing."""
    r = dict(WEB_RATES if rates is None else rates)
    return Ctmc.from_transitions(
        WEB_STATES,
        {"location": 1.0},
        {
            ("location", "arrivals"): P1_BRANCH * r["location"],
            ("location", "departures"): (1 - P1_BRANCH) * r["location"],
            ("arrivals", "search"): r["arrivals"],
            ("departures", "weather"): r["departures"],
            ("search", "traffic"): r["search"],
            ("weather", "departures"): P2_RETRY * r["weather"],
            ("weather", "traffic"): (1 - P2_RETRY) * r["weather"],
            ("traffic", "complete"): r["traffic"],
        },
    )


@pytest.fixture(scope="session")
def web_model() -> Ctmc:
    return make_web_model()


def prop_p1(t: float = 1.0) -> UntilProperty:
    return UntilProperty.eventually(Atom("complete"), TimeInterval(0.0, t))


def prop_p2_raw(t: float = 1.0) -> UntilProperty:
    return UntilProperty(
        StateFormula.negation(Atom("arrivals")), Atom("complete"), TimeInterval(0.0, t)
    )


def prop_p3_penalty() -> UntilProperty:
    # completion strictly after the three-second deadline
    return UntilProperty(
        StateFormula.negation(Atom("complete")),
        Atom("complete"),
        TimeInterval(3.0, np.inf, lower_open=True),
    )


def shifted_lognormal_observations(
    mean: float, n: int, rng: np.random.Generator, shift_fraction: float = 0.3, sigma: float = 0.8
) -> np.ndarray:
    """Durations with a hard minimum at ``shift_fraction * mean`` and a
    lognormal body matching the remaining mean."""
    shift = shift_fraction * mean
    body_mean = mean - shift
    mu = np.log(body_mean) - sigma * sigma / 2.0
    return shift + rng.lognormal(mu, sigma, size=n)


def make_web_observations(
    n: int, seed: int, shift_fraction: float = 0.3
) -> dict[str, ObservationSet]:
    rng = np.random.default_rng(seed)
    out = {}
    for name, rate in WEB_RATES.items():
        values = shifted_lognormal_observations(1.0 / rate, n, rng, shift_fraction)
        out[name] = ObservationSet(name, tuple(values))
    return out


def random_acyclic_model(
    n_states: int, seed: int, rate_range: tuple[float, float] = (0.5, 3.0)
) -> Ctmc:
    """Random DAG-shaped chain over n_states with the last state absorbing
    and reachable from the initial state."""
    rng = np.random.default_rng(seed)
    states = tuple(f"n{i}" for i in range(n_states))
    transitions: dict[tuple[str, str], float] = {}
    for i in range(n_states - 1):
        targets = {n_states - 1} if i == n_states - 2 else set()
        extra = rng.integers(1, min(3, n_states - i - 1) + 1)
        targets.update(int(t) for t in rng.integers(i + 1, n_states, size=extra))
        for j in targets:
            transitions[(states[i], states[j])] = float(rng.uniform(*rate_range))
    return Ctmc.from_transitions(states, {states[0]: 1.0}, transitions)
