"""Labelled continuous-time Markov chains and the transient until fragment.

A chain is a finite state set with an initial distribution, a generator
matrix of transition rates, and a labelling of states with atomic
propositions.  Every state additionally carries its own name as an implicit
proposition, so properties can refer to individual states directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

INITIAL_SUM_TOL = 1e-12
ROW_SUM_TOL = 1e-9


class InvalidModelError(ValueError):
    """A model, property, or trace violates a structural invariant."""


# ---------------------------------------------------------------------------
# State formulas
# ---------------------------------------------------------------------------


class StateFormula:
    """Boolean expression over atomic propositions (true, atom, not, and)."""

    def sat_mask(self, model: "Ctmc") -> np.ndarray:
        raise NotImplementedError

    def holds_for(self, props: frozenset[str] | set[str]) -> bool:
        """Evaluate against an explicit proposition set (used on traces)."""
        raise NotImplementedError

    # convenience constructors -------------------------------------------
    @staticmethod
    def true() -> "StateFormula":
        return TrueFormula()

    @staticmethod
    def atom(name: str) -> "StateFormula":
        return Atom(name)

    @staticmethod
    def negation(operand: "StateFormula") -> "StateFormula":
        return Not(operand)

    @staticmethod
    def conjunction(*parts: "StateFormula") -> "StateFormula":
        if not parts:
            return TrueFormula()
        out = parts[0]
        for part in parts[1:]:
            out = And(out, part)
        return out

    @staticmethod
    def avoiding(names: Iterable[str]) -> "StateFormula":
        """Conjunction of negated atoms: holds where none of ``names`` hold."""
        return StateFormula.conjunction(*(Not(Atom(n)) for n in sorted(names)))

    def __and__(self, other: "StateFormula") -> "StateFormula":
        return And(self, other)

    def __invert__(self) -> "StateFormula":
        return Not(self)


@dataclass(frozen=True)
class TrueFormula(StateFormula):
    def sat_mask(self, model: "Ctmc") -> np.ndarray:
        return np.ones(len(model.states), dtype=bool)

    def holds_for(self, props) -> bool:
        return True

    def __str__(self) -> str:
        return "true"


@dataclass(frozen=True)
class Atom(StateFormula):
    name: str

    def sat_mask(self, model: "Ctmc") -> np.ndarray:
        return model.proposition_mask(self.name)

    def holds_for(self, props) -> bool:
        return self.name in props

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Not(StateFormula):
    operand: StateFormula

    def sat_mask(self, model: "Ctmc") -> np.ndarray:
        return ~self.operand.sat_mask(model)

    def holds_for(self, props) -> bool:
        return not self.operand.holds_for(props)

    def __str__(self) -> str:
        return f"!{_parenthesize(self.operand)}"


@dataclass(frozen=True)
class And(StateFormula):
    left: StateFormula
    right: StateFormula

    def sat_mask(self, model: "Ctmc") -> np.ndarray:
        return self.left.sat_mask(model) & self.right.sat_mask(model)

    def holds_for(self, props) -> bool:
        return self.left.holds_for(props) and self.right.holds_for(props)

    def __str__(self) -> str:
        return f"{_parenthesize(self.left)} & {_parenthesize(self.right)}"


def _parenthesize(f: StateFormula) -> str:
    if isinstance(f, (And,)):
        return f"({f})"
    return str(f)


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeInterval:
    """Time window of an until property; bounds in model time units."""

    lower: float = 0.0
    upper: float = math.inf
    lower_open: bool = False
    upper_open: bool = False

    def __post_init__(self) -> None:
        if not (self.lower >= 0.0):
            raise InvalidModelError(f"interval lower bound must be >= 0, got {self.lower}")
        if math.isnan(self.upper) or self.lower > self.upper:
            raise InvalidModelError(f"malformed interval [{self.lower}, {self.upper}]")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.upper)

    def __str__(self) -> str:
        lo = "(" if self.lower_open else "["
        hi = ")" if self.upper_open else "]"
        up = "inf" if not self.bounded else f"{self.upper:g}"
        return f"{lo}{self.lower:g},{up}{hi}"


@dataclass(frozen=True)
class UntilProperty:
    """P=? [ phi1 U^I phi2 ]; ``eventually`` builds the F sugar (phi1 = true)."""

    phi1: StateFormula
    phi2: StateFormula
    interval: TimeInterval = field(default_factory=TimeInterval)

    @classmethod
    def eventually(cls, phi2: StateFormula, interval: TimeInterval | None = None) -> "UntilProperty":
        return cls(TrueFormula(), phi2, interval or TimeInterval())

    def with_interval(self, interval: TimeInterval) -> "UntilProperty":
        return UntilProperty(self.phi1, self.phi2, interval)

    def __str__(self) -> str:
        if isinstance(self.phi1, TrueFormula):
            return f"P=? [ F{self.interval} {_parenthesize(self.phi2)} ]"
        return f"P=? [ {_parenthesize(self.phi1)} U{self.interval} {_parenthesize(self.phi2)} ]"


@dataclass(frozen=True)
class PropertyExpr:
    """Linear combination of until probabilities, e.g. profit-style properties."""

    terms: tuple[tuple[float, UntilProperty], ...]

    def __post_init__(self) -> None:
        if len(self.terms) == 0:
            raise InvalidModelError("property expression needs at least one term")

    @classmethod
    def single(cls, prop: UntilProperty, coefficient: float = 1.0) -> "PropertyExpr":
        return cls(((coefficient, prop),))

    def __str__(self) -> str:
        parts = []
        for coef, prop in self.terms:
            parts.append(f"{coef:g}*{prop}" if coef != 1.0 else str(prop))
        return " + ".join(parts).replace("+ -", "- ")


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimedTrace:
    """One timed run: visited states with sojourn times, then the final state.

    ``censored`` marks runs cut off by a time horizon before absorption; the
    partial sojourn in the final state is not recorded.
    """

    steps: tuple[tuple[str, float], ...]
    terminal: str
    censored: bool = False

    def __post_init__(self) -> None:
        for state, sojourn in self.steps:
            if not (sojourn > 0.0) or not math.isfinite(sojourn):
                raise InvalidModelError(f"non-positive sojourn time {sojourn} in state {state}")

    @property
    def total_time(self) -> float:
        return float(sum(t for _, t in self.steps))

    def states(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.steps) + (self.terminal,)


# ---------------------------------------------------------------------------
# The chain itself
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ctmc:
    """Labelled CTMC: states, initial distribution, generator matrix, labels.

    ``rates`` is the full generator: off-diagonal entries are transition
    rates (1/time unit) and each diagonal entry is the negated row sum of
    the off-diagonal entries.
    """

    states: tuple[str, ...]
    initial: np.ndarray
    rates: np.ndarray
    labels: Mapping[str, frozenset[str]]
    time_unit: str = "seconds"

    def __post_init__(self) -> None:
        n = len(self.states)
        if n == 0:
            raise InvalidModelError("model has no states")
        if len(set(self.states)) != n:
            raise InvalidModelError("duplicate state identifiers")
        initial = np.asarray(self.initial, dtype=float)
        rates = np.asarray(self.rates, dtype=float)
        if initial.shape != (n,):
            raise InvalidModelError(f"initial vector shape {initial.shape} != ({n},)")
        if rates.shape != (n, n):
            raise InvalidModelError(f"rate matrix shape {rates.shape} != ({n}, {n})")
        if not np.all(np.isfinite(rates)):
            raise InvalidModelError("rate matrix contains non-finite entries")
        if np.any(initial < -INITIAL_SUM_TOL) or np.any(initial > 1.0 + INITIAL_SUM_TOL):
            raise InvalidModelError("initial probabilities outside [0, 1]")
        if abs(initial.sum() - 1.0) > INITIAL_SUM_TOL:
            raise InvalidModelError(f"initial probabilities sum to {initial.sum()!r}, not 1")
        off = rates.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < 0.0):
            raise InvalidModelError("negative off-diagonal transition rate")
        row_sums = off.sum(axis=1)
        bad = np.abs(np.diag(rates) + row_sums) > ROW_SUM_TOL * np.maximum(1.0, row_sums)
        if np.any(bad):
            idx = int(np.argmax(bad))
            raise InvalidModelError(
                f"diagonal of state {self.states[idx]} is {rates[idx, idx]!r}, "
                f"expected {-row_sums[idx]!r}"
            )
        unknown = set(self.labels) - set(self.states)
        if unknown:
            raise InvalidModelError(f"labels reference unknown states: {sorted(unknown)}")
        initial.setflags(write=False)
        rates.setflags(write=False)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "labels", {s: frozenset(a) for s, a in self.labels.items()})

    # -- construction ------------------------------------------------------

    @classmethod
    def from_transitions(
        cls,
        states: Iterable[str],
        initial: Mapping[str, float] | np.ndarray,
        transitions: Mapping[tuple[str, str], float],
        labels: Mapping[str, Iterable[str]] | None = None,
        time_unit: str = "seconds",
    ) -> "Ctmc":
        """Build a chain from sparse off-diagonal rates; diagonals are derived."""
        states = tuple(states)
        index = {s: i for i, s in enumerate(states)}
        n = len(states)
        if isinstance(initial, Mapping):
            init = np.zeros(n)
            for s, p in initial.items():
                if s not in index:
                    raise InvalidModelError(f"initial distribution names unknown state {s!r}")
                init[index[s]] = p
        else:
            init = np.asarray(initial, dtype=float)
        rates = np.zeros((n, n))
        for (src, dst), rate in transitions.items():
            if src not in index or dst not in index:
                raise InvalidModelError(f"transition {src!r} -> {dst!r} names unknown state")
            if src == dst:
                raise InvalidModelError(f"self-loop on state {src!r}")
            rates[index[src], index[dst]] = rate
        np.fill_diagonal(rates, -rates.sum(axis=1))
        lbl = {s: frozenset(v) for s, v in (labels or {}).items()}
        return cls(states, init, rates, lbl, time_unit)

    # -- derived views -----------------------------------------------------

    @cached_property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    def state_index(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise InvalidModelError(f"unknown state {name!r}") from None

    @cached_property
    def exit_rates(self) -> np.ndarray:
        off = self.rates.copy()
        np.fill_diagonal(off, 0.0)
        out = off.sum(axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def absorbing_mask(self) -> np.ndarray:
        out = self.exit_rates <= 0.0
        out.setflags(write=False)
        return out

    @cached_property
    def jump_matrix(self) -> np.ndarray:
        """Embedded jump chain; rows of absorbing states are all zero."""
        n = len(self.states)
        P = self.rates.copy()
        np.fill_diagonal(P, 0.0)
        exits = self.exit_rates
        transient = ~self.absorbing_mask
        P[transient] /= exits[transient, None]
        P[~transient] = 0.0
        P.setflags(write=False)
        return P

    def proposition_mask(self, name: str) -> np.ndarray:
        mask = np.zeros(len(self.states), dtype=bool)
        for i, s in enumerate(self.states):
            if s == name or name in self.labels.get(s, frozenset()):
                mask[i] = True
        return mask

    def sat_mask(self, formula: StateFormula) -> np.ndarray:
        return formula.sat_mask(self)

    def propositions_of(self, state: str) -> frozenset[str]:
        return self.labels.get(state, frozenset()) | {state}

    def transitions(self) -> dict[tuple[str, str], float]:
        out: dict[tuple[str, str], float] = {}
        n = len(self.states)
        for i in range(n):
            for j in range(n):
                if i != j and self.rates[i, j] > 0.0:
                    out[(self.states[i], self.states[j])] = float(self.rates[i, j])
        return out

    def successors(self, state: str) -> tuple[str, ...]:
        i = self.state_index(state)
        return tuple(self.states[j] for j in np.flatnonzero(self.rates[i] > 0.0) if j != i)

    def scale_exit_rates(self, factors: Mapping[str, float]) -> "Ctmc":
        """Multiply all outgoing rates of the given states; jump probabilities
        are unchanged."""
        rates = self.rates.copy()
        for state, factor in factors.items():
            if factor <= 0.0:
                raise InvalidModelError(f"scale factor for {state!r} must be positive")
            i = self.state_index(state)
            rates[i, :] *= factor
        return Ctmc(self.states, self.initial.copy(), rates, dict(self.labels), self.time_unit)


def embedded_jump_probability(model: Ctmc, source: str, target: str) -> float:
    """Probability that the next state after ``source`` is ``target``."""
    i = model.state_index(source)
    j = model.state_index(target)
    if i == j:
        raise InvalidModelError("jump probability requires distinct states")
    if model.absorbing_mask[i]:
        raise InvalidModelError(f"state {source!r} has no outgoing transitions")
    return float(model.rates[i, j] / model.exit_rates[i])
