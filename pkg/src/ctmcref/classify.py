"""Property-directed partition of CTMC states.

For a given until property, states fall into three kinds: states whose
sojourn times provably cannot affect the property value (exclude set),
states visited exactly once on every satisfying path (once-only set), and
maximal chains of states that can only occur as complete ordered sequences
(together sequences).  Downstream refinement treats each kind differently.

Probability equality and zero tests use an absolute tolerance of 1e-9;
the linear solver cannot produce exact equality in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctmc import Atom, Ctmc, InvalidModelError, StateFormula, UntilProperty
from .solver import unbounded_until

PROBABILITY_TOL = 1e-9


@dataclass(frozen=True)
class StatePartition:
    """Disjoint cover of the state set for one property."""

    exclude: frozenset[str]
    once_only: frozenset[str]
    together: tuple[tuple[str, ...], ...]
    prop: UntilProperty

    def __post_init__(self) -> None:
        groups = [set(self.exclude), set(self.once_only)]
        groups.extend(set(seq) for seq in self.together)
        covered: set[str] = set()
        total = 0
        for group in groups:
            covered |= group
            total += len(group)
        if total != len(covered):
            raise InvalidModelError("partition groups overlap")
        for seq in self.together:
            if len(seq) == 0:
                raise InvalidModelError("empty together sequence")

    @property
    def together_states(self) -> frozenset[str]:
        return frozenset(s for seq in self.together for s in seq)

    def all_states(self) -> frozenset[str]:
        return self.exclude | self.once_only | self.together_states


def _without_state(state: str, phi1: StateFormula) -> StateFormula:
    return StateFormula.negation(Atom(state)) & phi1


def exclude_set(model: Ctmc, prop: UntilProperty) -> frozenset[str]:
    """States whose removal from the allowed prefix leaves the unbounded
    until probability unchanged; their transition times cannot influence
    the property."""
    baseline = unbounded_until(model, prop.phi1, prop.phi2)[1]
    out = set()
    for state in model.states:
        restricted = unbounded_until(model, _without_state(state, prop.phi1), prop.phi2)[1]
        if abs(restricted - baseline) <= PROBABILITY_TOL:
            out.add(state)
    return frozenset(out)


def once_only_set(model: Ctmc, prop: UntilProperty, exclude: frozenset[str]) -> frozenset[str]:
    """States outside the exclude set that appear exactly once on every
    satisfying path: the property has positive probability, avoiding the
    state drops it to zero, and no successor can lead back to the state
    without passing through the exclude set."""
    baseline = unbounded_until(model, prop.phi1, prop.phi2)[1]
    if baseline <= PROBABILITY_TOL:
        return frozenset()
    avoiding_exclude = StateFormula.avoiding(exclude)
    out = set()
    for state in model.states:
        if state in exclude:
            continue
        avoided = unbounded_until(model, _without_state(state, prop.phi1), prop.phi2)[1]
        if avoided > PROBABILITY_TOL:
            continue
        back_to_state, _ = unbounded_until(model, avoiding_exclude, Atom(state))
        revisit = False
        for succ in model.successors(state):
            if back_to_state[model.state_index(succ)] > PROBABILITY_TOL:
                revisit = True
                break
        if not revisit:
            out.add(state)
    return frozenset(out)


def _predecessor(
    model: Ctmc, state: str, pool: set[str]
) -> str | None:
    """Unique feeder of ``state`` from the pool: its only outgoing edge goes
    to ``state`` and no other state feeds ``state``.  States with initial
    probability cannot be extended to the left."""
    i = model.state_index(state)
    if model.initial[i] > 0.0:
        return None
    for cand in model.states:  # ascending declaration order
        if cand not in pool:
            continue
        c = model.state_index(cand)
        if model.rates[c, i] <= 0.0:
            continue
        others = [k for k in range(len(model.states)) if k not in (i, c)]
        if all(model.rates[c, k] <= 0.0 and model.rates[k, i] <= 0.0 for k in others):
            return cand
    return None


def _successor(model: Ctmc, state: str, pool: set[str]) -> str | None:
    """Unique follower of ``state`` from the pool: the only outgoing edge of
    ``state`` targets it, nothing else reaches it, and it carries no
    initial probability."""
    i = model.state_index(state)
    for cand in model.states:
        if cand not in pool:
            continue
        c = model.state_index(cand)
        if model.initial[c] > 0.0 or model.rates[i, c] <= 0.0:
            continue
        others = [k for k in range(len(model.states)) if k not in (i, c)]
        if all(model.rates[i, k] <= 0.0 and model.rates[k, c] <= 0.0 for k in others):
            return cand
    return None


def together_sequences(
    model: Ctmc, exclude: frozenset[str], once_only: frozenset[str]
) -> tuple[tuple[str, ...], ...]:
    """Group the remaining states into maximal chains that always occur as
    complete ordered sequences.

    Each sequence is seeded from the lowest-index unallocated state and
    grown left and right while a unique predecessor or follower exists.
    The seeding order is fixed (ascending state index) so results are
    reproducible; the resulting set family does not depend on pick order.
    """
    pool = {s for s in model.states if s not in exclude and s not in once_only}
    sequences: list[tuple[str, ...]] = []
    while pool:
        seed = next(s for s in model.states if s in pool)
        chain = [seed]
        pool.remove(seed)
        grow_left = grow_right = True
        while (grow_left or grow_right) and pool:
            if grow_left:
                pred = _predecessor(model, chain[0], pool)
                if pred is None:
                    grow_left = False
                else:
                    chain.insert(0, pred)
                    pool.remove(pred)
            if grow_right:
                succ = _successor(model, chain[-1], pool)
                if succ is None:
                    grow_right = False
                else:
                    chain.append(succ)
                    pool.remove(succ)
        sequences.append(tuple(chain))
    return tuple(sequences)


def classify(model: Ctmc, prop: UntilProperty) -> StatePartition:
    """Full partition for one property: exclude, once-only, together."""
    excl = exclude_set(model, prop)
    once = once_only_set(model, prop, excl)
    seqs = together_sequences(model, excl, once)
    return StatePartition(excl, once, seqs, prop)
