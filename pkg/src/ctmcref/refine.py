"""Property-specific CTMC refinement.

States in the exclude set stay untouched.  Once-only states contribute
their delay to a deterministic time shift and have their holding times
replaced by fitted phase-type distributions.  Each together sequence gets
a shared Erlang delay chain in front of it (its joint delay modelled to a
configurable error bound and tail probability), members continue with
exponentials whose mean equals the mean holding time, and those members
then also receive fitted holding-time distributions.  Fits and delay
models are cached so refining further properties of the same model reuses
completed work.
"""

from __future__ import annotations

import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .classify import StatePartition, classify
from .ctmc import Ctmc, InvalidModelError, UntilProperty
from .fitting import (
    ComponentStats,
    DegenerateHoldingSample,
    FitConfig,
    HyperErlangPhd,
    ObservationSet,
    estimate_component_stats,
    fit_holding_phd,
)
from .solver import erlang_cdf

ROLE_DELAY = "delay-phase"
ROLE_PHD = "phd-phase"
ROLE_COPY = "copy"

_PURE_DELAY = object()  # cache sentinel for components whose holdings are all zero


@dataclass(frozen=True)
class RefinementConfig:
    """Refinement knobs: Erlang error bound, tail probability, delay
    threshold (delays below it are treated as zero), and fitting config."""

    epsilon: float = 0.1
    tail_probability: float = 0.05
    delay_threshold: float = 0.0
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon < 1.0):
            raise InvalidModelError(f"epsilon must be in (0, 1), got {self.epsilon!r}")
        if not (0.0 < self.tail_probability < 1.0):
            raise InvalidModelError(
                f"tail probability must be in (0, 1), got {self.tail_probability!r}"
            )
        if self.delay_threshold < 0.0:
            raise InvalidModelError("delay threshold must be >= 0")

    def key(self) -> str:
        return (
            f"e{self.epsilon!r}p{self.tail_probability!r}"
            f"d{self.delay_threshold!r}|{self.fit.key()}"
        )


def solve_erlang_phase_count(epsilon: float, p: float) -> int:
    """Smallest Erlang phase count k for which the chance of finishing the
    delay chain within a (1 - epsilon) fraction of the modelled delay is at
    most p.  Independent of the delay itself.  Found by doubling then
    bisection; the tail is evaluated with log-space partial sums."""
    if not (0.0 < epsilon < 1.0) or not (0.0 < p < 1.0):
        raise InvalidModelError("epsilon and p must both lie in (0, 1)")

    def tail(k: int) -> float:
        # completion probability of an Erlang-k chain with mean 1 at 1-epsilon
        return float(erlang_cdf(k, float(k), 1.0 - epsilon))

    if tail(1) <= p:
        return 1
    lo, hi = 1, 2
    while tail(hi) > p:
        lo = hi
        hi *= 2
        if hi > 1 << 40:
            raise InvalidModelError("phase count search diverged")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail(mid) <= p:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class ErlangDelayModel:
    """Parameters of one joint-delay chain: total delay, phase count, the
    common Erlang rate, and the adjusted member rates whose means equal the
    members' mean holding times."""

    members: tuple[str, ...]
    joint_delay: float
    phases: int
    erlang_rate: float
    adjusted_rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.phases < 1:
            raise InvalidModelError("delay model needs at least one phase")
        if len(self.adjusted_rates) != len(self.members):
            raise InvalidModelError("one adjusted rate per member required")
        if any(not (r > 0.0) or not math.isfinite(r) for r in self.adjusted_rates):
            raise InvalidModelError("adjusted rates must be positive and finite")
        mean = self.phases / self.erlang_rate
        if abs(mean - self.joint_delay) > 1e-12 * max(1.0, self.joint_delay):
            raise InvalidModelError(
                f"Erlang mean {mean!r} does not match joint delay {self.joint_delay!r}"
            )


def build_delay_model(
    members: tuple[str, ...],
    stats_by_state: Mapping[str, ComponentStats],
    cfg: RefinementConfig,
) -> ErlangDelayModel | None:
    """Joint-delay parameters for a together sequence, or None when every
    member delay falls below the threshold (no chain is inserted and the
    member rates stay unchanged)."""
    deltas = []
    adjusted = []
    for state in members:
        stats = stats_by_state[state]
        delta = stats.delay if stats.delay >= cfg.delay_threshold else 0.0
        load = stats.rate * delta
        if load >= 1.0:
            raise InvalidModelError(
                f"delay exceeds mean for component {state!r} "
                f"(rate * delay = {load:.6g}); observations are inconsistent"
            )
        deltas.append(delta)
        adjusted.append(stats.rate / (1.0 - load))
    joint = float(sum(deltas))
    if joint <= 0.0:
        return None
    k = solve_erlang_phase_count(cfg.epsilon, cfg.tail_probability)
    return ErlangDelayModel(tuple(members), joint, k, k / joint, tuple(adjusted))


# ---------------------------------------------------------------------------
# Structural rewrites
# ---------------------------------------------------------------------------


def _fresh_names(taken: set[str], base: str, count: int) -> list[str]:
    names = []
    suffix = ""
    while True:
        names = [f"{base}{suffix}{i}" for i in range(1, count + 1)]
        if not any(n in taken for n in names):
            return names
        suffix += "_"


def _check_together_structure(model: Ctmc, seq: tuple[str, ...]) -> None:
    """The rewrite assumes middle members have a unique inbound edge from the
    previous member and non-final members a unique outbound edge to the
    next; reject sequences that do not have that shape."""
    for state in seq:
        model.state_index(state)
    for j, state in enumerate(seq[:-1]):
        succ = set(model.successors(state))
        if succ != {seq[j + 1]}:
            raise InvalidModelError(
                f"state {state!r} is not followed only by {seq[j + 1]!r}; "
                "not a together sequence"
            )
    for j in range(1, len(seq)):
        i = model.state_index(seq[j])
        feeders = {
            model.states[k]
            for k in np.flatnonzero(model.rates[:, i] > 0.0)
            if k != i
        }
        if feeders != {seq[j - 1]}:
            raise InvalidModelError(
                f"state {seq[j]!r} has feeders {sorted(feeders)}; not a together sequence"
            )


def _apply_joint_delay(
    model: Ctmc,
    seq: tuple[str, ...],
    stats_by_state: Mapping[str, ComponentStats],
    cfg: RefinementConfig,
    delay_model: ErlangDelayModel | None,
) -> tuple[Ctmc, tuple[str, ...]]:
    _check_together_structure(model, seq)
    if delay_model is None:
        return model, ()
    head, last = seq[0], seq[-1]
    member_set = set(seq)
    k = delay_model.phases
    lam_e = delay_model.erlang_rate
    z_names = _fresh_names(set(model.states), f"{head}__d", k)

    last_i = model.state_index(last)
    last_exit = float(model.exit_rates[last_i])
    if last_exit <= 0.0:
        raise InvalidModelError(f"final sequence state {last!r} is absorbing")

    transitions: dict[tuple[str, str], float] = {}
    for (u, v), rate in model.transitions().items():
        if u in member_set:
            continue  # member rows are rebuilt below
        if v in member_set:
            if v != head:
                raise InvalidModelError(
                    f"outside state {u!r} feeds mid-sequence state {v!r}"
                )
            transitions[(u, z_names[0])] = rate
        else:
            transitions[(u, v)] = rate
    chain = list(z_names) + [head]
    for a, b in zip(chain[:-1], chain[1:]):
        transitions[(a, b)] = lam_e
    for j in range(len(seq) - 1):
        transitions[(seq[j], seq[j + 1])] = delay_model.adjusted_rates[j]
    adj_last = delay_model.adjusted_rates[-1]
    for v in model.successors(last):
        jump = float(model.rates[last_i, model.state_index(v)]) / last_exit
        if v == head:
            transitions[(last, z_names[0])] = jump * adj_last
        elif v in member_set:
            raise InvalidModelError(f"final state {last!r} feeds mid-sequence state {v!r}")
        else:
            transitions[(last, v)] = jump * adj_last

    states: list[str] = []
    for s in model.states:
        if s == head:
            states.extend(z_names)
            states.extend(seq)
        elif s not in member_set:
            states.append(s)
    initial = {s: float(p) for s, p in zip(model.states, model.initial) if p > 0.0}
    if head in initial:
        initial[z_names[0]] = initial.pop(head)
    labels = {s: set(a) for s, a in model.labels.items() if s not in z_names}
    refined = Ctmc.from_transitions(states, initial, transitions, labels, model.time_unit)
    return refined, tuple(z_names)


def apply_joint_delay_model(
    model: Ctmc,
    seq: tuple[str, ...],
    stats_by_state: Mapping[str, ComponentStats],
    cfg: RefinementConfig,
) -> Ctmc:
    """Insert the joint-delay Erlang chain for one together sequence.

    Incoming edges are redirected to the first delay state, the chain runs
    at the common Erlang rate into the first member, members proceed at
    their adjusted rates, and the final member's outgoing edges keep their
    jump probabilities at the adjusted rate (a back edge to the sequence
    head re-enters the delay chain).  When every member delay is below the
    threshold the model is returned unchanged.
    """
    delay_model = build_delay_model(seq, stats_by_state, cfg)
    return _apply_joint_delay(model, seq, stats_by_state, cfg, delay_model)[0]


def _apply_phd(model: Ctmc, target: str, phd: HyperErlangPhd) -> tuple[Ctmc, tuple[str, ...]]:
    t_i = model.state_index(target)
    exit_rate = float(model.exit_rates[t_i])
    if exit_rate <= 0.0:
        raise InvalidModelError(f"state {target!r} is absorbing; cannot replace its holding time")
    n_ph = phd.n_phases
    names = _fresh_names(set(model.states), f"{target}__p", n_ph)
    pi0 = phd.initial_vector()
    d0 = phd.generator_block()
    d1 = phd.exit_vector()

    transitions: dict[tuple[str, str], float] = {}
    for (u, v), rate in model.transitions().items():
        if u == target:
            continue
        if v == target:
            for i in range(n_ph):
                if pi0[i] > 0.0:
                    transitions[(u, names[i])] = rate * pi0[i]
        else:
            transitions[(u, v)] = rate
    for i in range(n_ph):
        for j in range(n_ph):
            if i != j and d0[i, j] > 0.0:
                transitions[(names[i], names[j])] = float(d0[i, j])
    out_jumps = [
        (v, float(model.rates[t_i, model.state_index(v)]) / exit_rate)
        for v in model.successors(target)
    ]
    for i in range(n_ph):
        if d1[i] > 0.0:
            for v, jump in out_jumps:
                transitions[(names[i], v)] = float(d1[i]) * jump

    states: list[str] = []
    for s in model.states:
        if s == target:
            states.extend(names)
        else:
            states.append(s)
    initial = {s: float(p) for s, p in zip(model.states, model.initial) if p > 0.0}
    init_target = initial.pop(target, 0.0)
    if init_target > 0.0:
        for i in range(n_ph):
            if pi0[i] > 0.0:
                initial[names[i]] = init_target * pi0[i]
    target_props = set(model.labels.get(target, frozenset())) | {target}
    labels = {s: set(a) for s, a in model.labels.items() if s != target}
    for name in names:
        labels[name] = target_props
    refined = Ctmc.from_transitions(states, initial, transitions, labels, model.time_unit)
    return refined, tuple(names)


def apply_phd_replacement(model: Ctmc, target: str, phd: HyperErlangPhd) -> Ctmc:
    """Replace one transient state with the transient states of a fitted
    phase-type distribution.

    Incoming rates split across branch entry phases by the initial vector,
    internal rates follow the generator block, and exit rates scale the
    exit vector by the original jump probabilities, so the embedded jump
    behaviour out of the replaced block matches the original state.  The
    phases inherit the target's propositions, including its own name.
    """
    return _apply_phd(model, target, phd)[0]


def _elide_state(model: Ctmc, target: str) -> Ctmc:
    """Remove a transient state, rewiring incoming edges to its successors
    by jump probability.  Exact for zero-holding (pure delay) states: the
    visit takes no time and the jump behaviour is preserved."""
    t_i = model.state_index(target)
    exit_rate = float(model.exit_rates[t_i])
    if exit_rate <= 0.0:
        raise InvalidModelError(f"cannot elide absorbing state {target!r}")
    out_jumps = [
        (v, float(model.rates[t_i, model.state_index(v)]) / exit_rate)
        for v in model.successors(target)
    ]
    transitions: dict[tuple[str, str], float] = {}
    for (u, v), rate in model.transitions().items():
        if u == target:
            continue
        if v == target:
            for w, jump in out_jumps:
                if w == u:
                    continue  # an instant round trip is an unobservable self-jump
                transitions[(u, w)] = transitions.get((u, w), 0.0) + rate * jump
        else:
            transitions[(u, v)] = transitions.get((u, v), 0.0) + rate
    states = tuple(s for s in model.states if s != target)
    initial = {s: float(p) for s, p in zip(model.states, model.initial) if p > 0.0}
    init_target = initial.pop(target, 0.0)
    if init_target > 0.0:
        for w, jump in out_jumps:
            initial[w] = initial.get(w, 0.0) + init_target * jump
    labels = {s: set(a) for s, a in model.labels.items() if s != target}
    return Ctmc.from_transitions(states, initial, transitions, labels, model.time_unit)


# ---------------------------------------------------------------------------
# Cache and the full per-property pipeline
# ---------------------------------------------------------------------------


class RefinementCache:
    """Cross-property cache of fitted distributions and delay models.

    Entries are keyed by component (or member tuple), role, and a hash of
    the configuration, so granularity changes never reuse stale fits.
    Writers are synchronized per key; a value is computed at most once.
    """

    def __init__(self) -> None:
        self._master = threading.Lock()
        self._locks: dict[tuple, threading.Lock] = {}
        self._values: dict[tuple, object] = {}
        self._hits: Counter = Counter()
        self._misses: Counter = Counter()

    def get_or_compute(self, kind: str, key: tuple, compute: Callable[[], object]) -> object:
        full = (kind,) + key
        with self._master:
            if full in self._values:
                self._hits[kind] += 1
                return self._values[full]
            lock = self._locks.setdefault(full, threading.Lock())
        with lock:
            with self._master:
                if full in self._values:
                    self._hits[kind] += 1
                    return self._values[full]
            value = compute()
            with self._master:
                self._values[full] = value
                self._misses[kind] += 1
        return value

    def hits(self, kind: str | None = None) -> int:
        return self._hits[kind] if kind else sum(self._hits.values())

    def misses(self, kind: str | None = None) -> int:
        return self._misses[kind] if kind else sum(self._misses.values())

    @property
    def fit_count(self) -> int:
        """Number of holding-time fits actually performed."""
        return self._misses["holding-fit"]


@dataclass(frozen=True)
class RefinedModel:
    """Refined chain plus the deterministic shift contributed by once-only
    delays.  Provenance maps every refined state back to its source
    component; components whose holdings were all zero are listed in
    ``elided`` (they survive only as part of the time shift)."""

    ctmc: Ctmc
    time_shift: float
    provenance: Mapping[str, tuple[str, str]]
    elided: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.time_shift < 0.0 or not math.isfinite(self.time_shift):
            raise InvalidModelError(f"time shift must be finite and >= 0, got {self.time_shift!r}")
        object.__setattr__(self, "provenance", dict(self.provenance))


def refine_for_property(
    model: Ctmc,
    prop: UntilProperty,
    observations: Mapping[str, ObservationSet],
    cfg: RefinementConfig,
    cache: RefinementCache | None = None,
    partition: StatePartition | None = None,
) -> RefinedModel:
    """Classify the model for the property and refine only what matters.

    Exclude-set states stay untouched.  Once-only states add their delay to
    the time shift and have their holding times replaced by fitted
    distributions; a once-only component whose holdings are all zero is a
    pure delay and is removed exactly.  Together sequences get a joint
    Erlang delay chain and per-member holding-time replacements.  Member
    delays below the threshold contribute nothing to delay modelling and
    their fits use the raw durations.
    """
    if cache is None:
        cache = RefinementCache()
    if partition is None:
        partition = classify(model, prop)
    cfg_key = cfg.key()
    fit_key = cfg.fit.key()

    targets = sorted(partition.once_only | partition.together_states,
                     key=model.state_index)
    missing = [s for s in targets if s not in observations]
    if missing:
        raise InvalidModelError(
            f"no observations for component(s) {', '.join(repr(s) for s in missing)}"
        )
    stats = {s: estimate_component_stats(observations[s]) for s in targets}

    def fit_entry(state: str, use_delta: bool) -> object:
        sample = (
            stats[state].holdings_array()
            if use_delta
            else observations[state].array()
        )
        try:
            return fit_holding_phd(sample, cfg.fit)
        except DegenerateHoldingSample:
            return _PURE_DELAY

    current = model
    provenance: dict[str, tuple[str, str]] = {}
    elided: list[str] = []
    shift = 0.0

    for seq in partition.together:
        seq_stats = {s: stats[s] for s in seq}
        delay_model = cache.get_or_compute(
            "delay-model",
            (seq, cfg_key),
            lambda: build_delay_model(seq, seq_stats, cfg),
        )
        current, z_names = _apply_joint_delay(current, seq, seq_stats, cfg, delay_model)
        seq_label = "+".join(seq)
        for z in z_names:
            provenance[z] = (seq_label, ROLE_DELAY)
        for member in seq:
            use_delta = stats[member].delay >= cfg.delay_threshold
            fitted = cache.get_or_compute(
                "holding-fit", (member, use_delta, fit_key),
                lambda m=member, u=use_delta: fit_entry(m, u),
            )
            if fitted is _PURE_DELAY:
                # unreachable when the delay was counted (the adjusted rate
                # check fails first); raw durations are strictly positive
                raise InvalidModelError(
                    f"component {member!r} in a together sequence has zero holdings"
                )
            current, ph_names = _apply_phd(current, member, fitted)
            for name in ph_names:
                provenance[name] = (member, ROLE_PHD)

    for state in (s for s in model.states if s in partition.once_only):
        use_delta = stats[state].delay >= cfg.delay_threshold
        if use_delta:
            shift += stats[state].delay
        fitted = cache.get_or_compute(
            "holding-fit", (state, use_delta, fit_key),
            lambda s=state, u=use_delta: fit_entry(s, u),
        )
        if fitted is _PURE_DELAY:
            current = _elide_state(current, state)
            elided.append(state)
        else:
            current, ph_names = _apply_phd(current, state, fitted)
            for name in ph_names:
                provenance[name] = (state, ROLE_PHD)

    for state in current.states:
        if state not in provenance:
            provenance[state] = (state, ROLE_COPY)
    return RefinedModel(current, shift, provenance, tuple(elided))
