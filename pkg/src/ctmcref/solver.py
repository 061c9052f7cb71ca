"""Transient and unbounded until probabilities via uniformization.

Bounded until over [0, b] makes goal states and states violating the left
operand absorbing, then accumulates the probability mass sitting in goal
states at time b.  The transient distribution is computed with
uniformization: Poisson-weighted powers of the uniformized jump matrix,
truncated when the remaining Poisson tail drops below ``POISSON_TAIL``.
Intervals with a positive lower bound use the standard two-phase scheme:
a transient pass constrained to the left operand up to the lower bound,
followed by a bounded (or unbounded) pass for the remainder.

Open and closed finite bounds are treated identically: sojourn
distributions are continuous, so boundary events have probability zero.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse
from scipy.special import gammaln, logsumexp

from .ctmc import Ctmc, StateFormula, UntilProperty

POISSON_TAIL = 1e-10
MAX_POISSON_TERMS = 1_000_000
UNIFORMIZATION_SLACK = 1.02
_ZERO_TOL = 1e-12


class SolverError(RuntimeError):
    """Numerical failure inside the probabilistic solver."""


def poisson_terms(mu: float, tail: float = POISSON_TAIL) -> np.ndarray:
    """Poisson(mu) weights for n = 0..N, with N chosen so the tail mass
    beyond N is at most ``tail``.  Computed in log space.

    Raises SolverError when more than MAX_POISSON_TERMS terms would be
    needed.
    """
    if mu < 0 or not math.isfinite(mu):
        raise SolverError(f"invalid uniformization exponent {mu!r}")
    if mu == 0.0:
        return np.ones(1)
    hi = int(mu + 12.0 * math.sqrt(mu) + 30.0)
    while True:
        hi = min(hi, MAX_POISSON_TERMS)
        n = np.arange(hi + 1, dtype=float)
        log_w = n * math.log(mu) - mu - gammaln(n + 1.0)
        w = np.exp(log_w)
        cum = np.cumsum(w)
        cut = int(np.searchsorted(cum, 1.0 - tail))
        if cut < hi:
            return w[: cut + 1]
        if hi >= MAX_POISSON_TERMS:
            raise SolverError(
                f"Poisson truncation needs more than {MAX_POISSON_TERMS} terms "
                f"(uniformized exponent q*t = {mu:.4g}); refusing the query"
            )
        hi *= 2


def _uniformized(model: Ctmc, frozen: np.ndarray | None) -> tuple[float, sparse.csr_array]:
    """Uniformization rate and transition matrix, with ``frozen`` states made
    absorbing.  Returns q = 0 when every remaining state is absorbing."""
    n = len(model.states)
    Q = model.rates.copy()
    if frozen is not None and frozen.any():
        Q[frozen, :] = 0.0
    exits = -np.diag(Q)
    q = UNIFORMIZATION_SLACK * float(exits.max(initial=0.0))
    if q <= 0.0:
        return 0.0, sparse.eye_array(n, format="csr")
    P = (sparse.eye_array(n, format="csr") + sparse.csr_array(Q) / q).tocsr()
    return q, P


def transient_distribution(
    model: Ctmc, dist: np.ndarray, t: float, frozen: np.ndarray | None = None
) -> np.ndarray:
    """State distribution at time t, starting from ``dist``, in the chain
    with ``frozen`` states made absorbing."""
    if t < 0:
        raise SolverError(f"negative time {t}")
    q, P = _uniformized(model, frozen)
    if q == 0.0 or t == 0.0:
        return np.asarray(dist, dtype=float).copy()
    w = poisson_terms(q * t)
    v = np.asarray(dist, dtype=float).copy()
    out = w[0] * v
    for k in range(1, len(w)):
        v = v @ P
        out += w[k] * v
    return out


def bounded_until_curve(
    model: Ctmc,
    dist: np.ndarray,
    phi1_mask: np.ndarray,
    phi2_mask: np.ndarray,
    times: np.ndarray,
) -> np.ndarray:
    """P[ phi1 U^[0,b] phi2 ] from distribution ``dist`` for every b in
    ``times`` (ascending, >= 0).  One uniformization pass serves all time
    points: the goal mass after n jumps is a scalar series, and each time
    point re-weights the series with its own Poisson terms."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.zeros(0)
    if np.any(times < 0):
        raise SolverError("negative time bound")
    frozen = phi2_mask | ~phi1_mask
    q, P = _uniformized(model, frozen)
    start = np.asarray(dist, dtype=float)
    if q == 0.0:
        return np.full(times.shape, float(start[phi2_mask].sum()))
    t_max = float(times.max())
    n_terms = len(poisson_terms(q * t_max)) if t_max > 0 else 1
    goal = phi2_mask.astype(float)
    series = np.empty(n_terms)
    v = start.copy()
    series[0] = v @ goal
    for k in range(1, n_terms):
        v = v @ P
        series[k] = v @ goal
    values = np.empty(times.shape)
    for i, t in enumerate(times):
        if t == 0.0:
            values[i] = series[0]
            continue
        w = poisson_terms(q * float(t))
        values[i] = w @ series[: len(w)]
    return np.clip(values, 0.0, 1.0)


def unbounded_until(
    model: Ctmc, phi1: StateFormula, phi2: StateFormula
) -> tuple[np.ndarray, float]:
    """Per-state probabilities of phi1 U phi2 and the initial-weighted value.

    Solved on the embedded jump chain: goal states get probability 1,
    states that cannot reach a goal state through phi1 states get 0, and
    the remainder solve a linear reachability system.  The result depends
    only on jump probabilities, not on the magnitudes of the rates.
    """
    n = len(model.states)
    yes = model.sat_mask(phi2)
    allowed = model.sat_mask(phi1) & ~yes & ~model.absorbing_mask
    P = model.jump_matrix
    positive = P > 0.0

    reach = yes.copy()
    frontier = yes
    while frontier.any():
        feeders = allowed & ~reach & positive[:, frontier].any(axis=1)
        if not feeders.any():
            break
        reach |= feeders
        frontier = feeders

    values = np.zeros(n)
    values[yes] = 1.0
    unknown = reach & ~yes
    if unknown.any():
        idx = np.flatnonzero(unknown)
        A = np.eye(len(idx)) - P[np.ix_(idx, idx)]
        b = P[idx][:, yes].sum(axis=1)
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"reachability system is singular: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolverError("reachability system produced non-finite probabilities")
        values[idx] = np.clip(x, 0.0, 1.0)
    return values, float(model.initial @ values)


def transient_until(model: Ctmc, prop: UntilProperty) -> float:
    """P=? [ phi1 U^I phi2 ] from the model's initial distribution."""
    interval = prop.interval
    lower, upper = interval.lower, interval.upper
    phi1_mask = model.sat_mask(prop.phi1)
    phi2_mask = model.sat_mask(prop.phi2)

    if lower == 0.0:
        if math.isinf(upper):
            return unbounded_until(model, prop.phi1, prop.phi2)[1]
        value = bounded_until_curve(
            model, model.initial, phi1_mask, phi2_mask, np.array([upper])
        )[0]
        return float(value)

    # Two-phase: stay inside phi1 until the lower bound, then run the
    # remaining bounded (or unbounded) until from the surviving mass.
    dist = transient_distribution(model, model.initial, lower, frozen=~phi1_mask)
    dist = np.where(phi1_mask, dist, 0.0)
    if math.isinf(upper):
        per_state, _ = unbounded_until(model, prop.phi1, prop.phi2)
        return float(np.clip(dist @ per_state, 0.0, 1.0))
    value = bounded_until_curve(model, dist, phi1_mask, phi2_mask, np.array([upper - lower]))[0]
    return float(value)


def erlang_cdf(k: int, rate: float, x) -> float | np.ndarray:
    """CDF of the Erlang distribution with ``k`` phases of the given rate.

    Evaluated as one minus the Poisson partial sum, with the partial sum
    accumulated in log space so large phase counts (k of 10^4 and beyond)
    do not overflow.  ``x`` may be a scalar or an array.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"phase count must be a positive integer, got {k!r}")
    if not (rate > 0) or not math.isfinite(rate):
        raise ValueError(f"rate must be positive and finite, got {rate!r}")
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0) or not np.all(np.isfinite(x_arr)):
        raise ValueError("time must be finite and >= 0")
    scalar = x_arr.ndim == 0
    x_flat = np.atleast_1d(x_arr)
    out = np.zeros(x_flat.shape)
    pos = x_flat > 0.0
    if pos.any():
        ell = np.arange(k, dtype=float)
        m = rate * x_flat[pos]
        # chunk so the (points x k) log-term matrix stays small
        chunk = max(1, int(5_000_000 // k))
        vals = np.empty(m.shape)
        for start in range(0, len(m), chunk):
            mm = m[start : start + chunk, None]
            log_terms = ell[None, :] * np.log(mm) - mm - gammaln(ell + 1.0)[None, :]
            vals[start : start + chunk] = 1.0 - np.exp(logsumexp(log_terms, axis=1))
        out[pos] = np.clip(vals, 0.0, 1.0)
    if scalar:
        return float(out[0])
    return out
