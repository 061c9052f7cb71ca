"""Solver checks: analytic transients, unbounded until, Erlang CDF.

The Erlang CDF is cross-checked against the regularized incomplete gamma
function (an independent evaluation route in scipy) and against a
high-precision partial-sum oracle.
"""

import math

import numpy as np
import pytest
from scipy.special import gammainc

from ctmcref import Ctmc, SolverError, UntilProperty, erlang_cdf, transient_until, unbounded_until
from ctmcref.ctmc import Atom, StateFormula, TimeInterval
from ctmcref.solver import bounded_until_curve, poisson_terms

from conftest import make_web_model, prop_p1, prop_p2_raw, prop_p3_penalty, random_acyclic_model


def erlang_chain(k: int, rate: float) -> Ctmc:
    states = tuple(f"ph{i}" for i in range(k)) + ("absorb",)
    transitions = {(states[i], states[i + 1]): rate for i in range(k)}
    return Ctmc.from_transitions(states, {states[0]: 1.0}, transitions)


class TestTransientUntil:
    def test_single_exponential(self):
        m = erlang_chain(1, 1.0)
        p = transient_until(m, UntilProperty.eventually(Atom("absorb"), TimeInterval(0, 1.0)))
        assert p == pytest.approx(1.0 - math.exp(-1.0), abs=1e-10)
        assert p == pytest.approx(0.632121, abs=1e-6)

    def test_two_phase_erlang(self):
        m = erlang_chain(2, 2.0)
        p = transient_until(m, UntilProperty.eventually(Atom("absorb"), TimeInterval(0, 1.0)))
        assert p == pytest.approx(1.0 - 3.0 * math.exp(-2.0), abs=1e-10)
        assert p == pytest.approx(0.593994, abs=1e-6)

    def test_web_success_probability_at_one_second(self, web_model):
        # headline value for the request-handling chain
        assert transient_until(web_model, prop_p1(1.0)) == pytest.approx(0.415, abs=1e-3)

    def test_web_day_trip_at_two_seconds(self, web_model):
        raw = transient_until(web_model, prop_p2_raw(2.0))
        assert raw / 0.7 == pytest.approx(0.74, abs=5e-3)

    def test_deadline_overrun_term(self, web_model):
        # completion strictly after 3s equals one minus completion by 3s
        late = transient_until(web_model, prop_p3_penalty())
        by3 = transient_until(web_model, prop_p1(3.0))
        assert late == pytest.approx(1.0 - by3, abs=1e-9)

    def test_monotone_in_bound(self, web_model):
        values = [transient_until(web_model, prop_p1(t)) for t in np.linspace(0.1, 4.0, 25)]
        assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))

    def test_matches_erlang_cdf_up_to_500_phases(self):
        for k in (3, 50, 500):
            rate = 2.0
            m = erlang_chain(k, rate)
            for t in (0.3 * k / rate, k / rate, 1.7 * k / rate):
                p = transient_until(
                    m, UntilProperty.eventually(Atom("absorb"), TimeInterval(0, t))
                )
                assert p == pytest.approx(erlang_cdf(k, rate, t), abs=1e-8)

    def test_point_interval(self, web_model):
        # [a, a] measures being in the goal state at exactly a
        prop = UntilProperty.eventually(Atom("complete"), TimeInterval(1.0, 1.0))
        p = transient_until(web_model, prop)
        assert p == pytest.approx(transient_until(web_model, prop_p1(1.0)), abs=1e-9)

    def test_interval_with_positive_lower_bound(self, web_model):
        # F[a,b] complete = F[0,b] - F[0,a] for an absorbing goal
        prop = UntilProperty.eventually(Atom("complete"), TimeInterval(1.0, 2.0))
        expected = transient_until(web_model, prop_p1(2.0))
        assert transient_until(web_model, prop) == pytest.approx(expected, abs=1e-9)

    def test_constrained_lower_bound_phase(self, web_model):
        # !complete U [a, inf) complete: survivors at a times later completion
        late = transient_until(
            web_model,
            UntilProperty(
                StateFormula.negation(Atom("complete")),
                Atom("complete"),
                TimeInterval(1.0, np.inf),
            ),
        )
        assert late == pytest.approx(1.0 - transient_until(web_model, prop_p1(1.0)), abs=1e-9)

    def test_truncation_cap_raises(self):
        m = erlang_chain(1, 5.0e5)
        with pytest.raises(SolverError, match="truncation"):
            transient_until(m, UntilProperty.eventually(Atom("absorb"), TimeInterval(0, 4.0)))


class TestBoundedCurve:
    def test_curve_matches_pointwise(self, web_model):
        ts = np.array([0.25, 0.5, 1.0, 2.0, 4.0])
        phi1 = web_model.sat_mask(StateFormula.true())
        phi2 = web_model.sat_mask(Atom("complete"))
        curve = bounded_until_curve(web_model, web_model.initial, phi1, phi2, ts)
        for t, v in zip(ts, curve):
            assert v == pytest.approx(transient_until(web_model, prop_p1(t)), abs=1e-10)

    def test_all_absorbing_model(self):
        m = Ctmc(("a",), np.array([1.0]), np.zeros((1, 1)), {})
        phi = m.sat_mask(Atom("a"))
        curve = bounded_until_curve(m, m.initial, phi, phi, np.array([0.0, 1.0]))
        np.testing.assert_allclose(curve, [1.0, 1.0])


class TestUnboundedUntil:
    def test_web_avoid_arrivals(self, web_model):
        # avoiding the arrivals branch succeeds with the departures share
        _, p = unbounded_until(
            web_model, StateFormula.negation(Atom("arrivals")), Atom("complete")
        )
        assert p == pytest.approx(0.7, abs=1e-12)

    def test_reach_complete_is_certain(self, web_model):
        _, p = unbounded_until(web_model, StateFormula.true(), Atom("complete"))
        assert p == pytest.approx(1.0, abs=1e-12)

    def test_initial_state_violation_gives_zero(self, web_model):
        _, p = unbounded_until(
            web_model, StateFormula.negation(Atom("location")), Atom("complete")
        )
        assert p == 0.0

    def test_invariant_under_rate_scaling(self, web_model):
        scaled = web_model.scale_exit_rates({s: 37.5 for s in web_model.states[:-1]})
        f1 = StateFormula.negation(Atom("arrivals"))
        _, a = unbounded_until(web_model, f1, Atom("complete"))
        _, b = unbounded_until(scaled, f1, Atom("complete"))
        assert a == pytest.approx(b, abs=1e-12)

    def test_trap_states_get_zero(self):
        # b is a non-goal trap: probability from b is 0, from a it is 0.5
        m = Ctmc.from_transitions(
            ("a", "b", "done"), {"a": 1.0}, {("a", "b"): 1.0, ("a", "done"): 1.0}
        )
        vec, p = unbounded_until(m, StateFormula.true(), Atom("done"))
        assert vec[m.state_index("b")] == 0.0
        assert p == pytest.approx(0.5)


class TestErlangCdf:
    def test_exponential_case(self):
        assert erlang_cdf(1, 1.0, 1.0) == pytest.approx(1.0 - math.exp(-1.0), abs=1e-12)

    def test_zero_time(self):
        assert erlang_cdf(17, 3.0, 0.0) == 0.0

    def test_delay_chain_tail_value(self):
        # frozen high-precision partial-sum oracle (50-digit arithmetic)
        v = erlang_cdf(259, 1019.685, 0.2286)
        assert v == pytest.approx(0.049936911257870664, abs=1e-10)
        assert v == pytest.approx(0.05, abs=1e-3)

    def test_matches_regularized_gamma(self):
        for k in (1, 4, 37, 259, 10_000):
            for x in (0.1, 1.0, 7.5):
                for rate in (0.25, 1.0, 1019.685):
                    assert erlang_cdf(k, rate, x) == pytest.approx(
                        float(gammainc(k, rate * x)), abs=1e-9
                    )

    def test_monotone_and_vectorized(self):
        xs = np.linspace(0.0, 5.0, 200)
        values = erlang_cdf(10, 2.0, xs)
        assert values.shape == xs.shape
        assert np.all(np.diff(values) >= -1e-15)
        assert values[0] == 0.0

    def test_large_phase_count_stays_finite(self):
        v = erlang_cdf(10_000, 10_000.0, 1.0)
        assert 0.0 < v < 1.0

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            erlang_cdf(0, 1.0, 1.0)
        with pytest.raises(ValueError):
            erlang_cdf(1, 0.0, 1.0)
        with pytest.raises(ValueError):
            erlang_cdf(1, 1.0, -0.5)


class TestPoissonTerms:
    def test_weights_sum_to_one(self):
        for mu in (0.0, 0.5, 10.0, 4000.0):
            w = poisson_terms(mu)
            assert w.sum() == pytest.approx(1.0, abs=1e-9)

    def test_tail_within_bound(self):
        w = poisson_terms(50.0)
        assert 1.0 - w.sum() <= 1e-10

    def test_cap_enforced(self):
        with pytest.raises(SolverError, match="terms"):
            poisson_terms(5.0e6)


class TestSolverAgainstSimulation:
    def test_web_model_against_monte_carlo(self, web_model):
        from ctmcref import simulate_trace
        from ctmcref.evaluate import empirical_property_value

        rng = np.random.default_rng(2024)
        n = 20_000
        traces = [simulate_trace(web_model, rng) for _ in range(n)]
        for t in (0.5, 1.0, 2.0):
            est = empirical_property_value(traces, prop_p1(t))
            exact = transient_until(web_model, prop_p1(t))
            se = math.sqrt(max(est * (1 - est), 1e-12) / n)
            assert abs(est - exact) < 3.0 * se + 1e-12

    def test_random_acyclic_model_against_monte_carlo(self):
        from ctmcref import simulate_trace
        from ctmcref.evaluate import empirical_property_value
        from ctmcref.simulate import mean_absorption_time

        model = random_acyclic_model(8, seed=11)
        goal = model.states[-1]
        horizon = mean_absorption_time(model)
        rng = np.random.default_rng(7)
        n = 20_000
        traces = [simulate_trace(model, rng) for _ in range(n)]
        prop = UntilProperty.eventually(Atom(goal), TimeInterval(0, horizon))
        est = empirical_property_value(traces, prop)
        exact = transient_until(model, prop)
        se = math.sqrt(est * (1 - est) / n)
        assert abs(est - exact) < 3.0 * se + 1e-12
