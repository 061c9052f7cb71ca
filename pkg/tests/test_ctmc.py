"""Core model types: validation, jump probabilities, formulas, traces."""

import numpy as np
import pytest

from ctmcref import Ctmc, InvalidModelError, embedded_jump_probability
from ctmcref.ctmc import And, Atom, Not, StateFormula, TimedTrace, TimeInterval, TrueFormula

from conftest import make_web_model


def two_state(rate: float = 5.0) -> Ctmc:
    return Ctmc.from_transitions(("a", "done"), {"a": 1.0}, {("a", "done"): rate})


class TestValidation:
    def test_initial_must_sum_to_one(self):
        with pytest.raises(InvalidModelError, match="sum"):
            Ctmc(("a", "b"), np.array([0.5, 0.499]), np.zeros((2, 2)), {})

    def test_negative_rate_rejected(self):
        rates = np.array([[1.0, -1.0], [0.0, 0.0]])
        with pytest.raises(InvalidModelError, match="negative"):
            Ctmc(("a", "b"), np.array([1.0, 0.0]), rates, {})

    def test_diagonal_must_negate_row_sum(self):
        rates = np.array([[-1.0, 2.0], [0.0, 0.0]])
        with pytest.raises(InvalidModelError, match="diagonal"):
            Ctmc(("a", "b"), np.array([1.0, 0.0]), rates, {})

    def test_duplicate_states_rejected(self):
        with pytest.raises(InvalidModelError, match="duplicate"):
            Ctmc(("a", "a"), np.array([1.0, 0.0]), np.zeros((2, 2)), {})

    def test_self_loop_rejected_in_builder(self):
        with pytest.raises(InvalidModelError, match="self-loop"):
            Ctmc.from_transitions(("a", "b"), {"a": 1.0}, {("a", "a"): 1.0, ("a", "b"): 1.0})

    def test_label_on_unknown_state_rejected(self):
        with pytest.raises(InvalidModelError, match="unknown"):
            Ctmc.from_transitions(("a", "b"), {"a": 1.0}, {("a", "b"): 1.0}, {"c": {"x"}})

    def test_non_finite_rate_rejected(self):
        rates = np.array([[-np.inf, np.inf], [0.0, 0.0]])
        with pytest.raises(InvalidModelError, match="non-finite"):
            Ctmc(("a", "b"), np.array([1.0, 0.0]), rates, {})

    def test_arrays_are_frozen(self):
        m = two_state()
        with pytest.raises(ValueError):
            m.rates[0, 1] = 9.0

    def test_derived_views(self):
        m = make_web_model()
        assert m.absorbing_mask.tolist() == [False] * 6 + [True]
        np.testing.assert_allclose(m.jump_matrix.sum(axis=1), [1.0] * 6 + [0.0])


class TestJumpProbability:
    def test_single_successor_is_one(self):
        assert embedded_jump_probability(two_state(), "a", "done") == 1.0

    def test_web_branch_probability(self):
        # the location state splits 0.3 / 0.7 regardless of its rate
        m = make_web_model()
        assert embedded_jump_probability(m, "location", "arrivals") == pytest.approx(0.3)
        assert embedded_jump_probability(m, "location", "departures") == pytest.approx(0.7)

    def test_absorbing_source_errors(self):
        with pytest.raises(InvalidModelError, match="no outgoing"):
            embedded_jump_probability(make_web_model(), "complete", "location")

    def test_rows_sum_to_one(self):
        m = make_web_model()
        for s in m.states:
            if m.absorbing_mask[m.state_index(s)]:
                continue
            total = sum(embedded_jump_probability(m, s, t) for t in m.successors(s))
            assert total == pytest.approx(1.0, abs=1e-12)


class TestFormulas:
    def test_implicit_self_proposition(self):
        m = make_web_model()
        mask = m.sat_mask(Atom("arrivals"))
        assert mask.tolist() == [s == "arrivals" for s in m.states]

    def test_declared_labels(self):
        m = Ctmc.from_transitions(
            ("a", "b"), {"a": 1.0}, {("a", "b"): 1.0}, {"a": {"busy"}, "b": {"idle"}}
        )
        assert m.sat_mask(Atom("busy")).tolist() == [True, False]

    def test_boolean_operators(self):
        m = make_web_model()
        f = And(Not(Atom("arrivals")), Not(Atom("complete")))
        mask = m.sat_mask(f)
        assert mask.sum() == 5
        assert m.sat_mask(TrueFormula()).all()

    def test_holds_for_props(self):
        f = StateFormula.negation(Atom("x")) & Atom("y")
        assert f.holds_for({"y"})
        assert not f.holds_for({"x", "y"})

    def test_avoiding_builder(self):
        m = make_web_model()
        f = StateFormula.avoiding({"arrivals", "search"})
        assert m.sat_mask(f).sum() == 5


class TestIntervalAndTrace:
    def test_interval_validation(self):
        with pytest.raises(InvalidModelError):
            TimeInterval(2.0, 1.0)
        with pytest.raises(InvalidModelError):
            TimeInterval(-1.0, 1.0)
        assert not TimeInterval(0.0, np.inf).bounded

    def test_trace_rejects_nonpositive_sojourn(self):
        with pytest.raises(InvalidModelError):
            TimedTrace((("a", 0.0),), "done")

    def test_trace_total_time(self):
        t = TimedTrace((("a", 0.5), ("b", 1.5)), "done")
        assert t.total_time == pytest.approx(2.0)
        assert t.states() == ("a", "b", "done")

    def test_scale_exit_rates_keeps_jumps(self):
        m = make_web_model()
        scaled = m.scale_exit_rates({"location": 10.0})
        assert embedded_jump_probability(scaled, "location", "arrivals") == pytest.approx(0.3)
        i = scaled.state_index("location")
        assert scaled.exit_rates[i] == pytest.approx(10.0 * m.exit_rates[i])
