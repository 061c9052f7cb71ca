"""Property expression parsing: formulas, intervals, combinations."""

import math

import pytest

from ctmcref import ParseError, parse_property, parse_property_file
from ctmcref.ctmc import Atom, Not, TrueFormula


class TestSingleTerm:
    def test_eventually_sugar(self):
        tpl = parse_property("P=? [ F[0,T] complete ]")
        assert len(tpl.terms) == 1
        term = tpl.terms[0]
        assert isinstance(term.phi1, TrueFormula)
        assert term.phi2 == Atom("complete")
        assert term.interval.lower == 0.0
        assert term.interval.upper == "T"
        assert tpl.swept

    def test_until_with_negation(self):
        tpl = parse_property("P=? [ !arrivals U[0,2] complete ]")
        term = tpl.terms[0]
        assert term.phi1 == Not(Atom("arrivals"))
        assert term.interval.upper == 2.0
        assert not tpl.swept

    def test_open_bounds_and_infinity(self):
        tpl = parse_property("P=? [ !complete U(3,inf) complete ]")
        spec = tpl.terms[0].interval
        assert spec.lower == 3.0
        assert spec.lower_open
        assert math.isinf(spec.upper)
        interval = spec.bind()
        assert interval.lower_open and not interval.bounded

    def test_conjunction_and_disjunction(self):
        tpl = parse_property("P=? [ (!reopen & !addInfo) U[0,T] complete ]")
        assert tpl.terms[0].phi1.holds_for({"process"})
        assert not tpl.terms[0].phi1.holds_for({"reopen"})
        tpl = parse_property("P=? [ F[0,1] (done | failed) ]")
        assert tpl.terms[0].phi2.holds_for({"failed"})
        assert tpl.terms[0].phi2.holds_for({"done"})
        assert not tpl.terms[0].phi2.holds_for({"busy"})

    def test_interval_bound_expressions(self):
        tpl = parse_property("P=? [ F[0,tmax] done ]", {"tmax": 2.5})
        assert tpl.terms[0].interval.upper == 2.5


class TestCombinations:
    def test_profit_style_expression(self):
        tpl = parse_property(
            "P=? [ F[0,T] complete ] - 2*P=? [ !complete U(3,inf) complete ]"
        )
        assert len(tpl.terms) == 2
        assert tpl.terms[0].coefficient == 1.0
        assert tpl.terms[1].coefficient == -2.0

    def test_constant_coefficient(self):
        tpl = parse_property(
            "(1/(1-p1)) * P=? [ !arrivals U[0,T] complete ]", {"p1": 0.3}
        )
        assert tpl.terms[0].coefficient == pytest.approx(1.0 / 0.7)

    def test_bind_produces_expression(self):
        tpl = parse_property("P=? [ F[0,T] done ] + 0.5*P=? [ F[0,1] done ]")
        expr = tpl.bind(2.0)
        assert expr.terms[0][1].interval.upper == 2.0
        assert expr.terms[1][1].interval.upper == 1.0

    def test_distinct_until_terms(self):
        tpl = parse_property("P=? [ F[0,T] done ] - 1*P=? [ F[0,T] done ]")
        assert len(tpl.until_properties(1.0)) == 1


class TestErrors:
    def test_unknown_constant(self):
        with pytest.raises(ParseError, match="unknown constant"):
            parse_property("P=? [ F[0,q] done ]")

    def test_missing_bracket(self):
        with pytest.raises(ParseError):
            parse_property("P=? [ F[0,1] done")

    def test_bad_interval_order(self):
        with pytest.raises(ParseError, match="lower > upper"):
            parse_property("P=? [ F[2,1] done ]")

    def test_sweep_symbol_requires_value(self):
        tpl = parse_property("P=? [ F[0,T] done ]")
        with pytest.raises(Exception, match="T"):
            tpl.bind(None)

    def test_empty_line_rejected(self):
        with pytest.raises(ParseError):
            parse_property("   ")


class TestPropertyFile:
    def test_file_with_comments(self, tmp_path):
        path = tmp_path / "props.txt"
        path.write_text(
            "# success probability\n"
            "P=? [ F[0,T] complete ]\n"
            "\n"
            "// day-trip variant\n"
            "(1/(1-p1)) * P=? [ !arrivals U[0,T] complete ]\n"
        )
        templates = parse_property_file(path, {"p1": 0.3})
        assert len(templates) == 2

    def test_error_carries_file_line(self, tmp_path):
        path = tmp_path / "props.txt"
        path.write_text("P=? [ F[0,T] complete ]\nnonsense here\n")
        with pytest.raises(ParseError, match="props.txt:2"):
            parse_property_file(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "props.txt"
        path.write_text("# nothing\n")
        with pytest.raises(ParseError, match="no properties"):
            parse_property_file(path)
