"""Property expression parsing.

One expression per line, in the form

    P=? [ phi1 U[a,b] phi2 ]
    P=? [ F[0,T] complete ]
    P=? [ F[0,T] complete ] - 2*P=? [ !complete U(3,inf) complete ]
    (1/(1-p1)) * P=? [ !arrivals U[0,T] complete ]

State formulas use ``true``, proposition names, ``!``, ``&``, ``|`` and
parentheses.  Interval bounds are constant expressions, ``inf``, or the
sweep symbol ``T``; square and round brackets mark closed and open bounds.
Coefficients are constant expressions; model constants may be supplied so
expressions like ``1-p1`` resolve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .ctmc import (
    Atom,
    InvalidModelError,
    PropertyExpr,
    StateFormula,
    TimeInterval,
    TrueFormula,
    UntilProperty,
)
from .model_io import ParseError, _parse_expr, _parse_factor, _tokenize, _TokenStream

SWEEP_SYMBOL = "T"
_INF_NAMES = {"inf", "infinity"}

Bound = float | str  # a number or the sweep symbol


@dataclass(frozen=True)
class IntervalSpec:
    """Interval whose bounds may still reference the sweep symbol."""

    lower: Bound
    upper: Bound
    lower_open: bool = False
    upper_open: bool = False

    @property
    def swept(self) -> bool:
        return self.lower == SWEEP_SYMBOL or self.upper == SWEEP_SYMBOL

    def bind(self, t: float | None = None) -> TimeInterval:
        lower = t if self.lower == SWEEP_SYMBOL else self.lower
        upper = t if self.upper == SWEEP_SYMBOL else self.upper
        if lower is None or upper is None:
            raise InvalidModelError("sweep symbol T used but no time value given")
        return TimeInterval(float(lower), float(upper), self.lower_open, self.upper_open)

    def __str__(self) -> str:
        lo = "(" if self.lower_open else "["
        hi = ")" if self.upper_open else "]"

        def fmt(b: Bound) -> str:
            if b == SWEEP_SYMBOL:
                return "T"
            return "inf" if math.isinf(b) else f"{b:g}"

        return f"{lo}{fmt(self.lower)},{fmt(self.upper)}{hi}"


@dataclass(frozen=True)
class TermTemplate:
    coefficient: float
    phi1: StateFormula
    phi2: StateFormula
    interval: IntervalSpec

    def bind(self, t: float | None = None) -> tuple[float, UntilProperty]:
        return self.coefficient, UntilProperty(self.phi1, self.phi2, self.interval.bind(t))


@dataclass(frozen=True)
class PropertyTemplate:
    """Linear combination of until terms, possibly swept over T."""

    terms: tuple[TermTemplate, ...]
    source: str

    @property
    def swept(self) -> bool:
        return any(term.interval.swept for term in self.terms)

    def bind(self, t: float | None = None) -> PropertyExpr:
        return PropertyExpr(tuple(term.bind(t) for term in self.terms))

    def until_properties(self, t: float | None = None) -> tuple[UntilProperty, ...]:
        """Distinct until properties of the bound expression, in term order."""
        seen = []
        for _, prop in self.bind(t).terms:
            if prop not in seen:
                seen.append(prop)
        return tuple(seen)

    def __str__(self) -> str:
        return self.source


def _parse_formula(ts: _TokenStream) -> StateFormula:
    return _parse_or(ts)


def _parse_or(ts: _TokenStream) -> StateFormula:
    left = _parse_and(ts)
    while ts.accept("|"):
        right = _parse_and(ts)
        # a | b rewritten as !(!a & !b); the formula tree has no or node
        left = StateFormula.negation(
            StateFormula.negation(left) & StateFormula.negation(right)
        )
    return left


def _parse_and(ts: _TokenStream) -> StateFormula:
    left = _parse_unary(ts)
    while ts.accept("&"):
        left = left & _parse_unary(ts)
    return left


def _parse_unary(ts: _TokenStream) -> StateFormula:
    tok = ts.next()
    if tok.text == "!":
        return StateFormula.negation(_parse_unary(ts))
    if tok.text == "(":
        inner = _parse_formula(ts)
        ts.expect(")")
        return inner
    if tok.kind == "name":
        if tok.text == "true":
            return TrueFormula()
        return Atom(tok.text)
    raise ParseError(f"unexpected token {tok.text!r} in state formula", tok.line)


def _parse_bound(ts: _TokenStream, constants: Mapping[str, float]) -> Bound:
    tok = ts.peek()
    if tok is not None and tok.kind == "name":
        if tok.text == SWEEP_SYMBOL:
            ts.next()
            return SWEEP_SYMBOL
        if tok.text.lower() in _INF_NAMES:
            ts.next()
            return math.inf
    value = _parse_expr(ts, constants)
    if value < 0.0:
        raise ParseError(f"negative interval bound {value!r}", ts.line)
    return value


def _parse_interval(ts: _TokenStream, constants: Mapping[str, float]) -> IntervalSpec:
    tok = ts.next()
    if tok.text not in ("[", "("):
        raise ParseError(f"expected an interval, found {tok.text!r}", tok.line)
    lower_open = tok.text == "("
    lower = _parse_bound(ts, constants)
    ts.expect(",")
    upper = _parse_bound(ts, constants)
    closer = ts.next()
    if closer.text not in ("]", ")"):
        raise ParseError(f"expected ] or ), found {closer.text!r}", closer.line)
    upper_open = closer.text == ")"
    if (
        not isinstance(lower, str)
        and not isinstance(upper, str)
        and lower > upper
    ):
        raise ParseError(f"interval [{lower!r}, {upper!r}] has lower > upper", closer.line)
    return IntervalSpec(lower, upper, lower_open, upper_open)


def _parse_p_term(ts: _TokenStream, constants: Mapping[str, float]) -> tuple[StateFormula, StateFormula, IntervalSpec]:
    ts.expect("P")
    ts.expect("=")
    ts.expect("?")
    ts.expect("[")
    first = ts.peek()
    if first is not None and first.kind == "name" and first.text == "F":
        ts.next()
        interval = _parse_interval(ts, constants)
        phi2 = _parse_formula(ts)
        phi1: StateFormula = TrueFormula()
    else:
        phi1 = _parse_formula(ts)
        u = ts.next()
        if not (u.kind == "name" and u.text == "U"):
            raise ParseError(f"expected U, found {u.text!r}", u.line)
        interval = _parse_interval(ts, constants)
        phi2 = _parse_formula(ts)
    ts.expect("]")
    return phi1, phi2, interval


def _starts_p_term(ts: _TokenStream) -> bool:
    tok = ts.peek()
    return tok is not None and tok.kind == "name" and tok.text == "P"


def _parse_coefficient(ts: _TokenStream, constants: Mapping[str, float]) -> float:
    """Single factor followed by '*', e.g. ``2*`` or ``(1/(1-p1))*``.  A
    full expression would swallow the '*' separating it from the P term."""
    value = _parse_factor(ts, constants)
    ts.expect("*")
    return value


def parse_property(text: str, constants: Mapping[str, float] | None = None) -> PropertyTemplate:
    """Parse one property expression."""
    constants = dict(constants or {})
    ts = _TokenStream(_tokenize(text))
    terms: list[TermTemplate] = []
    sign = 1.0
    if ts.accept("-"):
        sign = -1.0
    else:
        ts.accept("+")
    while True:
        if _starts_p_term(ts):
            coef = 1.0
        else:
            coef = _parse_coefficient(ts, constants)
        phi1, phi2, interval = _parse_p_term(ts, constants)
        terms.append(TermTemplate(sign * coef, phi1, phi2, interval))
        if ts.at_end():
            break
        op = ts.next()
        if op.text == "+":
            sign = 1.0
        elif op.text == "-":
            sign = -1.0
        else:
            raise ParseError(f"unexpected token {op.text!r} after property term", op.line)
    if not terms:
        raise ParseError("empty property expression")
    return PropertyTemplate(tuple(terms), " ".join(text.split()))


def parse_property_file(
    path: str | Path, constants: Mapping[str, float] | None = None
) -> list[PropertyTemplate]:
    """One property expression per line; blank lines and lines starting
    with ``#`` or ``//`` are skipped."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("//"):
            continue
        try:
            out.append(parse_property(line, constants))
        except ParseError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not out:
        raise ParseError(f"{path}: no properties")
    return out
