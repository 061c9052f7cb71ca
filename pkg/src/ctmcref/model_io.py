"""Parsing and serialization: model language, config, observations, traces.

The model language declares components, constants, transition commands
with jump probabilities, proposition labels, and an initial distribution:

    component location;
    const p1 = 0.3;
    init location;
    s=<location> rate(9.62) -> p1:(s'=<arrivals>) + (1-p1):(s'=<departures>);
    label "fast" = s=<arrivals> | s=<departures>;

Per-command probabilities must sum to one; the optional ``rate(...)``
clause fixes the state's exit rate inline, otherwise rates are bound later
from observation data.  ``//`` starts a comment.  Observation files hold
one positive duration per line (comma-separated values are accepted), with
an optional single header line.  Trace logs are JSON Lines, one run per
line: {"steps": [{"component": ..., "duration": ...}, ...], "outcome": ...}.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .ctmc import Ctmc, InvalidModelError, TimedTrace
from .fitting import FitConfig, ObservationSet
from .refine import RefinedModel, RefinementConfig

PROBABILITY_SUM_TOL = 1e-9
_RESERVED = {"s", "rate", "init", "const", "component", "label", "ctmc"}


class ParseError(InvalidModelError):
    """Malformed model, property, or data file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<comment>//[^\n]*)
      | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<string>"[^"\n]*")
      | (?P<arrow>->)
      | (?P<punct>[;=<>()+:|*/'\-,?!&\[\]])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line = 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, chunk, line))
        line += chunk.count("\n")
        pos = m.end()
    return tokens


class _TokenStream:
    def __init__(self, tokens: list[_Token]):
        self._tokens = tokens
        self._pos = 0

    @property
    def line(self) -> int:
        if self._pos < len(self._tokens):
            return self._tokens[self._pos].line
        return self._tokens[-1].line if self._tokens else 1

    def peek(self) -> _Token | None:
        return self._tokens[self._pos] if self._pos < len(self._tokens) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of input", self.line)
        self._pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text!r}", tok.line)
        return tok

    def accept(self, text: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.text == text:
            self._pos += 1
            return True
        return False

    def at_end(self) -> bool:
        return self._pos >= len(self._tokens)


# ---------------------------------------------------------------------------
# Constant expressions
# ---------------------------------------------------------------------------


def _parse_expr(ts: _TokenStream, constants: Mapping[str, float]) -> float:
    value = _parse_term(ts, constants)
    while True:
        if ts.accept("+"):
            value += _parse_term(ts, constants)
        elif ts.accept("-"):
            value -= _parse_term(ts, constants)
        else:
            return value


def _parse_term(ts: _TokenStream, constants: Mapping[str, float]) -> float:
    value = _parse_factor(ts, constants)
    while True:
        if ts.accept("*"):
            value *= _parse_factor(ts, constants)
        elif ts.accept("/"):
            denom = _parse_factor(ts, constants)
            if denom == 0.0:
                raise ParseError("division by zero in constant expression", ts.line)
            value /= denom
        else:
            return value


def _parse_factor(ts: _TokenStream, constants: Mapping[str, float]) -> float:
    tok = ts.next()
    if tok.text == "(":
        value = _parse_expr(ts, constants)
        ts.expect(")")
        return value
    if tok.text == "-":
        return -_parse_factor(ts, constants)
    if tok.text == "+":
        return _parse_factor(ts, constants)
    if tok.kind == "number":
        return float(tok.text)
    if tok.kind == "name":
        if tok.text not in constants:
            raise ParseError(f"unknown constant {tok.text!r}", tok.line)
        return constants[tok.text]
    raise ParseError(f"unexpected token {tok.text!r} in expression", tok.line)


# ---------------------------------------------------------------------------
# Model skeleton
# ---------------------------------------------------------------------------


@dataclass
class ModelSkeleton:
    """Parsed model: jump structure plus whatever rates were given inline.

    Exit rates may be bound later (from fitted component rates); a state
    with a command but no rate is left symbolic until ``to_ctmc``.
    """

    states: tuple[str, ...]
    initial: np.ndarray
    jump_probs: np.ndarray
    labels: dict[str, frozenset[str]]
    inline_rates: dict[str, float]
    constants: dict[str, float]

    @property
    def transient_states(self) -> tuple[str, ...]:
        rows = self.jump_probs.sum(axis=1)
        return tuple(s for s, r in zip(self.states, rows) if r > 0.0)

    def to_ctmc(
        self,
        rates: Mapping[str, float] | None = None,
        default_rate: float | None = None,
        time_unit: str = "seconds",
    ) -> Ctmc:
        """Bind exit rates and build the chain.  Priority: explicit
        ``rates`` argument, then inline rates, then ``default_rate``."""
        rates = dict(rates or {})
        n = len(self.states)
        R = np.zeros((n, n))
        missing = []
        for i, s in enumerate(self.states):
            row = self.jump_probs[i]
            if row.sum() <= 0.0:
                continue
            rate = rates.get(s, self.inline_rates.get(s, default_rate))
            if rate is None:
                missing.append(s)
                continue
            if not (rate > 0.0) or not math.isfinite(rate):
                raise InvalidModelError(f"exit rate for {s!r} must be positive, got {rate!r}")
            R[i, :] = row * rate
        if missing:
            raise InvalidModelError(
                "no exit rate for state(s) "
                + ", ".join(repr(s) for s in missing)
                + "; provide observations or inline rate(...) clauses"
            )
        np.fill_diagonal(R, -R.sum(axis=1))
        return Ctmc(self.states, self.initial.copy(), R, dict(self.labels), time_unit)


def parse_model(text: str) -> ModelSkeleton:
    """Parse model text into a skeleton (states in declaration order)."""
    ts = _TokenStream(_tokenize(text))
    ts.accept("ctmc")

    declared: list[str] = []
    constants: dict[str, float] = {}
    commands: dict[str, list[tuple[float, str]]] = {}
    rates: dict[str, float] = {}
    labels: dict[str, set[str]] = {}
    init_clauses: list[tuple[str, float | None, int]] = []

    def read_state_ref() -> str:
        ts.expect("<")
        tok = ts.next()
        if tok.kind != "name":
            raise ParseError(f"expected a component label, found {tok.text!r}", tok.line)
        ts.expect(">")
        if tok.text not in declared:
            raise ParseError(f"unknown component label {tok.text!r}", tok.line)
        return tok.text

    while not ts.at_end():
        tok = ts.next()
        if tok.text == "component":
            name = ts.next()
            if name.kind != "name":
                raise ParseError(f"expected component name, found {name.text!r}", name.line)
            if name.text in _RESERVED:
                raise ParseError(f"component name {name.text!r} is reserved", name.line)
            if name.text in declared:
                raise ParseError(f"component {name.text!r} declared twice", name.line)
            declared.append(name.text)
            ts.expect(";")
        elif tok.text == "const":
            name = ts.next()
            if name.kind != "name":
                raise ParseError(f"expected constant name, found {name.text!r}", name.line)
            ts.expect("=")
            constants[name.text] = _parse_expr(ts, constants)
            ts.expect(";")
        elif tok.text == "init":
            line = tok.line
            if ts.accept("<"):
                name_tok = ts.next()
                ts.expect(">")
            else:
                name_tok = ts.next()
            if name_tok.kind != "name":
                raise ParseError(f"expected state name, found {name_tok.text!r}", name_tok.line)
            if name_tok.text not in declared:
                raise ParseError(f"unknown component label {name_tok.text!r}", name_tok.line)
            prob = _parse_expr(ts, constants) if ts.accept(":") else None
            ts.expect(";")
            init_clauses.append((name_tok.text, prob, line))
        elif tok.text == "label":
            ap = ts.next()
            if ap.kind != "string":
                raise ParseError(f'expected a quoted proposition name, found {ap.text!r}', ap.line)
            ap_name = ap.text.strip('"')
            ts.expect("=")
            members = []
            while True:
                ts.expect("s")
                ts.expect("=")
                members.append(read_state_ref())
                if not ts.accept("|"):
                    break
            ts.expect(";")
            for state in members:
                labels.setdefault(state, set()).add(ap_name)
        elif tok.text == "s":
            line = tok.line
            ts.expect("=")
            source = read_state_ref()
            if source in commands:
                raise ParseError(f"duplicate command for state {source!r}", line)
            if ts.accept("rate"):
                ts.expect("(")
                rate = _parse_expr(ts, constants)
                ts.expect(")")
                if not (rate > 0.0) or not math.isfinite(rate):
                    raise ParseError(f"rate for {source!r} must be positive", line)
                rates[source] = rate
            ts.expect("->")
            terms: list[tuple[float, str]] = []
            while True:
                prob = _parse_expr(ts, constants)
                ts.expect(":")
                ts.expect("(")
                ts.expect("s")
                ts.expect("'")
                ts.expect("=")
                target = read_state_ref()
                ts.expect(")")
                if prob < 0.0:
                    raise ParseError(
                        f"negative probability {prob!r} on {source!r} -> {target!r}", line
                    )
                if target == source:
                    raise ParseError(f"self-loop on state {source!r}", line)
                terms.append((prob, target))
                if not ts.accept("+"):
                    break
            ts.expect(";")
            total = sum(p for p, _ in terms)
            if abs(total - 1.0) > PROBABILITY_SUM_TOL:
                raise ParseError(
                    f"probabilities of state {source!r} sum to {total:.10g}, expected 1", line
                )
            commands[source] = terms
        else:
            raise ParseError(f"unexpected token {tok.text!r}", tok.line)

    if not declared:
        raise ParseError("model declares no components")

    n = len(declared)
    index = {s: i for i, s in enumerate(declared)}
    jump = np.zeros((n, n))
    for source, terms in commands.items():
        total = sum(p for p, _ in terms)
        for prob, target in terms:
            jump[index[source], index[target]] += prob / total

    initial = np.zeros(n)
    if init_clauses:
        seen: set[str] = set()
        for state, prob, line in init_clauses:
            if state in seen:
                raise ParseError(f"duplicate init clause for {state!r}", line)
            seen.add(state)
            initial[index[state]] = 1.0 if prob is None else prob
        total = initial.sum()
        if abs(total - 1.0) > PROBABILITY_SUM_TOL or np.any(initial < 0.0):
            raise ParseError(f"initial probabilities sum to {total:.10g}, expected 1")
        initial /= total
    else:
        initial[0] = 1.0

    return ModelSkeleton(
        states=tuple(declared),
        initial=initial,
        jump_probs=jump,
        labels={s: frozenset(v) for s, v in labels.items()},
        inline_rates=rates,
        constants=constants,
    )


def load_model(path: str | Path) -> ModelSkeleton:
    return parse_model(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_ctmc(model: Ctmc) -> str:
    """Serialize a chain in the model language with inline rates.

    Parsing the output reproduces an isomorphic chain: one command per
    transient state, no command for absorbing states, explicit init
    clauses, and label definitions for all non-implicit propositions.
    """
    lines = [f"// unit = {model.time_unit}", "ctmc", ""]
    for s in model.states:
        lines.append(f"component {s};")
    lines.append("")
    for s, p in zip(model.states, model.initial):
        if p > 0.0:
            lines.append(f"init {s} : {float(p)!r};")
    lines.append("")
    for i, s in enumerate(model.states):
        exit_rate = float(model.exit_rates[i])
        if exit_rate <= 0.0:
            continue
        terms = []
        for j in np.flatnonzero(model.rates[i] > 0.0):
            if j == i:
                continue
            prob = float(model.rates[i, j]) / exit_rate
            terms.append(f"{prob!r}:(s'=<{model.states[j]}>)")
        lines.append(f"s=<{s}> rate({exit_rate!r}) -> " + " + ".join(terms) + ";")
    ap_members: dict[str, list[str]] = {}
    for s in model.states:
        for ap in sorted(model.labels.get(s, frozenset())):
            ap_members.setdefault(ap, []).append(s)
    if ap_members:
        lines.append("")
        for ap in sorted(ap_members):
            body = " | ".join(f"s=<{m}>" for m in ap_members[ap])
            lines.append(f'label "{ap}" = {body};')
    return "\n".join(lines) + "\n"


def export_refined_model(refined: RefinedModel) -> str:
    """Refined-model file: the exported chain with annotation comments
    carrying the deterministic time shift (and elided pure-delay
    components, if any)."""
    header = [f"// time_shift = {refined.time_shift!r}"]
    if refined.elided:
        header.append("// elided = " + ",".join(refined.elided))
    return "\n".join(header) + "\n" + export_refined_body(refined)


def export_refined_body(refined: RefinedModel) -> str:
    return export_ctmc(refined.ctmc)


_ANNOTATION_RE = re.compile(r"^//\s*(\w+)\s*=\s*(.+?)\s*$")


def load_refined_model(path: str | Path) -> RefinedModel:
    """Read a refined-model file written by ``export_refined_model``."""
    text = Path(path).read_text(encoding="utf-8")
    shift = 0.0
    elided: tuple[str, ...] = ()
    unit = "seconds"
    for line in text.splitlines():
        m = _ANNOTATION_RE.match(line.strip())
        if not m:
            continue
        key, value = m.group(1), m.group(2)
        if key == "time_shift":
            shift = float(value)
        elif key == "elided":
            elided = tuple(v for v in value.split(",") if v)
        elif key == "unit":
            unit = value
    skeleton = parse_model(text)
    ctmc = skeleton.to_ctmc(time_unit=unit)
    provenance = {s: (s, "copy") for s in ctmc.states}
    return RefinedModel(ctmc, shift, provenance, elided)


def models_isomorphic(a: Ctmc, b: Ctmc, rtol: float = 1e-9, atol: float = 1e-12) -> bool:
    """State bijection (by name) preserving initial distribution, rates,
    and labels, up to floating-point tolerance."""
    if set(a.states) != set(b.states):
        return False
    perm = [b.state_index(s) for s in a.states]
    if not np.allclose(a.initial, b.initial[perm], rtol=rtol, atol=atol):
        return False
    if not np.allclose(a.rates, b.rates[np.ix_(perm, perm)], rtol=rtol, atol=atol):
        return False
    for s in a.states:
        if a.labels.get(s, frozenset()) != b.labels.get(s, frozenset()):
            return False
    return True


# ---------------------------------------------------------------------------
# Config and observations
# ---------------------------------------------------------------------------


@dataclass
class ConfigDoc:
    """Run configuration: component-to-file map, time unit, refinement knobs."""

    components: dict[str, Path]
    unit: str
    refinement: RefinementConfig
    base_dir: Path = field(default_factory=Path)


def load_config(path: str | Path) -> ConfigDoc:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"config {path}: expected a JSON object")
    known = {"components", "unit", "epsilon", "p", "delay_threshold", "fit"}
    unknown = set(raw) - known
    if unknown:
        raise ParseError(f"config {path}: unknown key(s) {sorted(unknown)}")
    comp_raw = raw.get("components", {})
    if not isinstance(comp_raw, dict):
        raise ParseError(f"config {path}: 'components' must map labels to file paths")
    components = {}
    for label, rel in comp_raw.items():
        file = (path.parent / rel).resolve() if not Path(rel).is_absolute() else Path(rel)
        if not file.is_file():
            raise ParseError(f"config {path}: observation file for {label!r} not found: {file}")
        components[str(label)] = file
    fit_raw = raw.get("fit", {})
    if not isinstance(fit_raw, dict):
        raise ParseError(f"config {path}: 'fit' must be an object")
    try:
        fit = FitConfig(**fit_raw)
        refinement = RefinementConfig(
            epsilon=raw.get("epsilon", 0.1),
            tail_probability=raw.get("p", 0.05),
            delay_threshold=raw.get("delay_threshold", 0.0),
            fit=fit,
        )
    except TypeError as exc:
        raise ParseError(f"config {path}: {exc}") from exc
    return ConfigDoc(
        components=components,
        unit=str(raw.get("unit", "seconds")),
        refinement=refinement,
        base_dir=path.parent,
    )


def _read_durations(path: Path) -> list[float]:
    values: list[float] = []
    header_allowed = True
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            cells = [c.strip() for c in line.strip().split(",") if c.strip()]
            if not cells:
                continue
            try:
                parsed = [float(c) for c in cells]
            except ValueError:
                if header_allowed:
                    header_allowed = False
                    continue
                raise ParseError(f"{path}: non-numeric value at line {lineno}") from None
            header_allowed = False
            for v in parsed:
                if not math.isfinite(v) or v <= 0.0:
                    raise ParseError(f"{path}: non-positive duration {v!r} at line {lineno}")
                values.append(v)
    if not values:
        raise ParseError(f"{path}: no observations")
    return values


def load_observations(config: ConfigDoc) -> dict[str, ObservationSet]:
    """Read every observation file named in the config."""
    out = {}
    for label, file in config.components.items():
        out[label] = ObservationSet(label, tuple(_read_durations(file)), config.unit)
    return out


# ---------------------------------------------------------------------------
# Timed trace logs
# ---------------------------------------------------------------------------


def write_traces(path: str | Path, traces: Iterable[TimedTrace]) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for trace in traces:
            record: dict = {
                "steps": [
                    {"component": s, "duration": d} for s, d in trace.steps
                ],
                "outcome": trace.terminal,
            }
            if trace.censored:
                record["censored"] = True
            fh.write(json.dumps(record) + "\n")
            count += 1
    return count


def read_traces(path: str | Path) -> list[TimedTrace]:
    traces = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                steps = tuple(
                    (str(s["component"]), float(s["duration"])) for s in record["steps"]
                )
                trace = TimedTrace(
                    steps, str(record["outcome"]), bool(record.get("censored", False))
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ParseError(f"{path}: bad trace record at line {lineno}: {exc}") from None
            traces.append(trace)
    if not traces:
        raise ParseError(f"{path}: no traces")
    return traces
