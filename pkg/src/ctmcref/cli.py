"""Command-line front end.

Subcommands: ``classify`` (state partition for a property), ``fit``
(per-component rates, delays, holding-time distributions), ``refine``
(property-specific refined model), ``verify`` (property sweep to CSV),
``evaluate`` (compare predictions against a trace log), and ``simulate``
(synthetic trace log by resampling observed durations).

Exit codes: 0 on success, 1 on validation errors, 2 on solver failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .classify import StatePartition, classify
from .ctmc import Ctmc, InvalidModelError
from .evaluate import (
    bootstrap_traces,
    empirical_curve,
    error_area,
    evaluate_property_sweep,
)
from .fitting import DegenerateHoldingSample, estimate_component_stats, fit_holding_phd, cdf_distance
from .model_io import (
    ConfigDoc,
    ParseError,
    export_refined_model,
    load_config,
    load_model,
    load_observations,
    load_refined_model,
    read_traces,
    write_traces,
)
from .properties import PropertyTemplate, parse_property, parse_property_file
from .refine import RefinementCache, refine_for_property
from .solver import SolverError


def _fitted_rates(config: ConfigDoc) -> dict[str, float]:
    observations = load_observations(config)
    return {label: estimate_component_stats(obs).rate for label, obs in observations.items()}


def _partition_json(partition: StatePartition) -> dict:
    return {
        "exclude": sorted(partition.exclude),
        "once_only": sorted(partition.once_only),
        "together": [list(seq) for seq in partition.together],
    }


def _distinct_formula_terms(template: PropertyTemplate):
    """Distinct (phi1, phi2) pairs; intervals do not matter for classification."""
    seen = []
    for term in template.terms:
        key = (str(term.phi1), str(term.phi2))
        if key not in [k for k, _ in seen]:
            seen.append((key, term))
    return [term for _, term in seen]


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _cmd_classify(args) -> int:
    skeleton = load_model(args.model)
    model = skeleton.to_ctmc(default_rate=1.0)  # the partition is rate-free
    template = parse_property(args.property, skeleton.constants)
    partitions = []
    for term in _distinct_formula_terms(template):
        prop = term.bind(1.0)[1]
        partitions.append(classify(model, prop))
    payload: dict = {"property": str(template)}
    if all(
        (p.exclude, p.once_only, set(p.together)) ==
        (partitions[0].exclude, partitions[0].once_only, set(partitions[0].together))
        for p in partitions
    ):
        payload.update(_partition_json(partitions[0]))
    else:
        payload["per_term"] = [_partition_json(p) for p in partitions]
    _emit(payload, args.out)
    return 0


def _cmd_fit(args) -> int:
    config = load_config(args.config)
    observations = load_observations(config)
    if args.component is not None:
        if args.component not in observations:
            raise InvalidModelError(f"component {args.component!r} not in the config")
        observations = {args.component: observations[args.component]}
    report: dict = {"unit": config.unit, "components": {}}
    for label in sorted(observations):
        obs = observations[label]
        stats = estimate_component_stats(obs)
        entry = {
            "count": len(obs.durations),
            "rate": stats.rate,
            "delay": stats.delay,
        }
        try:
            phd = fit_holding_phd(stats.holdings_array(), config.refinement.fit)
            entry["phd"] = {
                "branches": [
                    {"weight": b.weight, "phases": b.phases, "rate": b.rate}
                    for b in phd.branches
                ],
                "phases": phd.n_phases,
                "mean": phd.mean(),
                "cdf_distance": cdf_distance(stats.holdings_array(), phd),
            }
        except DegenerateHoldingSample:
            entry["pure_delay"] = True
        report["components"][label] = entry
    _emit(report, args.out)
    return 0


def _cmd_refine(args) -> int:
    skeleton = load_model(args.model)
    config = load_config(args.config)
    observations = load_observations(config)
    rates = {label: estimate_component_stats(obs).rate for label, obs in observations.items()}
    model = skeleton.to_ctmc(rates=rates, time_unit=config.unit)
    template = parse_property(args.property, skeleton.constants)

    terms = _distinct_formula_terms(template)
    partitions = [classify(model, term.bind(1.0)[1]) for term in terms]
    first = partitions[0]
    for part in partitions[1:]:
        if (part.exclude, part.once_only, set(part.together)) != (
            first.exclude,
            first.once_only,
            set(first.together),
        ):
            raise InvalidModelError(
                "property terms classify the states differently; refine each "
                "term separately"
            )
    cache = RefinementCache()
    prop = terms[0].bind(1.0)[1]
    refined = refine_for_property(
        model, prop, observations, config.refinement, cache, partition=first
    )
    Path(args.out).write_text(export_refined_model(refined), encoding="utf-8")
    print(
        f"refined model: {len(refined.ctmc.states)} states, "
        f"{len(refined.ctmc.transitions())} transitions, "
        f"time shift {refined.time_shift:.6g}; "
        f"{cache.fit_count} holding-time fits -> {args.out}"
    )
    return 0


def _load_verify_model(args):
    if (args.model is None) == (args.refined is None):
        raise InvalidModelError("give exactly one of --model or --refined")
    if args.refined is not None:
        refined = load_refined_model(args.refined)
        return refined, {}
    skeleton = load_model(args.model)
    rates = {}
    unit = "seconds"
    if args.config:
        config = load_config(args.config)
        rates = _fitted_rates(config)
        unit = config.unit
    return skeleton.to_ctmc(rates=rates, time_unit=unit), skeleton.constants


def _grid(tmax: float, step: float) -> np.ndarray:
    if step <= 0 or tmax < step:
        raise InvalidModelError("need 0 < step <= tmax")
    return np.arange(1, int(round(tmax / step)) + 1) * step


def _indexed_path(base: Path, index: int, total: int) -> Path:
    if total == 1:
        return base
    return base.with_name(f"{base.stem}.p{index + 1}{base.suffix}")


def _write_results_csv(path: Path, source: str, grid, values) -> None:
    lines = [f"# property: {source}", "T,value"]
    for t, v in zip(grid, values):
        lines.append(f"{t:.12g},{v:.12g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_verify(args) -> int:
    model, constants = _load_verify_model(args)
    templates = parse_property_file(args.property_file, constants)
    grid = _grid(args.tmax, args.step)
    out = Path(args.out)
    unit = model.ctmc.time_unit if hasattr(model, "ctmc") else model.time_unit
    for i, template in enumerate(templates):
        result = evaluate_property_sweep(model, template, grid)
        target = _indexed_path(out, i, len(templates))
        _write_results_csv(target, str(template), result.grid, result.values)
        print(f"{template} -> {target}")
        if args.plot:
            from .plots import save_sweep_plot

            plot_path = _indexed_path(Path(args.plot), i, len(templates))
            save_sweep_plot(result.grid, result.values, plot_path, str(template), unit)
            print(f"figure -> {plot_path}")
    return 0


def _read_results_csv(path: Path) -> tuple[str | None, np.ndarray, np.ndarray]:
    source = None
    ts, vs = [], []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("property:"):
                source = body[len("property:"):].strip()
            continue
        if line.lower().startswith("t,"):
            continue
        try:
            t_text, v_text = line.split(",")
            ts.append(float(t_text))
            vs.append(float(v_text))
        except ValueError:
            raise ParseError(f"{path}: bad results row at line {lineno}") from None
    if not ts:
        raise ParseError(f"{path}: no result rows")
    return source, np.asarray(ts), np.asarray(vs)


def _cmd_evaluate(args) -> int:
    source, grid, predicted = _read_results_csv(Path(args.results))
    if args.property:
        source = args.property
    if not source:
        raise InvalidModelError(
            "results file carries no property annotation; pass --property"
        )
    labels = None
    constants = {}
    if args.model:
        skeleton = load_model(args.model)
        labels = {s: set(v) for s, v in skeleton.labels.items()}
        constants = skeleton.constants
    template = parse_property(source, constants)
    traces = read_traces(args.traces)
    actual = empirical_curve(traces, template, grid, labels)
    t_max = args.tmax if args.tmax is not None else float(grid[-1])
    report = error_area((grid, actual), (grid, predicted), t_max)
    payload = {
        "property": str(template),
        "t_max": report.t_max,
        "error_area": report.error,
        "n_traces": len(traces),
        "grid": [float(t) for t in grid],
        "predicted": [float(v) for v in predicted],
        "actual": [float(v) for v in actual],
        "abs_diff": [float(v) for v in np.abs(actual - predicted)],
    }
    _emit(payload, args.out)
    if args.plot:
        from .plots import save_comparison_plot

        save_comparison_plot(
            grid, actual, predicted, args.plot, str(template), error=report.error
        )
        print(f"figure -> {args.plot}", file=sys.stderr)
    return 0


def _cmd_simulate(args) -> int:
    skeleton = load_model(args.model)
    config = load_config(args.config)
    observations = load_observations(config)
    traces = bootstrap_traces(skeleton, observations, args.n, args.seed)
    count = write_traces(args.out, traces)
    print(f"{count} traces -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctmcref",
        description="Observation-based CTMC refinement and transient verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="partition states by effect on a property")
    p.add_argument("--model", required=True)
    p.add_argument("--property", required=True, help="property expression text")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("fit", help="fit rates, delays, and holding-time models")
    p.add_argument("--config", required=True)
    p.add_argument("--component", help="fit a single component")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("refine", help="build the property-specific refined model")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--property", required=True, help="property expression text")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("verify", help="sweep properties over a time grid")
    p.add_argument("--model", help="high-level model file")
    p.add_argument("--refined", help="refined model file (from refine)")
    p.add_argument("--config", help="config for observation-fitted rates")
    p.add_argument("--property-file", required=True)
    p.add_argument("--tmax", type=float, required=True)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--out", required=True, help="results CSV (header T,value)")
    p.add_argument("--plot", help="also render the sweep to this image file")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("evaluate", help="compare predictions against a trace log")
    p.add_argument("--results", required=True, help="CSV written by verify")
    p.add_argument("--traces", required=True, help="JSONL trace log")
    p.add_argument("--property", help="override the property annotation")
    p.add_argument("--model", help="model file, for label resolution")
    p.add_argument("--tmax", type=float)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--plot", help="also render actual vs predicted to this file")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate", help="bootstrap a synthetic trace log")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("-n", type=int, required=True, help="number of traces")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    except (InvalidModelError, ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
