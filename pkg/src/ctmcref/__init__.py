"""Observation-based refinement and transient verification of CTMC performance models.

The package takes a high-level continuous-time Markov chain whose states
correspond to component executions, partitions the states by how they affect
a quality-of-service property, refines the relevant states with Erlang delay
chains and hyper-Erlang holding-time distributions fitted to observed
execution times, and verifies time-bounded until properties on both the
high-level and the refined chains with a built-in uniformization solver.
"""

from .ctmc import (
    Ctmc,
    InvalidModelError,
    PropertyExpr,
    StateFormula,
    TimeInterval,
    TimedTrace,
    UntilProperty,
    embedded_jump_probability,
)
from .solver import SolverError, erlang_cdf, transient_until, unbounded_until
from .simulate import simulate_trace
from .classify import StatePartition, classify, exclude_set, once_only_set, together_sequences
from .fitting import (
    ComponentStats,
    DegenerateHoldingSample,
    FitConfig,
    HyperErlangPhd,
    ObservationSet,
    cdf_distance,
    correlation_matrix,
    estimate_component_stats,
    fit_holding_phd,
)
from .refine import (
    ErlangDelayModel,
    RefinedModel,
    RefinementCache,
    RefinementConfig,
    apply_joint_delay_model,
    apply_phd_replacement,
    build_delay_model,
    refine_for_property,
    solve_erlang_phase_count,
)
from .model_io import (
    ConfigDoc,
    ModelSkeleton,
    ParseError,
    export_ctmc,
    export_refined_model,
    load_config,
    load_model,
    load_observations,
    load_refined_model,
    models_isomorphic,
    parse_model,
    read_traces,
    write_traces,
)
from .properties import PropertyTemplate, parse_property, parse_property_file
from .evaluate import (
    ErrorReport,
    SweepResult,
    TransitionEstimates,
    bootstrap_traces,
    empirical_curve,
    empirical_property_value,
    error_area,
    estimate_transition_probabilities,
    evaluate_property_sweep,
)

__version__ = "0.1.0"
