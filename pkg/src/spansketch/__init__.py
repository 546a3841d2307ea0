"""Consistent partial sampling of distributed traces and unbiased estimation.

Spans of one trace share a single random threshold, so per-span sampling
rates can differ while low-rate samples remain subsets of high-rate ones.
This package models that sampling scheme, estimates arbitrary trace
quantities from the resulting fragments without knowing whether a trace
is complete, and ships an exact enumeration oracle plus a simulator so
every statistical property of the estimators can be checked outright.

Quick tour::

    import random
    from spansketch import (
        AncestorLink, FullTrace, SamplingRate, Span,
        estimate_partial, exact_expectation, quantity, sample_trace,
    )

    parent = Span(trace_id=1, span_id=1, link=AncestorLink.root(),
                  rate=SamplingRate.from_exponent(1), service="web")
    child = Span(trace_id=1, span_id=2, link=AncestorLink.parent(1),
                 rate=SamplingRate.from_exponent(2), service="db")
    trace = FullTrace(trace_id=1, spans=frozenset({parent, child}),
                      shared_random=random.random())

    sampled = sample_trace(trace)             # may be None or a fragment
    if sampled is not None:
        estimate_partial(sampled, quantity.span_count())

    # expectation over all sampling outcomes equals the true span count
    exact_expectation(trace, lambda s, _c: estimate_partial(s, quantity.span_count()))
"""

from . import estimator, io, model, oracle, quantity, sampler, simulator
from .estimator import (
    EstimateReport,
    composite_estimate,
    estimate_complete_only,
    estimate_indicator,
    estimate_matching_spans,
    estimate_partial,
    variance_complete_only_exact,
    variance_partial_exact,
)
from .io import LedgerEntry, read_ledger, read_spans, reassemble, write_ledger, write_spans
from .model import (
    AncestorLink,
    FullTrace,
    LinkKind,
    RateLadder,
    SampledTrace,
    SamplingRate,
    Span,
    Violation,
    build_rate_ladder,
    validate_trace,
)
from .oracle import (
    Outcome,
    OutcomeTable,
    enumerate_outcomes,
    exact_expectation,
    exact_variance,
    monte_carlo_estimate,
)
from .quantity import QuantitySpec, check_claims_on_chain
from .sampler import (
    RateLimiterState,
    discretize_rate,
    downsample,
    draw_shared_index,
    probability_complete,
    rate_limiter_observe,
    sample_decision,
    sample_trace,
    shared_random_from_trace_id,
)
from .simulator import RatePolicy, SimulationConfig, generate_trace, run_simulation, sort_by_completeness

__version__ = "0.1.0"

__all__ = [
    "AncestorLink",
    "EstimateReport",
    "FullTrace",
    "LedgerEntry",
    "LinkKind",
    "Outcome",
    "OutcomeTable",
    "QuantitySpec",
    "RateLadder",
    "RateLimiterState",
    "RatePolicy",
    "SampledTrace",
    "SamplingRate",
    "SimulationConfig",
    "Span",
    "Violation",
    "build_rate_ladder",
    "check_claims_on_chain",
    "composite_estimate",
    "discretize_rate",
    "downsample",
    "draw_shared_index",
    "enumerate_outcomes",
    "estimate_complete_only",
    "estimate_indicator",
    "estimate_matching_spans",
    "estimate_partial",
    "estimator",
    "exact_expectation",
    "exact_variance",
    "generate_trace",
    "io",
    "model",
    "monte_carlo_estimate",
    "oracle",
    "probability_complete",
    "quantity",
    "rate_limiter_observe",
    "read_ledger",
    "read_spans",
    "reassemble",
    "run_simulation",
    "sample_decision",
    "sample_trace",
    "sampler",
    "shared_random_from_trace_id",
    "simulator",
    "sort_by_completeness",
    "validate_trace",
    "variance_complete_only_exact",
    "variance_partial_exact",
    "write_ledger",
    "write_spans",
]
