"""Exact brute-force reference for estimator verification.

Consistent sampling of one trace has only finitely many outcomes: as the
shared threshold sweeps upward through the trace's rate ladder, the
retained set shrinks rung by rung. Enumerating those outcomes with their
exact probabilities turns every statistical claim about an estimator into
a finite computation, which is what the functions here do.

Probabilities are kept as :class:`fractions.Fraction`, so expectations and
variances of integer-valued estimators are exact rational numbers and
test assertions can demand equality instead of tolerances. Estimators
that return floats degrade the arithmetic to floats.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from math import sqrt
from statistics import fmean, stdev
from typing import Callable, Iterable, Sequence

from .model import FullTrace, SampledTrace, Span, TraceId
from .sampler import downsampling_chain, sample_trace

# An estimator under test maps one sampled outcome plus its (ground truth)
# completeness flag to a number. Estimators that need a quantity bind it
# via a closure or functools.partial.
EstimatorFn = Callable[[SampledTrace, bool], int | float]


@dataclass(frozen=True)
class Outcome:
    """One possible sampled result of a trace and its exact probability."""

    probability: Fraction
    spans: frozenset[Span]
    is_complete: bool

    def sample(self, trace_id: TraceId) -> SampledTrace:
        return SampledTrace(trace_id=trace_id, spans=self.spans)


@dataclass(frozen=True)
class OutcomeTable:
    """All nonempty sampling outcomes of one trace.

    ``residual_probability`` is the chance that nothing survives; it and
    the outcome probabilities sum to exactly 1.
    """

    trace_id: TraceId
    outcomes: tuple[Outcome, ...]
    residual_probability: Fraction


def enumerate_outcomes(trace: FullTrace) -> OutcomeTable:
    """Enumerate every nonempty sampling outcome of a trace with its probability.

    With ladder rates p_1 < ... < p_n, the threshold lands in
    [p_i, p_{i+1}) with probability p_{i+1} - p_i and retains exactly the
    spans rated above p_i; only the lowest interval keeps the whole trace.
    """
    chain, ladder = downsampling_chain(trace.spans)
    boundaries = [r.as_fraction() for r in ladder]
    outcomes = []
    previous = Fraction(0)
    for i, members in enumerate(chain):
        outcomes.append(
            Outcome(probability=boundaries[i] - previous, spans=members, is_complete=i == 0)
        )
        previous = boundaries[i]
    return OutcomeTable(
        trace_id=trace.trace_id,
        outcomes=tuple(outcomes),
        residual_probability=1 - boundaries[-1],
    )


def exact_expectation(trace: FullTrace, estimator: EstimatorFn) -> int | float | Fraction:
    """Expected value of an estimator over all sampling outcomes of ``trace``.

    Exact (a rational number, reduced to int when integral) as long as the
    estimator returns exact values on every outcome.
    """
    table = enumerate_outcomes(trace)
    total: int | float | Fraction = Fraction(0)
    for outcome in table.outcomes:
        total += outcome.probability * estimator(outcome.sample(trace.trace_id), outcome.is_complete)
    return _simplify(total)


def exact_variance(trace: FullTrace, estimator: EstimatorFn) -> int | float | Fraction:
    """Variance of an estimator over all sampling outcomes of ``trace``.

    The empty outcome contributes an estimate of zero with the residual
    probability.
    """
    table = enumerate_outcomes(trace)
    first: int | float | Fraction = Fraction(0)
    second: int | float | Fraction = Fraction(0)
    for outcome in table.outcomes:
        value = estimator(outcome.sample(trace.trace_id), outcome.is_complete)
        first += outcome.probability * value
        second += outcome.probability * value * value
    return _simplify(second - first * first)


def _simplify(x: int | float | Fraction) -> int | float | Fraction:
    if isinstance(x, Fraction) and x.denominator == 1:
        return int(x)
    return x


def monte_carlo_estimate(
    traces: Iterable[FullTrace],
    estimator: EstimatorFn,
    draws: int,
    seed: int,
) -> tuple[float, float | None]:
    """Empirical mean and standard error of a composite estimate.

    Each draw assigns every trace a fresh shared random value, runs the
    sampling pipeline, and sums the estimator over the surviving traces.
    Deterministic for a fixed seed. The standard error is ``None`` when
    only one draw was requested.
    """
    if draws < 1:
        raise ValueError("at least one draw is required")
    trace_list: Sequence[FullTrace] = list(traces)
    rng = random.Random(seed)
    totals = []
    for _ in range(draws):
        total = 0.0
        for trace in trace_list:
            sampled = sample_trace(trace, threshold=rng.random())
            if sampled is not None:
                total += estimator(sampled, len(sampled.spans) == len(trace.spans))
        totals.append(total)
    mean = fmean(totals)
    stderr = stdev(totals) / sqrt(draws) if draws > 1 else None
    return mean, stderr
