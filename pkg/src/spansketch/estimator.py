"""Unbiased estimation of trace quantities from partially sampled traces.

Two estimators are provided. ``estimate_complete_only`` is the classical
scheme: it uses a sampled trace only when it is known to be complete,
weighting the quantity by the reciprocal of the minimum rate. It needs
external completeness knowledge and throws away every fragment.

``estimate_partial`` needs no completeness knowledge. It walks the sampled
set's rate ladder from the bottom, stripping the minimum-rate spans at
each step and accumulating the change in the quantity weighted by the
reciprocal of the rate just stripped:

    estimate = sum over rungs p of (q(before) - q(after)) / p
               + q(top-rung set) / p_max

Outcomes sampled at lower thresholds thereby correct exactly the error
contributed by less complete outcomes, which makes the expectation over
the shared randomness equal the quantity's full-trace value.

When every rate is a power of two and the quantity is integer-valued, all
weights are integers and the returned estimates are exact integers.
Otherwise results are 64-bit floats; tests and callers should allow for
about 1e-9 of accumulated rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

from .model import FullTrace, SampledTrace, SamplingRate, Span, TraceId, build_rate_ladder
from .quantity import QuantitySpec
from .sampler import downsample, downsampling_chain

Number = int | float


def _as_integer(x: Number) -> int | None:
    if isinstance(x, int):
        return x
    if isinstance(x, float) and x.is_integer():
        return int(x)
    return None


def _scaled(delta: Number, rate: SamplingRate) -> Number:
    """``delta / rate``, kept in exact integers whenever possible."""
    reciprocal = rate.reciprocal()
    if isinstance(reciprocal, int):
        as_int = _as_integer(delta)
        if as_int is not None:
            return as_int * reciprocal
    return float(delta) * float(reciprocal)


def _chain_values(quantity: QuantitySpec, chain: list[frozenset[Span]]) -> list[Number]:
    """Quantity values along a downsampling chain, normalized to int when integral."""
    values: list[Number] = []
    for members in chain:
        v = quantity.evaluate(members)
        vi = _as_integer(v)
        values.append(vi if vi is not None else v)
    return values


@dataclass(frozen=True)
class EstimateReport:
    """Composite estimate over a stream of sampled traces."""

    estimate: Number
    contributing_traces: int
    per_trace_terms: tuple[tuple[TraceId, Number], ...] | None = None


def estimate_partial(sample: SampledTrace, quantity: QuantitySpec) -> Number:
    """Unbiased estimate of a quantity from one sampled trace, complete or not."""
    chain, ladder = downsampling_chain(sample.spans)
    values = _chain_values(quantity, chain)
    estimate: Number = 0
    for i in range(1, len(chain)):
        estimate += _scaled(values[i - 1] - values[i], ladder[i - 1])
    return estimate + _scaled(values[-1], ladder.maximum)


def estimate_complete_only(sample: SampledTrace, quantity: QuantitySpec, is_complete: bool) -> Number:
    """Estimate using only samples known to be complete; fragments contribute 0.

    Completeness is generally not decidable from a sampled trace alone
    (missing leaves leave no mark), so the flag must come from whoever
    owns the ground truth, typically a simulation ledger.
    """
    if not is_complete:
        return 0
    minimum = build_rate_ladder(sample.spans).minimum
    return _scaled(quantity.evaluate(sample.spans), minimum)


def estimate_matching_spans(sample: SampledTrace, predicate: Callable[[Span], bool]) -> Number:
    """Estimate how many spans match a per-span predicate.

    Closed form of ``estimate_partial`` with a matching-span-count
    quantity: the sum of reciprocal rates of the matching sampled spans.
    """
    total: Number = 0
    for span in sample.spans:
        if predicate(span):
            total += span.rate.reciprocal()
    return total


def estimate_indicator(sample: SampledTrace, quantity: QuantitySpec) -> Number:
    """Estimate a monotone 0/1 trace property.

    Closed form of ``estimate_partial``: zero when the sample does not
    match, otherwise the reciprocal of the minimum rate among the spans
    needed for the match, found as the highest ladder rung below which the
    indicator still holds.
    """
    if not (quantity.claims_monotonic and quantity.claims_indicator):
        raise ValueError("specialization requires a monotone indicator quantity")
    chain, ladder = downsampling_chain(sample.spans)
    if quantity.evaluate(chain[0]) == 0:
        return 0
    k = 1
    for j in range(2, len(chain) + 1):
        if quantity.evaluate(chain[j - 1]) == 1:
            k = j
    return _scaled(1, ladder[k - 1])


def composite_estimate(
    samples: Iterable[SampledTrace],
    quantity: QuantitySpec,
    keep_terms: bool = False,
) -> EstimateReport:
    """Sum per-trace estimates over a stream of sampled traces.

    Traces that left no spans behind are simply absent from the stream and
    contribute zero. Each trace id must appear exactly once; reassemble
    the stream first if spans arrive interleaved.
    """
    seen: set[TraceId] = set()
    total: Number = 0
    terms: list[tuple[TraceId, Number]] = []
    for sample in samples:
        if sample.trace_id in seen:
            raise ValueError(f"stream not grouped: trace id {sample.trace_id:#x} appears more than once")
        seen.add(sample.trace_id)
        term = estimate_partial(sample, quantity)
        total += term
        if keep_terms:
            terms.append((sample.trace_id, term))
    return EstimateReport(
        estimate=total,
        contributing_traces=len(seen),
        per_trace_terms=tuple(terms) if keep_terms else None,
    )


def variance_partial_exact(trace: FullTrace, quantity: QuantitySpec) -> Number:
    """Closed-form sampling variance of ``estimate_partial`` for a known trace.

    With ladder rates p_1 < ... < p_n and full-trace value q(S):

        q(S)^2 (1/p_n - 1)
        + sum over j < n of (q(S) - q(above p_j))^2 (1/p_j - 1/p_{j+1})

    Exact integers in the power-of-two/integer-quantity regime.
    """
    chain, ladder = downsampling_chain(trace.spans)
    values = _chain_values(quantity, chain)
    full = values[0]
    reciprocals = [r.reciprocal() for r in ladder]
    total: Number = full * full * (reciprocals[-1] - 1)
    for j in range(len(ladder) - 1):
        delta = full - values[j + 1]
        total += delta * delta * (reciprocals[j] - reciprocals[j + 1])
    return total


def variance_complete_only_exact(trace: FullTrace, quantity: QuantitySpec) -> Number:
    """Closed-form sampling variance of ``estimate_complete_only``:
    q(S)^2 (1/min_rate - 1)."""
    value = quantity.evaluate(trace.spans)
    full = _as_integer(value)
    if full is None:
        full = value
    minimum = build_rate_ladder(trace.spans).minimum
    return full * full * (minimum.reciprocal() - 1)
