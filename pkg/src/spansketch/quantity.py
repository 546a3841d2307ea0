"""Quantity functions: what gets measured on a span set.

A quantity maps any nonempty span set to a real number (a count, an
indicator, a depth). Estimation never requires knowing whether the set is
a complete trace; it only requires that the quantity be defined on every
subset it may be handed. Two structural properties matter for variance
guarantees and are carried as caller-asserted flags:

* *bounded*: on any subset, the value stays within [0, 2x] of the full
  trace's value x (interval flipped when x is negative);
* *monotonic*: shrinking the set never moves the value above the larger
  set's value or below zero. Monotonic implies bounded.

Quantities that inspect ancestor links see exactly the links carried by
the spans they are given; a link whose target span is absent proves
nothing and is treated as unknown lineage.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import AbstractSet, Callable

from .model import FullTrace, LinkKind, Span, SpanId
from .sampler import downsampling_chain

SpanSet = AbstractSet[Span]


@dataclass(frozen=True)
class QuantitySpec:
    """A named quantity function plus its claimed structural properties.

    ``evaluate`` must be pure, deterministic, and total on nonempty span
    sets. The claim flags are assertions by whoever defines the quantity,
    not proofs; estimates stay unbiased regardless, but the
    variance-ordering guarantees hold only when the claims do.
    """

    name: str
    evaluate: Callable[[SpanSet], int | float]
    claims_bounded: bool = False
    claims_monotonic: bool = False
    claims_indicator: bool = False

    def __post_init__(self) -> None:
        if self.claims_monotonic and not self.claims_bounded:
            object.__setattr__(self, "claims_bounded", True)


def const_one() -> QuantitySpec:
    """Counts traces: evaluates to 1 on every nonempty span set."""
    return QuantitySpec("const-one", lambda spans: 1, claims_monotonic=True, claims_indicator=True)


def span_count() -> QuantitySpec:
    """Counts spans: the cardinality of the set."""
    return QuantitySpec("span-count", len, claims_monotonic=True)


def matching_span_count(predicate: Callable[[Span], bool], name: str = "match-spans") -> QuantitySpec:
    """Counts the spans satisfying ``predicate``."""
    return QuantitySpec(
        name,
        lambda spans: sum(1 for s in spans if predicate(s)),
        claims_monotonic=True,
    )


def trace_indicator(
    predicate: Callable[[SpanSet], bool],
    monotone: bool,
    name: str = "trace-has",
) -> QuantitySpec:
    """0/1 quantity from a set predicate.

    ``monotone`` is the caller's claim that adding spans can never turn a
    match into a non-match. Predicates like "contains a call to service X"
    are monotone; "called X but not Y" is not, because a subset missing
    the Y span looks like a match.
    """
    return QuantitySpec(
        name,
        lambda spans: 1 if predicate(spans) else 0,
        claims_monotonic=monotone,
        claims_bounded=monotone,
        claims_indicator=True,
    )


def _link_target(span: Span, by_id: dict[SpanId, Span]) -> Span | None:
    if span.link.kind is LinkKind.ROOT:
        return None
    return by_id.get(span.link.ancestor_span_id)


def call_depth() -> QuantitySpec:
    """Longest known root-to-leaf path, counting edges.

    A link to a retained ancestor contributes ``1 + skipped`` edges, so
    generation distance survives even when connecting spans are gone.
    Spans whose lineage is unknown (root marker, or a link whose target is
    absent) head their own fragment and measure from zero. Removing spans
    can only break paths apart, so depth never grows under removal.
    """

    def evaluate(spans: SpanSet) -> int:
        by_id = {s.span_id: s for s in spans}

        def depth_of(span: Span, on_path: frozenset[SpanId]) -> int:
            target = _link_target(span, by_id)
            if target is None or target.span_id in on_path:
                return 0
            step = 1 + span.link.skipped
            return step + depth_of(target, on_path | {span.span_id})

        return max(depth_of(s, frozenset()) for s in spans)

    return QuantitySpec("depth", evaluate, claims_monotonic=True)


def a_calls_b(service_a: str, service_b: str) -> QuantitySpec:
    """Indicator: the set proves some ``service_a`` span has a ``service_b`` descendant.

    Proof means an unbroken chain of links whose endpoints are all
    present; a nearest-retained-ancestor link bridges discarded spans and
    still counts. Adding spans can only add chains, never remove them, so
    the indicator is monotone.
    """

    def evaluate(spans: SpanSet) -> int:
        by_id = {s.span_id: s for s in spans}
        children: dict[SpanId, list[Span]] = defaultdict(list)
        for s in spans:
            if s.link.kind is not LinkKind.ROOT and s.link.ancestor_span_id in by_id:
                children[s.link.ancestor_span_id].append(s)
        starts = [s for s in spans if s.service == service_a]
        for start in starts:
            stack = list(children[start.span_id])
            seen: set[SpanId] = set()
            while stack:
                cur = stack.pop()
                if cur.span_id in seen:
                    continue
                seen.add(cur.span_id)
                if cur.service == service_b:
                    return 1
                stack.extend(children[cur.span_id])
        return 0

    return QuantitySpec(
        f"a-calls-b:{service_a},{service_b}",
        evaluate,
        claims_monotonic=True,
        claims_indicator=True,
    )


@dataclass(frozen=True)
class ClaimViolation:
    """One claimed property failing on one rung of a downsampling chain."""

    claim: str
    rung: int
    value: int | float
    bound: int | float


def check_claims_on_chain(spec: QuantitySpec, trace: FullTrace) -> list[ClaimViolation]:
    """Test a quantity's claimed flags against one trace's downsampling chain.

    Evaluates the quantity on every set obtained by raising the sampling
    threshold through the trace's rate ladder and reports each point where
    a claimed bound fails. An empty report does not prove the claims in
    general; a nonempty one disproves them.
    """
    if not trace.spans:
        return []
    chain, _ = downsampling_chain(trace.spans)
    values = [spec.evaluate(members) for members in chain]
    full = values[0]
    violations: list[ClaimViolation] = []
    if spec.claims_bounded:
        lo, hi = (2 * full, 0) if full < 0 else (0, 2 * full)
        for rung, value in enumerate(values):
            if not lo <= value <= hi:
                violations.append(ClaimViolation("bounded", rung, value, hi if value > hi else lo))
    if spec.claims_monotonic:
        for rung in range(1, len(values)):
            prev, cur = values[rung - 1], values[rung]
            lo, hi = (prev, 0) if prev < 0 else (0, prev)
            if not lo <= cur <= hi:
                violations.append(ClaimViolation("monotonic", rung, cur, prev))
    return violations
