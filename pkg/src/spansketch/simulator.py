"""Synthetic call-tree generation and end-to-end sampling runs.

Traces are random rooted trees (child counts drawn from a capped Poisson
law) with services, errors, and timings attached, then rated by a
configurable policy and pushed through the sampling pipeline. Every trace
is generated from an RNG derived from ``(seed, ordinal)``, so runs are
reproducible span for span and generation parallelizes cleanly; only the
rate-limited policy is inherently sequential, since each span's rate
depends on earlier traffic.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .io import LedgerEntry
from .model import (
    MAX_RATE_EXPONENT,
    AncestorLink,
    FullTrace,
    SampledTrace,
    SamplingRate,
    Span,
    SpanId,
)
from .sampler import (
    RateLimiterState,
    discretize_rate,
    draw_shared_index,
    rate_limiter_observe,
    sample_trace,
)

FANOUT_CAP = 16
DEPTH_CAP = 32

_POLICY_KINDS = ("fixed-exponent", "per-service-exponent", "depth-scaled", "error-boosted", "rate-limited")


@dataclass(frozen=True)
class RatePolicy:
    """How sampling-rate exponents are assigned to generated spans."""

    kind: str
    exponent: int = 0
    per_service: tuple[tuple[str, int], ...] = ()
    default_exponent: int = 0
    base_exponent: int = 0
    step: int = 0
    boosted_exponent: int = 0

    def __post_init__(self) -> None:
        if self.kind not in _POLICY_KINDS:
            raise ValueError(f"unknown rate policy kind {self.kind!r}")

    @classmethod
    def fixed(cls, exponent: int) -> "RatePolicy":
        return cls("fixed-exponent", exponent=_check_exponent(exponent))

    @classmethod
    def per_service(cls, exponents: Mapping[str, int], default: int = 0) -> "RatePolicy":
        table = tuple(sorted((svc, _check_exponent(e)) for svc, e in exponents.items()))
        return cls("per-service-exponent", per_service=table, default_exponent=_check_exponent(default))

    @classmethod
    def depth_scaled(cls, base: int, step: int) -> "RatePolicy":
        return cls("depth-scaled", base_exponent=_check_exponent(base), step=step)

    @classmethod
    def error_boosted(cls, base: int, boosted: int) -> "RatePolicy":
        return cls("error-boosted", base_exponent=_check_exponent(base), boosted_exponent=_check_exponent(boosted))

    @classmethod
    def rate_limited(cls) -> "RatePolicy":
        """Rates come from per-service rate limiters; the limit lives in the config."""
        return cls("rate-limited")


def _check_exponent(e: int) -> int:
    if not 0 <= e <= MAX_RATE_EXPONENT:
        raise ValueError(f"exponent {e} outside [0, {MAX_RATE_EXPONENT}]")
    return e


@dataclass(frozen=True)
class SimulationConfig:
    trace_count: int
    seed: int
    branching: float = 1.2  # mean child count, capped at FANOUT_CAP
    max_depth: int = 5
    service_pool: tuple[str, ...] = ("web", "auth", "db", "cache")
    error_rate: float = 0.02
    rate_policy: RatePolicy = field(default_factory=lambda: RatePolicy.fixed(2))
    rate_limit: float | None = None  # spans/second per service, rate-limited policy only
    trace_interval_micros: int = 1000

    def __post_init__(self) -> None:
        if self.trace_count < 0:
            raise ValueError("trace count cannot be negative")
        if self.branching < 0:
            raise ValueError("branching cannot be negative")
        if not 1 <= self.max_depth <= DEPTH_CAP:
            raise ValueError(f"max depth must lie in [1, {DEPTH_CAP}]")
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error rate must lie in [0, 1]")
        if not self.service_pool:
            raise ValueError("service pool cannot be empty")
        if self.rate_policy.kind == "rate-limited" and not self.rate_limit:
            raise ValueError("rate-limited policy requires a rate limit")
        if self.trace_interval_micros <= 0:
            raise ValueError("trace interval must be positive")


def _poisson_capped(rng: random.Random, lam: float, cap: int) -> int:
    if lam <= 0:
        return 0
    # Knuth's method; fine for the small means used here.
    import math

    threshold = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= threshold or k >= cap:
            return min(k, cap)
        k += 1


def _derive_rng(seed: int, ordinal: int) -> random.Random:
    return random.Random(((seed & ((1 << 64) - 1)) * 0x9E3779B97F4A7C15 + ordinal) & ((1 << 64) - 1))


def _policy_exponent(policy: RatePolicy, service: str, depth: int, error: bool) -> int:
    if policy.kind == "fixed-exponent":
        return policy.exponent
    if policy.kind == "per-service-exponent":
        return dict(policy.per_service).get(service, policy.default_exponent)
    if policy.kind == "depth-scaled":
        return max(0, min(MAX_RATE_EXPONENT, policy.base_exponent + policy.step * depth))
    if policy.kind == "error-boosted":
        return policy.boosted_exponent if error else policy.base_exponent
    raise ValueError(f"policy kind {policy.kind!r} does not map to a fixed exponent")


def generate_trace(
    config: SimulationConfig,
    rng: random.Random,
    ordinal: int = 0,
    limiters: dict[str, RateLimiterState] | None = None,
) -> FullTrace:
    """Build one random full trace.

    ``limiters`` holds the per-service rate-limiter states for the
    rate-limited policy; the caller keeps the dict across traces so limits
    apply to the whole span stream, not per trace.
    """
    trace_id = ((ordinal + 1) << 64) | rng.getrandbits(64)
    used_ids: set[SpanId] = set()

    def new_span_id() -> SpanId:
        while True:
            candidate = rng.getrandbits(64)
            if candidate and candidate not in used_ids:
                used_ids.add(candidate)
                return candidate

    base_start = ordinal * config.trace_interval_micros
    # (span_id, parent_span_id, depth, service, start, duration, error)
    protos: list[tuple[SpanId, SpanId | None, int, str, int, int, bool]] = []
    root_id = new_span_id()
    protos.append(
        (
            root_id,
            None,
            0,
            rng.choice(config.service_pool),
            base_start,
            rng.randint(100, 20000),
            rng.random() < config.error_rate,
        )
    )
    frontier = [(root_id, 0, base_start)]
    while frontier:
        parent_id, depth, parent_start = frontier.pop(0)
        if depth + 1 >= config.max_depth:
            continue
        for _ in range(_poisson_capped(rng, config.branching, FANOUT_CAP)):
            child_id = new_span_id()
            start = parent_start + rng.randint(1, 20)
            protos.append(
                (
                    child_id,
                    parent_id,
                    depth + 1,
                    rng.choice(config.service_pool),
                    start,
                    rng.randint(100, 20000),
                    rng.random() < config.error_rate,
                )
            )
            frontier.append((child_id, depth + 1, start))

    rates: dict[SpanId, SamplingRate] = {}
    if config.rate_policy.kind == "rate-limited":
        if limiters is None:
            limiters = {}
        for span_id, _, _, service, start, _, _ in sorted(protos, key=lambda p: (p[4], p[0])):
            state = limiters.get(service)
            if state is None:
                state = RateLimiterState.initial(config.rate_limit)  # type: ignore[arg-type]
            state, rho = rate_limiter_observe(state, start)
            limiters[service] = state
            rates[span_id] = discretize_rate(rho, rng)
    else:
        for span_id, _, depth, service, _, _, error in protos:
            rates[span_id] = SamplingRate.from_exponent(
                _policy_exponent(config.rate_policy, service, depth, error)
            )

    spans = [
        Span(
            trace_id=trace_id,
            span_id=span_id,
            link=AncestorLink.root() if parent_id is None else AncestorLink.parent(parent_id),
            rate=rates[span_id],
            service=service,
            operation=f"op-{depth}",
            start_micros=start,
            duration_micros=duration,
            error=error,
        )
        for span_id, parent_id, depth, service, start, duration, error in protos
    ]
    return FullTrace(trace_id=trace_id, spans=frozenset(spans), shared_index=draw_shared_index(rng))


def run_simulation(config: SimulationConfig) -> tuple[list[Span], list[LedgerEntry]]:
    """Generate, rate, and sample ``trace_count`` traces.

    Returns the retained spans, interleaved across traces in start-time
    order, plus a ground-truth ledger holding every full trace and its
    completeness flag. Estimator evaluations should read only the span
    stream; the ledger exists for verification against the truth.
    """
    emitted: list[Span] = []
    ledger: list[LedgerEntry] = []
    limiters: dict[str, RateLimiterState] = {}
    for ordinal in range(config.trace_count):
        rng = _derive_rng(config.seed, ordinal)
        trace = generate_trace(config, rng, ordinal=ordinal, limiters=limiters)
        sampled = sample_trace(trace)
        complete = sampled is not None and len(sampled.spans) == len(trace.spans)
        ledger.append(LedgerEntry(trace=trace, complete=complete))
        if sampled is not None:
            emitted.extend(sampled.spans)
    emitted.sort(key=lambda s: (s.start_micros, s.trace_id, s.span_id))
    return emitted, ledger


def sort_by_completeness(samples: Iterable[tuple[SampledTrace, int | None]]) -> list[SampledTrace]:
    """Order sampled traces from most to least complete.

    Takes ``(sample, shared_index)`` pairs; a larger index means a smaller
    shared random value and therefore a more completely sampled trace.
    Ties break by trace id for a stable order.
    """
    pairs = list(samples)
    for sample, index in pairs:
        if index is None:
            raise ValueError(f"trace {sample.trace_id:#x} carries no shared index")
    pairs.sort(key=lambda p: (-p[1], p[0].trace_id))  # type: ignore[operator]
    return [sample for sample, _ in pairs]


def random_compact_trace(
    rng: random.Random,
    max_spans: int,
    max_exponent: int = 6,
    general_rates: bool = False,
    service_pool: Sequence[str] = ("svc-a", "svc-b", "svc-c"),
) -> FullTrace:
    """Small random trace for verification corpora.

    Uniform size in [1, max_spans], random attachment tree, rates drawn
    per span (power-of-two exponents up to ``max_exponent``, or arbitrary
    reals when ``general_rates``). Carries no shared randomness; oracle
    enumeration does not need any.
    """
    if max_spans < 1:
        raise ValueError("need room for at least one span")
    n = rng.randint(1, max_spans)
    trace_id = rng.getrandbits(128) | 1
    span_ids: list[SpanId] = []
    spans: list[Span] = []
    for i in range(n):
        span_id = (rng.getrandbits(64) | 1) & ((1 << 64) - 1)
        while span_id in span_ids:
            span_id = (rng.getrandbits(64) | 1) & ((1 << 64) - 1)
        if general_rates:
            rate = SamplingRate.from_value(rng.uniform(1e-6, 1.0))
        else:
            rate = SamplingRate.from_exponent(rng.randint(0, max_exponent))
        link = AncestorLink.root() if i == 0 else AncestorLink.parent(rng.choice(span_ids))
        spans.append(
            Span(
                trace_id=trace_id,
                span_id=span_id,
                link=link,
                rate=rate,
                service=rng.choice(list(service_pool)),
                operation=f"op-{i}",
                start_micros=i * 10,
                duration_micros=rng.randint(10, 1000),
                error=rng.random() < 0.3,
            )
        )
        span_ids.append(span_id)
    return FullTrace(trace_id=trace_id, spans=frozenset(spans))
