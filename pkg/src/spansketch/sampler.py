"""Consistent sampling decisions driven by one shared random value per trace.

Every span of a trace is tested against the same random threshold, so the
spans retained at a low threshold are always a superset of those retained
at a higher one. A trace survives completely exactly when the threshold
falls below the minimum rate of its spans.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from typing import Callable, Iterable

from .model import (
    MAX_RATE_EXPONENT,
    AncestorLink,
    FullTrace,
    LinkKind,
    RateLadder,
    SampledTrace,
    SamplingRate,
    Span,
    TraceId,
    build_rate_ladder,
)

_WORD_MASK = (1 << 64) - 1


def leading_zero_index(word: int) -> int:
    """Number of leading zero bits of a 64-bit word, clamped to 62."""
    return min(64 - (word & _WORD_MASK).bit_length(), MAX_RATE_EXPONENT)


def draw_shared_index(rng: random.Random) -> int:
    """Draw the shared-randomness interval index for one trace.

    The index ``i`` stands for a threshold in ``[2**-(i+1), 2**-i)`` and is
    geometrically distributed: ``P(i = k) = 2**-(k+1)`` for ``k < 62``, with
    the tail mass collected at 62. Counting the leading zeros of one
    uniform 64-bit word produces exactly this distribution.
    """
    return leading_zero_index(rng.getrandbits(64))


def _mix64(x: int) -> int:
    x &= _WORD_MASK
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _WORD_MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _WORD_MASK
    return x ^ (x >> 31)


def shared_random_from_trace_id(trace_id: TraceId) -> float:
    """Derive the shared random value deterministically from a trace id.

    Both 64-bit halves of the id pass through an avalanching bit mixer, so
    even near-sequential ids map to well-spread values. The top 53 bits of
    the mixed word become a float in [0, 1). Useful when no explicit
    random value is propagated alongside the trace id.
    """
    if not 0 < trace_id < (1 << 128):
        raise ValueError("trace id must be a nonzero 128-bit integer")
    mixed = _mix64(_mix64(trace_id & _WORD_MASK) ^ _mix64(trace_id >> 64))
    return (mixed >> 11) * 2.0**-53


def sample_decision(r: float, rate: SamplingRate) -> bool:
    """Keep a span iff the shared value lies strictly below its rate.

    Strict comparison means rate 1.0 always samples (``r < 1`` holds for
    every admissible ``r``). For power-of-two rates this is equivalent to
    the integer comparison ``shared_index >= exponent``.
    """
    if not 0.0 <= r < 1.0:
        raise ValueError("shared random must lie in [0, 1)")
    return r < rate.value


def downsample(
    spans: Iterable[Span],
    threshold: float,
    rate_of: Callable[[Span], SamplingRate] | None = None,
) -> frozenset[Span]:
    """Spans whose rate strictly exceeds ``threshold``.

    A threshold of 0 keeps everything. ``rate_of`` overrides the rate
    attached to each span, which lets analyses re-run the same trace under
    an alternative rate assignment.
    """
    if rate_of is None:
        return frozenset(s for s in spans if s.rate.value > threshold)
    return frozenset(s for s in spans if rate_of(s).value > threshold)


def downsampling_chain(spans: Iterable[Span]) -> tuple[list[frozenset[Span]], RateLadder]:
    """All nonempty sets reachable by raising the threshold through the ladder.

    Returns ``(chain, ladder)`` where ``chain[i]`` holds the spans whose
    rate exceeds ``ladder[i-1]`` (``chain[0]`` is the full input). The last
    member contains only the maximum-rate spans.
    """
    current = frozenset(spans)
    ladder = build_rate_ladder(current)
    chain = [current]
    for rung in ladder.rates[:-1]:
        current = downsample(current, rung.value)
        chain.append(current)
    return chain, ladder


def probability_complete(spans: Iterable[Span]) -> float:
    """Probability that a span set survives sampling in full: its minimum rate."""
    rates = [s.rate.value for s in spans]
    if not rates:
        raise ValueError("empty span set")
    return min(rates)


@dataclass(frozen=True)
class RateLimiterState:
    """Pure state for rate-limited sampling of one keyed span stream.

    Tracks an exponentially weighted moving average of the gap between
    consecutive spans; the desired sampling rate is ``min(1, gap * limit)``
    so that the expected retained throughput approaches the limit.
    """

    limit_per_second: float
    ewma_gap_seconds: float = 0.0
    ewma_alpha: float = 0.2
    last_timestamp_micros: int | None = None

    def __post_init__(self) -> None:
        if self.limit_per_second <= 0:
            raise ValueError("rate limit must be positive")
        if self.ewma_gap_seconds < 0:
            raise ValueError("gap estimate cannot be negative")
        if not 0.0 < self.ewma_alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    @classmethod
    def initial(cls, limit_per_second: float, alpha: float = 0.2) -> "RateLimiterState":
        return cls(limit_per_second=limit_per_second, ewma_alpha=alpha)


def rate_limiter_observe(state: RateLimiterState, now_micros: int) -> tuple[RateLimiterState, float]:
    """Account for one span at ``now_micros``; return (new state, desired rate).

    The first observation falls back to a prior gap of ``1 / limit`` when
    no usable gap estimate exists yet, so the desired rate starts at 1
    rather than 0. Timestamps must not go backwards.
    """
    last = state.last_timestamp_micros
    if last is None:
        gap = state.ewma_gap_seconds if state.ewma_gap_seconds > 0 else 1.0 / state.limit_per_second
    else:
        if now_micros < last:
            raise ValueError("non-monotonic timestamp")
        observed = (now_micros - last) / 1e6
        gap = state.ewma_alpha * observed + (1.0 - state.ewma_alpha) * state.ewma_gap_seconds
    new_state = replace(state, ewma_gap_seconds=gap, last_timestamp_micros=now_micros)
    return new_state, min(1.0, gap * state.limit_per_second)


def discretize_rate(rho: float, rng: random.Random) -> SamplingRate:
    """Randomize a desired rate onto the power-of-two grid, preserving its mean.

    For ``rho`` in ``(2**-(i+1), 2**-i]`` the result is exponent ``i`` with
    probability ``(rho - 2**-(i+1)) / (2**-i - 2**-(i+1))`` and exponent
    ``i + 1`` otherwise, so the expected returned rate equals ``rho``
    exactly. Lets rate-limited streams honor arbitrary effective rates
    while every individual span still carries a power-of-two rate.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError("desired rate must lie in (0, 1]")
    mantissa, exp2 = math.frexp(rho)  # rho = mantissa * 2**exp2, mantissa in [0.5, 1)
    i = 1 - exp2 if mantissa == 0.5 else -exp2
    if i >= MAX_RATE_EXPONENT:
        return SamplingRate.from_exponent(MAX_RATE_EXPONENT)
    upper = math.ldexp(1.0, -i)
    lower = math.ldexp(1.0, -(i + 1))
    take_upper = rng.random() < (rho - lower) / (upper - lower)
    return SamplingRate.from_exponent(i if take_upper else i + 1)


def sample_trace(trace: FullTrace, threshold: float | None = None) -> SampledTrace | None:
    """Apply the shared-threshold decision to every span of a full trace.

    The threshold defaults to the trace's own shared randomness; passing
    one explicitly replays the trace under a different draw. Returns
    ``None`` when nothing survives. Each retained span's upward link is
    rewritten to what a real collection pipeline would propagate: a direct
    parent link when the parent survived, otherwise a link to the nearest
    retained ancestor carrying the count of discarded spans in between, or
    the root marker when no ancestor survived at all.
    """
    if threshold is None:
        threshold = trace.threshold()
    elif not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    kept = downsample(trace.spans, threshold)
    if not kept:
        return None
    if len(kept) == len(trace.spans):
        # complete: every parent survived, so links are already correct
        return SampledTrace(trace_id=trace.trace_id, spans=kept)
    by_id = trace.spans_by_id()
    kept_ids = {s.span_id for s in kept}

    rewritten = []
    for span in kept:
        link = span.link
        if link.kind is not LinkKind.ROOT:
            generations = 0
            cur = span
            target: Span | None = None
            while True:
                cur_link = cur.link
                if cur_link.kind is LinkKind.ROOT:
                    break
                generations += 1 + cur_link.skipped
                nxt = by_id.get(cur_link.ancestor_span_id)
                if nxt is None:
                    break
                if nxt.span_id in kept_ids:
                    target = nxt
                    break
                cur = nxt
            if target is None:
                link = AncestorLink.root()
            elif generations == 1:
                link = AncestorLink.parent(target.span_id)
            else:
                link = AncestorLink.ancestor(target.span_id, generations - 1)
        rewritten.append(span if link == span.link else replace(span, link=link))
    return SampledTrace(trace_id=trace.trace_id, spans=frozenset(rewritten))
