"""Core data model: spans, traces, sampling rates, and ancestor links.

A trace is the set of spans sharing one 128-bit trace id, connected into a
tree by parent links. Every span carries the sampling rate that was in
effect when it was observed; the distinct rates of a span set form its
*rate ladder*, the ascending sequence of thresholds at which progressively
larger subsets of the trace survive sampling.

All types are immutable value objects and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Iterator, Mapping

TraceId = int  # 128-bit, nonzero
SpanId = int  # 64-bit, nonzero

MAX_RATE_EXPONENT = 62  # 2**-62 is the smallest expressible power-of-two rate
SKIP_SATURATION = 0xFFFF  # ancestor-link skip counts clamp here

_TRACE_ID_LIMIT = 1 << 128
_SPAN_ID_LIMIT = 1 << 64


@dataclass(frozen=True, eq=False)
class SamplingRate:
    """A per-span sampling rate in (0, 1].

    Two representations are supported: *exponent* mode stores an integer
    ``j`` meaning the rate ``2**-j`` (exact in binary floating point for
    ``j <= 62``, and the mode that keeps count estimates integral), and
    *general* mode stores an arbitrary probability. Rates compare, hash,
    and deduplicate by exact numeric value, so an exponent rate and a
    general rate of equal value are interchangeable.
    """

    exponent: int | None = None
    general: float | None = None

    def __post_init__(self) -> None:
        if (self.exponent is None) == (self.general is None):
            raise ValueError("exactly one of exponent/general must be set")
        if self.exponent is not None:
            if not 0 <= self.exponent <= MAX_RATE_EXPONENT:
                raise ValueError(f"exponent {self.exponent} outside [0, {MAX_RATE_EXPONENT}]")
            object.__setattr__(self, "_value", math.ldexp(1.0, -self.exponent))
        else:
            if not 0.0 < self.general <= 1.0:  # type: ignore[operator]
                raise ValueError(f"rate {self.general} outside (0, 1]")
            object.__setattr__(self, "_value", float(self.general))  # type: ignore[arg-type]

    @classmethod
    def from_exponent(cls, j: int) -> "SamplingRate":
        return cls(exponent=j)

    @classmethod
    def from_value(cls, value: float) -> "SamplingRate":
        return cls(general=value)

    @property
    def is_exponent(self) -> bool:
        return self.exponent is not None

    @property
    def value(self) -> float:
        return self._value  # type: ignore[attr-defined]

    def as_fraction(self) -> Fraction:
        if self.exponent is not None:
            return Fraction(1, 1 << self.exponent)
        return Fraction(self.general)  # exact binary expansion of the double

    def reciprocal(self) -> int | float:
        """1/rate; an exact integer in exponent mode."""
        if self.exponent is not None:
            return 1 << self.exponent
        return 1.0 / self.general  # type: ignore[operator]

    # Both representations denote values exactly expressible as binary64
    # doubles, so float comparison and hashing are exact here.
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SamplingRate):
            return NotImplemented
        return self._value == other._value  # type: ignore[attr-defined]

    def __hash__(self) -> int:
        return hash(self._value)  # type: ignore[attr-defined]

    def __lt__(self, other: "SamplingRate") -> bool:
        if not isinstance(other, SamplingRate):
            return NotImplemented
        return self._value < other._value  # type: ignore[attr-defined]

    def __le__(self, other: "SamplingRate") -> bool:
        if not isinstance(other, SamplingRate):
            return NotImplemented
        return self._value <= other._value  # type: ignore[attr-defined]

    def __gt__(self, other: "SamplingRate") -> bool:
        if not isinstance(other, SamplingRate):
            return NotImplemented
        return self._value > other._value  # type: ignore[attr-defined]

    def __ge__(self, other: "SamplingRate") -> bool:
        if not isinstance(other, SamplingRate):
            return NotImplemented
        return self._value >= other._value  # type: ignore[attr-defined]

    def __repr__(self) -> str:
        if self.exponent is not None:
            return f"SamplingRate(2**-{self.exponent})"
        return f"SamplingRate({self.general})"


RATE_ONE = SamplingRate.from_exponent(0)


class LinkKind(Enum):
    """How a span relates to the rest of its trace."""

    ROOT = "root"
    PARENT = "parent"
    ANCESTOR = "ancestor"


@dataclass(frozen=True)
class AncestorLink:
    """Upward reference carried by a span.

    ``ROOT`` marks a span with no known sampled ancestor (the true trace
    root, or the head of a fragment whose every ancestor was discarded).
    ``PARENT`` points at the direct parent. ``ANCESTOR`` points at the
    nearest retained ancestor and records how many consecutive discarded
    spans sit in between, which preserves the generation distance even
    when the connecting spans are gone.
    """

    kind: LinkKind
    ancestor_span_id: SpanId | None = None
    skipped: int = 0

    def __post_init__(self) -> None:
        if self.kind is LinkKind.ROOT:
            if self.ancestor_span_id is not None or self.skipped != 0:
                raise ValueError("root link carries no ancestor reference")
        else:
            if self.ancestor_span_id is None:
                raise ValueError(f"{self.kind.value} link requires an ancestor span id")
            if not 0 < self.ancestor_span_id < _SPAN_ID_LIMIT:
                raise ValueError("ancestor span id out of range")
        if self.kind is LinkKind.PARENT and self.skipped != 0:
            raise ValueError("direct parent link cannot skip spans")
        if self.kind is LinkKind.ANCESTOR and not 1 <= self.skipped <= SKIP_SATURATION:
            raise ValueError(f"skip count must be in [1, {SKIP_SATURATION}]")

    @classmethod
    def root(cls) -> "AncestorLink":
        return cls(LinkKind.ROOT)

    @classmethod
    def parent(cls, span_id: SpanId) -> "AncestorLink":
        return cls(LinkKind.PARENT, ancestor_span_id=span_id)

    @classmethod
    def ancestor(cls, span_id: SpanId, skipped: int) -> "AncestorLink":
        return cls(LinkKind.ANCESTOR, ancestor_span_id=span_id, skipped=min(skipped, SKIP_SATURATION))


@dataclass(frozen=True)
class Span:
    """One observed operation, with the sampling rate it was subject to."""

    trace_id: TraceId
    span_id: SpanId
    link: AncestorLink
    rate: SamplingRate
    service: str = ""
    operation: str = ""
    start_micros: int = 0
    duration_micros: int = 0
    error: bool = False
    attributes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not 0 < self.trace_id < _TRACE_ID_LIMIT:
            raise ValueError("trace id must be a nonzero 128-bit integer")
        if not 0 < self.span_id < _SPAN_ID_LIMIT:
            raise ValueError("span id must be a nonzero 64-bit integer")
        if self.duration_micros < 0:
            raise ValueError("duration cannot be negative")
        if isinstance(self.attributes, Mapping):
            object.__setattr__(self, "attributes", tuple(sorted(self.attributes.items())))
        else:
            object.__setattr__(self, "attributes", tuple(tuple(kv) for kv in self.attributes))
        object.__setattr__(self, "_hash", hash((self.trace_id, self.span_id)))

    # Hash by identity fields only; spans live in sets and get rehashed a
    # lot, and equal spans always agree on their ids.
    def __hash__(self) -> int:
        return self._hash  # type: ignore[attr-defined]

    def attribute(self, key: str) -> str | None:
        for k, v in self.attributes:
            if k == key:
                return v
        return None


@dataclass(frozen=True)
class FullTrace:
    """A complete trace: every span that actually happened.

    Carries the shared randomness used for sampling decisions either as a
    real number ``shared_random`` in [0, 1) or as the integer
    ``shared_index`` ``i`` meaning the value fell in ``[2**-(i+1), 2**-i)``.
    Only one of the two may be set; both may be absent for traces used
    purely as analysis input.
    """

    trace_id: TraceId
    spans: frozenset[Span]
    shared_random: float | None = None
    shared_index: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.trace_id < _TRACE_ID_LIMIT:
            raise ValueError("trace id must be a nonzero 128-bit integer")
        object.__setattr__(self, "spans", frozenset(self.spans))
        if self.shared_random is not None and self.shared_index is not None:
            raise ValueError("set shared_random or shared_index, not both")
        if self.shared_random is not None and not 0.0 <= self.shared_random < 1.0:
            raise ValueError("shared random must lie in [0, 1)")
        if self.shared_index is not None and self.shared_index < 0:
            raise ValueError("shared index cannot be negative")

    def threshold(self) -> float:
        """The sampling threshold encoded by the trace's shared randomness."""
        if self.shared_random is not None:
            return self.shared_random
        if self.shared_index is not None:
            return math.ldexp(1.0, -(self.shared_index + 1))
        raise ValueError("trace carries no shared randomness")

    def spans_by_id(self) -> dict[SpanId, Span]:
        return {s.span_id: s for s in self.spans}


@dataclass(frozen=True)
class SampledTrace:
    """The retained subset of one trace's spans; never empty.

    Rates of discarded spans are unknown to consumers of a sampled trace,
    so every retained span carries its own rate.
    """

    trace_id: TraceId
    spans: frozenset[Span]

    def __post_init__(self) -> None:
        object.__setattr__(self, "spans", frozenset(self.spans))
        if not self.spans:
            raise ValueError("a sampled trace must contain at least one span")


@dataclass(frozen=True)
class RateLadder:
    """Distinct sampling rates of a span set, strictly ascending."""

    rates: tuple[SamplingRate, ...]

    def __post_init__(self) -> None:
        for lo, hi in zip(self.rates, self.rates[1:]):
            if not lo < hi:
                raise ValueError("ladder rates must be strictly ascending")

    def __len__(self) -> int:
        return len(self.rates)

    def __iter__(self) -> Iterator[SamplingRate]:
        return iter(self.rates)

    def __getitem__(self, i: int) -> SamplingRate:
        return self.rates[i]

    def values(self) -> tuple[float, ...]:
        return tuple(r.value for r in self.rates)

    @property
    def minimum(self) -> SamplingRate:
        return self.rates[0]

    @property
    def maximum(self) -> SamplingRate:
        return self.rates[-1]


def build_rate_ladder(spans: Iterable[Span]) -> RateLadder:
    """Collect the distinct rates of ``spans`` in ascending order.

    Deduplication is by exact numeric value, so an exponent-mode rate and
    a general-mode rate of the same value share a rung.
    """
    distinct = {s.rate for s in spans}
    if not distinct:
        raise ValueError("empty span set")
    return RateLadder(tuple(sorted(distinct)))


@dataclass(frozen=True)
class Violation:
    """One structural problem found while validating a trace."""

    code: str
    detail: str


def validate_trace(trace: FullTrace) -> list[Violation]:
    """Report structural problems in a full trace; an empty list means valid.

    Checks: span ids unique, all spans share the trace id, exactly one
    root, links resolve and are acyclic, rates in range, and no saturated
    skip counts (a saturated count means the true generation distance was
    lost).
    """
    findings: list[Violation] = []
    spans = sorted(trace.spans, key=lambda s: s.span_id)

    seen: dict[SpanId, int] = {}
    for s in spans:
        seen[s.span_id] = seen.get(s.span_id, 0) + 1
    for span_id, count in seen.items():
        if count > 1:
            findings.append(Violation("duplicate-span-id", f"span id {span_id:#x} appears {count} times"))

    for s in spans:
        if s.trace_id != trace.trace_id:
            findings.append(Violation("trace-id-mismatch", f"span {s.span_id:#x} belongs to another trace"))

    roots = [s for s in spans if s.link.kind is LinkKind.ROOT]
    if spans and not roots:
        findings.append(Violation("no-root", "no span is marked as the trace root"))
    if len(roots) > 1:
        ids = ", ".join(f"{s.span_id:#x}" for s in roots)
        findings.append(Violation("multiple-roots", f"spans {ids} all claim to be the root"))

    by_id = {s.span_id: s for s in spans}
    for s in spans:
        link = s.link
        if link.kind is LinkKind.ROOT:
            continue
        if link.ancestor_span_id not in by_id:
            findings.append(
                Violation("unknown-ancestor", f"span {s.span_id:#x} links to missing span {link.ancestor_span_id:#x}")
            )
        if link.skipped >= SKIP_SATURATION:
            findings.append(Violation("skipped-saturated", f"span {s.span_id:#x} carries a saturated skip count"))
        if not 0.0 < s.rate.value <= 1.0:
            findings.append(Violation("rate-out-of-range", f"span {s.span_id:#x} has rate {s.rate.value}"))

    # Cycle detection over the link graph; each span chases its ancestors.
    state: dict[SpanId, int] = {}  # 1 = on current path, 2 = done
    cyclic: set[SpanId] = set()
    for s in spans:
        path: list[SpanId] = []
        cur: Span | None = s
        while cur is not None and state.get(cur.span_id, 0) == 0:
            state[cur.span_id] = 1
            path.append(cur.span_id)
            link = cur.link
            cur = by_id.get(link.ancestor_span_id) if link.kind is not LinkKind.ROOT else None
        if cur is not None and state.get(cur.span_id) == 1 and cur.span_id not in cyclic:
            cyclic.add(cur.span_id)
            findings.append(Violation("cycle", f"link chain through span {cur.span_id:#x} forms a cycle"))
        for span_id in path:
            state[span_id] = 2

    return findings
