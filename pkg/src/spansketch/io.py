"""JSON Lines formats for span streams and simulation ledgers.

Span stream, one JSON object per line, UTF-8, ``\\n`` terminated::

    {"trace_id": "<32 lowercase hex>", "span_id": "<16 lowercase hex>",
     "link": {"kind": "root" | "parent" | "ancestor",
              "ancestor_span_id": "<16 hex, absent for root>",
              "skipped": <int, present iff kind == "ancestor">},
     "service": "...", "op": "...", "start_us": <int>, "dur_us": <int>,
     "error": <bool>,
     "rate_exp": <0..62>            # power-of-two rate 2**-rate_exp
       | "rate": <decimal in (0,1]>,  # exactly one of the two
     "attrs": {"k": "v", ...}}        # optional

An optional header line ``{"v": 1}`` may open a file; readers skip it.
Unknown keys are ignored on read. ``rate_exp`` is the canonical rate
field; the decimal ``rate`` form exists for experiments with rates off
the power-of-two grid.

Ledger files record per-trace ground truth from simulations: the full
span set (same span objects as above, minus the redundant trace id), the
shared randomness, and whether sampling kept the trace complete.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from .model import (
    AncestorLink,
    FullTrace,
    LinkKind,
    SampledTrace,
    SamplingRate,
    Span,
    SpanId,
    TraceId,
)

FORMAT_VERSION = 1

_HEX_DIGITS = set("0123456789abcdef")


class SpanStreamError(ValueError):
    """A malformed line in a span or ledger stream; carries the line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _hex(value: int, width: int) -> str:
    return format(value, f"0{width}x")


def _parse_hex(raw: object, width: int, what: str, lineno: int) -> int:
    if not isinstance(raw, str) or len(raw) != width or not set(raw) <= _HEX_DIGITS:
        raise SpanStreamError(lineno, f"{what} must be {width} lowercase hex characters")
    return int(raw, 16)


def span_to_record(span: Span, include_trace_id: bool = True) -> dict:
    link: dict[str, object] = {"kind": span.link.kind.value}
    if span.link.ancestor_span_id is not None:
        link["ancestor_span_id"] = _hex(span.link.ancestor_span_id, 16)
    if span.link.kind is LinkKind.ANCESTOR:
        link["skipped"] = span.link.skipped
    record: dict[str, object] = {
        "span_id": _hex(span.span_id, 16),
        "link": link,
        "service": span.service,
        "op": span.operation,
        "start_us": span.start_micros,
        "dur_us": span.duration_micros,
        "error": span.error,
    }
    if include_trace_id:
        record["trace_id"] = _hex(span.trace_id, 32)
    if span.rate.is_exponent:
        record["rate_exp"] = span.rate.exponent
    else:
        record["rate"] = span.rate.general
    if span.attributes:
        record["attrs"] = dict(span.attributes)
    return record


def record_to_span(record: dict, lineno: int, trace_id: TraceId | None = None) -> Span:
    if trace_id is None:
        trace_id = _parse_hex(record.get("trace_id"), 32, "trace_id", lineno)
    span_id = _parse_hex(record.get("span_id"), 16, "span_id", lineno)

    raw_link = record.get("link")
    if not isinstance(raw_link, dict):
        raise SpanStreamError(lineno, "link object missing")
    kind_raw = raw_link.get("kind")
    try:
        kind = LinkKind(kind_raw)
    except ValueError:
        raise SpanStreamError(lineno, f"unknown link kind {kind_raw!r}") from None
    if kind is LinkKind.ROOT:
        if "ancestor_span_id" in raw_link or "skipped" in raw_link:
            raise SpanStreamError(lineno, "root link carries no ancestor fields")
        link = AncestorLink.root()
    else:
        ancestor = _parse_hex(raw_link.get("ancestor_span_id"), 16, "ancestor_span_id", lineno)
        if kind is LinkKind.ANCESTOR:
            skipped = raw_link.get("skipped")
            if not isinstance(skipped, int):
                raise SpanStreamError(lineno, "ancestor link requires an integer skipped count")
            try:
                link = AncestorLink(LinkKind.ANCESTOR, ancestor, skipped)
            except ValueError as exc:
                raise SpanStreamError(lineno, str(exc)) from None
        else:
            if "skipped" in raw_link:
                raise SpanStreamError(lineno, "skipped is only valid on ancestor links")
            link = AncestorLink.parent(ancestor)

    has_exp = "rate_exp" in record
    has_general = "rate" in record
    if has_exp == has_general:
        raise SpanStreamError(lineno, "exactly one of rate_exp/rate must be present")
    try:
        if has_exp:
            exponent = record["rate_exp"]
            if not isinstance(exponent, int) or isinstance(exponent, bool):
                raise SpanStreamError(lineno, "rate_exp must be an integer")
            if not 0 <= exponent <= 62:
                raise SpanStreamError(lineno, "exponent out of range")
            rate = SamplingRate.from_exponent(exponent)
        else:
            rate = SamplingRate.from_value(float(record["rate"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpanStreamError):
            raise
        raise SpanStreamError(lineno, f"invalid rate: {exc}") from None

    attrs = record.get("attrs", {})
    if not isinstance(attrs, dict):
        raise SpanStreamError(lineno, "attrs must be an object")
    try:
        return Span(
            trace_id=trace_id,
            span_id=span_id,
            link=link,
            rate=rate,
            service=str(record.get("service", "")),
            operation=str(record.get("op", "")),
            start_micros=int(record.get("start_us", 0)),
            duration_micros=int(record.get("dur_us", 0)),
            error=bool(record.get("error", False)),
            attributes={str(k): str(v) for k, v in attrs.items()},
        )
    except (TypeError, ValueError) as exc:
        raise SpanStreamError(lineno, str(exc)) from None


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_spans(spans: Iterable[Span], sink: IO[str], header: bool = True) -> int:
    """Write a span stream; returns the number of spans written."""
    count = 0
    if header:
        sink.write(_dump({"v": FORMAT_VERSION}) + "\n")
    for span in spans:
        sink.write(_dump(span_to_record(span)) + "\n")
        count += 1
    return count


def _lines(source: IO[str]) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(source, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise SpanStreamError(lineno, f"not valid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise SpanStreamError(lineno, "each line must hold a JSON object")
        if "v" in obj and "trace_id" not in obj:
            continue  # header line
        yield lineno, obj


def read_spans(source: IO[str]) -> Iterator[Span]:
    """Parse a span stream lazily; raises :class:`SpanStreamError` on bad lines."""
    for lineno, obj in _lines(source):
        yield record_to_span(obj, lineno)


def reassemble(spans: Iterable[Span]) -> list[SampledTrace]:
    """Group a span stream into sampled traces by trace id.

    Groups appear in order of each trace id's first appearance; the input
    order is otherwise irrelevant. A span id occurring twice within one
    trace is an error.
    """
    groups: dict[TraceId, list[Span]] = {}
    ids_seen: dict[TraceId, set[SpanId]] = {}
    for span in spans:
        members = groups.setdefault(span.trace_id, [])
        seen = ids_seen.setdefault(span.trace_id, set())
        if span.span_id in seen:
            raise ValueError(
                f"duplicate span id {span.span_id:#x} within trace {span.trace_id:#x}"
            )
        seen.add(span.span_id)
        members.append(span)
    return [SampledTrace(trace_id=tid, spans=frozenset(members)) for tid, members in groups.items()]


@dataclass(frozen=True)
class LedgerEntry:
    """Ground truth for one simulated trace: the full trace and its outcome."""

    trace: FullTrace
    complete: bool


def write_ledger(entries: Iterable[LedgerEntry], sink: IO[str], header: bool = True) -> int:
    """Write a ground-truth ledger; returns the number of entries written."""
    count = 0
    if header:
        sink.write(_dump({"v": FORMAT_VERSION}) + "\n")
    for entry in entries:
        trace = entry.trace
        record: dict[str, object] = {
            "trace_id": _hex(trace.trace_id, 32),
            "complete": entry.complete,
            "spans": [
                span_to_record(s, include_trace_id=False)
                for s in sorted(trace.spans, key=lambda s: s.span_id)
            ],
        }
        if trace.shared_index is not None:
            record["shared_index"] = trace.shared_index
        if trace.shared_random is not None:
            record["shared_random"] = trace.shared_random
        sink.write(_dump(record) + "\n")
        count += 1
    return count


def read_ledger(source: IO[str]) -> Iterator[LedgerEntry]:
    """Parse a ground-truth ledger lazily."""
    for lineno, obj in _lines(source):
        trace_id = _parse_hex(obj.get("trace_id"), 32, "trace_id", lineno)
        raw_spans = obj.get("spans")
        if not isinstance(raw_spans, list) or not raw_spans:
            raise SpanStreamError(lineno, "ledger entry must carry a nonempty span list")
        spans = frozenset(record_to_span(r, lineno, trace_id=trace_id) for r in raw_spans)
        shared_index = obj.get("shared_index")
        shared_random = obj.get("shared_random")
        try:
            trace = FullTrace(
                trace_id=trace_id,
                spans=spans,
                shared_index=shared_index,
                shared_random=shared_random,
            )
        except ValueError as exc:
            raise SpanStreamError(lineno, str(exc)) from None
        complete = obj.get("complete")
        if not isinstance(complete, bool):
            raise SpanStreamError(lineno, "ledger entry requires a boolean complete flag")
        yield LedgerEntry(trace=trace, complete=complete)
