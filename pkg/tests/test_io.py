import io as stringio
import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spansketch.io import (
    LedgerEntry,
    SpanStreamError,
    read_ledger,
    read_spans,
    reassemble,
    span_to_record,
    write_ledger,
    write_spans,
)
from spansketch.model import AncestorLink, SamplingRate, Span
from spansketch.simulator import SimulationConfig, run_simulation


def roundtrip(spans):
    sink = stringio.StringIO()
    write_spans(spans, sink)
    sink.seek(0)
    return list(read_spans(sink))


def valid_line(**overrides):
    record = {
        "trace_id": "0" * 31 + "1",
        "span_id": "0" * 15 + "1",
        "link": {"kind": "root"},
        "service": "web",
        "op": "get",
        "start_us": 10,
        "dur_us": 5,
        "error": False,
        "rate_exp": 2,
    }
    record.update(overrides)
    return json.dumps(record)


def read_single(line):
    return list(read_spans(stringio.StringIO(line + "\n")))


class TestRoundTrip:
    def test_simulated_stream_round_trips(self):
        spans, _ = run_simulation(SimulationConfig(trace_count=200, seed=9, branching=1.5))
        assert roundtrip(spans) == spans

    def test_general_rate_and_attributes_round_trip(self):
        span = Span(
            trace_id=0xFEED,
            span_id=0xBEEF,
            link=AncestorLink.ancestor(0x1, skipped=3),
            rate=SamplingRate.from_value(0.3),
            service="db",
            operation="select",
            start_micros=123,
            duration_micros=456,
            error=True,
            attributes={"k": "v", "a": "b"},
        )
        assert roundtrip([span]) == [span]

    @given(
        st.lists(
            st.tuples(
                st.integers(min_value=1, max_value=(1 << 64) - 1),
                st.integers(min_value=0, max_value=62),
                st.booleans(),
                st.text(alphabet=st.characters(codec="utf-8", exclude_categories=["C"]), max_size=8),
            ),
            min_size=0,
            max_size=20,
            unique_by=lambda t: t[0],
        )
    )
    def test_arbitrary_spans_round_trip(self, rows):
        spans = [
            Span(
                trace_id=0xABC,
                span_id=span_id,
                link=AncestorLink.root(),
                rate=SamplingRate.from_exponent(exp),
                service=service,
                error=error,
            )
            for span_id, exp, error, service in rows
        ]
        assert roundtrip(spans) == spans

    def test_empty_file_yields_empty_stream(self):
        assert list(read_spans(stringio.StringIO(""))) == []

    def test_header_line_is_skipped(self):
        text = '{"v":1}\n' + valid_line() + "\n"
        assert len(list(read_spans(stringio.StringIO(text)))) == 1

    def test_unknown_keys_ignored(self):
        (span,) = read_single(valid_line(future_field="whatever"))
        assert span.service == "web"


class TestReadErrors:
    def test_exponent_63_out_of_range(self):
        with pytest.raises(SpanStreamError, match="exponent out of range"):
            read_single(valid_line(rate_exp=63))

    def test_both_rate_fields_rejected(self):
        with pytest.raises(SpanStreamError, match="exactly one"):
            read_single(valid_line(rate=0.5))

    def test_missing_rate_rejected(self):
        line = valid_line()
        record = json.loads(line)
        del record["rate_exp"]
        with pytest.raises(SpanStreamError, match="exactly one"):
            read_single(json.dumps(record))

    def test_malformed_json_carries_line_number(self):
        text = valid_line() + "\n{not json\n"
        with pytest.raises(SpanStreamError, match="line 2"):
            list(read_spans(stringio.StringIO(text)))

    def test_wrong_hex_width_rejected(self):
        with pytest.raises(SpanStreamError, match="32 lowercase hex"):
            read_single(valid_line(trace_id="abc"))

    def test_uppercase_hex_rejected(self):
        with pytest.raises(SpanStreamError, match="lowercase hex"):
            read_single(valid_line(span_id="0" * 15 + "A"))

    def test_zero_trace_id_rejected(self):
        with pytest.raises(SpanStreamError, match="nonzero"):
            read_single(valid_line(trace_id="0" * 32))

    def test_skipped_on_parent_link_rejected(self):
        link = {"kind": "parent", "ancestor_span_id": "0" * 15 + "2", "skipped": 1}
        with pytest.raises(SpanStreamError, match="skipped"):
            read_single(valid_line(link=link))

    def test_ancestor_link_requires_skipped(self):
        link = {"kind": "ancestor", "ancestor_span_id": "0" * 15 + "2"}
        with pytest.raises(SpanStreamError, match="skipped"):
            read_single(valid_line(link=link))

    def test_unknown_link_kind_rejected(self):
        with pytest.raises(SpanStreamError, match="unknown link kind"):
            read_single(valid_line(link={"kind": "sibling"}))


class TestRecordShape:
    def test_hex_fields_are_fixed_width_lowercase(self):
        span = Span(
            trace_id=0xABC,
            span_id=0xDEF,
            link=AncestorLink.parent(0x12),
            rate=SamplingRate.from_exponent(1),
        )
        record = span_to_record(span)
        assert record["trace_id"] == "00000000000000000000000000000abc"
        assert record["span_id"] == "0000000000000def"
        assert record["link"]["ancestor_span_id"] == "0000000000000012"

    def test_skipped_present_iff_ancestor_kind(self):
        root = span_to_record(
            Span(trace_id=1, span_id=1, link=AncestorLink.root(), rate=SamplingRate.from_exponent(0))
        )
        assert "skipped" not in root["link"] and "ancestor_span_id" not in root["link"]
        bridged = span_to_record(
            Span(
                trace_id=1,
                span_id=2,
                link=AncestorLink.ancestor(1, skipped=4),
                rate=SamplingRate.from_exponent(0),
            )
        )
        assert bridged["link"]["skipped"] == 4


class TestReassemble:
    def _span(self, trace_id, span_id):
        return Span(
            trace_id=trace_id,
            span_id=span_id,
            link=AncestorLink.root(),
            rate=SamplingRate.from_exponent(1),
        )

    def test_interleaved_spans_group_by_trace(self):
        spans = [self._span(1, 1), self._span(2, 1), self._span(1, 2), self._span(2, 2)]
        groups = reassemble(spans)
        assert [g.trace_id for g in groups] == [1, 2]
        assert all(len(g.spans) == 2 for g in groups)

    def test_single_span_single_trace(self):
        groups = reassemble([self._span(5, 5)])
        assert len(groups) == 1 and groups[0].trace_id == 5

    def test_duplicate_span_id_rejected(self):
        with pytest.raises(ValueError, match="duplicate span id"):
            reassemble([self._span(1, 1), self._span(1, 1)])

    def test_membership_is_permutation_invariant(self, rng):
        spans, _ = run_simulation(SimulationConfig(trace_count=100, seed=77, branching=1.5))
        shuffled = spans[:]
        rng.shuffle(shuffled)
        original = {g.trace_id: g.spans for g in reassemble(spans)}
        permuted = {g.trace_id: g.spans for g in reassemble(shuffled)}
        assert original == permuted


class TestLedger:
    def test_ledger_round_trips(self):
        _, ledger = run_simulation(SimulationConfig(trace_count=50, seed=3, branching=1.5))
        sink = stringio.StringIO()
        write_ledger(ledger, sink)
        sink.seek(0)
        assert list(read_ledger(sink)) == ledger

    def test_ledger_requires_complete_flag(self):
        _, ledger = run_simulation(SimulationConfig(trace_count=1, seed=3))
        sink = stringio.StringIO()
        write_ledger(ledger, sink, header=False)
        record = json.loads(sink.getvalue())
        del record["complete"]
        with pytest.raises(SpanStreamError, match="complete"):
            list(read_ledger(stringio.StringIO(json.dumps(record) + "\n")))
