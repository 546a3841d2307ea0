import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from spansketch.model import (
    AncestorLink,
    FullTrace,
    SamplingRate,
    Span,
    build_rate_ladder,
    validate_trace,
)

from conftest import two_span_trace


def span(span_id, rate, link=None, trace_id=0xABC, **kw):
    return Span(
        trace_id=trace_id,
        span_id=span_id,
        link=link or AncestorLink.root(),
        rate=rate,
        **kw,
    )


class TestSamplingRate:
    def test_exponent_value_is_exact_power_of_two(self):
        assert SamplingRate.from_exponent(0).value == 1.0
        assert SamplingRate.from_exponent(3).value == 0.125
        assert SamplingRate.from_exponent(62).value == math.ldexp(1.0, -62)

    @given(st.integers(min_value=0, max_value=62))
    def test_exponent_round_trips(self, j):
        rate = SamplingRate.from_exponent(j)
        assert rate.exponent == j
        assert rate.as_fraction() == Fraction(1, 2**j)
        assert SamplingRate.from_value(rate.value) == rate

    def test_modes_with_equal_value_are_equal(self):
        assert SamplingRate.from_exponent(1) == SamplingRate.from_value(0.5)
        assert hash(SamplingRate.from_exponent(1)) == hash(SamplingRate.from_value(0.5))

    def test_ordering_is_by_value(self):
        assert SamplingRate.from_exponent(3) < SamplingRate.from_value(0.3) < SamplingRate.from_exponent(1)

    def test_reciprocal_integer_in_exponent_mode(self):
        assert SamplingRate.from_exponent(5).reciprocal() == 32
        assert isinstance(SamplingRate.from_exponent(5).reciprocal(), int)
        assert SamplingRate.from_value(0.25).reciprocal() == pytest.approx(4.0)

    @pytest.mark.parametrize("bad", [-1, 63, 200])
    def test_exponent_range_enforced(self, bad):
        with pytest.raises(ValueError):
            SamplingRate.from_exponent(bad)

    @pytest.mark.parametrize("bad", [0.0, -0.5, 1.5])
    def test_general_range_enforced(self, bad):
        with pytest.raises(ValueError):
            SamplingRate.from_value(bad)


class TestAncestorLink:
    def test_root_carries_nothing(self):
        with pytest.raises(ValueError):
            AncestorLink.parent(0)
        with pytest.raises(ValueError):
            AncestorLink(AncestorLink.root().kind, ancestor_span_id=5)

    def test_parent_never_skips(self):
        from spansketch.model import LinkKind

        with pytest.raises(ValueError):
            AncestorLink(LinkKind.PARENT, ancestor_span_id=5, skipped=1)

    def test_ancestor_skip_saturates(self):
        link = AncestorLink.ancestor(5, 1 << 20)
        assert link.skipped == 0xFFFF


class TestRateLadder:
    def test_dedups_and_sorts(self):
        spans = {
            span(1, SamplingRate.from_exponent(1)),
            span(2, SamplingRate.from_exponent(2)),
            span(3, SamplingRate.from_exponent(2)),
        }
        ladder = build_rate_ladder(spans)
        assert ladder.values() == (0.25, 0.5)

    def test_singleton(self):
        ladder = build_rate_ladder({span(1, SamplingRate.from_exponent(0))})
        assert ladder.values() == (1.0,)

    def test_three_rungs_from_four_spans(self):
        spans = {
            span(1, SamplingRate.from_exponent(3)),
            span(2, SamplingRate.from_exponent(1)),
            span(3, SamplingRate.from_exponent(3)),
            span(4, SamplingRate.from_exponent(5)),
        }
        ladder = build_rate_ladder(spans)
        assert ladder.values() == (2**-5, 2**-3, 2**-1)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="empty span set"):
            build_rate_ladder(set())

    @given(st.lists(st.integers(min_value=0, max_value=62), min_size=1, max_size=12))
    def test_ladder_is_ascending_and_covers_distinct_rates(self, exponents):
        spans = {span(i + 1, SamplingRate.from_exponent(e)) for i, e in enumerate(exponents)}
        ladder = build_rate_ladder(spans)
        values = ladder.values()
        assert all(a < b for a, b in zip(values, values[1:]))
        assert set(values) == {2.0**-e for e in exponents}


class TestValidateTrace:
    def test_valid_two_span_trace(self):
        assert validate_trace(two_span_trace()) == []

    def test_multiple_roots(self):
        spans = frozenset(
            {span(1, SamplingRate.from_exponent(1)), span(2, SamplingRate.from_exponent(1))}
        )
        trace = FullTrace(trace_id=0xABC, spans=spans)
        assert any(v.code == "multiple-roots" for v in validate_trace(trace))

    def test_self_link_is_a_cycle(self):
        looped = span(1, SamplingRate.from_exponent(1), link=AncestorLink.parent(1))
        trace = FullTrace(trace_id=0xABC, spans=frozenset({looped}))
        codes = {v.code for v in validate_trace(trace)}
        assert "cycle" in codes

    def test_two_span_cycle(self):
        a = span(1, SamplingRate.from_exponent(1), link=AncestorLink.parent(2))
        b = span(2, SamplingRate.from_exponent(1), link=AncestorLink.parent(1))
        trace = FullTrace(trace_id=0xABC, spans=frozenset({a, b}))
        codes = {v.code for v in validate_trace(trace)}
        assert "cycle" in codes and "no-root" in codes

    def test_unknown_ancestor(self):
        orphan = span(2, SamplingRate.from_exponent(1), link=AncestorLink.parent(99))
        root = span(1, SamplingRate.from_exponent(1))
        trace = FullTrace(trace_id=0xABC, spans=frozenset({root, orphan}))
        assert any(v.code == "unknown-ancestor" for v in validate_trace(trace))

    def test_trace_id_mismatch(self):
        stray = span(2, SamplingRate.from_exponent(1), link=AncestorLink.parent(1), trace_id=0xDEF)
        root = span(1, SamplingRate.from_exponent(1))
        trace = FullTrace(trace_id=0xABC, spans=frozenset({root, stray}))
        assert any(v.code == "trace-id-mismatch" for v in validate_trace(trace))


class TestConstruction:
    def test_zero_ids_rejected(self):
        with pytest.raises(ValueError):
            span(0, SamplingRate.from_exponent(0))
        with pytest.raises(ValueError):
            span(1, SamplingRate.from_exponent(0), trace_id=0)

    def test_attributes_normalize_to_sorted_pairs(self):
        s = span(1, SamplingRate.from_exponent(0), attributes={"b": "2", "a": "1"})
        assert s.attributes == (("a", "1"), ("b", "2"))
        assert s.attribute("a") == "1"
        assert s.attribute("missing") is None

    def test_trace_rejects_double_randomness(self):
        with pytest.raises(ValueError):
            two_span_trace(shared_random=0.5, shared_index=3)

    def test_threshold_from_index(self):
        assert two_span_trace(shared_index=0).threshold() == 0.5
        assert two_span_trace(shared_index=2).threshold() == 0.125
        with pytest.raises(ValueError):
            two_span_trace().threshold()

    def test_sampled_trace_requires_spans(self):
        from spansketch.model import SampledTrace

        with pytest.raises(ValueError):
            SampledTrace(trace_id=1, spans=frozenset())
