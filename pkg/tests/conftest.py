import random

import pytest
from hypothesis import HealthCheck, settings

from spansketch.model import AncestorLink, FullTrace, SamplingRate, Span

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def two_span_trace(parent_exp: int = 1, child_exp: int = 2, **trace_kwargs) -> FullTrace:
    """Parent/child trace with rates 2**-parent_exp and 2**-child_exp."""
    parent = Span(
        trace_id=0xABC,
        span_id=0x1,
        link=AncestorLink.root(),
        rate=SamplingRate.from_exponent(parent_exp),
        service="frontend",
        operation="handle",
    )
    child = Span(
        trace_id=0xABC,
        span_id=0x2,
        link=AncestorLink.parent(0x1),
        rate=SamplingRate.from_exponent(child_exp),
        service="backend",
        operation="query",
    )
    return FullTrace(trace_id=0xABC, spans=frozenset({parent, child}), **trace_kwargs)


def chain_trace(exponents: list[int], services: list[str] | None = None) -> FullTrace:
    """Single root-to-leaf chain; span k links to span k-1."""
    spans = []
    for k, exp in enumerate(exponents):
        link = AncestorLink.root() if k == 0 else AncestorLink.parent(k)
        spans.append(
            Span(
                trace_id=0xC0FFEE,
                span_id=k + 1,
                link=link,
                rate=SamplingRate.from_exponent(exp),
                service=services[k] if services else f"svc{k}",
            )
        )
    return FullTrace(trace_id=0xC0FFEE, spans=frozenset(spans))


@pytest.fixture
def rng():
    return random.Random(0xDECAF)
