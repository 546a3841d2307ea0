"""Command-line front end: simulate, estimate, variance, verify.

Exit codes: 0 on success, 1 when verification or estimation fails, 2 on
usage errors. All commands are deterministic for a fixed seed and fixed
inputs. ``--json`` appends one machine-readable JSON line to the normal
output for scripting. The ``SPANSKETCH_THREADS`` environment variable
caps the worker threads used by the verify command.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, IO, Sequence

from . import estimator, io, oracle, quantity, simulator
from .estimator import (
    estimate_complete_only,
    estimate_indicator,
    estimate_matching_spans,
    estimate_partial,
    variance_complete_only_exact,
    variance_partial_exact,
)
from .model import FullTrace, SampledTrace, SamplingRate, Span
from .quantity import QuantitySpec, check_claims_on_chain
from .sampler import sample_trace

PROG = "spansketch"


def _worker_count() -> int:
    raw = os.environ.get("SPANSKETCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# quantity mini-syntax: NAME[:ARGS]


def _parse_span_predicate(text: str) -> tuple[Callable[[Span], bool], str]:
    if text == "error":
        return (lambda s: s.error), "error"
    if text.startswith("service="):
        name = text[len("service=") :]
        if name:
            return (lambda s: s.service == name), f"service={name}"
    raise ValueError(f"unsupported predicate {text!r} (use 'error' or 'service=NAME')")


def parse_quantity(text: str) -> QuantitySpec:
    """Build a quantity from its command-line name.

    Known forms: ``const-one``, ``span-count``, ``depth``,
    ``match-spans:PRED``, ``trace-has:PRED``, ``a-calls-b:A,B`` where
    PRED is ``error`` or ``service=NAME``.
    """
    name, _, args = text.partition(":")
    if name == "const-one" and not args:
        return quantity.const_one()
    if name == "span-count" and not args:
        return quantity.span_count()
    if name == "depth" and not args:
        return quantity.call_depth()
    if name == "match-spans" and args:
        predicate, label = _parse_span_predicate(args)
        return quantity.matching_span_count(predicate, name=f"match-spans:{label}")
    if name == "trace-has" and args:
        predicate, label = _parse_span_predicate(args)
        return quantity.trace_indicator(
            lambda spans, p=predicate: any(p(s) for s in spans),
            monotone=True,
            name=f"trace-has:{label}",
        )
    if name == "a-calls-b" and args:
        parts = args.split(",")
        if len(parts) == 2 and all(parts):
            return quantity.a_calls_b(parts[0], parts[1])
    raise ValueError(f"unknown quantity {text!r}")


def _parse_policy(text: str) -> tuple[simulator.RatePolicy, float | None]:
    """Parse a policy string; returns (policy, rate limit when applicable)."""
    kind, _, args = text.partition(":")
    try:
        if kind == "fixed":
            return simulator.RatePolicy.fixed(int(args)), None
        if kind == "per-service":
            table: dict[str, int] = {}
            default = 0
            for item in args.split(","):
                key, _, value = item.partition("=")
                if not key or not value:
                    raise ValueError(f"bad per-service entry {item!r}")
                if key == "default":
                    default = int(value)
                else:
                    table[key] = int(value)
            return simulator.RatePolicy.per_service(table, default=default), None
        if kind == "depth":
            params = dict(item.partition("=")[::2] for item in args.split(","))
            return (
                simulator.RatePolicy.depth_scaled(int(params["base"]), int(params.get("step", 1))),
                None,
            )
        if kind == "error-boost":
            params = dict(item.partition("=")[::2] for item in args.split(","))
            return (
                simulator.RatePolicy.error_boosted(int(params["base"]), int(params["boost"])),
                None,
            )
        if kind == "rate-limited":
            limit = float(args)
            if limit <= 0:
                raise ValueError("rate limit must be positive")
            return simulator.RatePolicy.rate_limited(), limit
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad policy {text!r}: {exc}") from None
    raise ValueError(f"unknown policy kind {kind!r}")


def _format_number(x) -> str:
    if isinstance(x, Fraction):
        return str(int(x)) if x.denominator == 1 else str(x)
    if isinstance(x, float) and x.is_integer():
        return str(int(x))
    return str(x)


# ---------------------------------------------------------------------------
# simulate


def _cmd_simulate(args: argparse.Namespace) -> int:
    policy, limit = _parse_policy(args.policy)
    config = simulator.SimulationConfig(
        trace_count=args.traces,
        seed=args.seed,
        branching=args.branching,
        max_depth=args.max_depth,
        service_pool=tuple(args.services.split(",")),
        error_rate=args.error_rate,
        rate_policy=policy,
        rate_limit=limit,
        trace_interval_micros=args.interval_us,
    )
    spans, ledger = simulator.run_simulation(config)
    with open(args.out, "w", encoding="utf-8") as sink:
        io.write_spans(spans, sink)
    with open(args.ledger, "w", encoding="utf-8") as sink:
        io.write_ledger(ledger, sink)
    complete = sum(1 for entry in ledger if entry.complete)
    fraction = complete / len(ledger) if ledger else 0.0
    print(f"traces: {len(ledger)}")
    print(f"spans emitted: {len(spans)}")
    print(f"complete fraction: {fraction:.4f}")
    if args.json:
        print(json.dumps({"traces": len(ledger), "spans": len(spans), "complete_fraction": fraction}))
    return 0


# ---------------------------------------------------------------------------
# estimate


def _cmd_estimate(args: argparse.Namespace) -> int:
    spec = args.quantity_spec
    try:
        with open(args.input, "r", encoding="utf-8") as source:
            samples = io.reassemble(io.read_spans(source))
        report = estimator.composite_estimate(samples, spec, keep_terms=args.per_trace)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.per_trace and report.per_trace_terms:
        for trace_id, term in report.per_trace_terms:
            print(f"trace {trace_id:032x}: {_format_number(term)}")
    print(f"estimate: {_format_number(report.estimate)}")
    print(f"traces: {report.contributing_traces}")
    if args.json:
        value = report.estimate
        print(
            json.dumps(
                {
                    "estimate": int(value) if isinstance(value, int) else float(value),
                    "traces": report.contributing_traces,
                    "quantity": spec.name,
                }
            )
        )
    return 0


# ---------------------------------------------------------------------------
# variance


def _cmd_variance(args: argparse.Namespace) -> int:
    spec = args.quantity_spec
    try:
        with open(args.ledger, "r", encoding="utf-8") as source:
            entries = list(io.read_ledger(source))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    total_partial = 0
    total_complete_only = 0
    for entry in entries:
        v_partial = variance_partial_exact(entry.trace, spec)
        v_complete = variance_complete_only_exact(entry.trace, spec)
        total_partial += v_partial
        total_complete_only += v_complete
        ratio = "n/a" if v_complete == 0 else _format_number(v_partial / v_complete)
        print(
            f"trace {entry.trace.trace_id:032x}: partial={_format_number(v_partial)}"
            f" complete_only={_format_number(v_complete)} ratio={ratio}"
        )
    total_ratio = "n/a" if total_complete_only == 0 else _format_number(total_partial / total_complete_only)
    print(f"total partial: {_format_number(total_partial)}")
    print(f"total complete-only: {_format_number(total_complete_only)}")
    print(f"ratio: {total_ratio}")
    if args.json:
        print(
            json.dumps(
                {
                    "partial": float(total_partial),
                    "complete_only": float(total_complete_only),
                    "ratio": None if total_complete_only == 0 else float(total_partial / total_complete_only),
                    "quantity": spec.name,
                }
            )
        )
    return 0


# ---------------------------------------------------------------------------
# verify


@dataclass(frozen=True)
class VerifyFailure:
    case: int
    check: str
    detail: str


@dataclass(frozen=True)
class VerifyResult:
    cases: int
    checks: int
    failure: VerifyFailure | None


def _case_quantities(trace: FullTrace, services: Sequence[str]) -> list[QuantitySpec]:
    present = sorted({s.service for s in trace.spans})
    target = present[0] if present else services[0]
    return [
        quantity.const_one(),
        quantity.span_count(),
        quantity.matching_span_count(lambda s: s.error, name="match-spans:error"),
        quantity.trace_indicator(
            lambda spans, svc=target: any(s.service == svc for s in spans),
            monotone=True,
            name=f"trace-has:service={target}",
        ),
        quantity.call_depth(),
        quantity.a_calls_b(services[0], services[1]),
    ]


def _with_raised_rates(trace: FullTrace, rng: random.Random) -> FullTrace:
    """Copy of ``trace`` with the rates of a random subset of spans raised."""
    spans = []
    for span in sorted(trace.spans, key=lambda s: s.span_id):
        exponent = span.rate.exponent
        if exponent and rng.random() < 0.5:
            span = replace(span, rate=SamplingRate.from_exponent(rng.randint(0, exponent - 1)))
        spans.append(span)
    return FullTrace(trace_id=trace.trace_id, spans=frozenset(spans))


def _sweep_thresholds(trace: FullTrace) -> list[float]:
    values = sorted({s.rate.value for s in trace.spans})
    points = [0.0]
    for lo, hi in zip(values, values[1:] + [1.0]):
        points.append(lo)
        mid = (lo + hi) / 2
        if lo < mid < hi:
            points.append(mid)
    return [p for p in points if p < 1.0]


def _check_case(
    case: int, trace: FullTrace, services: Sequence[str], rng: random.Random
) -> VerifyFailure | None:
    checks = _case_quantities(trace, services)
    table = oracle.enumerate_outcomes(trace)
    raised = _with_raised_rates(trace, rng)
    for spec in checks:
        expected = spec.evaluate(trace.spans)

        got = oracle.exact_expectation(trace, lambda s, _c, q=spec: estimate_partial(s, q))
        if got != expected:
            return VerifyFailure(case, "unbiased", f"{spec.name}: expectation {got} != true value {expected}")

        got = oracle.exact_expectation(trace, lambda s, c, q=spec: estimate_complete_only(s, q, c))
        if got != expected:
            return VerifyFailure(
                case, "unbiased-complete-only", f"{spec.name}: expectation {got} != true value {expected}"
            )

        var_oracle = oracle.exact_variance(trace, lambda s, _c, q=spec: estimate_partial(s, q))
        var_closed = variance_partial_exact(trace, spec)
        if var_oracle != var_closed:
            return VerifyFailure(
                case, "variance-identity", f"{spec.name}: oracle {var_oracle} != closed form {var_closed}"
            )

        var_oracle = oracle.exact_variance(trace, lambda s, c, q=spec: estimate_complete_only(s, q, c))
        var_naive = variance_complete_only_exact(trace, spec)
        if var_oracle != var_naive:
            return VerifyFailure(
                case,
                "variance-identity-complete-only",
                f"{spec.name}: oracle {var_oracle} != closed form {var_naive}",
            )

        if not check_claims_on_chain(spec, trace) and spec.claims_bounded:
            if variance_partial_exact(trace, spec) > variance_complete_only_exact(trace, spec):
                return VerifyFailure(
                    case, "variance-ordering", f"{spec.name}: partial variance exceeds complete-only variance"
                )

        if spec.claims_monotonic and not check_claims_on_chain(spec, trace):
            if variance_partial_exact(trace, spec) < variance_partial_exact(raised, spec):
                return VerifyFailure(
                    case, "variance-dominance", f"{spec.name}: raising rates increased the variance"
                )

        for outcome in table.outcomes:
            sample = outcome.sample(trace.trace_id)
            reference = estimate_partial(sample, spec)
            if spec.name == "match-spans:error":
                special = estimate_matching_spans(sample, lambda s: s.error)
                if special != reference:
                    return VerifyFailure(
                        case, "matching-span-form", f"{special} != general form {reference}"
                    )
            if spec.claims_indicator and spec.claims_monotonic:
                special = estimate_indicator(sample, spec)
                if special != reference:
                    return VerifyFailure(
                        case, "indicator-form", f"{spec.name}: {special} != general form {reference}"
                    )
            if all(s.rate.is_exponent for s in sample.spans) and not isinstance(reference, int):
                return VerifyFailure(
                    case, "integrality", f"{spec.name}: estimate {reference!r} is not an exact integer"
                )

    minimum = min(s.rate.value for s in trace.spans)
    for r in _sweep_thresholds(trace):
        sampled = sample_trace(trace, threshold=r)
        full = sampled is not None and len(sampled.spans) == len(trace.spans)
        if full != (r < minimum):
            return VerifyFailure(case, "completeness-law", f"threshold {r}: full={full}, min rate {minimum}")
    return None


def run_verification(seed: int, cases: int, max_spans: int, max_exponent: int = 6) -> VerifyResult:
    """Exercise the estimator contracts on randomly generated traces.

    Stops at the first violated check. Case generation is deterministic
    per (seed, case index) so any counterexample is reproducible.
    """
    services = ("svc-a", "svc-b", "svc-c")
    checks_per_case = 6 * 5 + 1  # six quantities, five identities each, plus the completeness sweep

    def one_case(index: int) -> VerifyFailure | None:
        rng = random.Random((seed * 0x9E3779B97F4A7C15 + index) & ((1 << 64) - 1))
        trace = simulator.random_compact_trace(rng, max_spans, max_exponent, service_pool=services)
        return _check_case(index, trace, services, rng)

    workers = _worker_count()
    if workers > 1 and cases > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(one_case, range(cases))
            for result in results:
                if result is not None:
                    return VerifyResult(cases, checks_per_case * cases, result)
    else:
        for index in range(cases):
            result = one_case(index)
            if result is not None:
                return VerifyResult(cases, checks_per_case * cases, result)
    return VerifyResult(cases, checks_per_case * cases, None)


def _cmd_verify(args: argparse.Namespace) -> int:
    result = run_verification(args.seed, args.cases, args.max_spans, args.max_exponent)
    if result.failure is None:
        print(f"verified {result.cases} cases: all checks passed")
        if args.json:
            print(json.dumps({"cases": result.cases, "passed": True}))
        return 0
    failure = result.failure
    print(f"counterexample in case {failure.case} [{failure.check}]: {failure.detail}")
    if args.json:
        print(json.dumps({"cases": result.cases, "passed": False, "check": failure.check}))
    return 1


# ---------------------------------------------------------------------------
# argument parsing


def _quantity_arg(text: str) -> QuantitySpec:
    try:
        return parse_quantity(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _policy_arg(text: str) -> str:
    try:
        _parse_policy(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Consistent partial trace sampling, unbiased estimation, and exact verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate traces, sample them, write span and ledger files")
    p.add_argument("--traces", type=int, required=True, help="number of traces to generate")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument(
        "--policy",
        type=_policy_arg,
        default="fixed:2",
        help="rate policy: fixed:J | per-service:svc=J,...,default=J | depth:base=J,step=K"
        " | error-boost:base=J,boost=K | rate-limited:R",
    )
    p.add_argument("--out", required=True, help="output span stream (JSONL)")
    p.add_argument("--ledger", required=True, help="output ground-truth ledger (JSONL)")
    p.add_argument("--branching", type=float, default=1.2)
    p.add_argument("--max-depth", type=int, default=5)
    p.add_argument("--services", default="web,auth,db,cache")
    p.add_argument("--error-rate", type=float, default=0.02)
    p.add_argument("--interval-us", type=int, default=1000, help="microseconds between trace starts")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate", help="composite estimate of a quantity over a span stream")
    p.add_argument("--in", dest="input", required=True, help="span stream (JSONL)")
    p.add_argument("--quantity", dest="quantity_spec", type=_quantity_arg, required=True)
    p.add_argument("--per-trace", action="store_true", help="print one contribution per trace")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("variance", help="exact per-trace estimator variances from a ledger")
    p.add_argument("--ledger", required=True, help="ground-truth ledger (JSONL)")
    p.add_argument("--quantity", dest="quantity_spec", type=_quantity_arg, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_variance)

    p = sub.add_parser("verify", help="check estimator identities on random traces")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--max-spans", type=int, default=8)
    p.add_argument("--max-exponent", type=int, default=6)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
