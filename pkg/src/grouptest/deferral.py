"""Spread-then-search with deferral of unclear subsets to later rounds.

Items are spread uniformly into about s*d buckets, every nonempty bucket is
tested once, and impure buckets are searched with a biased split.  When a
split's first part is itself impure, the second part's status is unknown and
it is merged into a deferral pool instead of being chased now; the whole
procedure recurses on that pool.  Postponing those subsets is what beats the
search-everything-now strategy on average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import ContractViolation, Oracle, split_point
from .populations import SpreadPlan

MAX_ROUNDS = 256


def spread(population, d_hat: int, s: float) -> tuple[SpreadPlan, list]:
    """One spreading action over the population's current pool."""
    return population.spread_buckets(d_hat, s)


def bucket_search(
    oracle: Oracle,
    bucket,
    p: float,
    identified: list[int],
    population,
    defer: bool = True,
    label: str = "search",
) -> None:
    """Search a bucket known impure, deferring second parts under impure firsts.

    With ``defer=False`` the second part is processed in place (tested, then
    searched if impure), which is the non-deferred baseline this algorithm is
    measured against.
    """
    if bucket.size < 2:
        raise ContractViolation("an impure bucket must hold at least two items")
    if bucket.size == 2:
        members = bucket.all_members()
        identified.extend(members)
        population.retire_ranks(members)
        return
    first, second = bucket.split(split_point(bucket.size, p))
    out = oracle.test(first.expression(), label=label)
    if out.is_pure:
        population.retire(first)
        bucket_search(oracle, second, p, identified, population, defer, label)
        return
    if out.is_tainted:
        identified.append(out.identity)
        population.retire(first)
        out2 = oracle.test(second.expression(), label=label)
        if out2.is_pure:
            raise ContractViolation("second part pure although the bucket was impure")
        if out2.is_tainted:
            identified.append(out2.identity)
            population.retire(second)
        else:
            bucket_search(oracle, second, p, identified, population, defer, label)
        return
    # first part impure: search it now, postpone (or process) the second part
    bucket_search(oracle, first, p, identified, population, defer, label)
    if defer:
        population.defer(second)
        return
    out2 = oracle.test(second.expression(), label=label)
    if out2.is_pure:
        population.retire(second)
    elif out2.is_tainted:
        identified.append(out2.identity)
        population.retire(second)
    else:
        bucket_search(oracle, second, p, identified, population, defer, label)


def run_deferral(
    oracle: Oracle,
    population,
    d_hat: int,
    s: float = 0.8,
    p: float = 0.479,
    known_d: bool = True,
    defer: bool = True,
) -> tuple[list[int], int]:
    """Run rounds of spread + bucket search until done; return (found, rounds).

    With ``known_d`` the defective count is exact: the run stops as soon as
    that many are identified (anything still deferred is provably clean), and
    a round that identifies nothing new while defectives remain is a contract
    violation.  Otherwise ``d_hat`` is an estimate, each later round uses the
    estimate minus the identified count (floored at one), and the run stops
    when the deferral pool empties.
    """
    identified: list[int] = []
    rounds = 0
    current = d_hat
    while True:
        if rounds >= MAX_ROUNDS:
            raise ContractViolation("round budget exceeded; oracle or estimate is unsound")
        oracle.begin_round(rounds)
        _, buckets = population.spread_buckets(current, s)
        for bucket in buckets:
            out = oracle.test(bucket.expression(), label="bucket")
            if out.is_pure:
                population.retire(bucket)
            elif out.is_tainted:
                identified.append(out.identity)
                population.retire(bucket)
            else:
                bucket_search(oracle, bucket, p, identified, population, defer)
        rounds += 1
        deferred = population.advance_round()
        if known_d:
            if len(identified) == d_hat:
                break
            if deferred == 0:
                raise ContractViolation("defectives remain but the deferral pool is empty")
            current = d_hat - len(identified)
        else:
            if deferred == 0:
                break
            current = max(1, d_hat - len(identified))
    return sorted(identified), rounds


def run_deferral_unknown(
    oracle: Oracle,
    population,
    est_params,
    rng,
    s: float = 0.8,
    p: float = 0.479,
) -> tuple[list[int], int]:
    """Unknown-d pipeline: whole-set check, two-stage estimate, then rounds
    driven by the estimate minus the identified count."""
    from .core import RangeUnion
    from .estimation import estimate_defectives

    out = oracle.test(RangeUnion(((0, population.n),)), label="whole")
    if out.is_pure:
        return [], 0
    if out.is_tainted:
        return [out.identity], 0
    d_prime, _ = estimate_defectives(oracle, population.n, est_params, rng)
    d_hat = max(1, int(round(d_prime)))
    return run_deferral(oracle, population, d_hat, s, p, known_d=False)


# ---------------------------------------------------------------------------
# Analytic companions
# ---------------------------------------------------------------------------


def bucket_occupancy(k: int, s: float) -> float:
    """Probability a bucket holds exactly k defectives (Poisson limit, mean 1/s)."""
    if k < 0 or s <= 0:
        raise ValueError("need k >= 0 and s > 0")
    return 1.0 / (math.factorial(k) * s**k * math.exp(1.0 / s))


@dataclass(frozen=True)
class DeferralTables:
    """Closed-form per-bucket expectations at a given split fraction.

    ``tests[k]`` is the expected number of in-bucket search tests for a
    bucket holding k defectives (bucket test excluded); ``deferred[k]`` the
    expected number of defectives pushed to the next round from it.
    """

    tests: dict[int, float]
    deferred: dict[int, float]


def deferral_tables(p: float) -> DeferralTables:
    if not 0.0 < p < 1.0:
        raise ValueError("split fraction must lie strictly between 0 and 1")
    q = 1.0 - p
    e2 = (1 + 2 * p * q) / (2 * p * q)
    e3 = (1 + 3 * p * q**2 + (3 * p**2 * q + 3 * p * q**2) * e2) / (1 - p**3 - q**3)
    e4 = (1 + 4 * p * q**3 + (4 * p**3 * q + 4 * p * q**3) * e3 + 6 * p**2 * q**2 * e2) / (
        1 - p**4 - q**4
    )
    e5 = (
        1
        + 5 * p * q**4
        + (5 * p**4 * q + 5 * p * q**4) * e4
        + 10 * p**3 * q**2 * e3
        + 10 * p**2 * q**3 * e2
    ) / (1 - p**5 - q**5)
    e6 = (
        1
        + 6 * p * q**5
        + (6 * p**5 * q + 6 * p * q**5) * e5
        + 15 * p**4 * q**2 * e4
        + 20 * p**3 * q**3 * e3
        + 15 * p**2 * q**4 * e2
    ) / (1 - p**6 - q**6)
    e7 = (
        1
        + 7 * p * q**6
        + (7 * p**6 * q + 7 * p * q**6) * e6
        + 21 * p**5 * q**2 * e5
        + 35 * p**4 * q**3 * e4
        + 35 * p**3 * q**4 * e3
        + 21 * p**2 * q**5 * e2
    ) / (1 - p**7 - q**7)
    d3 = 3 * p**2 * q / (1 - p**3 - q**3)
    d4 = (4 * p**3 * q + 12 * p**2 * q**2 + (4 * p**3 * q + 4 * p * q**3) * d3) / (
        1 - p**4 - q**4
    )
    d5 = (
        5 * p**4 * q
        + 20 * p**3 * q**2
        + 30 * p**2 * q**3
        + (5 * p**4 * q + 5 * p * q**4) * d4
        + 10 * p**3 * q**2 * d3
    ) / (1 - p**5 - q**5)
    d6 = (
        6 * p**5 * q
        + 30 * p**4 * q**2
        + 60 * p**3 * q**3
        + 60 * p**2 * q**4
        + (6 * p**5 * q + 6 * p * q**5) * d5
        + 15 * p**4 * q**2 * d4
        + 20 * p**3 * q**3 * d3
    ) / (1 - p**6 - q**6)
    return DeferralTables(
        tests={2: e2, 3: e3, 4: e4, 5: e5, 6: e6, 7: e7},
        deferred={3: d3, 4: d4, 5: d5, 6: d6},
    )


@dataclass(frozen=True)
class ExpectedTotal:
    """Per-defective expected test count with its truncation error report."""

    per_defective: float
    round_tests_per_defective: float
    deferred_fraction: float
    truncated_mass: float
    truncation_bound: float


def expected_total_estimate(s: float, p: float, k_max: int = 7) -> ExpectedTotal:
    """Combine occupancy, per-bucket tests and the deferred-mass recursion.

    Buckets with more than ``k_max`` defectives are outside the closed forms;
    their mass is bounded (tests <= 3k per bucket, deferrals <= k - 2) and
    reported alongside the value.
    """
    tables = deferral_tables(p)
    occ = {k: bucket_occupancy(k, s) for k in range(0, 60)}
    search = sum(occ[k] * tables.tests[k] for k in range(2, k_max + 1))
    deferred = sum(occ[k] * tables.deferred[k] for k in range(3, min(k_max, 6) + 1))
    round_tests = s * (1.0 + search)
    deferred_fraction = s * deferred
    if deferred_fraction >= 1.0:
        raise ValueError("deferred mass does not contract; parameters unusable")
    per_defective = round_tests / (1.0 - deferred_fraction)
    truncated_mass = max(0.0, 1.0 - sum(occ[k] for k in range(0, k_max + 1)))
    tail_tests = s * sum(occ[k] * 3.0 * k for k in range(k_max + 1, 60))
    tail_defer = s * sum(occ[k] * (k - 2.0) for k in range(max(k_max + 1, 3), 60))
    # worst-direction sensitivity: extra tests and extra deferred mass both count
    optimistic = per_defective
    pessimistic = (round_tests + tail_tests) / max(1e-9, 1.0 - deferred_fraction - tail_defer)
    return ExpectedTotal(
        per_defective=per_defective,
        round_tests_per_defective=round_tests,
        deferred_fraction=deferred_fraction,
        truncated_mass=truncated_mass,
        truncation_bound=pessimistic - optimistic,
    )
