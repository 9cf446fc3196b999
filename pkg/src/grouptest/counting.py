"""Spread-then-search when tests return the exact defective count.

Exact counts remove all uncertainty about whether the second part of a split
is worth entering: it is skipped when the first part accounted for
everything, tested once when exactly one defective remains (that test also
identifies it), and entered without its own test when two or more remain.
No deferral pool and no extra rounds are ever needed.
"""

from __future__ import annotations

from .core import ContractViolation, Oracle, split_point


def counting_search(
    oracle: Oracle,
    bucket,
    t: int,
    p: float,
    identified: list[int],
    population,
    label: str = "search",
) -> None:
    """Resolve a bucket whose counting test reported t >= 2 defectives."""
    if t < 2:
        raise ContractViolation("counting search needs at least two defectives")
    if bucket.size < t:
        raise ContractViolation("more defectives than items in the bucket")
    if bucket.size == t:
        members = bucket.all_members()
        identified.extend(members)
        population.retire_ranks(members)
        return
    first, second = bucket.split(split_point(bucket.size, p))
    out = oracle.test(first.expression(), label=label)
    t1 = out.value
    if t1 > t:
        raise ContractViolation("sub-count exceeds the bucket count")
    if t1 >= 2:
        counting_search(oracle, first, t1, p, identified, population, label)
    elif t1 == 1:
        identified.append(out.identity)
        population.retire(first)
    else:
        population.retire(first)
    remaining = t - t1
    if remaining == 0:
        population.retire(second)
        return
    if remaining == 1:
        out2 = oracle.test(second.expression(), label=label)
        if out2.value != 1:
            raise ContractViolation("declared-tainted part returned a different count")
        identified.append(out2.identity)
        population.retire(second)
        return
    counting_search(oracle, second, remaining, p, identified, population, label)


def run_counting(
    oracle: Oracle,
    population,
    d_hat: int,
    s: float = 0.58,
    p: float = 0.4715,
) -> tuple[list[int], int]:
    """Single pass: spread, one counting test per nonempty bucket, then
    count-guided searches.  Returns (defectives, rounds=1)."""
    oracle.begin_round(0)
    _, buckets = population.spread_buckets(d_hat, s)
    identified: list[int] = []
    for bucket in buckets:
        out = oracle.test(bucket.expression(), label="bucket")
        if out.value == 0:
            population.retire(bucket)
        elif out.value == 1:
            identified.append(out.identity)
            population.retire(bucket)
        else:
            counting_search(oracle, bucket, out.value, p, identified, population)
    return sorted(identified), 1


def expected_per_defective(s: float, p: float, k_max: int = 6) -> float:
    """Per-defective expected test count: one test per bucket plus the
    occupancy-weighted in-bucket expectations (no deferral recursion here)."""
    from .deferral import bucket_occupancy

    tables = counting_tables(p)
    search = sum(bucket_occupancy(k, s) * tables[k] for k in range(2, k_max + 1))
    return s * (1.0 + search)


def counting_tables(p: float) -> dict[int, float]:
    """Closed-form expected in-bucket tests for 2..6 defectives."""
    if not 0.0 < p < 1.0:
        raise ValueError("split fraction must lie strictly between 0 and 1")
    q = 1.0 - p
    e2 = (1 + 2 * p * q) / (2 * p * q)
    e3 = (1 + 3 * p**2 * q + (3 * p**2 * q + 3 * p * q**2) * e2) / (1 - p**3 - q**3)
    e4 = (1 + 4 * p**3 * q + (4 * p**3 * q + 4 * p * q**3) * e3 + 12 * p**2 * q**2 * e2) / (
        1 - p**4 - q**4
    )
    e5 = (
        1
        + 5 * p**4 * q
        + (5 * p**4 * q + 5 * p * q**4) * e4
        + (10 * p**3 * q**2 + 10 * p**2 * q**3) * (e2 + e3)
    ) / (1 - p**5 - q**5)
    e6 = (
        1
        + 6 * p**5 * q
        + (6 * p**5 * q + 6 * p * q**5) * e5
        + (15 * p**4 * q**2 + 15 * p**2 * q**4) * (e2 + e4)
        + 40 * p**3 * q**3 * e3
    ) / (1 - p**6 - q**6)
    return {2: e2, 3: e3, 4: e4, 5: e5, 6: e6}
