"""Reduced-randomness search: polynomial hashing into 2d buckets per round.

Each round draws a fresh degree-3 polynomial hash from the 4-universal
family, buckets every active item, and tests each nonempty bucket once.
Pure buckets are discarded, tainted buckets yield their identified defective,
impure buckets survive to the next round with half as many buckets.  All
per-item randomness collapses into the O(1) hash description, so each test
is still a constant-size expression.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy

from .core import ContractViolation, Oracle

MAX_HASH_ROUNDS = 64


@dataclass(frozen=True)
class HashFn:
    """h(x) = ((a3 x^3 + a2 x^2 + a1 x + b) mod r) mod m with r prime > m."""

    a3: int
    a2: int
    a1: int
    b: int
    r: int
    m: int

    def __post_init__(self):
        if self.r <= self.m:
            raise ValueError("modulus must exceed the bucket count")

    def __call__(self, x: int) -> int:
        return ((self.a3 * x * x * x + self.a2 * x * x + self.a1 * x + self.b) % self.r) % self.m

    def values(self, xs: np.ndarray) -> np.ndarray:
        # Horner with a reduction per step keeps every product below 2^62
        if self.r > (1 << 31):
            raise ValueError("vectorized evaluation supports moduli below 2^31")
        x = xs.astype(np.uint64)
        r = np.uint64(self.r)
        acc = (np.uint64(self.a3) * x + np.uint64(self.a2)) % r
        acc = (acc * x + np.uint64(self.a1)) % r
        acc = (acc * x + np.uint64(self.b)) % r
        return (acc % np.uint64(self.m)).astype(np.int64)


def next_prime_after(x: int) -> int:
    """Smallest prime strictly greater than x (deterministic for any 64-bit x)."""
    return int(sympy.nextprime(x))


def make_hash(m: int, max_id: int, rng: np.random.Generator) -> HashFn:
    """Fresh hash into m buckets, sound for keys up to max_id."""
    if m < 2:
        raise ValueError("need at least two buckets")
    r = next_prime_after(max(m, max_id))
    a3 = int(rng.integers(1, r))
    a2 = int(rng.integers(1, r))
    a1 = int(rng.integers(1, r))
    b = int(rng.integers(0, r))
    return HashFn(a3, a2, a1, b, r, m)


class TestBudget:
    """Hard cap on tests issued by one attempt of the unknown-d wrapper."""

    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    def take(self) -> bool:
        if self.used >= self.limit:
            return False
        self.used += 1
        return True


@dataclass
class RoundStats:
    tests: int
    found: int
    survivors_before: int


def _hash_rounds(
    oracle: Oracle,
    population,
    d_remaining: int,
    rng: np.random.Generator,
    budget: TestBudget | None = None,
    round_offset: int = 0,
    exact_d: bool = True,
    stats: list[RoundStats] | None = None,
) -> tuple[list[int], int, bool]:
    """Iterate hash rounds until the active pool (or the count) runs out.

    Returns (identified, rounds, capped).  When the budget runs dry mid-round
    every still-untested bucket survives untouched.
    """
    identified: list[int] = []
    rounds = 0
    while population.pool_size > 0:
        if exact_d and d_remaining <= 0:
            break
        if rounds >= MAX_HASH_ROUNDS:
            raise ContractViolation("hash round cap exceeded; oracle must be unsound")
        oracle.begin_round(round_offset + rounds)
        m = max(2, 2 * max(1, d_remaining))
        hfn = make_hash(m, population.n - 1, rng)
        buckets = population.hash_buckets(hfn)
        found_before = len(identified)
        tests_this_round = 0
        capped = False
        for idx, bucket in enumerate(buckets):
            if budget is not None and not budget.take():
                for rest in buckets[idx:]:
                    population.defer(rest)
                capped = True
                break
            out = oracle.test(bucket.expression(), label="hash-bucket")
            tests_this_round += 1
            if out.is_pure:
                population.retire(bucket)
            elif out.is_tainted:
                identified.append(out.identity)
                population.retire(bucket)
            else:
                population.defer(bucket)
        rounds += 1
        if stats is not None:
            stats.append(RoundStats(tests_this_round, len(identified) - found_before,
                                    max(1, d_remaining)))
        d_remaining -= len(identified) - found_before
        population.advance_round()
        if capped:
            return identified, rounds, True
    return identified, rounds, False


def run_hashed(
    oracle: Oracle,
    population,
    d: int,
    rng: np.random.Generator,
    stats: list[RoundStats] | None = None,
) -> tuple[list[int], int]:
    """Known-d entry point; returns (defectives, rounds)."""
    identified, rounds, capped = _hash_rounds(
        oracle, population, d, rng, exact_d=True, stats=stats
    )
    assert not capped
    return sorted(identified), rounds


def run_hashed_unknown_d(
    oracle: Oracle,
    population,
    rng: np.random.Generator,
    cap_constant: int = 8,
) -> tuple[list[int], int, list[int]]:
    """Doubling wrapper: assume d, cap the attempt at cap_constant * d tests,
    double on failure.  Identifications (and every other sound removal) carry
    over between attempts.  Returns (defectives, rounds, attempt budgets used)."""
    if cap_constant <= 4:
        raise ValueError("the cap must exceed the known-d budget of 4 tests per defective")
    identified: list[int] = []
    rounds = 0
    attempts: list[int] = []
    assumed = 2
    while population.pool_size > 0:
        budget = TestBudget(cap_constant * assumed)
        found, r, capped = _hash_rounds(
            oracle,
            population,
            max(1, assumed - len(identified)),
            rng,
            budget=budget,
            round_offset=rounds,
            exact_d=False,
        )
        identified.extend(found)
        rounds += r
        attempts.append(budget.used)
        if not capped and population.pool_size == 0:
            break
        assumed *= 2
    return sorted(identified), rounds, attempts


@dataclass(frozen=True)
class UniformityReport:
    r: int
    keys: tuple[int, ...]
    coefficient_tuples: int
    distinct_images: int
    max_deviation: float
    full_coefficient_range: bool


def hash_uniformity_check(
    r: int, keys: tuple[int, int, int, int] = (0, 1, 2, 3), full_coefficient_range: bool = False
) -> UniformityReport:
    """Exhaustively enumerate coefficient tuples for a small prime and report
    how far the image of four fixed keys is from the uniform 1/r^4 law.

    With the full coefficient range the polynomial map is a bijection and the
    deviation is exactly zero; restricting the leading coefficients to
    [1, r-1] leaves some image tuples unreachable.
    """
    if r > 13 or not sympy.isprime(r):
        raise ValueError("exhaustive check needs a prime r <= 13")
    if len(set(keys)) != 4 or any(not 0 <= k < r for k in keys):
        raise ValueError("need four distinct keys below r")
    lo = 0 if full_coefficient_range else 1
    counts: Counter = Counter()
    for a3 in range(lo, r):
        for a2 in range(lo, r):
            for a1 in range(lo, r):
                for b in range(r):
                    counts[
                        tuple((a3 * x**3 + a2 * x**2 + a1 * x + b) % r for x in keys)
                    ] += 1
    total = (r - lo) ** 3 * r
    uniform = 1.0 / r**4
    max_dev = max(abs(c / total - uniform) for c in counts.values())
    if len(counts) < r**4:
        max_dev = max(max_dev, uniform)  # some image tuple never occurs
    return UniformityReport(r, tuple(keys), total, len(counts), max_dev, full_coefficient_range)
