"""Deterministic search under anonymous ternary tests.

A tainted result no longer names its defective, so the search first reduces
the population to a list of disjoint tainted intervals, then shrinks those
intervals in lockstep: pairs (or triples) of intervals are split, the union
of the small parts is tested, and one or two follow-up tests pin down which
parts stay tainted.  Singleton intervals identify their defective by
elimination.  The whole procedure is deterministic: no randomness anywhere.
"""

from __future__ import annotations

import math

from .core import (
    ContractViolation,
    Oracle,
    P2,
    P3,
    P4,
    RangeUnion,
    binary_search_tainted,
    partition,
)

Interval = tuple[int, int]


def _size(iv: Interval) -> int:
    return iv[1] - iv[0]


def _union(*ivs: Interval) -> RangeUnion:
    return RangeUnion(tuple(sorted(ivs)))


def reduce_to_tainted(oracle: Oracle, interval: Interval, out: list[Interval]) -> None:
    """Split an impure interval at the two-way root until every defective
    sits in its own tainted interval, appended to ``out``.

    A pure first part certifies the second part impure, skipping its test.
    """
    if _size(interval) < 2:
        raise ContractViolation("an impure interval must hold at least two items")
    first, second = partition(interval, P2)
    t1 = oracle.test(RangeUnion((first,)), label="reduce")
    if t1.is_impure:
        reduce_to_tainted(oracle, first, out)
    elif t1.is_tainted:
        out.append(first)
    if t1.is_pure:
        reduce_to_tainted(oracle, second, out)
        return
    t2 = oracle.test(RangeUnion((second,)), label="reduce")
    if t2.is_impure:
        reduce_to_tainted(oracle, second, out)
    elif t2.is_tainted:
        out.append(second)


def resolve_two(oracle: Oracle, a: Interval, b: Interval) -> tuple[int, int]:
    """Find the lone defective in each of two disjoint tainted intervals.

    Each iteration splits both at the three-way root and tests the union of
    the small parts; a tainted union costs one extra test to see which side
    it came from.  Finishes with binary search once one side is a singleton.
    """
    while _size(a) > 1 and _size(b) > 1:
        a1, a2 = partition(a, P3)
        b1, b2 = partition(b, P3)
        t1 = oracle.test(_union(a1, b1), label="pair")
        if t1.is_pure:
            a, b = a2, b2
        elif t1.is_tainted:
            t2 = oracle.test(RangeUnion((a1,)), label="pair")
            if t2.is_pure:
                a, b = a2, b1
            elif t2.is_tainted:
                a, b = a1, b2
            else:
                raise ContractViolation("impure part inside a tainted interval")
        else:
            a, b = a1, b1
    found_a = a[0] if _size(a) == 1 else binary_search_tainted(oracle, a)
    found_b = b[0] if _size(b) == 1 else binary_search_tainted(oracle, b)
    return found_a, found_b


def resolve_three_plus(oracle: Oracle, sets: list[Interval]) -> list[int]:
    """Shrink three tainted intervals at a time until at most two remain
    non-singleton, then fall back to the pair resolver or binary search.

    The follow-up decision tree uses one extra test when exactly one small
    part is tainted and at most two extra tests otherwise.
    """
    sets = list(sets)
    while True:
        nonsingle = [(i, iv) for i, iv in enumerate(sets) if _size(iv) > 1]
        if len(nonsingle) < 3:
            break
        nonsingle.sort(key=lambda item: (-_size(item[1]), item[1][0]))
        (ia, iv_a), (ib, iv_b), (ic, iv_c) = nonsingle[:3]
        a1, a2 = partition(iv_a, P4)
        b1, b2 = partition(iv_b, P4)
        c1, c2 = partition(iv_c, P4)
        t1 = oracle.test(_union(a1, b1, c1), label="triple")
        if t1.is_pure:
            keep = (a2, b2, c2)
        elif t1.is_tainted:
            t2 = oracle.test(_union(a1, b2), label="triple")
            if t2.is_pure:
                keep = (a2, b1, c2)
            elif t2.is_tainted:
                keep = (a2, b2, c1)
            else:
                keep = (a1, b2, c2)
        else:
            t2 = oracle.test(_union(a1, b2), label="triple")
            if t2.is_pure:
                keep = (a2, b1, c1)
            elif t2.is_tainted:
                t3 = oracle.test(RangeUnion((c1,)), label="triple")
                if t3.is_pure:
                    keep = (a1, b1, c2)
                elif t3.is_tainted:
                    keep = (a1, b1, c1)
                else:
                    raise ContractViolation("impure part inside a tainted interval")
            else:
                keep = (a1, b2, c1)
        sets[ia], sets[ib], sets[ic] = keep
    found = [iv[0] for iv in sets if _size(iv) == 1]
    leftover = [iv for iv in sets if _size(iv) > 1]
    if len(leftover) == 2:
        found.extend(resolve_two(oracle, leftover[0], leftover[1]))
    elif len(leftover) == 1:
        found.append(binary_search_tainted(oracle, leftover[0]))
    return found


def run_anonymous(oracle: Oracle, n: int) -> list[int]:
    """Whole-population entry point for the anonymous-mode search."""
    if n == 0:
        return []
    out = oracle.test(RangeUnion(((0, n),)), label="whole")
    if out.is_pure:
        return []
    if out.is_tainted:
        return [binary_search_tainted(oracle, (0, n))]
    sets: list[Interval] = []
    reduce_to_tainted(oracle, (0, n), sets)
    if len(sets) == 2:
        return sorted(resolve_two(oracle, sets[0], sets[1]))
    return sorted(resolve_three_plus(oracle, sets))


def solve_split_root(k: int) -> float:
    """Root in (0, 1) of p = (1 - p)^k, by bisection to 1e-12."""
    if k < 2:
        raise ValueError("need k >= 2")
    lo, hi = 0.0, 1.0
    for _ in range(64):
        mid = (lo + hi) / 2
        if mid - (1.0 - mid) ** k < 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def anonymous_worst_case_bound(d: int, n: int) -> float:
    """Leading term of the worst-case test count (asymptotic; reporting only)."""
    if d < 2 or n < 2:
        raise ValueError("bound defined for d >= 2, n >= 2")
    if d == 2:
        return 1.8756 * math.log2(n)
    return (0.3307 + 0.7202 * d) * math.log2(n)
