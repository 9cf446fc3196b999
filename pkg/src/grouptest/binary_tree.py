"""Biased binary tree search for ternary identifying tests.

The search keeps splitting an impure interval into a p-fraction prefix and
its remainder, testing the prefix first and skipping the remainder's own
test whenever the prefix comes back pure (the remainder must then be impure).
Also provides the analytic companions: the expected-test recurrence table
and the worst-case leading-term bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .core import (
    ContractViolation,
    Oracle,
    P2,
    RangeUnion,
    partition,
)


@dataclass(frozen=True)
class IdentifyParams:
    """Split fraction for the tree search."""

    p: float = P2

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("split fraction must lie strictly between 0 and 1")


def _interval_expr(interval: tuple[int, int]) -> RangeUnion:
    return RangeUnion((interval,))


def identify(
    oracle: Oracle,
    interval: tuple[int, int],
    params: IdentifyParams = IdentifyParams(),
    label: str = "identify",
) -> list[int]:
    """Return every defective in an interval already known impure.

    A two-element impure interval is reported outright: it must be exactly
    its two members.
    """
    lo, hi = interval
    size = hi - lo
    if size < 2:
        raise ContractViolation("an impure set must hold at least two items")
    if size == 2:
        return [lo, lo + 1]
    a, b = partition(interval, params.p)
    found: list[int] = []
    out_a = oracle.test(_interval_expr(a), label=label)
    if out_a.is_impure:
        found.extend(identify(oracle, a, params, label))
    elif out_a.is_tainted:
        if out_a.identity is None:
            raise ContractViolation("identifying oracle returned no identity")
        found.append(out_a.identity)
    if out_a.is_pure:
        # the remainder must be impure: skip its own test
        found.extend(identify(oracle, b, params, label))
        return found
    out_b = oracle.test(_interval_expr(b), label=label)
    if out_b.is_impure:
        found.extend(identify(oracle, b, params, label))
    elif out_b.is_tainted:
        found.append(out_b.identity)
    elif len(found) < 2:
        raise ContractViolation("both halves resolved below the impure precondition")
    return found


def run_binary_tree(
    oracle: Oracle,
    n: int,
    params: IdentifyParams = IdentifyParams(),
) -> list[int]:
    """Whole-population entry point: one global test, then identify()."""
    if n == 0:
        return []
    out = oracle.test(_interval_expr((0, n)), label="whole")
    if out.is_pure:
        return []
    if out.is_tainted:
        return [out.identity]
    return sorted(identify(oracle, (0, n), params))


def expected_tests_table(p: float, d_max: int) -> np.ndarray:
    """Expected tests of identify() on a set with d defectives, n >> d.

    Iterates the split recurrence with binomial weights from d = 2 upward;
    index d of the result is E_d, with E_0 = E_1 = 0.  Binomial terms come
    from a numerically stable pmf, so d up to (at least) 1000 is exact to
    well under 1e-6.
    """
    if d_max < 2:
        raise ValueError("table needs d_max >= 2")
    q = 1.0 - p
    e = np.zeros(d_max + 1)
    for d in range(2, d_max + 1):
        w = binom.pmf(np.arange(d + 1), d, p)
        cross = float(np.dot(w[1:d], e[1:d] + e[d - 1 : 0 : -1]))
        e[d] = (2.0 - q**d + cross) / (1.0 - w[0] - w[d])
    return e


W2 = -1.0 / math.log2(P2)  # ~0.720210 tests per defective per lg n


def worst_case_bound(d: int, n: int) -> float:
    """Leading term of the worst-case test count (asymptotic; reporting only)."""
    if d < 2 or n < 2:
        raise ValueError("bound defined for d >= 2, n >= 2")
    eff = d if d % 2 == 0 else d - 1
    return W2 * eff * math.log2(n)
