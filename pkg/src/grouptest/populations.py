"""Population backends behind the spread- and hash-bucket searches.

Two engines provide the same bucket interface:

* ``DensePopulation`` materializes every item.  Bucket membership comes from
  evaluating the per-item PRF (or polynomial hash) on each rank, so every
  expression denotes exactly the set the controller believes it does.  This
  is the reference engine; an optional paranoia mode re-derives each bucket
  from its expression and asserts they match.

* ``SparsePopulation`` simulates only the hidden defectives per item.  Their
  bucket assignment uses the same PRF/hash the oracle evaluates, so every
  outcome is real.  The crowd of clean items is carried as counts: bucket
  occupancies are dealt multinomially and the defectives' positions among a
  bucket's members are sampled uniformly, which is the exact conditional
  distribution for a uniform random defective set in the first round and an
  n >> d approximation afterwards.  Rank windows for emitted expressions are
  placed at defective-rank boundaries, so the oracle's answer always agrees
  with the controller's bookkeeping.  The dense-vs-sparse agreement is
  checked statistically in the test suite.

Use sparse for large-n Monte Carlo, dense everywhere correctness is audited
item by item.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    ContractViolation,
    HashBucket,
    ItemState,
    SpreadBucket,
    fresh_seed,
    prf_bucket_vec,
)


@dataclass(frozen=True)
class SpreadPlan:
    """Record of one spreading action."""

    spread_factor: float
    d_hat: int
    bucket_count: int
    seed: int
    epoch: int


def bucket_count_for(d_hat: int, s: float) -> int:
    """Number of buckets for a spread: round(s * d_hat), at least one."""
    return max(1, int(s * d_hat + 0.5))


def sample_sorted_positions(rng: np.random.Generator, size: int, k: int) -> list[int]:
    """Uniform k-subset of [0, size), sorted.  Rejection sampling keeps the
    cost O(k) when k << size."""
    if k >= size:
        return list(range(size))
    if k == 0:
        return []
    if 3 * k >= size:
        return sorted(int(v) for v in rng.choice(size, size=k, replace=False))
    picked: set[int] = set()
    while len(picked) < k:
        for v in rng.integers(0, size, size=k - len(picked)):
            picked.add(int(v))
    return sorted(picked)


class DenseSet:
    """A searchable subset backed by its actual member ranks."""

    __slots__ = ("members", "key", "window")

    def __init__(self, members: np.ndarray, key: tuple, window: tuple[int, int]):
        self.members = members
        self.key = key  # (kind, seed-or-hash-fields..., buckets, bucket, epoch)
        self.window = window

    @property
    def size(self) -> int:
        return len(self.members)

    def expression(self):
        return _expression_for(self.key, self.window)

    def split(self, t: int) -> tuple["DenseSet", "DenseSet"]:
        if not 0 < t < self.size:
            raise ContractViolation("split index out of range")
        thr = int(self.members[t])
        lo, hi = self.window
        return (
            DenseSet(self.members[:t], self.key, (lo, thr)),
            DenseSet(self.members[t:], self.key, (thr, hi)),
        )

    def all_members(self) -> list[int]:
        return [int(r) for r in self.members]


class SparseSet:
    """A searchable subset carrying only its size and its defective content.

    ``positions`` are the defectives' indices among the set's members in rank
    order; ``ranks`` are the same defectives' actual ranks.  Splits are exact
    integer bookkeeping; no clean item is ever materialized.
    """

    __slots__ = ("size", "positions", "ranks", "key", "window")

    def __init__(
        self,
        size: int,
        positions: Optional[list[int]],
        ranks: list[int],
        key: tuple,
        window: tuple[int, int],
    ):
        self.size = size
        self.positions = positions
        self.ranks = ranks
        self.key = key
        self.window = window

    def expression(self):
        return _expression_for(self.key, self.window)

    def split(self, t: int) -> tuple["SparseSet", "SparseSet"]:
        if not 0 < t < self.size:
            raise ContractViolation("split index out of range")
        if self.positions is None:
            raise ContractViolation("this set does not support splitting")
        u = bisect_left(self.positions, t)
        lo, hi = self.window
        thr = (self.ranks[u - 1] + 1) if u > 0 else lo
        first = SparseSet(t, self.positions[:u], self.ranks[:u], self.key, (lo, thr))
        second = SparseSet(
            self.size - t,
            [p - t for p in self.positions[u:]],
            self.ranks[u:],
            self.key,
            (thr, hi),
        )
        return first, second

    def all_members(self) -> list[int]:
        if len(self.ranks) != self.size:
            raise ContractViolation("member ranks are only enumerable when provably all defective")
        return list(self.ranks)


def _expression_for(key: tuple, window: tuple[int, int]):
    kind = key[0]
    if kind == "spread":
        _, seed, buckets, bucket, epoch = key
        return SpreadBucket(seed, buckets, bucket, window[0], window[1], epoch)
    if kind == "hash":
        _, a3, a2, a1, b, r, m, target, epoch = key
        # hash buckets are never window-narrowed: they are tested whole
        return HashBucket(a3, a2, a1, b, r, m, target, epoch)
    raise ValueError(f"unknown set key kind {kind!r}")


class DensePopulation:
    """Reference engine: every active item is materialized."""

    engine = "dense"

    def __init__(
        self,
        n: int,
        rng: np.random.Generator,
        state: Optional[ItemState] = None,
        verify: bool = False,
    ):
        self.n = n
        self.rng = rng
        self.state = state if state is not None else ItemState()
        self.verify = verify
        self.pool = np.arange(n, dtype=np.int64)
        self._deferred: list[np.ndarray] = []

    @property
    def pool_size(self) -> int:
        return len(self.pool)

    def spread_buckets(self, d_hat: int, s: float) -> tuple[SpreadPlan, list[DenseSet]]:
        buckets = bucket_count_for(d_hat, s)
        seed = fresh_seed(self.rng)
        epoch = self.state.next_epoch()
        plan = SpreadPlan(s, d_hat, buckets, seed, epoch)
        if self.pool_size == 0:
            return plan, []
        assign = prf_bucket_vec(seed, self.pool, buckets).astype(np.int64)
        order = np.argsort(assign, kind="stable")  # stable: keeps rank order per bucket
        sorted_assign = assign[order]
        sorted_members = self.pool[order]
        bounds = np.searchsorted(sorted_assign, np.arange(buckets + 1))
        out = []
        for j in range(buckets):
            lo, hi = bounds[j], bounds[j + 1]
            if lo == hi:
                continue
            key = ("spread", seed, buckets, j, epoch)
            ds = DenseSet(sorted_members[lo:hi], key, (0, self.n))
            if self.verify:
                self._check_faithful(ds)
            out.append(ds)
        return plan, out

    def hash_buckets(self, hfn) -> list[DenseSet]:
        epoch = self.state.next_epoch()
        if self.pool_size == 0:
            return []
        assign = hfn.values(self.pool)
        order = np.argsort(assign, kind="stable")
        sorted_assign = assign[order]
        sorted_members = self.pool[order]
        bounds = np.searchsorted(sorted_assign, np.arange(hfn.m + 1))
        out = []
        for y in range(hfn.m):
            lo, hi = bounds[y], bounds[y + 1]
            if lo == hi:
                continue
            key = ("hash", hfn.a3, hfn.a2, hfn.a1, hfn.b, hfn.r, hfn.m, y, epoch)
            ds = DenseSet(sorted_members[lo:hi], key, (0, self.n))
            if self.verify:
                self._check_faithful(ds)
            out.append(ds)
        return out

    def _check_faithful(self, ds: DenseSet) -> None:
        expr = ds.expression()
        expected = [int(r) for r in self.pool if expr.contains(int(r))]
        if expected != ds.all_members():
            raise AssertionError("bucket members disagree with their expression")

    def retire(self, subset: DenseSet) -> None:
        self.state.retire(subset.all_members())

    def retire_ranks(self, ranks: Sequence[int]) -> None:
        self.state.retire(ranks)

    def defer(self, subset: DenseSet) -> None:
        self._deferred.append(subset.members)

    def advance_round(self) -> int:
        if self._deferred:
            self.pool = np.sort(np.concatenate(self._deferred))
            self._deferred = []
        else:
            self.pool = np.empty(0, dtype=np.int64)
        return self.pool_size


class SparsePopulation:
    """Large-n engine: defectives are exact, the clean crowd is counted."""

    engine = "sparse"

    def __init__(
        self,
        n: int,
        defective_ranks: Sequence[int],
        rng: np.random.Generator,
        state: Optional[ItemState] = None,
    ):
        self.n = n
        self.rng = rng
        self.state = state if state is not None else ItemState()
        self._pool_defs = [int(r) for r in defective_ranks]
        self._pool_nondef = n - len(self._pool_defs)
        self._deferred_ranks: list[int] = []
        self._deferred_nondef = 0

    @property
    def pool_size(self) -> int:
        return self._pool_nondef + len(self._active_pool_defs())

    def _active_pool_defs(self) -> list[int]:
        removed = self.state.removed
        return [r for r in self._pool_defs if r not in removed]

    def spread_buckets(self, d_hat: int, s: float) -> tuple[SpreadPlan, list[SparseSet]]:
        buckets = bucket_count_for(d_hat, s)
        seed = fresh_seed(self.rng)
        epoch = self.state.next_epoch()
        plan = SpreadPlan(s, d_hat, buckets, seed, epoch)
        defs = self._active_pool_defs()
        per_bucket_defs: list[list[int]] = [[] for _ in range(buckets)]
        if defs:
            assign = prf_bucket_vec(seed, np.asarray(defs, dtype=np.int64), buckets)
            for r, j in zip(defs, assign):
                per_bucket_defs[int(j)].append(r)
        counts = self.rng.multinomial(self._pool_nondef, np.full(buckets, 1.0 / buckets))
        out = []
        for j in range(buckets):
            k = len(per_bucket_defs[j])
            size = int(counts[j]) + k
            if size == 0:
                continue
            positions = sample_sorted_positions(self.rng, size, k)
            key = ("spread", seed, buckets, j, epoch)
            out.append(SparseSet(size, positions, per_bucket_defs[j], key, (0, self.n)))
        return plan, out

    def hash_buckets(self, hfn) -> list[SparseSet]:
        epoch = self.state.next_epoch()
        defs = self._active_pool_defs()
        per_bucket_defs: list[list[int]] = [[] for _ in range(hfn.m)]
        if defs:
            assign = hfn.values(np.asarray(defs, dtype=np.int64))
            for r, y in zip(defs, assign):
                per_bucket_defs[int(y)].append(r)
        counts = self.rng.multinomial(self._pool_nondef, np.full(hfn.m, 1.0 / hfn.m))
        out = []
        for y in range(hfn.m):
            k = len(per_bucket_defs[y])
            size = int(counts[y]) + k
            if size == 0:
                continue
            key = ("hash", hfn.a3, hfn.a2, hfn.a1, hfn.b, hfn.r, hfn.m, y, epoch)
            # hash buckets are tested whole; positions are never needed
            out.append(SparseSet(size, None, per_bucket_defs[y], key, (0, self.n)))
        return out

    def retire(self, subset: SparseSet) -> None:
        if subset.ranks:
            self.state.retire(subset.ranks)

    def retire_ranks(self, ranks: Sequence[int]) -> None:
        self.state.retire(ranks)

    def defer(self, subset: SparseSet) -> None:
        self._deferred_ranks.extend(subset.ranks)
        self._deferred_nondef += subset.size - len(subset.ranks)

    def advance_round(self) -> int:
        self._pool_defs = sorted(self._deferred_ranks)
        self._pool_nondef = self._deferred_nondef
        self._deferred_ranks = []
        self._deferred_nondef = 0
        return self.pool_size
