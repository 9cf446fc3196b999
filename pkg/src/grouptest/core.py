"""Core machinery shared by every search strategy in this package.

This module owns the hidden-configuration model, the query-counting oracle
for the four result modes (ternary/counting x identifying/anonymous),
the constant-size test expressions those queries are phrased in, the
deterministic counter-based randomness, and the split utilities used by the
interval-based searches.

The oracle only ever inspects the hidden defective ranks: the outcome of a
test is a pure function of the expression, the defective set and the
per-item removed flags.  Everything a controller learns, it learns through
``Oracle.test``.
"""

from __future__ import annotations

import json
import math
import struct
from bisect import bisect_left
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Union

import numpy as np

M64 = (1 << 64) - 1

# Fixed points of p = (1 - p)^k for k = 2, 3, 4, and the split fraction that
# minimizes the expected test count of the biased tree search for large
# defective counts.  See solve_split_root() in the anonymous module for the
# solver these were checked against.
P2 = 0.38196601
Q2 = 0.61803399
P3 = 0.3176722
P4 = 0.27550804
P_STAR = 0.41750778

# Hard cap on the serialized size of any test expression.  Conciseness is a
# protocol requirement: a test must fit in a constant-size broadcast.
MAX_EXPRESSION_BYTES = 64


class GroupTestError(Exception):
    """Base class for errors raised by this package."""


class ContractViolation(GroupTestError):
    """An oracle outcome contradicted something already established."""


class StaleExpressionError(GroupTestError):
    """An epoch-tagged expression was evaluated against a newer item state."""


class DegenerateSplitError(GroupTestError):
    """A set too small to partition was asked to split."""


class EstimationFailure(GroupTestError):
    """The defective-count estimator hit its level cap."""


class DataCorruptionError(GroupTestError):
    """An aggregated sensor response was not explainable by any dead set."""


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def prf_u64(seed: int, x: int) -> int:
    """Keyed 64-bit pseudo-random value for item ``x`` (SplitMix64 finalizer).

    The same formula backs the vectorized twin below; both are pinned by
    tests so a stored seed reproduces identical streams across runs.
    """
    z = (seed + (x + 1) * _GAMMA) & M64
    z = ((z ^ (z >> 30)) * _MIX1) & M64
    z = ((z ^ (z >> 27)) * _MIX2) & M64
    return z ^ (z >> 31)


def prf_u64_vec(seed: int, xs: np.ndarray) -> np.ndarray:
    """Vectorized ``prf_u64`` over an integer array."""
    z = (xs.astype(np.uint64) + np.uint64(1)) * np.uint64(_GAMMA)
    z += np.uint64(seed)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


def prf_u01(seed: int, x: int) -> float:
    return prf_u64(seed, x) / 2.0**64


def prf_bucket(seed: int, x: int, buckets: int) -> int:
    return prf_u64(seed, x) % buckets


def prf_bucket_vec(seed: int, xs: np.ndarray, buckets: int) -> np.ndarray:
    return prf_u64_vec(seed, xs) % np.uint64(buckets)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox substream for (seed, key).

    Distinct keys (e.g. trial index and a purpose tag) give streams that are
    independent by construction, so trial results do not depend on execution
    order.
    """
    ss = np.random.SeedSequence(entropy=seed & M64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def fresh_seed(rng: np.random.Generator) -> int:
    """Draw a 64-bit expression seed from a substream."""
    return int(rng.integers(0, 1 << 63, dtype=np.int64))


# ---------------------------------------------------------------------------
# Hidden configuration and result modes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Configuration:
    """The hidden set of defective item ranks within a population of size n."""

    n: int
    defectives: tuple[int, ...]

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("population size must be non-negative")
        prev = -1
        for r in self.defectives:
            if not 0 <= r < self.n:
                raise ValueError(f"defective rank {r} outside [0, {self.n})")
            if r <= prev:
                raise ValueError("defective ranks must be strictly increasing")
            prev = r

    @property
    def d(self) -> int:
        return len(self.defectives)


class OracleMode(Enum):
    TERNARY_IDENTIFYING = "ternary-identifying"
    TERNARY_ANONYMOUS = "ternary-anonymous"
    COUNTING_IDENTIFYING = "counting-identifying"
    COUNTING_ANONYMOUS = "counting-anonymous"

    @property
    def identifying(self) -> bool:
        return self in (OracleMode.TERNARY_IDENTIFYING, OracleMode.COUNTING_IDENTIFYING)

    @property
    def counting(self) -> bool:
        return self in (OracleMode.COUNTING_IDENTIFYING, OracleMode.COUNTING_ANONYMOUS)


# ---------------------------------------------------------------------------
# Test expressions
# ---------------------------------------------------------------------------
#
# Binary layout (little-endian, documented in README.md):
#   RangeUnion : u8 tag=1, u8 count k<=3, k x (u64 lo, u64 hi)      <= 50 B
#   HashBucket : u8 tag=2, u32 epoch, u64 a3,a2,a1,b,r,m,target     =  61 B
#   Singleton  : u8 tag=3, u64 rank                                 =   9 B
#   PrfSubset  : u8 tag=4, u64 seed, u32 level, u32 denominator     =  17 B
#   SpreadBucket: u8 tag=5, u32 epoch, u64 seed, u32 buckets,
#                 u32 bucket, u64 lo, u64 hi                        =  41 B


@dataclass(frozen=True)
class RangeUnion:
    """Union of up to three disjoint half-open rank intervals."""

    intervals: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(self.intervals) > 3:
            raise ValueError("a range union holds at most 3 intervals")
        prev_hi = None
        for lo, hi in self.intervals:
            if lo > hi:
                raise ValueError(f"interval [{lo}, {hi}) is inverted")
            if prev_hi is not None and lo < prev_hi:
                raise ValueError("intervals must be sorted and disjoint")
            prev_hi = hi

    def contains(self, item: int) -> bool:
        return any(lo <= item < hi for lo, hi in self.intervals)

    def byte_size(self) -> int:
        return 2 + 16 * len(self.intervals)

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<BB", 1, len(self.intervals))]
        for lo, hi in self.intervals:
            parts.append(struct.pack("<QQ", lo, hi))
        return b"".join(parts)

    def to_json(self) -> dict:
        return {"kind": "range-union", "intervals": [list(iv) for iv in self.intervals]}


@dataclass(frozen=True)
class HashBucket:
    """One bucket of a degree-3 polynomial hash mod a prime, folded mod m."""

    a3: int
    a2: int
    a1: int
    b: int
    r: int
    m: int
    target: int
    epoch: int = 0

    def hash_value(self, x: int) -> int:
        return ((self.a3 * x * x * x + self.a2 * x * x + self.a1 * x + self.b) % self.r) % self.m

    def contains(self, item: int) -> bool:
        return self.hash_value(item) == self.target

    def byte_size(self) -> int:
        return 61

    def to_bytes(self) -> bytes:
        return struct.pack(
            "<BI7Q", 2, self.epoch, self.a3, self.a2, self.a1, self.b, self.r, self.m, self.target
        )

    def to_json(self) -> dict:
        return {
            "kind": "hash-bucket",
            "coefficients": [self.a3, self.a2, self.a1, self.b],
            "modulus": self.r,
            "buckets": self.m,
            "target": self.target,
            "epoch": self.epoch,
        }


@dataclass(frozen=True)
class Singleton:
    rank: int

    def contains(self, item: int) -> bool:
        return item == self.rank

    def byte_size(self) -> int:
        return 9

    def to_bytes(self) -> bytes:
        return struct.pack("<BQ", 3, self.rank)

    def to_json(self) -> dict:
        return {"kind": "singleton", "rank": self.rank}


@dataclass(frozen=True)
class PrfSubset:
    """Random subset including each item independently with prob 2^(-level/denominator)."""

    seed: int
    level: int
    denominator: int = 1

    def __post_init__(self):
        if self.level < 1 or self.denominator < 1:
            raise ValueError("level and denominator must be >= 1")

    @property
    def inclusion_probability(self) -> float:
        return 2.0 ** (-self.level / self.denominator)

    @property
    def threshold(self) -> int:
        """Integer cut on the PRF value; scalar and vector paths share it."""
        return int(self.inclusion_probability * 2.0**64)

    def contains(self, item: int) -> bool:
        return prf_u64(self.seed, item) < self.threshold

    def byte_size(self) -> int:
        return 17

    def to_bytes(self) -> bytes:
        return struct.pack("<BQII", 4, self.seed, self.level, self.denominator)

    def to_json(self) -> dict:
        return {"kind": "prf-subset", "seed": self.seed, "level": self.level,
                "denominator": self.denominator}


@dataclass(frozen=True)
class SpreadBucket:
    """One bucket of a seeded uniform spread, narrowed to a rank window.

    Membership is ``prf(seed, x) mod buckets == bucket`` and ``lo <= x < hi``.
    The window narrows as the in-bucket search splits off rank prefixes, so
    every subset a bucket search tests stays expressible in one constant-size
    record.
    """

    seed: int
    buckets: int
    bucket: int
    lo: int
    hi: int
    epoch: int = 0

    def __post_init__(self):
        if self.buckets < 1 or not 0 <= self.bucket < self.buckets:
            raise ValueError("bucket index out of range")
        if self.lo > self.hi:
            raise ValueError("window is inverted")

    def contains(self, item: int) -> bool:
        if not self.lo <= item < self.hi:
            return False
        return prf_bucket(self.seed, item, self.buckets) == self.bucket

    def byte_size(self) -> int:
        return 41

    def to_bytes(self) -> bytes:
        return struct.pack(
            "<BIQIIQQ", 5, self.epoch, self.seed, self.buckets, self.bucket, self.lo, self.hi
        )

    def to_json(self) -> dict:
        return {"kind": "spread-bucket", "seed": self.seed, "buckets": self.buckets,
                "bucket": self.bucket, "window": [self.lo, self.hi], "epoch": self.epoch}


TestExpression = Union[RangeUnion, HashBucket, Singleton, PrfSubset, SpreadBucket]


def expression_from_bytes(data: bytes) -> TestExpression:
    """Inverse of ``to_bytes`` for every expression variant."""
    tag = data[0]
    if tag == 1:
        (count,) = struct.unpack_from("<B", data, 1)
        ivs = []
        for i in range(count):
            lo, hi = struct.unpack_from("<QQ", data, 2 + 16 * i)
            ivs.append((lo, hi))
        return RangeUnion(tuple(ivs))
    if tag == 2:
        epoch, a3, a2, a1, b, r, m, target = struct.unpack_from("<I7Q", data, 1)
        return HashBucket(a3, a2, a1, b, r, m, target, epoch)
    if tag == 3:
        (rank,) = struct.unpack_from("<Q", data, 1)
        return Singleton(rank)
    if tag == 4:
        seed, level, den = struct.unpack_from("<QII", data, 1)
        return PrfSubset(seed, level, den)
    if tag == 5:
        epoch, seed, buckets, bucket, lo, hi = struct.unpack_from("<IQIIQQ", data, 1)
        return SpreadBucket(seed, buckets, bucket, lo, hi, epoch)
    raise ValueError(f"unknown expression tag {tag}")


def expression_to_json(expr: TestExpression) -> str:
    return json.dumps(expr.to_json(), sort_keys=True)


def membership_mask(expr: TestExpression, ranks: np.ndarray) -> np.ndarray:
    """Vectorized membership of many ranks at once (removed flags excluded).

    Pinned against evaluate_membership by tests: the two paths must agree on
    every variant.
    """
    if isinstance(expr, RangeUnion):
        mask = np.zeros(len(ranks), dtype=bool)
        for lo, hi in expr.intervals:
            mask |= (ranks >= lo) & (ranks < hi)
        return mask
    if isinstance(expr, Singleton):
        return ranks == expr.rank
    if isinstance(expr, SpreadBucket):
        mask = prf_bucket_vec(expr.seed, ranks, expr.buckets) == np.uint64(expr.bucket)
        return mask & (ranks >= expr.lo) & (ranks < expr.hi)
    if isinstance(expr, HashBucket):
        if expr.r > (1 << 31):
            return np.asarray([expr.contains(int(x)) for x in ranks], dtype=bool)
        x = ranks.astype(np.uint64)
        r = np.uint64(expr.r)
        acc = (np.uint64(expr.a3) * x + np.uint64(expr.a2)) % r
        acc = (acc * x + np.uint64(expr.a1)) % r
        acc = (acc * x + np.uint64(expr.b)) % r
        return (acc % np.uint64(expr.m)) == np.uint64(expr.target)
    if isinstance(expr, PrfSubset):
        return prf_u64_vec(expr.seed, ranks) < np.uint64(min(expr.threshold, M64))
    raise TypeError(f"unknown expression type {type(expr)!r}")


def evaluate_membership(
    expr: TestExpression,
    item: int,
    removed: bool = False,
    state_epoch: Optional[int] = None,
) -> bool:
    """Decide whether ``item`` belongs to the test set ``expr`` describes.

    ``removed`` is the item's own O(1) flag: a retired item belongs to no
    further test set.  Epoch-tagged expressions must match the current item
    state epoch when one is supplied.
    """
    epoch = getattr(expr, "epoch", None)
    if epoch is not None and state_epoch is not None and epoch != state_epoch:
        raise StaleExpressionError(
            f"expression epoch {epoch} does not match item-state epoch {state_epoch}"
        )
    if removed:
        return False
    return expr.contains(item)


# ---------------------------------------------------------------------------
# Outcomes, ledger, per-item state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestOutcome:
    """Oracle answer: 0 / 1 / 2(+) in ternary modes, the exact count otherwise.

    ``identity`` is present exactly when one defective is in the set and the
    mode is identifying.
    """

    value: int
    identity: Optional[int] = None
    counting: bool = False

    @property
    def is_pure(self) -> bool:
        return self.value == 0

    @property
    def is_tainted(self) -> bool:
        return self.value == 1

    @property
    def is_impure(self) -> bool:
        return self.value >= 2


@dataclass(frozen=True)
class LedgerEntry:
    expression: TestExpression
    outcome: TestOutcome
    round_index: int
    label: str = ""


class TestLedger:
    """Append-only audit trail of every oracle query.

    The entry count is the measured quantity behind every performance claim
    in this package; simulators never count tests any other way.
    """

    def __init__(self):
        self.entries: list[LedgerEntry] = []

    def append(self, entry: LedgerEntry) -> None:
        self.entries.append(entry)

    @property
    def test_count(self) -> int:
        return len(self.entries)

    def count(self, label: Optional[str] = None, round_index: Optional[int] = None) -> int:
        total = 0
        for e in self.entries:
            if label is not None and e.label != label:
                continue
            if round_index is not None and e.round_index != round_index:
                continue
            total += 1
        return total


class ItemState:
    """Shared per-item O(1) state: the current epoch and the removed flags.

    Only retired ranks are stored; at large scale those are the identified
    defectives plus whatever a dense controller chose to retire.
    """

    def __init__(self):
        self.epoch = 0
        self.removed: set[int] = set()
        self.version = 0

    def retire(self, ranks: Iterable[int]) -> None:
        self.removed.update(int(r) for r in ranks)
        self.version += 1

    def next_epoch(self) -> int:
        self.epoch += 1
        return self.epoch

    def is_removed(self, rank: int) -> bool:
        return rank in self.removed


# ---------------------------------------------------------------------------
# The oracle
# ---------------------------------------------------------------------------


class Oracle:
    """Classifies each queried test set by how many hidden defectives it holds.

    One oracle serves one trial: it owns the ledger, consults the shared
    ``ItemState`` for removed flags and epochs, and reveals nothing about the
    configuration beyond the mode's outcome for each query.
    """

    def __init__(
        self,
        config: Configuration,
        mode: OracleMode,
        state: Optional[ItemState] = None,
    ):
        self.mode = mode
        self.state = state if state is not None else ItemState()
        self.ledger = TestLedger()
        self.round_index = 0
        self._n = config.n
        self._ranks = list(config.defectives)
        self._ranks_arr = np.asarray(config.defectives, dtype=np.int64)
        # one-slot memo of the defectives' bucket assignments per family
        self._assign_key = None
        self._assign: Optional[dict[int, list[int]]] = None

    def begin_round(self, index: int) -> None:
        self.round_index = index

    def _bucket_map(self, key, values) -> dict[int, list[int]]:
        # memoize the defectives' bucket assignment for one expression family;
        # the defective list never changes, so one map serves the whole round
        if self._assign_key != key:
            mp: dict[int, list[int]] = {}
            if self._ranks:
                for r, j in zip(self._ranks, values()):
                    mp.setdefault(int(j), []).append(r)
            self._assign = mp
            self._assign_key = key
        return self._assign

    def _classify(self, expr: TestExpression) -> tuple[int, Optional[int]]:
        """Count active defectives in the expression's set; return (k, witness)."""
        epoch = getattr(expr, "epoch", None)
        if epoch is not None and epoch != self.state.epoch:
            raise StaleExpressionError(
                f"expression epoch {epoch} does not match item-state epoch {self.state.epoch}"
            )
        removed = self.state.removed
        ranks = self._ranks
        if isinstance(expr, RangeUnion):
            hits = []
            for lo, hi in expr.intervals:
                i = bisect_left(ranks, lo)
                j = bisect_left(ranks, hi, i)
                for r in ranks[i:j]:
                    if r not in removed:
                        hits.append(r)
        elif isinstance(expr, Singleton):
            i = bisect_left(ranks, expr.rank)
            present = i < len(ranks) and ranks[i] == expr.rank and expr.rank not in removed
            hits = [expr.rank] if present else []
        elif isinstance(expr, SpreadBucket):
            mp = self._bucket_map(
                ("spread", expr.seed, expr.buckets),
                lambda: prf_bucket_vec(expr.seed, self._ranks_arr, expr.buckets),
            )
            hits = [
                r
                for r in mp.get(expr.bucket, ())
                if expr.lo <= r < expr.hi and r not in removed
            ]
        elif isinstance(expr, HashBucket):
            mp = self._bucket_map(
                ("hash", expr.a3, expr.a2, expr.a1, expr.b, expr.r, expr.m),
                lambda: [expr.hash_value(r) for r in ranks],
            )
            hits = [r for r in mp.get(expr.target, ()) if r not in removed]
        elif isinstance(expr, PrfSubset):
            thresh = expr.threshold
            if len(ranks) > 16:
                vals = prf_u64_vec(expr.seed, self._ranks_arr)
                hits = [r for r, v in zip(ranks, vals) if v < thresh and r not in removed]
            else:
                hits = [
                    r for r in ranks if r not in removed and prf_u64(expr.seed, r) < thresh
                ]
        else:
            raise TypeError(f"unknown expression type {type(expr)!r}")
        witness = hits[0] if len(hits) == 1 else None
        return len(hits), witness

    def test(self, expr: TestExpression, label: str = "") -> TestOutcome:
        if expr.byte_size() > MAX_EXPRESSION_BYTES:
            raise ContractViolation("test expression exceeds the conciseness bound")
        k, witness = self._classify(expr)
        identity = witness if (k == 1 and self.mode.identifying) else None
        if self.mode.counting:
            outcome = TestOutcome(value=k, identity=identity, counting=True)
        else:
            outcome = TestOutcome(value=min(k, 2), identity=identity, counting=False)
        self.ledger.append(LedgerEntry(expr, outcome, self.round_index, label))
        return outcome

    @property
    def test_count(self) -> int:
        return self.ledger.test_count


# ---------------------------------------------------------------------------
# Split utilities and small searches
# ---------------------------------------------------------------------------


def split_point(size: int, p: float) -> int:
    """First-part size for a biased split: round(p * size), clamped so both
    parts stay nonempty.  Ties round half-up."""
    if size < 2:
        raise DegenerateSplitError(f"cannot split a set of size {size}")
    t = int(p * size + 0.5)
    return min(max(t, 1), size - 1)


def partition(interval: tuple[int, int], p: float) -> tuple[tuple[int, int], tuple[int, int]]:
    """Split a contiguous rank interval into a p-prefix and its remainder.

    Both parts are nonempty contiguous intervals, so conciseness is
    preserved; the lowest-ranked block is always the first part.
    """
    lo, hi = interval
    if not 0.0 < p < 1.0:
        raise ValueError("split fraction must lie strictly between 0 and 1")
    t = split_point(hi - lo, p)
    return (lo, lo + t), (lo + t, hi)


def info_lower_bound(n: int, d: int) -> float:
    """log2 C(n, d): the binary-result information-theoretic floor (reporting only)."""
    if not 0 <= d <= n:
        raise ValueError("need 0 <= d <= n")
    lg = math.lgamma
    return (lg(n + 1) - lg(d + 1) - lg(n - d + 1)) / math.log(2)


def binary_search_tainted(
    oracle: Oracle, interval: tuple[int, int], label: str = "bsearch"
) -> int:
    """Locate the single defective in a set known tainted.

    Halves the interval, testing only the first half each step; an
    identifying outcome short-circuits.  Uses at most ceil(log2(size)) tests.
    """
    lo, hi = interval
    if hi - lo < 1:
        raise ContractViolation("tainted set cannot be empty")
    while hi - lo > 1:
        mid = lo + (hi - lo) // 2
        out = oracle.test(RangeUnion(((lo, mid),)), label=label)
        if out.is_tainted:
            if out.identity is not None:
                return out.identity
            hi = mid
        elif out.is_pure:
            lo = mid
        else:
            raise ContractViolation("impure result inside a tainted set")
    return lo
