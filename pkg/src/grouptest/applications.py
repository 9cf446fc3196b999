"""The two simulators built on the search algorithms.

MAC conflict resolution maps each oracle test to one time slot: a pure set is
an idle slot, a tainted set is a successful transmission (the channel names
the sender), an impure set is a collision.  Dead-sensor diagnosis maps each
test to one broadcast-and-respond round over a fresh spanning tree of the
live sensors; the aggregated response realizes the oracle mode (ID summation
for ternary identifying, live counts for ternary anonymous, both paired for
counting identifying).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    Configuration,
    DataCorruptionError,
    ItemState,
    LedgerEntry,
    OracleMode,
    RangeUnion,
    TestExpression,
    TestLedger,
    TestOutcome,
    membership_mask,
    substream,
)
from .deferral import run_deferral, run_deferral_unknown
from .populations import DensePopulation, SparsePopulation

BASE_STATION = -1


# ---------------------------------------------------------------------------
# Probability utilities
# ---------------------------------------------------------------------------


def p_mac(i: int, d: int, p: float) -> float:
    """Probability exactly i of d contenders transmit when each flips a
    p-coin: C(d, i) p^i (1-p)^(d-i)."""
    if not 0 <= i <= d:
        raise ValueError("need 0 <= i <= d")
    if not 0.0 <= p <= 1.0:
        raise ValueError("need 0 <= p <= 1")
    return math.comb(d, i) * p**i * (1.0 - p) ** (d - i)


def p_test(i: int, n: int, d: int, p: float) -> float:
    """Probability exactly i of d defectives land in a random subset of size
    p*n, as the double product over the draw.  Sums to one over i."""
    if not 0 <= i <= d <= n:
        raise ValueError("need 0 <= i <= d <= n")
    pn = p * n
    value = float(math.comb(d, i))
    for j in range(i):
        value *= (pn - j) / (n - j)
    for j in range(i, d):
        value *= (n - pn - j + i) / (n - j)
    return value


# ---------------------------------------------------------------------------
# MAC conflict resolution
# ---------------------------------------------------------------------------


@dataclass
class MacRun:
    """One resolved contention period."""

    d: int
    slots_used: int
    transcript: list[tuple[TestExpression, str]]
    throughput: float
    delivered: list[int]


MAC_PROTOCOLS = ("deferral", "binary-tree", "halfway-split")


def mac_simulate(
    d: int,
    protocol: str = "deferral",
    d_known: bool = True,
    seed: int = 0,
    n: int = 1 << 20,
    s: float = 0.8,
    p: float = 0.479,
    engine: str = "sparse",
    est_params=None,
) -> MacRun:
    """Resolve a conflict among d contending devices; one test = one slot."""
    from .binary_tree import IdentifyParams, run_binary_tree
    from .core import Oracle, P_STAR
    from .estimation import EstimatorParams

    if protocol not in MAC_PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    rng = substream(seed, 17)
    ranks = np.sort(rng.choice(n, size=d, replace=False)) if d else np.empty(0, np.int64)
    config = Configuration(n, tuple(int(r) for r in ranks))
    state = ItemState()
    oracle = Oracle(config, OracleMode.TERNARY_IDENTIFYING, state=state)
    if protocol == "deferral":
        if engine == "sparse":
            population = SparsePopulation(n, config.defectives, rng, state=state)
        else:
            population = DensePopulation(n, rng, state=state)
        if d_known:
            delivered, _ = run_deferral(oracle, population, d, s, p, known_d=True)
        else:
            params = est_params if est_params is not None else EstimatorParams(4, 8)
            delivered, _ = run_deferral_unknown(oracle, population, params, rng, s, p)
    else:
        split = P_STAR if protocol == "binary-tree" else 0.5
        delivered = run_binary_tree(oracle, n, IdentifyParams(split))
    if sorted(delivered) != list(config.defectives):
        raise AssertionError("protocol failed to deliver every packet exactly once")
    transcript = []
    for entry in oracle.ledger.entries:
        if entry.outcome.is_pure:
            feedback = "idle"
        elif entry.outcome.is_tainted:
            feedback = f"success:{entry.outcome.identity}"
        else:
            feedback = "collision"
        transcript.append((entry.expression, feedback))
    slots = oracle.ledger.test_count
    return MacRun(
        d=d,
        slots_used=slots,
        transcript=transcript,
        throughput=(d / slots) if slots else 0.0,
        delivered=sorted(delivered),
    )


# ---------------------------------------------------------------------------
# Dead-sensor diagnosis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdScheme:
    """Sum-free sensor IDs: rank k maps to 2n + 1 + k.

    Any two IDs sum to at least 4n + 3, which exceeds the largest single ID
    (3n), so a sum of live-sensor IDs decomposes unambiguously.
    """

    n: int

    def id_of(self, rank: int) -> int:
        if not 0 <= rank < self.n:
            raise ValueError("rank out of range")
        return 2 * self.n + 1 + rank

    def rank_of(self, sensor_id: int) -> int:
        rank = sensor_id - (2 * self.n + 1)
        if not 0 <= rank < self.n:
            raise ValueError(f"{sensor_id} is not a valid sensor ID")
        return rank

    @property
    def min_pair_sum(self) -> int:
        return (2 * self.n + 1) + (2 * self.n + 2)


def assign_sensor_ids(n: int) -> IdScheme:
    if n < 1:
        raise ValueError("need at least one sensor")
    return IdScheme(n)


@dataclass(frozen=True)
class SensorNet:
    n: int
    dead: tuple[int, ...]

    def __post_init__(self):
        Configuration(self.n, self.dead)  # validates ranks

    @property
    def live(self) -> np.ndarray:
        dead = set(self.dead)
        return np.asarray([r for r in range(self.n) if r not in dead], dtype=np.int64)


@dataclass
class BroadcastTree:
    """Random recursive spanning tree over the live sensors, regenerated per
    broadcast: the first arrival attaches to the base station, every later
    one to a uniformly chosen earlier sensor."""

    nodes: np.ndarray
    parent: dict[int, int]
    children: dict[int, list[int]]
    order: list[int]  # parents always precede their children


def build_broadcast_tree(live: np.ndarray, rng: np.random.Generator) -> BroadcastTree:
    order = [int(r) for r in rng.permutation(live)]
    parent: dict[int, int] = {}
    children: dict[int, list[int]] = {r: [] for r in order}
    for i, node in enumerate(order):
        if i == 0:
            parent[node] = BASE_STATION
        else:
            up = order[int(rng.integers(0, i))]
            parent[node] = up
            children[up].append(node)
    return BroadcastTree(live, parent, children, order)


@dataclass(frozen=True)
class AggregateResult:
    count: int
    idsum: int
    messages: int


def aggregate(
    tree: BroadcastTree,
    expr: TestExpression,
    fn: str,
    scheme: IdScheme,
    removed: Optional[set[int]] = None,
) -> AggregateResult:
    """Fold the live sensors' responses up the tree.

    ``fn`` selects count, idsum, or both.  Each edge carries one message down
    and one back up, 2 * |live| in total per round.  The fold result equals a
    flat sum over the live members (the aggregation is associative), which is
    property-tested across trees.
    """
    if fn not in ("count", "idsum", "both"):
        raise ValueError("aggregation must be count, idsum, or both")
    removed = removed or set()
    member = {
        int(r): bool(m)
        for r, m in zip(tree.nodes, membership_mask(expr, tree.nodes))
        if int(r) not in removed
    }
    count_up: dict[int, int] = {}
    idsum_up: dict[int, int] = {}
    for node in reversed(tree.order):
        c = 1 if member.get(node, False) else 0
        i = scheme.id_of(node) if member.get(node, False) else 0
        for child in tree.children[node]:
            c += count_up[child]
            i += idsum_up[child]
        count_up[node] = c
        idsum_up[node] = i
    roots = [r for r in tree.order if tree.parent.get(r) == BASE_STATION]
    total_c = sum(count_up[r] for r in roots)
    total_i = sum(idsum_up[r] for r in roots)
    return AggregateResult(
        count=total_c if fn in ("count", "both") else 0,
        idsum=total_i if fn in ("idsum", "both") else 0,
        messages=2 * len(tree.order),
    )


def classify_idsum(expected_sum: int, returned_sum: int, scheme: IdScheme) -> TestOutcome:
    """Ternary identifying outcome from the gap between the full-membership
    ID sum and the live responders' sum."""
    if returned_sum > expected_sum:
        raise DataCorruptionError("returned sum exceeds the expected sum")
    diff = expected_sum - returned_sum
    if diff == 0:
        return TestOutcome(0)
    if 2 * scheme.n + 1 <= diff <= 3 * scheme.n:
        return TestOutcome(1, identity=scheme.rank_of(diff))
    if diff >= scheme.min_pair_sum:
        return TestOutcome(2)
    raise DataCorruptionError(f"gap {diff} is not 0, a sensor ID, or a sum of two or more")


class SensorOracle:
    """Oracle realized by broadcast-and-respond rounds over a sensor network.

    Each test broadcasts the expression, regrows the spanning tree, folds the
    live responses, and classifies the gap against the full-membership
    expectation.  The controller's retire instructions flip the sensors'
    removed flags, so later expressions apply only to still-active items.
    """

    def __init__(self, net: SensorNet, aggregation: str, rng: np.random.Generator,
                 state: Optional[ItemState] = None):
        if aggregation not in ("idsum", "count", "both"):
            raise ValueError("aggregation must be idsum, count, or both")
        self.net = net
        self.aggregation = aggregation
        self.rng = rng
        self.state = state if state is not None else ItemState()
        self.scheme = assign_sensor_ids(net.n)
        self.ledger = TestLedger()
        self.round_index = 0
        self.messages = 0
        self.live = net.live
        if aggregation == "idsum":
            self.mode = OracleMode.TERNARY_IDENTIFYING
        elif aggregation == "count":
            self.mode = OracleMode.TERNARY_ANONYMOUS
        else:
            self.mode = OracleMode.COUNTING_IDENTIFYING

    def begin_round(self, index: int) -> None:
        self.round_index = index

    def _expected(self, expr: TestExpression) -> tuple[int, int]:
        ranks = np.arange(self.net.n, dtype=np.int64)
        mask = membership_mask(expr, ranks)
        if self.state.removed:
            removed = np.asarray(sorted(self.state.removed), dtype=np.int64)
            mask[removed] = False
        members = ranks[mask]
        count = int(len(members))
        idsum = int(members.sum()) + count * (2 * self.net.n + 1)
        return count, idsum

    def test(self, expr: TestExpression, label: str = "") -> TestOutcome:
        epoch = getattr(expr, "epoch", None)
        if epoch is not None and epoch != self.state.epoch:
            from .core import StaleExpressionError

            raise StaleExpressionError("expression epoch does not match sensor state")
        tree = build_broadcast_tree(self.live, self.rng)
        fn = "both" if self.aggregation == "both" else self.aggregation
        agg = aggregate(tree, expr, fn, self.scheme, removed=self.state.removed)
        self.messages += agg.messages
        exp_count, exp_idsum = self._expected(expr)
        if self.aggregation == "idsum":
            outcome = classify_idsum(exp_idsum, agg.idsum, self.scheme)
        elif self.aggregation == "count":
            missing = exp_count - agg.count
            if missing < 0:
                raise DataCorruptionError("more responders than members")
            outcome = TestOutcome(min(missing, 2))
        else:
            missing = exp_count - agg.count
            if missing < 0:
                raise DataCorruptionError("more responders than members")
            identity = None
            if missing == 1:
                identity = self.scheme.rank_of(exp_idsum - agg.idsum)
            outcome = TestOutcome(missing, identity=identity, counting=True)
        self.ledger.append(LedgerEntry(expr, outcome, self.round_index, label))
        return outcome

    @property
    def test_count(self) -> int:
        return self.ledger.test_count


@dataclass
class DiagnosisResult:
    dead_found: list[int]
    rounds: int
    messages: int


SENSOR_ALGORITHMS = ("deferral", "binary-tree", "anonymous", "counting")


def diagnose_dead(
    net: SensorNet,
    algorithm: str = "deferral",
    seed: int = 0,
    d_known: bool = True,
    s: float = 0.8,
    p: float = 0.479,
    est_params=None,
) -> DiagnosisResult:
    """Identify the dead sensors by simulating a search algorithm where every
    test is one broadcast round; rounds equal the ledger's test count."""
    from .anonymous import run_anonymous
    from .binary_tree import IdentifyParams, run_binary_tree
    from .core import P_STAR
    from .counting import run_counting
    from .estimation import EstimatorParams

    if algorithm not in SENSOR_ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    rng = substream(seed, 23)
    state = ItemState()
    d = len(net.dead)
    if algorithm == "deferral":
        oracle = SensorOracle(net, "idsum", rng, state=state)
        population = DensePopulation(net.n, rng, state=state)
        if d_known:
            found, _ = run_deferral(oracle, population, d, s, p, known_d=True)
        else:
            params = est_params if est_params is not None else EstimatorParams(4, 8)
            found, _ = run_deferral_unknown(oracle, population, params, rng, s, p)
    elif algorithm == "counting":
        oracle = SensorOracle(net, "both", rng, state=state)
        population = DensePopulation(net.n, rng, state=state)
        out = oracle.test(RangeUnion(((0, net.n),)), label="whole")
        if out.value == 0:
            found = []
        elif out.value == 1:
            found = [out.identity]
        else:
            found, _ = run_counting(oracle, population, out.value, s=0.58, p=0.4715)
    elif algorithm == "anonymous":
        oracle = SensorOracle(net, "count", rng, state=state)
        found = run_anonymous(oracle, net.n)
    else:
        oracle = SensorOracle(net, "idsum", rng, state=state)
        found = run_binary_tree(oracle, net.n, IdentifyParams(P_STAR))
    if sorted(found) != list(net.dead):
        raise AssertionError("diagnosis failed to recover the dead set exactly")
    return DiagnosisResult(sorted(found), oracle.ledger.test_count, oracle.messages)


def load_scenario(path: str) -> dict:
    """Scenario files: JSON {n, d or deadSet, seed, algorithm, params}."""
    with open(path) as fh:
        scenario = json.load(fh)
    if "n" not in scenario:
        raise ValueError("scenario needs a population size 'n'")
    if "d" not in scenario and "deadSet" not in scenario:
        raise ValueError("scenario needs 'd' or an explicit 'deadSet'")
    scenario.setdefault("seed", 0)
    scenario.setdefault("algorithm", "deferral")
    scenario.setdefault("params", {})
    return scenario
