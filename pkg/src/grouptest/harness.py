"""Seeded Monte Carlo harness, small-instance verifier, and table emitter.

Every trial is fully independent: the hidden configuration comes from one
substream keyed by (seed, trial) and the algorithm's randomness from
another, so results are identical regardless of execution order and two
algorithms given the same seed face the same configurations.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import reference
from .anonymous import anonymous_worst_case_bound, run_anonymous
from .binary_tree import IdentifyParams, expected_tests_table, run_binary_tree, worst_case_bound
from .core import (
    Configuration,
    ContractViolation,
    ItemState,
    Oracle,
    OracleMode,
    P2,
    info_lower_bound,
    substream,
)
from .counting import expected_per_defective as counting_expected
from .counting import run_counting
from .deferral import (
    expected_total_estimate,
    run_deferral,
    run_deferral_unknown,
)
from .estimation import EstimatorParams, doubling_estimate, refined_estimate
from .hashed import RoundStats, run_hashed, run_hashed_unknown_d
from .populations import DensePopulation, SparsePopulation

TAG_CONFIG = 1
TAG_RUN = 2

ALGORITHMS = (
    "binary-tree",
    "deferral",
    "deferral-unknown",
    "counting",
    "hashed",
    "hashed-unknown",
    "anonymous",
    "estimator",
)

# which optional parameters each algorithm accepts
_ALLOWED_PARAMS = {
    "binary-tree": {"p"},
    "deferral": {"p", "s", "defer"},
    "deferral-unknown": {"p", "s", "a", "c"},
    "counting": {"p", "s"},
    "hashed": set(),
    "hashed-unknown": {"cap"},
    "anonymous": set(),
    "estimator": {"a", "c"},
}

_MODES = {
    "binary-tree": OracleMode.TERNARY_IDENTIFYING,
    "deferral": OracleMode.TERNARY_IDENTIFYING,
    "deferral-unknown": OracleMode.TERNARY_IDENTIFYING,
    "counting": OracleMode.COUNTING_IDENTIFYING,
    "hashed": OracleMode.TERNARY_IDENTIFYING,
    "hashed-unknown": OracleMode.TERNARY_IDENTIFYING,
    "anonymous": OracleMode.TERNARY_ANONYMOUS,
    "estimator": OracleMode.TERNARY_IDENTIFYING,
}

DENSE_ENGINE_MAX_N = 4096


@dataclass
class ExperimentConfig:
    """One experiment: an algorithm, a population/defective grid, and knobs."""

    algorithm: str
    n: int
    d: Sequence[int]
    trials: int
    seed: int
    p: Optional[float] = None
    s: Optional[float] = None
    a: Optional[int] = None
    c: Optional[int] = None
    cap: Optional[int] = None
    defer: bool = True
    engine: str = "auto"
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if isinstance(self.d, int):
            self.d = [self.d]
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.seed is None:
            raise ValueError("a seed is mandatory for reproducibility")
        if self.engine not in ("auto", "dense", "sparse"):
            raise ValueError(f"unknown engine {self.engine!r}")
        allowed = _ALLOWED_PARAMS[self.algorithm]
        for name in ("p", "s", "a", "c", "cap"):
            if getattr(self, name) is not None and name not in allowed:
                raise ValueError(
                    f"parameter {name!r} does not apply to algorithm {self.algorithm!r}"
                )
        for dd in self.d:
            if not 0 <= dd <= self.n:
                raise ValueError(f"d={dd} outside [0, n]")


@dataclass
class TrialResult:
    tests: int
    search_tests: int
    rounds: int
    extras: dict = field(default_factory=dict)


def draw_defectives(rng: np.random.Generator, n: int, d: int) -> tuple[int, ...]:
    """Uniform d-subset of [0, n) without materializing the population."""
    if d == 0:
        return ()
    if 3 * d >= n:
        return tuple(sorted(int(x) for x in rng.permutation(n)[:d]))
    picked: set[int] = set()
    while len(picked) < d:
        for v in rng.integers(0, n, size=d - len(picked)):
            picked.add(int(v))
    return tuple(sorted(picked))


def _make_population(engine: str, n: int, config: Configuration, rng, state):
    if engine == "auto":
        engine = "dense" if n <= DENSE_ENGINE_MAX_N else "sparse"
    if engine == "dense":
        return DensePopulation(n, rng, state=state)
    return SparsePopulation(n, config.defectives, rng, state=state)


def run_one_trial(
    algorithm: str,
    n: int,
    d: int,
    seed: int,
    trial: int,
    p: Optional[float] = None,
    s: Optional[float] = None,
    a: Optional[int] = None,
    c: Optional[int] = None,
    cap: Optional[int] = None,
    defer: bool = True,
    engine: str = "auto",
    config: Optional[Configuration] = None,
) -> TrialResult:
    """Draw a configuration, run the algorithm, assert exact recovery, and
    return the ledger counts."""
    if config is None:
        config = Configuration(n, draw_defectives(substream(seed, TAG_CONFIG, trial), n, d))
    rng = substream(seed, TAG_RUN, trial)
    state = ItemState()
    oracle = Oracle(config, _MODES[algorithm], state=state)
    extras: dict = {}
    rounds = 0
    if algorithm == "binary-tree":
        found = run_binary_tree(oracle, n, IdentifyParams(p if p is not None else P2))
    elif algorithm == "deferral":
        population = _make_population(engine, n, config, rng, state)
        found, rounds = run_deferral(
            oracle,
            population,
            d,
            s if s is not None else 0.8,
            p if p is not None else 0.479,
            known_d=True,
            defer=defer,
        )
    elif algorithm == "deferral-unknown":
        population = _make_population(engine, n, config, rng, state)
        params = EstimatorParams(a if a is not None else 4, c if c is not None else 8)
        found, rounds = run_deferral_unknown(
            oracle,
            population,
            params,
            rng,
            s if s is not None else 0.8,
            p if p is not None else 0.479,
        )
        est = [e for e in oracle.ledger.entries if e.label.startswith("est-")]
        extras["estimator_tests"] = len(est)
    elif algorithm == "counting":
        population = _make_population(engine, n, config, rng, state)
        found, rounds = run_counting(
            oracle,
            population,
            d,
            s if s is not None else 0.58,
            p if p is not None else 0.4715,
        )
    elif algorithm == "hashed":
        population = _make_population(engine, n, config, rng, state)
        stats: list[RoundStats] = []
        found, rounds = run_hashed(oracle, population, d, rng, stats=stats)
        extras["round_tests"] = [rs.tests for rs in stats]
        extras["round_budgets"] = [2 * rs.survivors_before for rs in stats]
    elif algorithm == "hashed-unknown":
        population = _make_population(engine, n, config, rng, state)
        found, rounds, attempts = run_hashed_unknown_d(
            oracle, population, rng, cap_constant=cap if cap is not None else 8
        )
        extras["attempts"] = attempts
    elif algorithm == "anonymous":
        found = run_anonymous(oracle, n)
    elif algorithm == "estimator":
        if d == 0:
            raise ValueError("the estimator needs at least one defective")
        params = EstimatorParams(a if a is not None else 4, c if c is not None else 8)
        d_hat, t1, _ = doubling_estimate(oracle, n, rng)
        d_prime, t2 = refined_estimate(oracle, n, d_hat, params, rng)
        extras.update(
            d_hat=d_hat,
            d_prime=d_prime,
            doubling_factor2=(d / 2 <= d_hat <= 2 * d),
            doubling_in_band=(d / 32 <= d_hat <= 32 * d),
            refined_factor2=(d / 2 <= d_prime <= 2 * d),
            doubling_tests=t1,
            refined_tests=t2,
        )
        found = None
    else:  # pragma: no cover
        raise ValueError(algorithm)
    if found is not None and tuple(found) != config.defectives:
        raise ContractViolation(
            f"{algorithm} returned {found} for defectives {config.defectives} "
            f"(n={n}, seed={seed}, trial={trial})"
        )
    total = oracle.ledger.test_count
    search = total - oracle.ledger.count(label="whole")
    return TrialResult(tests=total, search_tests=search, rounds=rounds, extras=extras)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

REPORT_COLUMNS = [
    "algorithm",
    "engine",
    "n",
    "d",
    "trials",
    "seed",
    "p",
    "s",
    "a",
    "c",
    "cap",
    "mean_tests",
    "std_error",
    "p50",
    "p90",
    "p99",
    "max_tests",
    "mean_search_tests",
    "mean_rounds",
    "throughput",
    "est_factor2_rate",
    "analytic_expected",
    "analytic_bound",
    "info_lower_bound",
]


def _analytic_columns(algorithm, n, d, p, s) -> tuple[Optional[float], Optional[float]]:
    expected = bound = None
    if algorithm == "binary-tree" and d >= 2:
        expected = float(expected_tests_table(p if p is not None else P2, d)[d])
        bound = worst_case_bound(d, n)
    elif algorithm in ("deferral", "deferral-unknown") and d >= 1:
        est = expected_total_estimate(s if s is not None else 0.8,
                                      p if p is not None else 0.479)
        expected = est.per_defective * d
    elif algorithm == "counting" and d >= 1:
        expected = counting_expected(s if s is not None else 0.58,
                                     p if p is not None else 0.4715) * d
    elif algorithm in ("hashed", "hashed-unknown") and d >= 1:
        bound = 4.0 * d
    elif algorithm == "anonymous" and d >= 2:
        bound = anonymous_worst_case_bound(d, n)
    return expected, bound


def summarize_trials(results: list[TrialResult]) -> dict:
    tests = np.asarray([r.tests for r in results], dtype=np.float64)
    search = np.asarray([r.search_tests for r in results], dtype=np.float64)
    out = {
        "mean_tests": float(tests.mean()),
        "std_error": float(tests.std(ddof=1) / math.sqrt(len(tests))) if len(tests) > 1 else 0.0,
        "p50": float(np.percentile(tests, 50)),
        "p90": float(np.percentile(tests, 90)),
        "p99": float(np.percentile(tests, 99)),
        "max_tests": float(tests.max()),
        "mean_search_tests": float(search.mean()),
        "mean_rounds": float(np.mean([r.rounds for r in results])),
    }
    flags = [r.extras.get("refined_factor2") for r in results]
    if all(f is not None for f in flags) and flags:
        out["est_factor2_rate"] = float(np.mean([bool(f) for f in flags]))
    return out


def run_experiment(config: ExperimentConfig) -> list[dict]:
    """One report row per configured d value; deterministic given the seed."""
    rows = []
    for d in config.d:
        results = [
            run_one_trial(
                config.algorithm,
                config.n,
                d,
                config.seed,
                t,
                p=config.p,
                s=config.s,
                a=config.a,
                c=config.c,
                cap=config.cap,
                defer=config.defer,
                engine=config.engine,
            )
            for t in range(config.trials)
        ]
        stats = summarize_trials(results)
        expected, bound = _analytic_columns(config.algorithm, config.n, d, config.p, config.s)
        row = {
            "algorithm": config.algorithm,
            "engine": config.engine,
            "n": config.n,
            "d": d,
            "trials": config.trials,
            "seed": config.seed,
            "p": config.p,
            "s": config.s,
            "a": config.a,
            "c": config.c,
            "cap": config.cap,
            **stats,
            "throughput": (d / stats["mean_tests"]) if stats["mean_tests"] else None,
            "analytic_expected": expected,
            "analytic_bound": bound,
            "info_lower_bound": info_lower_bound(config.n, d),
        }
        row.setdefault("est_factor2_rate", None)
        rows.append(row)
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row.get(col)) for col in REPORT_COLUMNS])
    return buf.getvalue()


def rows_to_json(rows: list[dict]) -> str:
    ordered = [{col: row.get(col) for col in REPORT_COLUMNS} for row in rows]
    return json.dumps(ordered, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Small-instance exhaustive verification
# ---------------------------------------------------------------------------


@dataclass
class VerifyResult:
    algorithm: str
    n: int
    configurations: int
    runs: int
    passed: bool
    worst_tests: dict[int, int]  # d -> max tests observed
    failures: list[str]


def verify_small(
    algorithm: str,
    n: int,
    seeds: int = 1,
    p: Optional[float] = None,
    s: Optional[float] = None,
) -> VerifyResult:
    """Run the algorithm on every configuration of every d for one small n,
    asserting exact recovery; randomized algorithms repeat under many seeds."""
    if n > 12:
        raise ValueError("exhaustive verification is limited to n <= 12")
    randomized = algorithm not in ("binary-tree", "anonymous")
    seed_list = range(seeds if randomized else 1)
    worst: dict[int, int] = {}
    failures: list[str] = []
    configs = 0
    runs = 0
    for d in range(0, n + 1):
        for ranks in itertools.combinations(range(n), d):
            configs += 1
            config = Configuration(n, ranks)
            for sd in seed_list:
                if algorithm in ("deferral-unknown", "estimator") and d == 0:
                    continue  # the estimator requires a defective
                runs += 1
                try:
                    result = run_one_trial(
                        algorithm, n, d, seed=1000 + sd, trial=configs,
                        p=p, s=s, engine="dense", config=config,
                    )
                    worst[d] = max(worst.get(d, 0), result.tests)
                except Exception as exc:  # recovery failures raise
                    failures.append(f"n={n} d={d} ranks={ranks} seed={sd}: {exc}")
    return VerifyResult(algorithm, n, configs, runs, not failures, worst, failures)


# ---------------------------------------------------------------------------
# Analytic table emission
# ---------------------------------------------------------------------------


def emit_tables() -> list[dict]:
    """Recompute every analytic table and set it beside its frozen reference
    value (blank when no printed value exists)."""
    from .anonymous import solve_split_root
    from .counting import counting_tables
    from .deferral import bucket_occupancy, deferral_tables

    rows: list[dict] = []

    def add(section, key, computed, ref=None):
        rows.append(
            {
                "section": section,
                "key": key,
                "computed": computed,
                "reference": ref,
                "abs_diff": abs(computed - ref) if ref is not None else None,
            }
        )

    table = expected_tests_table(P2, 1000)
    for d, ref in reference.EXPECTED_TESTS_TABLE.items():
        add("tree-expected-tests", f"d={d}", float(table[d]), ref)
    dt = deferral_tables(0.479)
    for k in sorted(dt.tests):
        add("deferral-tests(p=0.479)", f"k={k}", dt.tests[k])
    for k in sorted(dt.deferred):
        ref = 0.479 if k == 3 else None  # deferred mass from a 3-set equals p
        add("deferral-deferred(p=0.479)", f"k={k}", dt.deferred[k], ref)
    est = expected_total_estimate(0.8, 0.479)
    add("deferral-per-defective(s=0.8,p=0.479)", "rate", est.per_defective,
        reference.DEFERRAL_RATE)
    ct = counting_tables(0.4715)
    for k in sorted(ct):
        add("counting-tests(p=0.4715)", f"k={k}", ct[k])
    add("counting-per-defective(s=0.58,p=0.4715)", "rate", counting_expected(0.58, 0.4715),
        reference.COUNTING_RATE)
    for s in (0.58, 0.75, 0.8):
        for k in range(0, 8):
            ref = reference.OCCUPANCY_BOUNDS_S075.get(k) if s == 0.75 else None
            add(f"bucket-occupancy(s={s})", f"k={k}", bucket_occupancy(k, s), ref)
    for k in (2, 3, 4):
        add("split-roots", f"k={k}", solve_split_root(k), reference.SPLIT_ROOTS[k])
    return rows


TABLE_COLUMNS = ["section", "key", "computed", "reference", "abs_diff"]


def tables_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row["section"],
                row["key"],
                f"{row['computed']:.9g}",
                "" if row["reference"] is None else f"{row['reference']:.9g}",
                "" if row["abs_diff"] is None else f"{row['abs_diff']:.3g}",
            ]
        )
    return buf.getvalue()
