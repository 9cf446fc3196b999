"""Two-stage estimator for the number of defectives.

Stage one halves a random subset's inclusion probability until a test stops
colliding (result 0 or 1), giving a power-of-two guess.  Stage two sweeps a
finer grid of inclusion probabilities, probing each level with a fixed batch
of independent subsets, and rescales the stopping level by a calibrated
constant so the estimate is centered on the truth.

Random subsets include each item independently with the level's probability
(Bernoulli rather than exact-size sampling); for n >> d the stopping
statistics are the same and the subset stays expressible in one constant-size
record.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    EstimationFailure,
    Oracle,
    PrfSubset,
    fresh_seed,
    substream,
)

# Calibrated normalization constants, keyed by (resolution a, batch size c).
# The shipped pair was re-verified by calibrate_f in the test suite.
KNOWN_CALIBRATIONS: dict[tuple[int, int], float] = {(4, 8): 4.3}


@dataclass(frozen=True)
class EstimatorParams:
    """Refinement knobs: level grid 2^(1/a), batch size c, normalization f."""

    a: int
    c: int
    f: Optional[float] = None

    def __post_init__(self):
        if self.a < 1 or self.c < 1:
            raise ValueError("need a >= 1 and c >= 1")
        if self.f is None:
            if (self.a, self.c) not in KNOWN_CALIBRATIONS:
                raise ValueError(
                    f"no calibration on record for (a={self.a}, c={self.c}); "
                    "run calibrate_f and pass f explicitly"
                )
            object.__setattr__(self, "f", KNOWN_CALIBRATIONS[(self.a, self.c)])
        elif self.f <= 0:
            raise ValueError("normalization must be positive")

    @classmethod
    def from_record(cls, path: str) -> "EstimatorParams":
        with open(path) as fh:
            rec = json.load(fh)
        return cls(a=int(rec["a"]), c=int(rec["c"]), f=float(rec["f"]))


def doubling_estimate(
    oracle: Oracle, n: int, rng: np.random.Generator
) -> tuple[int, int, int]:
    """Halve the inclusion probability until a 0- or 1-result; return
    (d_hat = 2^level, tests_used, level)."""
    cap = math.ceil(math.log2(max(2, n))) + 5
    for level in range(1, cap + 1):
        expr = PrfSubset(fresh_seed(rng), level=level, denominator=1)
        out = oracle.test(expr, label="est-doubling")
        if out.value <= 1:
            return 2**level, level, level
    raise EstimationFailure("doubling stage hit its level cap")


def refined_estimate(
    oracle: Oracle,
    n: int,
    d_hat: int,
    params: EstimatorParams,
    rng: np.random.Generator,
) -> tuple[float, int]:
    """Sweep levels i = j, j+1, ... with c subsets of inclusion 2^(-i/a) each;
    stop at the first level where any probe returns 0 or 1 and rescale."""
    a, c, f = params.a, params.c, params.f
    lg_dhat = d_hat.bit_length() - 1  # d_hat is a power of two from stage one
    start = max(1, a * (lg_dhat - 5))
    cap = a * math.ceil(math.log2(max(2, n)))
    tests = 0
    for level in range(start, cap + 1):
        stopped = False
        for _ in range(c):
            expr = PrfSubset(fresh_seed(rng), level=level, denominator=a)
            out = oracle.test(expr, label="est-refine")
            tests += 1
            if out.value <= 1:
                stopped = True
                break
        if stopped:
            return f * 2.0 ** (level / a), tests
    raise EstimationFailure("refinement stage hit its level cap")


def estimate_defectives(
    oracle: Oracle,
    n: int,
    params: EstimatorParams,
    rng: np.random.Generator,
) -> tuple[float, int]:
    """Both stages; returns (refined estimate, total estimator tests)."""
    d_hat, tests1, _ = doubling_estimate(oracle, n, rng)
    d_prime, tests2 = refined_estimate(oracle, n, d_hat, params, rng)
    return d_prime, tests1 + tests2


def stopping_probability(d: float, scaled_size: float, c: int) -> float:
    """Model probability that a level with t = d / 2^(i/a) = d * inclusion
    stops the sweep: 1 - (1 - (t+1) e^-t)^c."""
    t = d / scaled_size if scaled_size > 0 else float("inf")
    single = (t + 1.0) * math.exp(-t)
    return 1.0 - (1.0 - single) ** c


def calibrate_f(
    a: int,
    c: int,
    trials: int,
    seed: int,
    d_grid: Optional[list[int]] = None,
    n: int = 1 << 20,
) -> dict:
    """Monte Carlo calibration of the normalization constant.

    Runs the two-stage estimator with f = 1 over a geometric grid of true
    defective counts (offset values cover the phase between powers of two)
    and returns the f that centers the geometric mean of estimate/truth at 1.
    The returned record is the JSON schema ``EstimatorParams.from_record``
    accepts.
    """
    from .core import Configuration, OracleMode

    if d_grid is None:
        d_grid = [8, 12, 16, 24, 32, 48, 64, 96, 128, 192]
    probe = EstimatorParams(a=a, c=c, f=1.0)
    log_ratios = []
    for gi, d in enumerate(d_grid):
        for t in range(trials):
            rng = substream(seed, 91, gi, t)
            ranks = np.sort(rng.choice(n, size=d, replace=False))
            oracle = Oracle(Configuration(n, tuple(int(r) for r in ranks)),
                            OracleMode.TERNARY_IDENTIFYING)
            raw, _ = estimate_defectives(oracle, n, probe, rng)
            log_ratios.append(math.log(d / raw))
    f = math.exp(sum(log_ratios) / len(log_ratios))
    return {"a": a, "c": c, "f": f, "trials": trials * len(d_grid), "seed": seed}
