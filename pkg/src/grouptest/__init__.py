"""Adaptive group testing with ternary and counting oracles.

Search strategies for finding the d defective items among n when a test of
an arbitrary (but concisely expressible) subset reports whether it holds
zero, one, or two-plus defectives -- or their exact count -- optionally
naming the defective on a one-result.  Includes the analytic companions for
every strategy and simulators for the two driving applications: multiple
access channel conflict resolution and dead sensor diagnosis.
"""

from .core import (
    Configuration,
    ContractViolation,
    DataCorruptionError,
    DegenerateSplitError,
    EstimationFailure,
    GroupTestError,
    HashBucket,
    ItemState,
    Oracle,
    OracleMode,
    P2,
    P3,
    P4,
    P_STAR,
    PrfSubset,
    Q2,
    RangeUnion,
    Singleton,
    SpreadBucket,
    StaleExpressionError,
    TestLedger,
    TestOutcome,
    binary_search_tainted,
    evaluate_membership,
    info_lower_bound,
    partition,
    substream,
)
from .populations import DensePopulation, SparsePopulation

__all__ = [
    "Configuration",
    "ContractViolation",
    "DataCorruptionError",
    "DegenerateSplitError",
    "DensePopulation",
    "EstimationFailure",
    "GroupTestError",
    "HashBucket",
    "ItemState",
    "Oracle",
    "OracleMode",
    "P2",
    "P3",
    "P4",
    "P_STAR",
    "PrfSubset",
    "Q2",
    "RangeUnion",
    "Singleton",
    "SparsePopulation",
    "SpreadBucket",
    "StaleExpressionError",
    "TestLedger",
    "TestOutcome",
    "binary_search_tainted",
    "evaluate_membership",
    "info_lower_bound",
    "partition",
    "substream",
]

__version__ = "0.1.0"
