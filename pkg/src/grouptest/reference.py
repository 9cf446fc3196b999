"""Frozen reference values the tables command and acceptance suite compare
against.

EXPECTED_TESTS_TABLE holds the published expectation of the tree search's
test count at the two-way-root split fraction; the remaining constants are
the headline per-defective rates and the split-equation roots.  Values are
stored exactly as printed in the source analysis so drift is visible.
"""

# expected tests of the tree search (whole-set test excluded), p = P2
EXPECTED_TESTS_TABLE = {
    2: 3.427051,
    3: 5.917763,
    4: 8.520000,
    5: 11.147797,
    6: 13.780589,
    7: 16.413785,
    8: 19.046426,
    9: 21.678383,
    10: 24.309752,
    20: 50.617127,
    30: 76.926328,
    40: 103.234985,
    50: 129.543603,
    100: 261.087360,
    200: 524.174671,
    300: 787.262001,
    400: 1050.349326,
    500: 1313.436665,
    800: 2102.698664,
    1000: 2628.873328,
}

# upper bounds on the bucket-occupancy probabilities at spread factor 0.75
OCCUPANCY_BOUNDS_S075 = {
    0: 0.2636,
    1: 0.3515,
    2: 0.2344,
    6: 0.0021,
    7: 0.0004,
}

# roots of p = (1 - p)^k
SPLIT_ROOTS = {
    2: 0.38196601,
    3: 0.3176722,
    4: 0.27550804,
}

# headline per-defective expected-test rates
DEFERRAL_RATE = 2.054          # spread 0.8, split 0.479, d known
UNKNOWN_D_RATE = 2.08          # estimator + deferral, plus O(log d)
COUNTING_RATE = 1.896          # spread 0.58, split 0.4715, counting tests
HASHED_RATE = 4.0              # reduced-randomness bound, d known
HALFWAY_RATE = 2.885           # plain halfway-split tree, the MAC baseline
TREE_OPTIMAL_RATE = 2.6229     # tree search at the P_STAR split, large d
TREE_P2_ENVELOPE = 2.64        # E_d < 2.64 d - 2 for the tree at P2

# worst-case leading coefficients
TREE_WORST_PER_DLG = 0.720210          # tests per defective per lg n, even d
ANON_PAIR_COEFF = 1.8756               # two defectives, anonymous tests
ANON_COEFFS = (0.3307, 0.7202)         # additive and per-defective, d >= 3

# two-stage estimator acceptance band
ESTIMATOR_FACTOR2_RATE = 0.98
