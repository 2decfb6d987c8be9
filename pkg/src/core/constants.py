"""
Solver Constants - Single Source of Truth
Numeric defaults, tolerances and named step-size presets
"""

from fractions import Fraction


# === SOLVER DEFAULTS ===

DEFAULT_RHO = 1.0
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 1000
RESIDUAL_REFRESH_INTERVAL = 100     # iterations between full recomputations of r = Ax - a
DIVERGENCE_THRESHOLD = 1e12         # objective or ||r|| above this aborts the solve
DENOMINATOR_FLOOR = 1e-30           # stopping-rule denominators
DEFAULT_INNER_TOL = 1e-10


# === SPECTRAL BOUNDS ===

POWER_ITERATION_MAX_ITER = 500
POWER_ITERATION_TOL = 1e-8
EXACT_EIGENSOLVE_MAX_DIM = 64


# === DIAGNOSTICS ===

H_LOWER_BOUND_TOL = 1e-9            # h >= -tol
Q_IDENTITY_TOL = 1e-10
PROXIMAL_BOUND_SLACK = 1e-12        # nu may undershoot a float-derived proximal lower bound by this much
FEASIBILITY_TOL = 1e-8              # ||A x* - a|| <= tol (1 + ||a||)
MATERIALIZE_MAX_DIM = 4096


# === PROBLEM GENERATORS ===

RPCA_SPARSE_DENSITY = 0.05
RPCA_SPARSE_SCALE = 1.0
RPCA_NOISE_STD = 1e-3
RPCA_WEIGHT_FRACTION = 0.15         # gamma2 = frac * ||M||_max, gamma3 = frac * ||M||_2

GROUP_LASSO_NOISE_STD = 1.0
GROUP_LASSO_DECAY = 100.0           # x_true[j] = (-1)^j exp(-(j-1)/decay)


# === STEP-SIZE PRESETS ===
# (tau, nu) per K for the three-block RPCA splitting, d = J = 3

RPCA_TEXT_PDMM3 = {3: (Fraction(1, 3), Fraction(1, 3))}

RPCA_TUNED = {
    1: (Fraction(1, 2), Fraction(0)),
    2: (Fraction(1, 3), Fraction(1, 2)),
    3: (Fraction(1, 2), Fraction(1, 2)),
}

STEP_PRESETS = {
    "text-pdmm3": RPCA_TEXT_PDMM3,
    "tuned-rpca": RPCA_TUNED,
}

# Preset runs in the tuned experiments chose blocks cyclically
PRESET_SAMPLERS = {"tuned-rpca": "cyclic"}


# === OUTPUT ===

TRACE_SCHEMA_VERSION = 1
TRACE_COLUMNS = ["iter", "time_s", "objective", "primal_residual", "R", "h"]
PDMM_THREADS_ENV = "PDMM_THREADS"
