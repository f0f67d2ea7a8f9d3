"""Central tolerance registry.

Every numeric check in the package and in the acceptance suite refers to one
of these names, so a tolerance is changed in exactly one place.
"""

# equality rows of LPs and martingale systems, |residual|
FEAS_TOL = 1e-9
# |primal - dual| for LPs and superhedging duality
DUALITY_GAP_TOL = 1e-8
# certified gap of every concave/convex solve in the primal/dual pipelines
SADDLE_TOL = 1e-7
# default PWL approximation error
PWL_EPS = 1e-6
# wealth below this is clamped when evaluating Inada utilities
XMIN = 1e-8
# min on-support weight required to certify equivalence of measures
EQUIV_TOL = 1e-9
# probability measures: |sum - 1|
MEASURE_SUM_TOL = 1e-12
# relative accuracy of numeric inverse marginal utility
INVERSE_TOL = 1e-10
# complementary slackness of LP solutions
COMPLEMENTARITY_TOL = 1e-8
# target gap of the inner barrier solves (well below SADDLE_TOL)
SOLVER_GAP = 1e-10
# Theorem 2 style residuals r1..r5
RESIDUAL_TOL = 1e-6

ALL = {
    "feasibility": FEAS_TOL,
    "duality_gap": DUALITY_GAP_TOL,
    "saddle": SADDLE_TOL,
    "pwl_eps": PWL_EPS,
    "xmin": XMIN,
    "equivalence": EQUIV_TOL,
    "measure_sum": MEASURE_SUM_TOL,
    "inverse": INVERSE_TOL,
    "complementarity": COMPLEMENTARITY_TOL,
    "solver_gap": SOLVER_GAP,
    "residual": RESIDUAL_TOL,
}
