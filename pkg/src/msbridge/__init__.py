"""Discrete martingale Schrodinger bridge solver.

Computes the entropy-minimal martingale measure calibrated to an
option-implied terminal marginal, extracts the dual semistatic portfolio,
certifies strong duality with exponential utility maximization, and builds
bounded-stock approximating measures witnessing the dual portfolio's
integrability.
"""

from .approximation import (
    ApproxOutput,
    SplitResult,
    bounded_approximation,
    bounded_threshold,
    convex_order_stability_probe,
    density_bounds,
    entropy_convergence_report,
    restrict_bounded,
    row_entropy_bound,
    split_interval,
    strassen_coupling,
)
from .bridge import (
    BridgeSolution,
    FiniteConstraintSolution,
    MomentConstraint,
    Potentials,
    SolverOptions,
    feasibility_check,
    finite_constraint_solution,
    primal_from_potentials,
    solve_bridge,
)
from .calibration import (
    CalibrationReport,
    CallQuote,
    Violation,
    check_static_arbitrage,
    implied_marginal,
    price_calls,
)
from .duality import (
    AdmissibilityReport,
    DualityCertificate,
    SemistaticPortfolio,
    admissibility_check,
    certainty_equivalent,
    duality_gap,
    extract_optimal_portfolio,
)
from .errors import (
    ConvergenceError,
    InfeasibleError,
    StabilizationError,
    ValidationError,
)
from .measures import (
    DiscreteMeasure,
    EqualitySet,
    Grid,
    JointMeasure,
    Kernel,
    barycenter,
    compose,
    convex_order_calls,
    convex_order_leq,
    disintegrate,
    entropy_chain,
    equality_set,
    from_atoms,
    joint_tv_distance,
    kernel_compose,
    merge_grids,
    normalized_tv_bound,
    point_mass,
    quantile_integral,
    relative_entropy,
    tv_distance,
    w1_distance,
)
from .oracle import (
    LinearSystem,
    analytic_center,
    brute_force_bridge,
    lp_feasible_point,
    maximal_support,
    simplex_solve,
)

__version__ = "0.1.0"
