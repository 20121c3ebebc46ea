"""Optimal trade-execution scheduling and trading-cost attribution."""
from execsched.attribution import (
    AttributionReport,
    Fill,
    OrderContext,
    UnbalancedIntervalError,
    ZeroSumAudit,
    attribute,
    impact_complex,
    impact_simple,
    path_costs,
    shortfall,
    timing,
    zero_sum_audit,
)
from execsched.dp import (
    ClosedLinearPolicy,
    ConfigError,
    ConvexityWarning,
    Horizon,
    InfeasibleLiquidityError,
    MillsRecursionProblem,
    NumericalPolicy,
    PolicyTable,
    RecursionConfig,
    ResolutionWarning,
    Schedule,
    SolverError,
    approximate_recursion,
    solve_ar1_complex,
    solve_ar1_simple,
    solve_benchmark_complex,
    solve_benchmark_simple,
)
from execsched.gbm import solve_gbm_simple
from execsched.kernels import (
    Gaussian,
    MixtureRegimeError,
    QuadratureRule,
    gauss_hermite,
    mills_psi,
    mills_psi_prime,
    nln_mixture_expectation,
    nln_mixture_reference_formula,
    truncated_mean_positive,
)
from execsched.liquidity import solve_liquidity
from execsched.models import (
    Ar1Extra,
    Benchmark,
    DegeneratePathWarning,
    LinearPercentage,
    Liquidity,
    LiquidityViolationError,
    MarketState,
    Spread,
    ar1_volume_update,
    convexity_check,
)
from execsched.simulate import (
    MOMENTUM_LABELS,
    VOLATILITY_LABELS,
    BucketThresholds,
    CostDistribution,
    SimConfig,
    brute_force_schedule,
    estimate_objective,
    evaluate_policy,
    momentum_volatility_buckets,
)

__version__ = "0.1.0"

__all__ = [
    "Ar1Extra",
    "AttributionReport",
    "Benchmark",
    "BucketThresholds",
    "ClosedLinearPolicy",
    "ConfigError",
    "ConvexityWarning",
    "CostDistribution",
    "DegeneratePathWarning",
    "Fill",
    "Gaussian",
    "Horizon",
    "InfeasibleLiquidityError",
    "LinearPercentage",
    "Liquidity",
    "LiquidityViolationError",
    "MOMENTUM_LABELS",
    "MarketState",
    "MillsRecursionProblem",
    "MixtureRegimeError",
    "NumericalPolicy",
    "OrderContext",
    "PolicyTable",
    "QuadratureRule",
    "RecursionConfig",
    "ResolutionWarning",
    "Schedule",
    "SimConfig",
    "SolverError",
    "Spread",
    "UnbalancedIntervalError",
    "VOLATILITY_LABELS",
    "ZeroSumAudit",
    "approximate_recursion",
    "ar1_volume_update",
    "attribute",
    "brute_force_schedule",
    "convexity_check",
    "estimate_objective",
    "evaluate_policy",
    "gauss_hermite",
    "impact_complex",
    "impact_simple",
    "mills_psi",
    "mills_psi_prime",
    "momentum_volatility_buckets",
    "nln_mixture_expectation",
    "nln_mixture_reference_formula",
    "path_costs",
    "shortfall",
    "solve_ar1_complex",
    "solve_ar1_simple",
    "solve_benchmark_complex",
    "solve_benchmark_simple",
    "solve_gbm_simple",
    "solve_liquidity",
    "timing",
    "truncated_mean_positive",
    "zero_sum_audit",
    "__version__",
]
