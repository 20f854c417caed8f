"""Simulation designs and Monte Carlo harness."""
from .dgp import (
    FpcSpec,
    ScenarioSpec,
    TruthRecord,
    apply_missingness,
    gen_case1,
    gen_case2,
    gen_fpc_covariate,
    generate,
    replicate_rng,
    simulate,
    structural_outcome,
    true_beta,
)
from .montecarlo import (
    MC_METHODS,
    MetricsTable,
    MonteCarloResult,
    case_learners,
    compute_metrics,
    method_config,
    run_monte_carlo,
    run_replicate,
)
