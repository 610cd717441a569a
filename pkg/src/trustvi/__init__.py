"""Stochastic trust-region optimization for variational inference.

The optimizer maximizes a reparameterized ELBO over a mean-field
Gaussian family.  Each iteration fits a local quadratic model from
minibatch gradient and Hessian-vector products, maximizes it inside a
trust region, and accepts or rejects the step with a matched-pairs
Monte Carlo test sized so that bad steps are rarely taken.  SGD and
stochastic Newton baselines share the estimators and the oracle-call
accounting, and a small harness runs median-of-k comparisons.
"""

from .assessment import (
    AcceptanceParams,
    AssessmentResult,
    assess,
    paired_improvement_samples,
    required_sample_size,
    required_sample_size_small_radius,
)
from .baselines import (
    AdviConfig,
    BaselineResult,
    NewtonBaselineConfig,
    advi_optimize,
    hfsgvi_optimize,
)
from .core import (
    BaseBatch,
    ConfigurationError,
    GradientSample,
    ModelSpec,
    NumericalOverflow,
    VariationalParams,
    adapt_gradient_batch,
    elbo_and_gradient,
    elbo_estimate,
    gaussian_entropy,
    jackknife_grad_norm_sd,
    reparameterize,
    stochastic_gradient,
    stochastic_hvp,
)
from .harness import (
    ExperimentPlan,
    build_report,
    calls_to_threshold,
    derive_run_seed,
    load_plan,
    read_summary_json,
    read_trace_csv,
    run_experiment,
    run_single,
    write_summary_json,
    write_trace_csv,
)
from .loop import (
    OptimizeResult,
    OptimizerConfig,
    OptimizerState,
    ProbeStats,
    RunSummary,
    TraceRecord,
    init_state,
    optimize,
    theory_probe,
    trustvi_step,
)
from .objective import DeterministicQuadratic, ViObjective, as_objective
from .subproblem import (
    QuadraticModel,
    Step,
    cauchy_point,
    solve_tr_exact,
    solve_tr_krylov,
)
from .zoo import ZooModel, get_model, list_models

__version__ = "0.1.0"

__all__ = [
    "AcceptanceParams",
    "AssessmentResult",
    "AdviConfig",
    "BaseBatch",
    "BaselineResult",
    "ConfigurationError",
    "DeterministicQuadratic",
    "ExperimentPlan",
    "GradientSample",
    "ModelSpec",
    "NewtonBaselineConfig",
    "NumericalOverflow",
    "OptimizeResult",
    "OptimizerConfig",
    "OptimizerState",
    "ProbeStats",
    "QuadraticModel",
    "RunSummary",
    "Step",
    "TraceRecord",
    "VariationalParams",
    "ViObjective",
    "ZooModel",
    "adapt_gradient_batch",
    "advi_optimize",
    "as_objective",
    "assess",
    "build_report",
    "calls_to_threshold",
    "cauchy_point",
    "derive_run_seed",
    "elbo_and_gradient",
    "elbo_estimate",
    "gaussian_entropy",
    "get_model",
    "hfsgvi_optimize",
    "init_state",
    "jackknife_grad_norm_sd",
    "list_models",
    "load_plan",
    "optimize",
    "paired_improvement_samples",
    "read_summary_json",
    "read_trace_csv",
    "reparameterize",
    "required_sample_size",
    "required_sample_size_small_radius",
    "run_experiment",
    "run_single",
    "solve_tr_exact",
    "solve_tr_krylov",
    "stochastic_gradient",
    "stochastic_hvp",
    "theory_probe",
    "trustvi_step",
    "write_summary_json",
    "write_trace_csv",
]
