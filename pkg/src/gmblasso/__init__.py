"""Sparse Gaussian-mixture estimation by total-variation-regularized least
squares over reparametrized component measures, with closed-form kernels,
information-geometric tooling, dual-certificate verification, a conic
particle-descent solver, and Monte-Carlo rate experiments."""

from .measures import (
    DiscreteMeasure,
    DomainBox,
    Location,
    min_pairwise_semidistance,
    reparametrize,
    tv_norm,
    weight_function,
)
from .kernel import (
    KernelContext,
    data_witness,
    grad1_k,
    grad1_grad2_k,
    k_norm,
    lambda_pair,
    riemannian_hessian2_k,
    semi_distance,
)
from .geometry import (
    christoffel,
    fisher_rao_distance,
    geodesic_point,
    geodesic_spec,
    metric_at,
    region_of,
    riemannian_norm,
)
from .certificates import (
    CertificateSolution,
    CertificateSystem,
    GridSpec,
    LpcConstants,
    NondegeneracyReport,
    SingularSystemError,
    build_upsilon,
    eval_certificate,
    eval_certificate_gradient,
    kernel_operator_norms,
    lpc_constants,
    separation_check,
    solve_certificates,
    verify_nondegeneracy,
)
from .solver import (
    ObjectiveContext,
    RecommendedParameters,
    SolverConfig,
    SolverResult,
    acceptance_check,
    cpgd_solve,
    initial_measure,
    objective,
    objective_gradient,
    prune_merge,
    recommended_parameters,
)
from .experiments import (
    ExperimentReport,
    GroundTruthMixture,
    prediction_error,
    rate_sweep,
    region_mass_errors,
    renormalized_mass_errors,
    sample,
    sparsity_check,
)

__version__ = "0.1.0"

__all__ = [
    "DiscreteMeasure", "DomainBox", "Location", "min_pairwise_semidistance",
    "reparametrize", "tv_norm", "weight_function",
    "KernelContext", "data_witness", "grad1_k", "grad1_grad2_k", "k_norm",
    "lambda_pair", "riemannian_hessian2_k", "semi_distance",
    "christoffel", "fisher_rao_distance", "geodesic_point", "geodesic_spec",
    "metric_at", "region_of", "riemannian_norm",
    "CertificateSolution", "CertificateSystem", "GridSpec", "LpcConstants",
    "NondegeneracyReport", "SingularSystemError", "build_upsilon",
    "eval_certificate", "eval_certificate_gradient", "kernel_operator_norms",
    "lpc_constants", "separation_check", "solve_certificates",
    "verify_nondegeneracy",
    "ObjectiveContext", "RecommendedParameters", "SolverConfig", "SolverResult",
    "acceptance_check", "cpgd_solve", "initial_measure", "objective",
    "objective_gradient", "prune_merge", "recommended_parameters",
    "ExperimentReport", "GroundTruthMixture", "prediction_error", "rate_sweep",
    "region_mass_errors", "renormalized_mass_errors", "sample", "sparsity_check",
    "__version__",
]
