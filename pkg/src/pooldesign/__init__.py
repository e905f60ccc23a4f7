"""Hybrid pooled/unpooled biomarker study designs under a detection limit.

Evaluate and optimize assay designs that mix individually measured
specimens with pooled specimens when measurements are left-censored at a
lower limit of detection: censored maximum-likelihood estimation,
expected-information variance sweeps, replicate-based error-variance
estimation, and Monte Carlo / bootstrap design evaluation for Normal and
Gamma biomarker models with additive measurement and pooling errors.
"""

from ._kernels import HAVE_COMPILED, backend_name
from .design import (DesignSpec, GroupSpec, alpha_grid, one_pool_design,
                     three_assay_alpha_grid, three_assay_design,
                     two_assay_design)
from .estimate import (FitResult, ReplicatePairSet, fit_laplace_scale,
                       fit_mle, replicate_error_variances)
from .exceptions import (ConfigError, DataError, DesignError, EstimationError,
                         LikelihoodError, ModelError, NumericsError,
                         PoolDesignError, SimulationError)
from .fisher import (SweepResult, SweepRow, asymptotic_variances,
                     expected_information, sweep_alpha)
from .likelihood import (AssayObservation, Dataset, log_likelihood,
                         numeric_gradient, numeric_hessian)
from .models import (GAMMA, NORMAL, ModelSpec, ObservedComponentSpec,
                     laplace_sum_cdf, laplace_sum_pdf, observed_cdf,
                     observed_pdf, pooled_distribution)
from .simulate import (McResult, SimConfig, bootstrap_design_eval,
                       generate_dataset, generate_replicate_pairs,
                       monte_carlo_variance, pool_of_pools)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "HAVE_COMPILED",
    "backend_name",
    # models
    "NORMAL", "GAMMA", "ModelSpec", "ObservedComponentSpec",
    "pooled_distribution", "observed_pdf", "observed_cdf",
    "laplace_sum_pdf", "laplace_sum_cdf",
    # design
    "DesignSpec", "GroupSpec", "two_assay_design", "three_assay_design",
    "one_pool_design", "alpha_grid", "three_assay_alpha_grid",
    # likelihood
    "AssayObservation", "Dataset", "log_likelihood", "numeric_gradient",
    "numeric_hessian",
    # estimation
    "FitResult", "ReplicatePairSet", "fit_mle", "replicate_error_variances",
    "fit_laplace_scale",
    # information / sweeps
    "SweepResult", "SweepRow", "expected_information", "asymptotic_variances",
    "sweep_alpha",
    # simulation
    "SimConfig", "McResult", "generate_dataset", "monte_carlo_variance",
    "generate_replicate_pairs", "pool_of_pools", "bootstrap_design_eval",
    # errors
    "PoolDesignError", "ModelError", "DesignError", "DataError",
    "LikelihoodError", "EstimationError", "NumericsError", "SimulationError",
    "ConfigError",
]
