"""Exception hierarchy for pooldesign."""


class PoolDesignError(Exception):
    """Base class for all pooldesign errors."""


class ModelError(PoolDesignError):
    """Invalid model or observed-component specification."""


class DesignError(PoolDesignError):
    """Infeasible or inconsistent assay design."""


class DataError(PoolDesignError):
    """Invalid dataset contents or data file."""


class LikelihoodError(PoolDesignError):
    """Likelihood cannot be evaluated (family mismatch, bad stencil, ...)."""


class EstimationError(PoolDesignError):
    """Estimation cannot proceed (e.g. all observations censored)."""


class NumericsError(PoolDesignError):
    """Numerical failure: quadrature non-convergence, singular information."""


class SimulationError(PoolDesignError):
    """Monte Carlo or bootstrap run failed (e.g. excessive fit failures)."""


class ConfigError(PoolDesignError):
    """Invalid command-line or file configuration."""
