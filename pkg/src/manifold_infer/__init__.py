"""Bayesian posteriors and generalized fiducial distributions as densities
on the data generating manifold, with a constrained random-walk sampler."""
from .builtin_models import (
    builtin_bivariate_corr,
    builtin_gaussian_location,
    builtin_rm_anova,
    get_builtin,
    reciprocal_transform,
)
from .densities import TargetKind
from .errors import (
    ConfigurationError,
    DomainError,
    EvaluationError,
    ManifoldInferError,
    NumericError,
    ParseError,
    RankError,
    StartupError,
)
from .models import Box, ModelSpec, TransformSpec, compose_transform, evaluate_dge
from .samplers import ABCConfig, ChainConfig, abc_rejection, run_chain, run_chains

__version__ = "0.1.0"
