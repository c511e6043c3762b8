"""Exception hierarchy shared by all modules."""


class ManifoldInferError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(ManifoldInferError, ValueError):
    """Invalid model dimensions, missing prior, bad config keys, etc."""


class DomainError(ManifoldInferError, ValueError):
    """An input lies outside the open box on which a model is defined."""


class EvaluationError(ManifoldInferError, ArithmeticError):
    """A model or density evaluation produced non-finite output."""


class RankError(ManifoldInferError, ArithmeticError):
    """A Jacobian lost rank where full rank is required."""


class NumericError(ManifoldInferError, ArithmeticError):
    """A factorization or quadrature failed numerically."""


class StartupError(ManifoldInferError, RuntimeError):
    """No feasible starting point could be found for a chain."""


class ParseError(ManifoldInferError, ValueError):
    """A data or config file could not be parsed."""
