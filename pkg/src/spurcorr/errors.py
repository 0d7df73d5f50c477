"""Exception hierarchy shared by all spurcorr modules."""


class SpurcorrError(Exception):
    """Base class for library errors."""


class ParameterRangeError(SpurcorrError, ValueError):
    """An input parameter lies outside its admissible range."""


class NotPositiveDefiniteError(SpurcorrError, ValueError):
    """A covariance (or block of one) fails a positive-definiteness check."""


class SingularBlockError(SpurcorrError, ValueError):
    """A matrix that must be inverted is numerically singular."""


class ConvergenceError(SpurcorrError, ArithmeticError):
    """An iterative solver failed to bracket or reach its root."""


class DegenerateDenominatorError(SpurcorrError, ArithmeticError):
    """A closed-form expression hit a vanishing denominator."""


class QuadratureError(SpurcorrError, ArithmeticError):
    """Quadrature results are unstable under node refinement."""


class ConfigError(SpurcorrError, ValueError):
    """An experiment configuration is malformed or inconsistent."""
