"""Exception hierarchy.

Each family maps to a CLI exit code: input errors -> 2, verification
failures -> 3, numeric failures -> 4.
"""


class CwExtremaError(Exception):
    exit_code = 4


class InputError(CwExtremaError, ValueError):
    exit_code = 2


class NonPositiveDrift(InputError):
    pass


class InvalidCorrelation(InputError):
    pass


class NonPositiveTime(InputError):
    pass


class InvalidConfig(InputError):
    pass


class UnsupportedRegime(InputError):
    pass


class NumericError(CwExtremaError, ArithmeticError):
    exit_code = 4


class DegenerateCovariance(NumericError):
    pass


class SingularCovariance(NumericError):
    pass


class NoConvergence(NumericError):
    pass


class QuadratureFailure(NumericError):
    pass


class DegenerateWeights(NumericError):
    """Exponential weights of the band constant are not all positive."""


class MissingConstant(NumericError):
    """A point value was requested from a formula whose constant is only bounded."""


class InsufficientSignal(NumericError):
    pass


class VerificationFailure(CwExtremaError):
    exit_code = 3
