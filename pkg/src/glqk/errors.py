"""Exception hierarchy shared by every module.

Each class maps to one CLI exit code (see :mod:`glqk.cli`).
"""


class GLQKError(Exception):
    exit_code = 1


class InvalidArgument(GLQKError, ValueError):
    exit_code = 2


class LocalityViolation(InvalidArgument):
    """A cluster string does not fit inside any window of the subsystem family."""


class NumericFailure(GLQKError, ArithmeticError):
    exit_code = 3


class ResourceLimit(GLQKError):
    exit_code = 4


class UndefinedMetric(InvalidArgument):
    pass
