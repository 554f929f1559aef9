"""Exception types shared across the package."""


class RobustCpError(Exception):
    """Base class for all package errors."""


class EmptyInput(RobustCpError):
    pass


class DegenerateSplit(RobustCpError):
    pass


class EmptyCalibration(RobustCpError):
    pass


class UnknownLevel(RobustCpError):
    pass


class UnfittedModel(RobustCpError):
    pass


class OutOfSupport(RobustCpError):
    pass


class InsufficientData(RobustCpError):
    pass


class MissingNuisance(RobustCpError):
    pass


class MissingBlock(RobustCpError):
    pass


class RegimeMismatch(RobustCpError):
    pass


class MissingPrecomputation(RobustCpError):
    pass


class SingularWeights(RobustCpError):
    pass


class SingularOperator(RobustCpError):
    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class ZeroWeights(RobustCpError):
    pass


class InvalidPmf(RobustCpError):
    pass


class NoClosedForm(RobustCpError):
    pass


class ConfigError(RobustCpError):
    pass


class SchemaError(RobustCpError):
    pass
