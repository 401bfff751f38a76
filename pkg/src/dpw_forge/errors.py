"""Exception hierarchy shared by every stage of the pipeline."""


class DPWError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this failure."""

    exit_code = 1


class ConfigError(DPWError, ValueError):
    exit_code = 2


class ParameterWindowError(ConfigError):
    pass


class IntegrationError(DPWError):
    exit_code = 3


class PoleError(IntegrationError, ValueError):
    pass


class SingularityError(IntegrationError, ValueError):
    pass


class InvalidPathError(IntegrationError, ValueError):
    pass


class AccuracyError(IntegrationError):
    pass


class ClosingConditionError(DPWError):
    exit_code = 4


class UnitarizabilityError(DPWError):
    exit_code = 5

    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


class FactorizationError(DPWError):
    exit_code = 6


class PositivityError(FactorizationError, ValueError):
    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


class ConvergenceError(FactorizationError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ResolutionError(FactorizationError):
    pass


class NoInterpolantError(DPWError, ValueError):
    pass


class ContractError(DPWError, ValueError):
    pass


class UnderResolvedWarning(UserWarning):
    """Laurent tail too large for the requested truncation order."""

    def __init__(self, message, tail=None):
        super().__init__(message)
        self.tail = tail
