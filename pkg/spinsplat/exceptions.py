class SpinSplatError(Exception):
    """Base class for all spinsplat failures"""


class ConfigError(SpinSplatError):
    """Malformed configuration file or environment override"""


class SchemaError(SpinSplatError):
    """Manifest, schedule or checkpoint does not match the expected schema"""


class NumericDivergenceError(SpinSplatError):
    """Optimization produced a non-finite loss"""

    def __init__(self, message: str, iteration: int = -1):
        super().__init__(message)
        self.iteration = iteration


class InvalidInputError(SpinSplatError, ValueError):
    """Precondition violated by a caller"""


class BudgetError(InvalidInputError):
    """Capture time budget cannot hold a single segment"""


class SingularBasisError(InvalidInputError):
    """Least-squares normal matrix is rank deficient"""
