"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (2),
bad or inconsistent data (3) and numerical failures (4).
"""


class ThermoRomError(Exception):
    exit_code = 1


class ConfigError(ThermoRomError, ValueError):
    exit_code = 2


class DataError(ThermoRomError, ValueError):
    exit_code = 3


class NumericalError(ThermoRomError, ArithmeticError):
    exit_code = 4


# configuration
class RankTooLarge(ConfigError):
    pass


class CadenceMismatch(ConfigError):
    pass


# data
class AltitudeOutOfRange(DataError):
    pass


class NonFiniteCoordinate(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NonPositiveDensity(DataError):
    pass


class DegenerateData(DataError):
    pass


class InsufficientData(DataError):
    pass


class NonFinite(DataError):
    pass


class OutOfRangeEpoch(DataError):
    pass


class DuplicateEpoch(DataError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class OverlappingBlocks(DataError):
    pass


class EmptyAfterPreprocessing(DataError):
    pass


class NonPositiveTrainingDensity(DataError):
    pass


class GridMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class NonPositiveMeasurement(DataError):
    pass


# numerics
class SingularSystem(NumericalError):
    pass


class NoRealPrincipalRoot(NumericalError):
    pass


class NonFiniteState(NumericalError):
    """Filter or propagation produced non-finite values (divergence)."""


class NonPositiveInnovationVariance(NumericalError):
    pass


class UnstableTruth(NumericalError):
    pass
