"""Exception hierarchy shared by all modules."""


class SpdeHjbError(Exception):
    """Base class."""


class ConfigError(SpdeHjbError):
    pass


class InvalidExponents(SpdeHjbError):
    pass


class DegenerateNoise(SpdeHjbError):
    pass


class NegativeTime(SpdeHjbError):
    pass


class DimensionMismatch(SpdeHjbError):
    pass


class RangeViolation(SpdeHjbError):
    """Pe^{tA}B is not (numerically) inside the range of the projected noise."""


class DegeneratePencil(SpdeHjbError):
    pass


class BadWeight(SpdeHjbError):
    pass


class NonFiniteIntegrand(SpdeHjbError):
    pass


class ControlOutOfSet(SpdeHjbError):
    pass


class BadExponent(SpdeHjbError):
    pass


class NoThreshold(SpdeHjbError):
    pass


class NotContracted(SpdeHjbError):
    pass


class UnstableStep(SpdeHjbError):
    pass
