"""Exception hierarchy.

Library code raises these; only the CLI catches them and maps the two
families onto exit codes.
"""


class EvolutionError(Exception):
    """Base class for every error raised by the package."""


# Configuration family (exit code 2)

class ConfigError(EvolutionError):
    pass


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    pass


class ValidationError(ConfigError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ExpressionSyntaxError(ConfigError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class UnknownFunction(ConfigError):
    pass


class UnknownVariable(ConfigError):
    pass


class GeneratorError(ConfigError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class NotSquare(GeneratorError):
    pass


class RowSumViolation(GeneratorError):
    pass


class NegativeRate(GeneratorError):
    pass


class Reducible(GeneratorError):
    pass


# Numerical family (exit code 3)

class NumericalError(EvolutionError):
    pass


class SingularSystem(NumericalError):
    pass


class NegativeTime(NumericalError):
    pass


class NonPositiveLambda(NumericalError):
    pass


class NonFiniteValue(NumericalError):
    pass


class NonFiniteSource(NumericalError):
    pass


class DomainEscape(NumericalError):
    pass


class TooFewSamples(NumericalError):
    pass


class SolvabilityViolation(NumericalError):
    pass


class ConsistencyViolation(NumericalError):
    pass


class ProjectionViolation(NumericalError):
    pass


class TailTruncationTooCoarse(NumericalError):
    pass


class OrderUnavailable(NumericalError):
    pass


class CflViolation(NumericalError):
    pass


class GridMismatch(NumericalError):
    pass


class DegenerateFit(NumericalError):
    pass


class InsufficientResolution(NumericalError):
    pass
