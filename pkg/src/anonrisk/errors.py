"""Exception hierarchy shared by every module."""


class AnonRiskError(ValueError):
    """Base class for all errors raised by the package."""


class NonPositiveWeight(AnonRiskError):
    pass


class WeightsDoNotSumToOne(AnonRiskError):
    pass


class SpaceMismatch(AnonRiskError):
    pass


class BadVariance(AnonRiskError):
    pass


class InvalidRiskVector(AnonRiskError):
    pass


class InvalidPartition(AnonRiskError):
    pass


# rules

class RuleError(AnonRiskError):
    """Raised when a rule cannot be applied to a given risk vector."""


class NegativeRiskForProportional(RuleError):
    pass


class BadMeasure(RuleError):
    pass


class DegenerateDenominator(RuleError):
    pass


class UnknownRule(RuleError):
    pass


class RuleApplicationError(RuleError):
    """A rule failed on one scenario of a battery; carries the scenario id."""

    def __init__(self, scenario_id, cause):
        self.scenario_id = scenario_id
        self.cause = cause
        super().__init__(f"scenario {scenario_id}: {type(cause).__name__}: {cause}")


# applications

class WinnerOutOfRange(AnonRiskError):
    pass


class PoolOutOfRange(AnonRiskError):
    pass


class PriceNotInSupport(AnonRiskError):
    pass


class ColumnNotNormalized(AnonRiskError):
    pass


class NegativeShare(AnonRiskError):
    pass


class SharesExceedOne(AnonRiskError):
    pass


class SchemaError(AnonRiskError):
    """Malformed tabular or scenario input; ``row``/``column`` locate the problem."""

    def __init__(self, message, source=None, row=None, column=None):
        self.source = source
        self.row = row
        self.column = column
        where = []
        if source is not None:
            where.append(str(source))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
