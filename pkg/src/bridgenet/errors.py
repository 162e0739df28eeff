"""Exception hierarchy.

Each error carries an ``exit_code`` consumed by the CLI: 1 for usage
errors, 2 for data/format errors, 3 for numerical failures.
"""


class BridgeNetError(Exception):
    exit_code = 3


class InvalidArgument(BridgeNetError, ValueError):
    exit_code = 1


class OutOfRange(BridgeNetError, IndexError):
    exit_code = 1


class UnreachablePin(BridgeNetError):
    """The current state cannot reach the segment pin in the remaining steps."""


class UndefinedConductance(BridgeNetError, ValueError):
    """A cut side (or every cut) has zero volume."""


class TooLarge(BridgeNetError, ValueError):
    exit_code = 1


class EmptySample(BridgeNetError, ValueError):
    exit_code = 1


class CalibrationFailed(BridgeNetError):
    pass


class DegenerateLikelihood(BridgeNetError):
    pass


class ImpossibleObservation(BridgeNetError):
    pass


class InfeasibleStart(BridgeNetError, ValueError):
    exit_code = 1


class FormatError(BridgeNetError, ValueError):
    exit_code = 2

    def __init__(self, message, line_numbers=()):
        super().__init__(message)
        self.line_numbers = list(line_numbers)


class EmptySeries(BridgeNetError, ValueError):
    exit_code = 2


class DegenerateRange(BridgeNetError, ValueError):
    exit_code = 2
