#
# traj_errors.py - exception hierarchy for trajectory optimal control
# Copyright © 2023 by the traj_grape developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, version 3 of the License.
#
# See the LICENSE.md file for more details.
#
# Every error carries a stable kind string (used in logs and reports) and
# the process exit code the command line app returns for it.
#


EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_VALIDATION_FAILURE = 3
EXIT_NUMERICAL_FAILURE = 4


class TrajGrapeError(Exception):
    """
    Base class of every error raised by the package
    """
    kind = "traj-grape-error"
    exit_code = EXIT_NUMERICAL_FAILURE

    def __init__(self, message=""):
        super().__init__(message)
        self.message = message

    def __str__(self):
        return f"{self.kind}: {self.message}" if self.message else self.kind


class DimensionMismatchError(TrajGrapeError):
    kind = "dimension-mismatch"


class NonSquareError(TrajGrapeError):
    kind = "non-square"


class TaylorDivergenceError(TrajGrapeError):
    """
    The Taylor series did not converge within max_terms. Shrink dt.
    """
    kind = "taylor-divergence"


class UnknownOpError(TrajGrapeError):
    kind = "unknown-op"


class ShapeMismatchError(TrajGrapeError):
    kind = "shape-mismatch"


class SingularOpError(TrajGrapeError):
    kind = "singular-op"


class NonScalarCostError(TrajGrapeError):
    kind = "non-scalar-cost"


class StepIndexError(TrajGrapeError):
    kind = "index-out-of-range"


class StateAnnihilatedError(TrajGrapeError):
    kind = "state-annihilated"


class CptpViolationError(TrajGrapeError):
    kind = "cptp-violation"


class ChannelsPresentError(TrajGrapeError):
    kind = "channels-present"


class MissingStatesError(TrajGrapeError):
    kind = "missing-cached-states"


class MissingParameterError(TrajGrapeError):
    kind = "missing-parameter"


class CostParameterError(TrajGrapeError):
    kind = "invalid-cost-parameter"


class GradientBlowupError(TrajGrapeError):
    kind = "gradient-blowup"


class SdeStepTooCoarseError(TrajGrapeError):
    kind = "sde-step-too-coarse"


class DegenerateFilterError(TrajGrapeError):
    kind = "degenerate-filter"


class LengthMismatchError(TrajGrapeError):
    kind = "length-mismatch"


class EmptyEnsembleError(TrajGrapeError):
    kind = "empty-ensemble"


class ConfigError(TrajGrapeError):
    """
    A run configuration could not be parsed or validated
    """
    kind = "config-error"
    exit_code = EXIT_CONFIG_ERROR

    def __init__(self, message="", field=None, line=None, column=None):
        """
        Constructor
        :param message: What is wrong
        :param field: Dotted path of the offending field, e.g. "system.params.t1"
        :param line: Line number for parse errors
        :param column: Column number for parse errors
        """
        location = []
        if field is not None:
            location.append(f"field {field}")
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.field = field
        self.line = line
        self.column = column


class ValidationFailure(TrajGrapeError):
    kind = "validation-failure"
    exit_code = EXIT_VALIDATION_FAILURE


class InvalidParameterError(TrajGrapeError):
    kind = "invalid-parameter"
