"""Exception hierarchy. Each category maps to one CLI exit code."""


class RcirlError(Exception):
    exit_code = 1


class MalformedInputError(RcirlError, ValueError):
    """An input file could not be parsed or fails schema validation."""

    exit_code = 2


class ContractViolation(RcirlError, ValueError):
    """Inputs parse fine but break a cross-object contract."""

    exit_code = 3


class GridMismatchError(ContractViolation):
    pass


class NumericFailure(RcirlError, ArithmeticError):
    exit_code = 4


class NonFiniteLossError(NumericFailure):
    def __init__(self, frame_id, value):
        super().__init__(f"non-finite loss {value!r} on frame {frame_id!r}")
        self.frame_id = frame_id
        self.value = value


class InfeasibleScenarioError(ContractViolation):
    """Every lattice path collides; no expert exists."""


class ModelFormatError(MalformedInputError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class DimensionMismatchError(ModelFormatError):
    pass


class NonFiniteParameterError(ModelFormatError):
    pass
