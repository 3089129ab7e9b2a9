"""Exception hierarchy shared by the simulator, learners and the CLI."""


class ArmCausalError(Exception):
    """Base class. ``exit_code`` is used by the command line front end."""

    exit_code = 1


class ConfigError(ArmCausalError, ValueError):
    exit_code = 2


class DataError(ArmCausalError, ValueError):
    exit_code = 3


class MalformedFileError(DataError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


class SchemaError(DataError):
    pass


class TrainingDivergedError(ArmCausalError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} at epoch {epoch}"
        super().__init__(message)


class AttributionError(ArmCausalError, ValueError):
    exit_code = 5


class UnreachableTargetError(ArmCausalError, RuntimeError):
    exit_code = 6
