"""Exception hierarchy shared by every module.

The CLI maps ConfigError to exit code 1 and every other CtfnoError to 2.
"""


class CtfnoError(Exception):
    kind = "error"


class ConfigError(CtfnoError):
    kind = "config"


class ShapeError(CtfnoError, ValueError):
    kind = "shape"


class InvalidLengthError(CtfnoError, ValueError):
    kind = "invalid_length"


class ContractError(CtfnoError):
    kind = "contract"


class DatasetError(CtfnoError):
    kind = "dataset"


class DomainError(CtfnoError, ValueError):
    kind = "domain"


class DivergenceError(CtfnoError):
    kind = "divergence"

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class BlowUpError(CtfnoError):
    kind = "blow_up"

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class StiffSolverError(CtfnoError):
    kind = "stiff_failure"


class ReportError(CtfnoError):
    kind = "report"
