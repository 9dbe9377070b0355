"""Exception hierarchy for the tdcrop package."""


class TdcropError(Exception):
    """Base class for all tdcrop errors."""


class InputDomainError(TdcropError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class SolverDegeneracyError(TdcropError):
    """The implicit strain-rate system became numerically singular.

    Attributes:
        condition_number: estimated condition number of the 6x6 system.
    """

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class IntegrationBlowupError(TdcropError):
    """A non-finite state was produced during integration.

    Attributes:
        s: arclength at which the first non-finite state appeared.
    """

    def __init__(self, message, s=None):
        super().__init__(message)
        self.s = s


class NonconvergenceError(TdcropError):
    """The shooting solver exhausted all stages without converging.

    Attributes:
        best_residual: smallest boundary-residual norm seen.
    """

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class DegenerateFrameError(TdcropError):
    """Frame reconstruction received nearly collinear/zero input columns.

    Attributes:
        sample_index: index of the offending sample, when known.
    """

    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class FormatError(TdcropError):
    """A file failed magic/version/structure/checksum validation."""


class UndefinedMetricError(TdcropError):
    """A metric is undefined for the given inputs (e.g. zero-norm target)."""


class ConfigError(TdcropError):
    """A configuration document violates its schema.

    Attributes:
        pointer: JSON-pointer-style path to the offending value.
    """

    def __init__(self, message, pointer=""):
        super().__init__(message)
        self.pointer = pointer


class TrainingAbortedError(TdcropError):
    """Training hit a non-finite loss or update and was aborted.

    Attributes:
        checkpoint_path: last good checkpoint, when one was written.
        block: name of the parameter block that went non-finite, when known.
    """

    def __init__(self, message, checkpoint_path=None, block=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
        self.block = block
