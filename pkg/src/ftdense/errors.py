"""Exception types raised by the kernels and their fault-tolerant variants."""


class FtDenseError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(FtDenseError, ValueError):
    pass


class SingularMatrixError(FtDenseError, ArithmeticError):
    pass


class FaultToleranceError(FtDenseError):
    """An FT routine could not deliver a verified result.

    ``report`` carries the partial :class:`~ftdense.dmr.FtReport` at the
    moment the routine gave up.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class Unrecoverable(FaultToleranceError):
    """Recomputation after a detected mismatch still disagreed."""


class DetectedButUncorrected(FaultToleranceError):
    """Detect-only mode saw at least one mismatch and did not repair it."""


class MultipleErrors(FaultToleranceError):
    """More than one corrupted position inside a single ABFT interval."""


class ChecksumInconsistent(FaultToleranceError):
    """Row and column checksum residuals do not describe the same error."""


class ConflictingPlan(FtDenseError):
    """A fault plan is already armed for this target."""


class OracleMismatch(FtDenseError):
    pass
