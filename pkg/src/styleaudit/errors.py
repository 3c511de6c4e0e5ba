"""Exception hierarchy shared by all modules."""


class AuditError(Exception):
    """Base class for every error raised by styleaudit."""


class InvalidConfig(AuditError, ValueError):
    pass


class EmptyDirectory(AuditError):
    pass


class DecodeFailure(AuditError):
    def __init__(self, path, reason=""):
        self.path = path
        super().__init__(f"could not decode {path}: {reason}" if reason else f"could not decode {path}")


class TooFewRecords(AuditError, ValueError):
    pass


class InsufficientPool(AuditError, ValueError):
    pass


class TooFewStages(AuditError, ValueError):
    pass


class WeightsUnavailable(AuditError):
    pass


class DimMismatch(AuditError, ValueError):
    pass


class Degenerate(AuditError):
    pass


class TooFewScores(AuditError, ValueError):
    pass


class InvalidCounts(AuditError, ValueError):
    pass


class DegenerateGroundTruth(AuditError, ValueError):
    pass


class StageError(AuditError):
    """Wraps an error raised inside one stage of the audit pipeline."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
