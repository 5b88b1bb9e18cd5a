"""Exception hierarchy shared by every module."""


class S2SRError(Exception):
    """Base class for all toolkit errors."""


class DataError(S2SRError):
    """Input data is missing, malformed or inconsistent."""


class InvariantViolation(DataError):
    pass


class MissingBand(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class CorruptHeader(DataError):
    pass


class VersionUnsupported(DataError):
    pass


class IoFailure(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class BandMismatch(DataError):
    pass


class DomainError(S2SRError, ValueError):
    pass


class MissingInput(DataError):
    pass


class StaleCache(S2SRError):
    pass


class PatchTooLarge(DataError):
    pass


class TooFewPatches(DataError):
    pass


class NonFiniteLoss(S2SRError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class DegenerateTruth(DataError):
    pass


class AllWindowsDegenerate(DataError):
    pass


class WeightsConfigMismatch(DataError):
    pass


class TileTooSmall(DataError):
    pass
