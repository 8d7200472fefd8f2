"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class BoundProbeError(Exception):
    """Base class for every error raised by this package."""


# linear algebra / suppression


class EmptyAnchorSet(BoundProbeError, ValueError):
    pass


class TokenOutOfRange(BoundProbeError, ValueError):
    pass


class DimensionMismatch(BoundProbeError, ValueError):
    pass


class EmbeddingFormatError(BoundProbeError, ValueError):
    pass


class RankDeficientWarning(UserWarning):
    """Effective rank of the output head is below its hidden dimension.

    Emitted (not raised) by the least-squares solve when no ridge term is in
    effect; the returned estimate is then the minimum-norm solution.
    """


# anchors


class EmptyEntityList(BoundProbeError, ValueError):
    pass


class EmptyEntityWarning(UserWarning):
    pass


# decoding


class ConfigInvalid(BoundProbeError, ValueError):
    pass


class DegenerateDistribution(BoundProbeError, ValueError):
    pass


class ModelStepFailure(BoundProbeError, RuntimeError):
    def __init__(self, step: int, cause: BaseException | str):
        self.step = step
        self.cause = cause
        super().__init__(f"model step {step} failed: {cause}")


# dataset


class ParseFailure(BoundProbeError, ValueError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class NoEntitiesFound(BoundProbeError, ValueError):
    pass


class DroppedQuestionWarning(UserWarning):
    pass


# metrics


class EmptyInput(BoundProbeError, ValueError):
    pass


class EmptyResponse(EmptyInput):
    pass


# verification


class EmptyAfterFilter(BoundProbeError, ValueError):
    pass


# clients


class ClientFailure(BoundProbeError, RuntimeError):
    pass


class ReplayMiss(ClientFailure):
    """The replay transcript has no unused entry for a request."""


# cli


class ConfigError(BoundProbeError, ValueError):
    pass
