"""Exception types shared across the package.

Anything that stems from bad user input derives from ValidationError so the
CLI can map it to exit code 1; genuine I/O trouble is left to OSError and
mapped to exit code 2.
"""


class SbfdError(Exception):
    """Base class for all package errors."""


class ValidationError(SbfdError):
    """Invalid configuration or input data."""


class NonStochasticMatrix(ValidationError):
    """A transition-matrix row does not sum to 1 (or has entries outside [0,1])."""


class NegativeRate(ValidationError):
    pass


class EmptyChain(ValidationError):
    pass


class NoConvergence(SbfdError):
    """Power iteration did not converge; the chain is reducible or periodic."""


class DegenerateRange(ValidationError):
    """min == max: a normalizer cannot be fitted on a constant signal."""


class TraceTooShort(ValidationError):
    pass


class ShapeMismatch(SbfdError):
    """Tensor shapes are incompatible for the requested operation."""

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: {' vs '.join(str(s) for s in shapes)}"
        super().__init__(message)


class UninitializedGradient(SbfdError):
    """An optimizer step was requested before gradients were populated."""


class EmptyPartition(ValidationError):
    pass


class InsufficientHistory(ValidationError):
    """The trace does not cover the lookback window before the requested slot."""


class NotMultipleOfHorizon(ValidationError):
    pass


class NegativeQueue(ValidationError):
    pass


class EpisodeFinished(SbfdError):
    """step() was called after the episode's terminal slot."""


class BufferTooSmall(SbfdError):
    """Replay buffer holds fewer transitions than one batch."""


class CheckpointError(SbfdError):
    pass


class CheckpointVersionMismatch(CheckpointError):
    """Checkpoint magic or format version is not understood by this reader."""


class InsufficientTrace(ValidationError):
    """The trace is too short for the requested evaluation span."""
