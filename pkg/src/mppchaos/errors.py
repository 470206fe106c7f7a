"""Exception types raised across the package."""


class MPPError(Exception):
    """Base class for all package errors."""


class InvalidRates(MPPError):
    pass


class InvalidKernel(MPPError):
    pass


class InvalidMarkSpace(MPPError):
    pass


class SupportMismatch(MPPError):
    """Reference measure is positive where the compensator density vanishes (or vice versa)."""

    def __init__(self, state, mark, message=None):
        self.state = state
        self.mark = mark
        super().__init__(message or f"support mismatch at (state={state!r}, mark={mark!r})")


class StochasticSupport(MPPError):
    """The set of reachable marks at a jump index depends on the history."""


class OutOfHorizon(MPPError):
    pass


class JumpCapExceeded(MPPError):
    pass


class ZeroCompensator(MPPError):
    pass


class GridTooCoarse(MPPError):
    pass


class ArityMismatch(MPPError):
    pass


class DepthTooLarge(MPPError):
    pass


class SizeCap(MPPError):
    pass


class DimensionMismatch(MPPError):
    pass


class TruncationTooLarge(MPPError):
    pass


class TooFewSamples(MPPError):
    pass


class ConfigError(MPPError):
    pass


class SuiteFailure(MPPError):
    pass


class PsiCodomainWarning(UserWarning):
    """psi exceeded 1; the rescaling is still valid but outside ]0, 1]."""
